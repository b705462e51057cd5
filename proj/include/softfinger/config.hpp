#pragma once

// Flat, sectioned run configuration:
//
//   # comment
//   [domain]
//   height = 100        ; trailing comments allowed
//
// Every key is declared once in the schema table below, which also produces
// the --help listing and the canonical echo written next to each run.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "softfinger/error.hpp"
#include "softfinger/optimizer.hpp"

namespace softfinger {

enum class SweepKind { volume_fraction, input_displacement };

struct CampaignSettings {
  std::vector<double> sweep{0.2, 0.35, 0.5};
  int seeds_per_point = 10;
  int parallelism = 1;
};

struct AppConfig {
  RunConfig run;
  CampaignSettings campaign;

  [[nodiscard]] SweepKind sweep_kind() const {
    return run.formulation() == Formulation::passive ? SweepKind::volume_fraction : SweepKind::input_displacement;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const char* first = v.data();
  const char* last = v.data() + v.size();
  if (!v.empty() && *first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

/// Shortest round-trip representation.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::vector<double> parse_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(parse_double(key, t));
  }
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

inline std::string format_list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
  return s;
}

}  // namespace detail

struct ConfigKey {
  std::string section;
  std::string name;
  std::string unit;
  std::string help;
  std::function<void(AppConfig&, const std::string&)> set;
  std::function<std::string(const AppConfig&)> get;

  [[nodiscard]] std::string full() const { return section + "." + name; }
};

namespace detail {

template <typename Member>
ConfigKey real_key(std::string sec, std::string name, std::string unit, std::string help, Member member) {
  ConfigKey k{std::move(sec), std::move(name), std::move(unit), std::move(help), {}, {}};
  const std::string full = k.full();
  k.set = [member, full](AppConfig& c, const std::string& v) { member(c) = parse_double(full, v); };
  k.get = [member](const AppConfig& c) { return format_double(member(const_cast<AppConfig&>(c))); };
  return k;
}

}  // namespace detail

/// The documented configuration schema.
inline const std::vector<ConfigKey>& config_schema() {
  using detail::real_key;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    // [domain]
    k.push_back(real_key("domain", "height", "mm", "finger length, mount to tip",
                         [](AppConfig& c) -> double& { return c.run.domain.height; }));
    k.push_back(real_key("domain", "width_top", "mm", "width at the mount",
                         [](AppConfig& c) -> double& { return c.run.domain.width_top; }));
    k.push_back(real_key("domain", "width_bottom", "mm", "width at the tip (must be < width_top)",
                         [](AppConfig& c) -> double& { return c.run.domain.width_bottom; }));
    k.push_back(real_key("domain", "element_size", "mm", "square element side; must divide height",
                         [](AppConfig& c) -> double& { return c.run.domain.element_size; }));
    k.push_back(real_key("domain", "slot_width", "mm", "mounting slot width",
                         [](AppConfig& c) -> double& { return c.run.domain.slot_width; }));
    k.push_back(real_key("domain", "slot_height", "mm", "mounting slot height",
                         [](AppConfig& c) -> double& { return c.run.domain.slot_height; }));
    k.push_back(real_key("domain", "slot_top_margin", "mm", "gap between top edge and slots",
                         [](AppConfig& c) -> double& { return c.run.domain.slot_top_margin; }));
    k.push_back(real_key("domain", "slot1_center", "fraction of width_top", "front slot centre",
                         [](AppConfig& c) -> double& { return c.run.domain.slot1_center; }));
    k.push_back(real_key("domain", "slot2_center", "fraction of width_top", "back slot centre",
                         [](AppConfig& c) -> double& { return c.run.domain.slot2_center; }));
    k.push_back(real_key("domain", "contact_span", "fraction of height", "grasping-edge span holding F_in1..F_in6",
                         [](AppConfig& c) -> double& { return c.run.domain.contact_span; }));
    k.push_back(real_key("domain", "face_fill", "fraction", "share of each face pitch that is loaded",
                         [](AppConfig& c) -> double& { return c.run.domain.face_fill; }));
    k.push_back(real_key("domain", "tip_length", "mm", "output/tip region length on the grasping edge",
                         [](AppConfig& c) -> double& { return c.run.domain.tip_length; }));
    // [material]
    k.push_back(real_key("material", "E0", "MPa", "solid Young's modulus",
                         [](AppConfig& c) -> double& { return c.run.material.E0; }));
    k.push_back(real_key("material", "E_min", "MPa", "void stiffness floor",
                         [](AppConfig& c) -> double& { return c.run.material.E_min; }));
    k.push_back(real_key("material", "nu", "-", "Poisson ratio", [](AppConfig& c) -> double& { return c.run.material.nu; }));
    k.push_back(real_key("material", "penalty_p", "-", "SIMP penalty exponent",
                         [](AppConfig& c) -> double& { return c.run.material.penalty_p; }));
    k.push_back(real_key("material", "thickness", "mm", "out-of-plane thickness (plane stress)",
                         [](AppConfig& c) -> double& { return c.run.material.thickness; }));
    // [objective]
    k.push_back(real_key("objective", "w", "-", "weight on the output displacement term",
                         [](AppConfig& c) -> double& { return c.run.w; }));
    k.push_back(real_key("objective", "force_magnitude", "N", "magnitude of each input-face load",
                         [](AppConfig& c) -> double& { return c.run.force_magnitude; }));
    k.push_back(real_key("objective", "filter_radius", "elements", "density filter radius",
                         [](AppConfig& c) -> double& { return c.run.filter_radius; }));
    // [optimizer]
    k.push_back(ConfigKey{"optimizer", "formulation", "passive|active", "problem formulation",
                          [](AppConfig& c, const std::string& v) {
                            if (v == "passive") c.run.domain.formulation = Formulation::passive;
                            else if (v == "active") c.run.domain.formulation = Formulation::active;
                            else throw ConfigError("key 'optimizer.formulation': expected passive or active, got '" + v + "'");
                          },
                          [](const AppConfig& c) { return std::string(to_string(c.run.formulation())); }});
    k.push_back(real_key("optimizer", "volume_fraction", "-", "material budget V_f in [0.05, 1]",
                         [](AppConfig& c) -> double& { return c.run.volume_fraction; }));
    k.push_back(ConfigKey{"optimizer", "x_in", "mm | none", "prescribed actuation displacement (active only)",
                          [](AppConfig& c, const std::string& v) {
                            if (v == "none" || v.empty()) c.run.x_in.reset();
                            else c.run.x_in = detail::parse_double("optimizer.x_in", v);
                          },
                          [](const AppConfig& c) {
                            return c.run.x_in ? detail::format_double(*c.run.x_in) : std::string("none");
                          }});
    k.push_back(ConfigKey{"optimizer", "seed", "-", "base random seed (64-bit)",
                          [](AppConfig& c, const std::string& v) { c.run.seed = detail::parse_uint("optimizer.seed", v); },
                          [](const AppConfig& c) { return std::to_string(c.run.seed); }});
    k.push_back(ConfigKey{"optimizer", "init_style", "uniform|smoothed_noise", "initial density field",
                          [](AppConfig& c, const std::string& v) {
                            if (v == "uniform") c.run.init_style = InitStyle::uniform;
                            else if (v == "smoothed_noise") c.run.init_style = InitStyle::smoothed_noise;
                            else throw ConfigError("key 'optimizer.init_style': expected uniform or smoothed_noise, got '" + v + "'");
                          },
                          [](const AppConfig& c) { return std::string(to_string(c.run.init_style)); }});
    k.push_back(ConfigKey{"optimizer", "max_iters", "-", "iteration cap",
                          [](AppConfig& c, const std::string& v) {
                            c.run.max_iters = static_cast<int>(detail::parse_int("optimizer.max_iters", v));
                          },
                          [](const AppConfig& c) { return std::to_string(c.run.max_iters); }});
    k.push_back(real_key("optimizer", "move_limit", "-", "per-iteration density move limit",
                         [](AppConfig& c) -> double& { return c.run.move_limit; }));
    k.push_back(real_key("optimizer", "convergence_tol", "-", "stop when max density change falls below this",
                         [](AppConfig& c) -> double& { return c.run.convergence_tol; }));
    k.push_back(real_key("optimizer", "init_filter_radius", "elements", "smoothing radius of the seeded noise",
                         [](AppConfig& c) -> double& { return c.run.init_filter_radius; }));
    k.push_back(real_key("optimizer", "asym_init", "-", "initial asymptote distance (fraction of range)",
                         [](AppConfig& c) -> double& { return c.run.mma.asym_init; }));
    k.push_back(real_key("optimizer", "asym_grow", "-", "asymptote expansion factor",
                         [](AppConfig& c) -> double& { return c.run.mma.asym_grow; }));
    k.push_back(real_key("optimizer", "asym_shrink", "-", "asymptote contraction factor",
                         [](AppConfig& c) -> double& { return c.run.mma.asym_shrink; }));
    // [campaign]
    k.push_back(ConfigKey{"campaign", "sweep", "list (V_f, or mm for active)",
                          "swept values: volume fractions (passive) or input displacements (active)",
                          [](AppConfig& c, const std::string& v) { c.campaign.sweep = detail::parse_list("campaign.sweep", v); },
                          [](const AppConfig& c) { return detail::format_list(c.campaign.sweep); }});
    k.push_back(ConfigKey{"campaign", "seeds_per_point", "-", "runs per sweep value",
                          [](AppConfig& c, const std::string& v) {
                            c.campaign.seeds_per_point = static_cast<int>(detail::parse_int("campaign.seeds_per_point", v));
                          },
                          [](const AppConfig& c) { return std::to_string(c.campaign.seeds_per_point); }});
    k.push_back(ConfigKey{"campaign", "parallelism", "-", "worker threads",
                          [](AppConfig& c, const std::string& v) {
                            c.campaign.parallelism = static_cast<int>(detail::parse_int("campaign.parallelism", v));
                          },
                          [](const AppConfig& c) { return std::to_string(c.campaign.parallelism); }});
    return k;
  }();
  return keys;
}

/// Resolves "section.key" or a bare key that is unique across sections.
inline const ConfigKey& find_key(std::string_view name) {
  const ConfigKey* hit = nullptr;
  int matches = 0;
  for (const ConfigKey& k : config_schema()) {
    if (k.full() == name) return k;
    if (k.name == name) {
      hit = &k;
      ++matches;
    }
  }
  if (matches == 1) return *hit;
  if (matches > 1) throw ConfigError("ambiguous key '" + std::string(name) + "'; qualify it with its section");
  throw ConfigError("unknown key '" + std::string(name) + "'");
}

inline void set_key(AppConfig& cfg, std::string_view name, const std::string& value) {
  find_key(name).set(cfg, value);
}

/// key=value
inline void apply_override(AppConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  set_key(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline void apply_config_text(AppConfig& cfg, std::string_view text, std::string_view source = "<config>") {
  std::istringstream in{std::string(text)};
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cut = line.find_first_of("#;");
    const std::string t = detail::trim(cut == std::string::npos ? line : line.substr(0, cut));
    if (t.empty()) continue;
    const std::string where = std::string(source) + ":" + std::to_string(lineno) + ": ";
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + "malformed section header");
      section = detail::trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = detail::trim(std::string_view(t).substr(eq + 1));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      set_key(cfg, full, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

inline AppConfig load_config_file(const std::string& path, AppConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  apply_config_text(base, ss.str(), path);
  return base;
}

/// Canonical text for a configuration; feeding it back reproduces `cfg`.
inline std::string echo_config(const AppConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const ConfigKey& k : config_schema()) {
    if (k.section != section) {
      if (!section.empty()) os << "\n";
      section = k.section;
      os << "[" << section << "]\n";
    }
    os << k.name << " = " << k.get(cfg) << "  # " << k.unit << "\n";
  }
  return os.str();
}

/// Human-readable schema listing for --help.
inline std::string schema_help() {
  std::ostringstream os;
  os << "Configuration keys (section.key [unit] default: description):\n";
  const AppConfig defaults;
  for (const ConfigKey& k : config_schema()) {
    os << "  " << k.full() << " [" << k.unit << "] " << k.get(defaults) << ": " << k.help << "\n";
  }
  return os.str();
}

}  // namespace softfinger

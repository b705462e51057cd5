#pragma once

// Command-line front end: optimize, sweep, pareto, verify, export.
//
// Exit codes: 0 ok, 2 usage, 3 configuration, 4 runtime. Failures print a
// single line "error[<code>]: <kind>: <message>" on stderr.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "softfinger/campaign.hpp"
#include "softfinger/config.hpp"
#include "softfinger/optimizer.hpp"
#include "softfinger/pareto.hpp"
#include "softfinger/verify.hpp"

namespace softfinger::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitRuntime = 4;

inline constexpr const char* kParallelismEnv = "SOFTFINGER_PARALLELISM";

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;    // optimize
  std::string campaign_out;  // sweep
  std::string export_out;    // export
  std::optional<int> parallelism;
  std::string log_level = "info";
  std::optional<int> stop_after;  // hidden, for tests
  std::string campaign_dir;       // pareto / verify / export
  std::string export_format;
  bool front_only = false;
};

namespace detail {

inline std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

class Logger {
 public:
  Logger(std::ostream& os, LogLevel level) : os_(os), level_(level) {}
  void operator()(LogLevel l, const std::string& msg) const {
    if (static_cast<int>(l) > static_cast<int>(level_)) return;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    os_ << names[static_cast<int>(l)] << ": " << msg << '\n';
  }

 private:
  std::ostream& os_;
  LogLevel level_;
};

inline LogLevel parse_level(const std::string& s) {
  if (s == "error") return LogLevel::error;
  if (s == "warn") return LogLevel::warn;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw ConfigError("log level must be error, warn, info or debug");
}

/// Precedence: defaults < config file < environment < --parallelism < --override.
inline AppConfig resolve_config(const Options& o) {
  AppConfig cfg;
  if (!o.config_path.empty()) cfg = load_config_file(o.config_path);
  if (const char* env = std::getenv(kParallelismEnv); env != nullptr && *env != '\0') {
    set_key(cfg, "campaign.parallelism", env);
  }
  if (o.parallelism) cfg.campaign.parallelism = *o.parallelism;
  for (const auto& ov : o.overrides) apply_override(cfg, ov);
  return cfg;
}

inline double sweep_value_of(const AppConfig& cfg) {
  return cfg.sweep_kind() == SweepKind::volume_fraction ? cfg.run.volume_fraction : cfg.run.x_in.value_or(0.0);
}

inline std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

/// Run configuration stored next to a result.
inline AppConfig run_config(const fs::path& campaign_dir, const std::string& run_id) {
  return load_config_file((campaign_dir / "runs" / run_id / "config").string());
}

inline fs::path campaign_root(const fs::path& dir) {
  if (fs::is_directory(dir / "runs")) return dir;
  if (dir.filename() == "runs") return dir.parent_path();
  return dir;
}

inline std::string front_svg(const std::vector<RunRecord>& recs, const std::vector<ParetoPoint>& flagged) {
  constexpr double W = 800.0;
  constexpr double H = 560.0;
  constexpr double ml = 90.0;
  constexpr double mr = 150.0;
  constexpr double mt = 30.0;
  constexpr double mb = 70.0;
  std::vector<const RunRecord*> pts;
  for (const auto& r : recs) {
    if (r.completed() && std::isfinite(r.mean_output_disp) && std::isfinite(r.total_strain_energy)) pts.push_back(&r);
  }
  double x0 = 0.0;
  double x1 = 1.0;
  double y0 = 0.0;
  double y1 = 1.0;
  if (!pts.empty()) {
    x0 = x1 = pts.front()->mean_output_disp;
    y0 = y1 = pts.front()->total_strain_energy;
    for (const RunRecord* r : pts) {
      x0 = std::min(x0, r->mean_output_disp);
      x1 = std::max(x1, r->mean_output_disp);
      y0 = std::min(y0, r->total_strain_energy);
      y1 = std::max(y1, r->total_strain_energy);
    }
  }
  if (x1 - x0 <= 0.0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 - y0 <= 0.0) {
    y0 -= 0.5;
    y1 += 0.5;
  }
  const double px = (x1 - x0) * 0.05;
  const double py = (y1 - y0) * 0.05;
  x0 -= px;
  x1 += px;
  y0 -= py;
  y1 += py;
  auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * (W - ml - mr); };
  auto sy = [&](double y) { return H - mb - (y - y0) / (y1 - y0) * (H - mt - mb); };

  std::vector<double> values;
  for (const RunRecord* r : pts) values.push_back(r->sweep_value);
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  static constexpr const char* palette[] = {"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                                            "#66a61e", "#e6ab02", "#a6761d", "#666666"};
  auto colour = [&](double v) {
    const auto it = std::lower_bound(values.begin(), values.end(), v);
    return palette[static_cast<std::size_t>(it - values.begin()) % 8];
  };

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n"
     << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb << "\"/>\n"
     << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb << "\"/>\n</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    os << "<text x=\"" << sx(xv) << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\">" << fmt(xv, 4)
       << "</text>\n";
    os << "<text x=\"" << ml - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv, 4) << "</text>\n";
  }
  os << "<text class=\"xlabel\" x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 20
     << "\" text-anchor=\"middle\" font-size=\"13\">mean output displacement (mm)</text>\n";
  os << "<text class=\"ylabel\" transform=\"translate(20," << (mt + H - mb) / 2
     << ") rotate(-90)\" text-anchor=\"middle\" font-size=\"13\">strain energy (N\xC2\xB7mm)</text>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double yy = mt + 20.0 * static_cast<double>(i);
    os << "<circle cx=\"" << W - mr + 20 << "\" cy=\"" << yy << "\" r=\"4\" fill=\"" << colour(values[i])
       << "\" class=\"legend\"/><text x=\"" << W - mr + 30 << "\" y=\"" << yy + 4 << "\">" << fmt(values[i])
       << "</text>\n";
  }
  os << "</g>\n<g class=\"runs\">\n";
  for (const RunRecord* r : pts) {
    os << "<circle class=\"run\" cx=\"" << sx(r->mean_output_disp) << "\" cy=\"" << sy(r->total_strain_energy)
       << "\" r=\"3\" fill=\"" << colour(r->sweep_value) << "\"><title>" << r->run_id << "</title></circle>\n";
  }
  os << "</g>\n";
  const std::vector<ParetoPoint> front = front_members(flagged);
  os << "<polyline class=\"front\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < front.size(); ++i) {
    os << (i ? " " : "") << sx(front[i].mean_output_disp) << ',' << sy(front[i].total_strain_energy);
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

}  // namespace detail

/// Parses argv and runs the selected subcommand. `stop` is raised by signal
/// handlers to end a sweep gracefully.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
                   const std::atomic<bool>* stop = nullptr) {
  CLI::App app{"Topology optimisation of soft gripper fingers"};
  app.require_subcommand(1);
  app.footer("\n" + schema_help() + "\nEnvironment: " + kParallelismEnv +
             " sets the default worker count (--parallelism and --override take precedence).\n"
             "Exit codes: 0 ok, 2 usage, 3 configuration, 4 runtime.");
  Options o;

  auto add_config_opts = [&](CLI::App* sc) {
    sc->add_option("-c,--config", o.config_path, "configuration file");
    sc->add_option("--override", o.overrides, "key=value, repeatable; wins over file and environment")
        ->allow_extra_args(false);
    sc->add_option("--log-level", o.log_level, "error|warn|info|debug");
  };

  CLI::App* opt = app.add_subcommand("optimize", "run one optimisation");
  add_config_opts(opt);
  opt->add_option("-o,--output", o.output_dir, "output directory")->default_val("softfinger_out");

  CLI::App* sweep = app.add_subcommand("sweep", "multi-start campaign over the configured sweep");
  add_config_opts(sweep);
  sweep->add_option("-o,--output", o.campaign_out, "campaign directory")->default_val("campaign");
  sweep->add_option("-j,--parallelism", o.parallelism, "worker threads");
  sweep->add_option("--stop-after", o.stop_after, "stop after N new runs")->group("");

  CLI::App* pareto = app.add_subcommand("pareto", "non-dominated runs of a campaign");
  pareto->add_option("dir", o.campaign_dir, "campaign directory")->required();
  pareto->add_option("--log-level", o.log_level, "error|warn|info|debug");

  CLI::App* verify = app.add_subcommand("verify", "verification battery over a campaign");
  verify->add_option("dir", o.campaign_dir, "campaign directory")->required();
  verify->add_flag("--front-only", o.front_only, "only verify non-dominated runs");
  verify->add_option("--log-level", o.log_level, "error|warn|info|debug");

  CLI::App* exp = app.add_subcommand("export", "plot-ready exports");
  exp->add_option("dir", o.campaign_dir, "campaign directory")->required();
  exp->add_option("-f,--format", o.export_format, "csv|pgm_bundle|front_svg")
      ->required()
      ->check(CLI::IsMember({"csv", "pgm_bundle", "front_svg"}));
  exp->add_option("-o,--output", o.export_out, "output file or directory");
  exp->add_option("--log-level", o.log_level, "error|warn|info|debug");

  auto fail = [&](int code, const std::string& kind, const std::string& msg) {
    err << "error[" << code << "]: " << kind << ": " << detail::one_line(msg) << '\n';
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return fail(kExitUsage, "usage", e.what());
  }

  try {
    const detail::Logger log(err, detail::parse_level(o.log_level));

    if (opt->parsed()) {
      const AppConfig cfg = detail::resolve_config(o);
      cfg.run.validate();
      const double v = detail::sweep_value_of(cfg);
      const Problem prob(cfg.run);
      RunResult res = run(cfg.run, prob);
      res.run_id = make_run_id(cfg.sweep_kind(), v, cfg.run.seed);
      persist_run(o.output_dir, cfg, res, v, &prob.mesh);
      const fs::path dir = fs::path(o.output_dir) / "runs" / res.run_id;
      if (res.failed) return fail(kExitRuntime, "runtime", "run " + res.run_id + " failed: " + res.error);
      const HistoryRow& h = res.last();
      out << "run " << res.run_id << (res.converged ? " converged" : " stopped") << " after " << h.iter
          << " iterations\n"
          << "  phi " << detail::fmt(h.phi, 10) << ", mean output displacement " << detail::fmt(h.mean_output_disp, 8)
          << " mm, strain energy " << detail::fmt(h.strain_energy, 8) << " N mm, volume "
          << detail::fmt(h.volume_fraction, 6) << '\n'
          << "  written to " << dir.string() << '\n';
      return kExitOk;
    }

    if (sweep->parsed()) {
      const AppConfig cfg = detail::resolve_config(o);
      CampaignSpec spec{cfg, o.campaign_out, o.stop_after};
      spec.validate();
      for (const CampaignJob& j : campaign_jobs(spec)) j.config.run.validate();
      (void)build_domain(make_finger_spec(cfg.run.domain));
      log(LogLevel::info, "campaign of " + std::to_string(cfg.campaign.sweep.size() * static_cast<std::size_t>(cfg.campaign.seeds_per_point)) +
                              " runs, " + std::to_string(cfg.campaign.parallelism) + " workers, output " +
                              o.campaign_out);
      const Manifest man = run_campaign(spec, stop, [&](const std::string& id, const std::string& status, int n) {
        log(LogLevel::info, "[" + std::to_string(n) + "] " + id + " " + status);
      });
      const std::size_t pending = man.count("pending");
      out << "campaign " << o.campaign_out << ": " << man.runs.size() << " runs, " << man.count("completed")
          << " completed, " << man.count("failed") << " failed, " << pending << " pending; "
          << man.executed_this_session << " executed now; front " << man.front.size() << '\n';
      if (pending > 0) log(LogLevel::warn, "campaign interrupted; rerun the same command to resume");
      return kExitOk;
    }

    if (pareto->parsed()) {
      const fs::path root = detail::campaign_root(o.campaign_dir);
      if (!fs::is_directory(root)) return fail(kExitRuntime, "runtime", "no such directory '" + root.string() + "'");
      std::vector<std::string> warnings;
      const std::vector<RunRecord> recs = load_records(root, &warnings);
      for (const auto& w : warnings) log(LogLevel::warn, w);
      const std::vector<ParetoPoint> front = front_members(pareto_points(recs));
      if (recs.empty()) log(LogLevel::warn, "no run records under '" + root.string() + "'; front is empty");
      out << "front " << front.size() << " of " << recs.size() << " runs\n";
      out << "run_id,mean_output_disp_mm,strain_energy_Nmm\n";
      for (const auto& p : front) {
        out << p.run_id << ',' << softfinger::detail::format_double(p.mean_output_disp) << ','
            << softfinger::detail::format_double(p.total_strain_energy) << '\n';
      }
      return kExitOk;
    }

    if (verify->parsed()) {
      const fs::path root = detail::campaign_root(o.campaign_dir);
      std::vector<std::string> warnings;
      const std::vector<RunRecord> recs = load_records(root, &warnings);
      for (const auto& w : warnings) log(LogLevel::warn, w);
      std::set<std::string> front_ids;
      for (const auto& p : front_members(pareto_points(recs))) front_ids.insert(p.run_id);
      struct Row {
        std::string id;
        double se;
        VerificationReport rep;
      };
      std::vector<Row> rows;
      std::map<std::string, std::shared_ptr<const Mesh>> meshes;
      for (const RunRecord& r : recs) {
        if (!r.completed()) continue;
        if (o.front_only && !front_ids.count(r.run_id)) continue;
        const AppConfig cfg = detail::run_config(root, r.run_id);
        const std::string key = echo_config([&] {
          AppConfig c;
          c.run.domain = cfg.run.domain;
          return c;
        }());
        auto& mesh = meshes[key];
        if (!mesh) mesh = std::make_shared<const Mesh>(build_domain(make_finger_spec(cfg.run.domain)));
        const Design d = make_design(r.run_id, mesh, DensityField{r.final_rho}, cfg.run.formulation(), cfg.run.x_in);
        VerificationReport rep = verify_design(d, cfg.run.material);
        write_file_atomic(root / "runs" / r.run_id / "verification", rep.to_text());
        rows.push_back({r.run_id, r.total_strain_energy, std::move(rep)});
      }
      std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
        const double ka = a.rep.tip_stiffness.value_or(-1.0);
        const double kb = b.rep.tip_stiffness.value_or(-1.0);
        return ka > kb;
      });
      auto cell = [](const std::optional<double>& v) { return v ? detail::fmt(*v) : std::string("undefined"); };
      out << "rank,run_id,valid,tip_stiffness_N_per_mm,adaptivity,max_von_mises_MPa,strain_energy_Nmm\n";
      std::vector<double> se;
      std::vector<double> ks;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        out << i + 1 << ',' << r.id << ',' << (r.rep.valid ? "true" : "false") << ',' << cell(r.rep.tip_stiffness)
            << ',' << cell(r.rep.adaptivity) << ',' << cell(r.rep.max_von_mises) << ',' << detail::fmt(r.se) << '\n';
        if (r.rep.tip_stiffness) {
          se.push_back(r.se);
          ks.push_back(*r.rep.tip_stiffness);
        }
      }
      const std::optional<double> rho = spearman(se, ks);
      out << "spearman(strain_energy, tip_stiffness) = " << (rho ? detail::fmt(*rho) : std::string("undefined"))
          << " over " << se.size() << " designs\n";
      return kExitOk;
    }

    if (exp->parsed()) {
      const fs::path root = detail::campaign_root(o.campaign_dir);
      if (!fs::exists(root / "manifest")) {
        return fail(kExitRuntime, "runtime", "no manifest in '" + root.string() + "'");
      }
      std::vector<std::string> warnings;
      const std::vector<RunRecord> recs = load_records(root, &warnings);
      for (const auto& w : warnings) log(LogLevel::warn, w);
      if (o.export_format == "csv") {
        const fs::path dst = o.export_out.empty() ? root / "runs.csv" : fs::path(o.export_out);
        std::ostringstream os;
        os << "run_id,status";
        for (const ConfigKey& k : config_schema()) {
          if (k.section != "campaign") os << ',' << k.full();
        }
        os << ",converged,iterations,mean_output_disp_mm,strain_energy_Nmm,volume_fraction\n";
        for (const RunRecord& r : recs) {
          AppConfig cfg;
          try {
            cfg = detail::run_config(root, r.run_id);
          } catch (const Error& e) {
            log(LogLevel::warn, "skipping run '" + r.run_id + "': " + e.what());
            continue;
          }
          os << detail::csv_escape(r.run_id) << ',' << r.status;
          for (const ConfigKey& k : config_schema()) {
            if (k.section != "campaign") os << ',' << detail::csv_escape(k.get(cfg));
          }
          os << ',' << (r.converged ? "true" : "false") << ',' << r.iterations << ',';
          if (r.completed()) {
            os << softfinger::detail::format_double(r.mean_output_disp) << ','
               << softfinger::detail::format_double(r.total_strain_energy) << ','
               << softfinger::detail::format_double(r.volume_fraction);
          } else {
            os << ",,";
          }
          os << '\n';
        }
        if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
        write_file_atomic(dst, os.str());
        out << "wrote " << dst.string() << '\n';
      } else if (o.export_format == "pgm_bundle") {
        const fs::path dst = o.export_out.empty() ? root / "densities" : fs::path(o.export_out);
        fs::create_directories(dst);
        std::size_t n = 0;
        for (const RunRecord& r : recs) {
          const fs::path src = root / "runs" / r.run_id / "final_density.pgm";
          if (!fs::exists(src)) {
            log(LogLevel::warn, "run '" + r.run_id + "' has no density image");
            continue;
          }
          fs::copy_file(src, dst / (r.run_id + ".pgm"), fs::copy_options::overwrite_existing);
          ++n;
        }
        out << "wrote " << n << " images to " << dst.string() << '\n';
      } else {
        const fs::path dst = o.export_out.empty() ? root / "front.svg" : fs::path(o.export_out);
        if (dst.has_parent_path()) fs::create_directories(dst.parent_path());
        write_file_atomic(dst, detail::front_svg(recs, pareto_points(recs)));
        out << "wrote " << dst.string() << '\n';
      }
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const DomainError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kExitRuntime, "runtime", e.what());
  }
  return fail(kExitUsage, "usage", "no subcommand");
}

}  // namespace softfinger::cli

#pragma once

// Post-processing of finished designs: binarization, tip stiffness, shape
// adaptivity and peak stress in linear FEM.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include "softfinger/domain.hpp"
#include "softfinger/error.hpp"
#include "softfinger/fem.hpp"

namespace softfinger {

struct Binarization {
  DensityField field;                  // 0/1 per active element, non-design = 1
  std::size_t target_solid = 0;        // round(target_vf * design elements)
  double volume_error_elements = 0.0;  // |target_solid - target_vf * design elements|
  std::size_t removed_islands = 0;     // solid design elements cut off from the supports
  std::size_t final_solid = 0;         // solid design elements after island removal
  bool output_connected = false;
  [[nodiscard]] double final_volume_fraction(std::size_t design_count) const {
    return static_cast<double>(final_solid) / static_cast<double>(design_count);
  }
};

namespace detail {

/// Solid elements edge-connected to an element touching a seed node.
inline std::vector<std::uint8_t> support_connected(const Mesh& m, const std::vector<std::uint8_t>& solid,
                                                   const std::vector<int>& seed_nodes) {
  std::vector<std::uint8_t> is_seed(m.nodes.size(), 0);
  for (int n : seed_nodes) is_seed[static_cast<std::size_t>(n)] = 1;
  std::vector<std::uint8_t> keep(m.active_count(), 0);
  std::queue<std::size_t> q;
  for (std::size_t a = 0; a < m.active_count(); ++a) {
    if (!solid[a]) continue;
    for (int n : m.elements[static_cast<std::size_t>(m.active_ids[a])]) {
      if (is_seed[static_cast<std::size_t>(n)]) {
        keep[a] = 1;
        q.push(a);
        break;
      }
    }
  }
  while (!q.empty()) {
    const int e = m.active_ids[q.front()];
    q.pop();
    const int i = e % m.nx;
    const int j = e / m.nx;
    const int nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
    for (const auto& c : nb) {
      if (c[0] < 0 || c[0] >= m.nx || c[1] < 0 || c[1] >= m.ny) continue;
      const int b = m.active_index[static_cast<std::size_t>(m.element_id(c[0], c[1]))];
      if (b < 0 || !solid[static_cast<std::size_t>(b)] || keep[static_cast<std::size_t>(b)]) continue;
      keep[static_cast<std::size_t>(b)] = 1;
      q.push(static_cast<std::size_t>(b));
    }
  }
  return keep;
}

inline std::vector<int> constrained_nodes(const BoundaryConditions& bc) {
  std::vector<int> nodes;
  for (int d : bc.fixed_dofs) nodes.push_back(d / 2);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  return nodes;
}

}  // namespace detail

/// Thresholds `rho` so exactly round(target_vf * N) design elements are solid
/// (highest densities first, ties to the lower index), then drops material
/// not edge-connected to an element touching a support node. `output_nodes`
/// decide connectivity of the load path.
inline Binarization binarize(const Mesh& m, const DensityField& rho, double target_vf,
                             const std::vector<int>& support_nodes, const std::vector<int>& output_nodes) {
  validate_density(m, rho);
  if (!(target_vf >= 0.0 && target_vf <= 1.0)) throw Error("binarize: target volume fraction outside [0, 1]");
  const std::size_t nd = m.design_count();
  Binarization b;
  b.field.rho.assign(m.active_count(), 1.0);
  std::vector<int> order(m.design_positions);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return rho[static_cast<std::size_t>(x)] > rho[static_cast<std::size_t>(y)];
  });
  const double exact = target_vf * static_cast<double>(nd);
  b.target_solid = std::min(nd, static_cast<std::size_t>(std::llround(exact)));
  b.volume_error_elements = std::abs(static_cast<double>(b.target_solid) - exact);
  for (int p : m.design_positions) b.field.rho[static_cast<std::size_t>(p)] = 0.0;
  for (std::size_t k = 0; k < b.target_solid; ++k) b.field.rho[static_cast<std::size_t>(order[k])] = 1.0;

  std::vector<std::uint8_t> solid(m.active_count());
  for (std::size_t a = 0; a < solid.size(); ++a) solid[a] = b.field.rho[a] > 0.5;
  const std::vector<std::uint8_t> keep = detail::support_connected(m, solid, support_nodes);
  std::vector<std::uint8_t> design(m.active_count(), 0);
  for (int p : m.design_positions) design[static_cast<std::size_t>(p)] = 1;
  for (std::size_t a = 0; a < solid.size(); ++a) {
    if (solid[a] && !keep[a] && design[a]) {
      b.field.rho[a] = 0.0;
      ++b.removed_islands;
    }
  }
  for (int p : m.design_positions) b.final_solid += b.field.rho[static_cast<std::size_t>(p)] > 0.5 ? 1 : 0;

  std::vector<std::uint8_t> out(m.nodes.size(), 0);
  for (int n : output_nodes) out[static_cast<std::size_t>(n)] = 1;
  for (std::size_t a = 0; a < keep.size() && !b.output_connected; ++a) {
    if (!keep[a]) continue;
    for (int n : m.elements[static_cast<std::size_t>(m.active_ids[a])]) {
      if (out[static_cast<std::size_t>(n)]) b.output_connected = true;
    }
  }
  return b;
}

/// A design ready for the verification battery. Finger designs come from
/// make_design(); benchmark surrogates fill the fields directly.
struct Design {
  std::string id;
  std::shared_ptr<const Mesh> mesh;
  DensityField rho;
  BoundaryConditions bc;
  NodeSelector tip;                // stiffness load face and tip measurement
  NodeSelector mid;                // adaptivity load face
  std::optional<LoadCase> drive;   // grasp-position actuation (active designs)
  bool valid = true;
  std::string invalid_reason;
  std::optional<Binarization> binarization;
};

/// Binarizes a finger design at its continuous volume and wires up the
/// selectors: F_in3 loads passive designs, F_in2 active ones.
inline Design make_design(std::string id, std::shared_ptr<const Mesh> mesh, const DensityField& rho,
                          Formulation formulation, std::optional<double> x_in) {
  const Mesh& m = *mesh;
  if (!m.spec) throw Error("make_design needs a finger domain");
  Design d;
  d.id = std::move(id);
  d.bc = domain_boundary_conditions(m);
  d.tip = make_selector(m, "output");
  d.mid = make_selector(m, formulation == Formulation::passive ? "F_in3" : "F_in2");
  if (formulation == Formulation::active) {
    if (!x_in) throw ConfigError("active design needs x_in");
    d.drive = LoadCase{"X_in", LoadKind::prescribed_displacement, make_selector(m, "actuation"), *x_in,
                       m.spec->actuation_direction};
  }
  Binarization b = binarize(m, rho, volume_fraction(m, rho), m.support_nodes, d.tip.nodes);
  d.rho = b.field;
  d.valid = b.output_connected;
  if (!d.valid) d.invalid_reason = "no load path from the supports to the tip";
  d.binarization = std::move(b);
  d.mesh = std::move(mesh);
  return d;
}

namespace detail {

inline FemModel design_model(const Design& d, const MaterialParams& mat) {
  FemModel model(*d.mesh, mat, d.bc);
  model.assemble(d.rho);
  return model;
}

inline LoadCase unit_x_load(std::string label, const NodeSelector& sel) {
  return LoadCase{std::move(label), LoadKind::force, sel, 1.0, {1.0, 0.0}};
}

inline void require_valid(const Design& d) {
  if (!d.valid) throw RuntimeError("design '" + d.id + "' is invalid: " + d.invalid_reason);
}

}  // namespace detail

/// 1 N along +x spread over the tip nodes; returns 1 N / mean tip x-displacement
/// in N/mm. Driven DOFs are held, which by superposition is the response about
/// the grasp position.
inline double tip_stiffness(const Design& d, const MaterialParams& mat) {
  detail::require_valid(d);
  const FemModel model = detail::design_model(d, mat);
  const SolveResult r = model.solve_case(detail::unit_x_load("tip", d.tip), d.tip);
  if (!(r.output_disp > 0.0) || !std::isfinite(r.output_disp)) {
    throw SolverError("tip displacement is not positive under a tip load");
  }
  return 1.0 / r.output_disp;
}

/// Relative change in x-displacement between the loaded face and the tip
/// under 1 N on the face. Empty when the face barely moves.
struct AdaptivityResult {
  double mid_disp = 0.0;
  double tip_disp = 0.0;
  std::optional<double> value;
};

inline AdaptivityResult adaptivity_detail(const Design& d, const MaterialParams& mat) {
  detail::require_valid(d);
  const FemModel model = detail::design_model(d, mat);
  const SolveResult r = model.solve_case(detail::unit_x_load("mid", d.mid), d.tip);
  AdaptivityResult a;
  a.mid_disp = d.mid.apply(r.u);
  a.tip_disp = r.output_disp;
  if (std::abs(a.mid_disp) >= 1e-9) a.value = (a.mid_disp - a.tip_disp) / std::abs(a.mid_disp);
  return a;
}

inline std::optional<double> adaptivity(const Design& d, const MaterialParams& mat) {
  return adaptivity_detail(d, mat).value;
}

struct VerificationReport {
  std::string design_id;
  bool valid = false;
  bool partial = false;
  std::vector<std::string> errors;
  std::optional<double> tip_stiffness;          // N/mm
  std::optional<double> adaptivity;             // dimensionless
  std::optional<double> max_von_mises;          // MPa, worst of the tip load and the actuation
  std::optional<double> max_von_mises_tip;      // MPa, 1 N tip load
  std::optional<double> max_von_mises_drive;    // MPa, prescribed actuation (active only)
  std::optional<double> tip_free_disp;          // mm, tip x under actuation alone
  std::optional<double> actuation_reaction_proxy;  // N, reaction on the driven face; not a contact force
  double volume_fraction_binary = 0.0;
  double element_size = 0.0;
  std::size_t removed_islands = 0;

  [[nodiscard]] std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "# verification report\n"
       << "# linear superposition: the tip load is applied about the undeformed state with actuation DOFs held;\n"
       << "# no load-order effects are modelled\n"
       << "# stresses are element-centroid values and depend on the element size\n";
    auto opt = [&](const char* key, const std::optional<double>& v) {
      os << key << " = ";
      if (v) {
        os << *v;
      } else {
        os << "undefined";
      }
      os << '\n';
    };
    os << "design_id = " << design_id << '\n'
       << "valid = " << (valid ? "true" : "false") << '\n'
       << "partial = " << (partial ? "true" : "false") << '\n';
    opt("tip_stiffness_N_per_mm", tip_stiffness);
    opt("adaptivity", adaptivity);
    opt("max_von_mises_MPa", max_von_mises);
    opt("max_von_mises_tip_load_MPa", max_von_mises_tip);
    opt("max_von_mises_actuation_MPa", max_von_mises_drive);
    opt("tip_free_disp_mm", tip_free_disp);
    opt("actuation_reaction_proxy_N", actuation_reaction_proxy);
    os << "volume_fraction_binary = " << volume_fraction_binary << '\n'
       << "element_size_mm = " << element_size << '\n'
       << "removed_islands = " << removed_islands << '\n';
    for (const auto& e : errors) os << "error = " << e << '\n';
    return os.str();
  }
};

/// Runs every metric; failures are listed and mark the report partial.
inline VerificationReport verify_design(const Design& d, const MaterialParams& mat) {
  VerificationReport rep;
  rep.design_id = d.id;
  rep.valid = d.valid;
  rep.element_size = d.mesh->element_size;
  {
    std::size_t solid = 0;
    for (int p : d.mesh->design_positions) solid += d.rho[static_cast<std::size_t>(p)] > 0.5 ? 1 : 0;
    rep.volume_fraction_binary =
        d.mesh->design_count() ? static_cast<double>(solid) / static_cast<double>(d.mesh->design_count()) : 0.0;
  }
  if (d.binarization) rep.removed_islands = d.binarization->removed_islands;
  if (!d.valid) {
    rep.partial = true;
    rep.errors.push_back("invalid design: " + d.invalid_reason);
    return rep;
  }
  auto attempt = [&](const char* what, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      rep.partial = true;
      rep.errors.push_back(std::string(what) + ": " + e.what());
    }
  };
  attempt("tip_stiffness", [&] { rep.tip_stiffness = tip_stiffness(d, mat); });
  attempt("adaptivity", [&] {
    rep.adaptivity = adaptivity(d, mat);
    if (!rep.adaptivity) throw SolverError("loaded face displacement below 1e-9 mm");
  });
  attempt("stress", [&] {
    const FemModel model = detail::design_model(d, mat);
    const SolveResult tip = model.solve_case(detail::unit_x_load("tip", d.tip), d.tip);
    rep.max_von_mises_tip = von_mises(*d.mesh, d.rho, mat, tip.u).max_solid();
    rep.max_von_mises = rep.max_von_mises_tip;
    if (d.drive) {
      const SolveResult dr = model.solve_case(*d.drive, d.tip);
      rep.max_von_mises_drive = von_mises(*d.mesh, d.rho, mat, dr.u).max_solid();
      rep.max_von_mises = std::max(*rep.max_von_mises_tip, *rep.max_von_mises_drive);
      rep.tip_free_disp = dr.output_disp;
      double reaction = 0.0;
      for (std::size_t k = 0; k < d.drive->selector.nodes.size(); ++k) {
        const int n = d.drive->selector.nodes[k];
        reaction += dr.reactions[2 * n] * d.drive->direction.x + dr.reactions[2 * n + 1] * d.drive->direction.y;
      }
      rep.actuation_reaction_proxy = reaction;
    } else {
      rep.tip_free_disp = 0.0;
    }
  });
  return rep;
}

/// Fractional ranks (1-based, ties averaged).
inline std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

/// Spearman rank correlation (Pearson on fractional ranks). Empty when either
/// side is constant or fewer than two pairs are given.
inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw Error("spearman: length mismatch");
  if (x.size() < 2) return std::nullopt;
  const std::vector<double> rx = ranks(x);
  const std::vector<double> ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace softfinger

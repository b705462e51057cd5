#pragma once

// One topology-optimization run: seeded initial field, filter -> objective ->
// adjoint gradient -> moving-asymptote update, repeated until the largest
// density change falls below tolerance.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "softfinger/domain.hpp"
#include "softfinger/error.hpp"
#include "softfinger/fem.hpp"
#include "softfinger/filter.hpp"
#include "softfinger/sensitivity.hpp"

namespace softfinger {

enum class InitStyle { uniform, smoothed_noise };

inline std::string_view to_string(InitStyle s) { return s == InitStyle::uniform ? "uniform" : "smoothed_noise"; }

struct MmaSettings {
  double asym_init = 0.5;
  double asym_grow = 1.2;
  double asym_shrink = 0.7;
};

struct RunConfig {
  FingerLayout domain;  // formulation lives here
  MaterialParams material;
  double w = 1e5;
  double force_magnitude = 1.0;  // N, per input face
  double volume_fraction = 0.3;
  std::optional<double> x_in;  // mm, active only
  std::uint64_t seed = 0;
  InitStyle init_style = InitStyle::smoothed_noise;
  int max_iters = 300;
  double move_limit = 0.2;
  double convergence_tol = 0.01;
  double filter_radius = 2.0;
  double init_filter_radius = 3.0;
  MmaSettings mma;

  [[nodiscard]] Formulation formulation() const { return domain.formulation; }

  void validate() const {
    if (!(volume_fraction >= 0.05 && volume_fraction <= 1.0)) throw ConfigError("volume_fraction must lie in [0.05, 1]");
    if (formulation() == Formulation::active && !x_in) throw ConfigError("active formulation requires x_in");
    if (formulation() == Formulation::passive && x_in) throw ConfigError("passive formulation forbids x_in");
    if (x_in && !(*x_in > 0.0)) throw ConfigError("x_in must be positive");
    if (max_iters < 0) throw ConfigError("max_iters must be >= 0");
    if (!(move_limit > 0.0 && move_limit <= 1.0)) throw ConfigError("move_limit must lie in (0, 1]");
    if (!(convergence_tol > 0.0)) throw ConfigError("convergence_tol must be positive");
    if (!(force_magnitude > 0.0)) throw ConfigError("force_magnitude must be positive");
    material.validate();
  }
};

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double unit_double(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Design-variable vector (one entry per design element).
///  uniform        -> every entry equals V_f
///  smoothed_noise -> seeded noise filtered at init_filter_radius, shifted to
///                    mean V_f (both before and after the optimization filter)
///                    and stretched until it touches [0.01, 1].
inline std::vector<double> init_design(const RunConfig& cfg, const Mesh& mesh, const FilterKernel& physics_filter) {
  const std::size_t n = mesh.design_count();
  const double vf = cfg.volume_fraction;
  std::vector<double> x(n, vf);
  if (cfg.init_style == InitStyle::uniform || n == 0) return x;

  std::mt19937_64 rng(cfg.seed);
  std::vector<double> noise(n);
  for (double& v : noise) v = unit_double(rng);
  std::vector<double> d = apply_filter(make_filter(mesh, cfg.init_filter_radius), noise);

  // Remove components along the plain mean and along the filtered mean so
  // both equal V_f.
  const double nn = static_cast<double>(n);
  std::vector<double> c = chain_rule(physics_filter, std::vector<double>(n, 1.0 / nn));
  double mean_d = 0.0, cd = 0.0, cc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mean_d += d[i] / nn;
    cd += c[i] * d[i];
    cc += c[i] * c[i];
  }
  double beta = 0.0;
  if (cc - 1.0 / nn > 1e-15 / nn) beta = (cd - mean_d) / (cc - 1.0 / nn);
  const double alpha = mean_d - beta / nn;
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] -= alpha + beta * c[i];
    lo = std::min(lo, d[i]);
    hi = std::max(hi, d[i]);
  }
  constexpr double floor_density = 0.01;
  double s = std::numeric_limits<double>::infinity();
  if (lo < 0.0) s = std::min(s, (vf - floor_density) / -lo);
  if (hi > 0.0) s = std::min(s, (1.0 - vf) / hi);
  if (!std::isfinite(s)) s = 0.0;
  for (std::size_t i = 0; i < n; ++i) x[i] = std::clamp(vf + s * d[i], floor_density, 1.0);
  return x;
}

inline DensityField init_density(const RunConfig& cfg, const Mesh& mesh) {
  const FilterKernel k = make_filter(mesh, cfg.filter_radius);
  return expand_design(mesh, init_design(cfg, mesh, k));
}

/// Moving-asymptote update for min f(x) s.t. sum(v x) <= limit, x in [0, 1].
/// The objective uses the usual convex reciprocal approximation; the single
/// linear constraint is kept exact and handled by bisection on its multiplier.
class MmaUpdater {
 public:
  explicit MmaUpdater(std::size_t n, MmaSettings settings = {}, double move_limit = 0.2)
      : n_(n), s_(settings), move_(move_limit), low_(n), upp_(n) {}

  struct Diagnostics {
    double multiplier = 0.0;
    double volume = 0.0;
    int bisections = 0;
  };

  /// Returns the next iterate. `grad` is the objective gradient at `x`.
  std::vector<double> step(std::span<const double> x, std::span<const double> grad, std::span<const double> vgrad,
                           double limit) {
    if (x.size() != n_ || grad.size() != n_ || vgrad.size() != n_) throw RuntimeError("mma: size mismatch");
    constexpr double xmin = 0.0, xmax = 1.0, range = xmax - xmin;
    constexpr double raa0 = 1e-5, albefa = 0.1;

    for (std::size_t j = 0; j < n_; ++j) {
      if (iter_ < 2) {
        low_[j] = x[j] - s_.asym_init * range;
        upp_[j] = x[j] + s_.asym_init * range;
      } else {
        const double t = (x[j] - x1_[j]) * (x1_[j] - x2_[j]);
        const double gamma = t > 0.0 ? s_.asym_grow : (t < 0.0 ? s_.asym_shrink : 1.0);
        low_[j] = x[j] - gamma * (x1_[j] - low_[j]);
        upp_[j] = x[j] + gamma * (upp_[j] - x1_[j]);
        low_[j] = std::clamp(low_[j], x[j] - 10.0 * range, x[j] - 0.01 * range);
        upp_[j] = std::clamp(upp_[j], x[j] + 0.01 * range, x[j] + 10.0 * range);
      }
    }

    std::vector<double> alpha(n_), beta(n_), p(n_), q(n_);
    for (std::size_t j = 0; j < n_; ++j) {
      alpha[j] = std::max({xmin, low_[j] + albefa * (x[j] - low_[j]), x[j] - move_ * range});
      beta[j] = std::min({xmax, upp_[j] - albefa * (upp_[j] - x[j]), x[j] + move_ * range});
      const double gp = std::max(grad[j], 0.0);
      const double gm = std::max(-grad[j], 0.0);
      const double ux = upp_[j] - x[j];
      const double xl = x[j] - low_[j];
      p[j] = ux * ux * (1.001 * gp + 0.001 * gm + raa0 / range);
      q[j] = xl * xl * (0.001 * gp + 1.001 * gm + raa0 / range);
    }

    auto solve_at = [&](double lam, std::vector<double>& out) {
      double vol = 0.0;
      for (std::size_t j = 0; j < n_; ++j) {
        out[j] = minimize_element(p[j], q[j], low_[j], upp_[j], lam * vgrad[j], alpha[j], beta[j]);
        vol += vgrad[j] * out[j];
      }
      return vol;
    };

    std::vector<double> xn(n_);
    diag_ = {};
    double vol = solve_at(0.0, xn);
    if (vol > limit) {
      double lo = 0.0, hi = 1.0;
      std::vector<double> trial(n_);
      int grow = 0;
      while (solve_at(hi, trial) > limit) {
        hi *= 4.0;
        if (++grow > 200) {
          double vmin = 0.0;
          for (std::size_t j = 0; j < n_; ++j) vmin += vgrad[j] * alpha[j];
          throw RuntimeError("mma: volume constraint infeasible within move limits (smallest reachable volume " +
                             std::to_string(vmin) + " > limit " + std::to_string(limit) + ")");
        }
      }
      int it = 0;
      for (; it < 200 && (hi - lo) > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (solve_at(mid, trial) > limit) lo = mid; else hi = mid;
      }
      vol = solve_at(hi, xn);
      diag_.multiplier = hi;
      diag_.bisections = it;
    }
    diag_.volume = vol;

    x2_ = x1_;
    x1_.assign(x.begin(), x.end());
    ++iter_;
    return xn;
  }

  [[nodiscard]] const Diagnostics& diagnostics() const { return diag_; }
  [[nodiscard]] int iterations() const { return iter_; }

 private:
  // argmin over [a, b] of p/(U-x) + q/(x-L) + c x (convex).
  static double minimize_element(double p, double q, double L, double U, double c, double a, double b) {
    auto dphi = [&](double t) { return p / ((U - t) * (U - t)) - q / ((t - L) * (t - L)) + c; };
    if (dphi(a) >= 0.0) return a;
    if (dphi(b) <= 0.0) return b;
    double lo = a, hi = b;
    // Unconstrained root without the linear term as the starting guess.
    const double sp = std::sqrt(p), sq = std::sqrt(q);
    double t = std::clamp((sp * L + sq * U) / (sp + sq), lo, hi);
    for (int k = 0; k < 100; ++k) {
      const double g = dphi(t);
      if (g > 0.0) hi = t; else lo = t;
      if (hi - lo < 1e-15) break;
      const double h = 2.0 * p / ((U - t) * (U - t) * (U - t)) + 2.0 * q / ((t - L) * (t - L) * (t - L));
      double tn = t - g / h;
      if (!(tn > lo && tn < hi)) tn = 0.5 * (lo + hi);
      if (std::abs(tn - t) < 1e-16) { t = tn; break; }
      t = tn;
    }
    return t;
  }

  std::size_t n_;
  MmaSettings s_;
  double move_;
  int iter_ = 0;
  std::vector<double> low_, upp_, x1_, x2_;
  Diagnostics diag_;
};

struct HistoryRow {
  int iter = 0;
  double phi = 0.0;
  double mean_output_disp = 0.0;
  double strain_energy = 0.0;
  double volume_fraction = 0.0;
  double max_density_change = 0.0;
  bool operator==(const HistoryRow&) const = default;
};

struct RunResult {
  std::string run_id;
  RunConfig config;
  std::vector<HistoryRow> history;
  DensityField final_rho;  // filtered physical field
  bool converged = false;
  bool failed = false;
  std::string error;
  double wall_time = 0.0;  // seconds

  [[nodiscard]] const HistoryRow& last() const { return history.back(); }
};

/// Problem set-up shared by run() and the verification tools.
struct Problem {
  Mesh mesh;
  FilterKernel filter;
  ObjectiveParams objective;

  explicit Problem(const RunConfig& cfg)
      : mesh(build_domain(make_finger_spec(cfg.domain))),
        filter(make_filter(mesh, cfg.filter_radius)),
        objective(make_objective(mesh, cfg.formulation(), cfg.force_magnitude, cfg.x_in.value_or(0.0), cfg.w)) {}
};

/// Volume-fraction gradient with respect to design variables.
inline std::vector<double> volume_gradient(const Mesh& m, const FilterKernel& k) {
  const std::size_t n = m.design_count();
  return chain_rule(k, std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

/// Called once per evaluated iterate with its history row and physical field.
using IterationObserver = std::function<void(const HistoryRow&, const DensityField&)>;

inline RunResult run(const RunConfig& cfg, const Problem& prob, const IterationObserver& observe = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult res;
  res.config = cfg;
  try {
    cfg.validate();
    const Mesh& mesh = prob.mesh;
    FemModel model(mesh, cfg.material, domain_boundary_conditions(mesh));
    std::vector<double> x = init_design(cfg, mesh, prob.filter);
    const std::vector<double> vgrad = volume_gradient(mesh, prob.filter);
    MmaUpdater mma(x.size(), cfg.mma, cfg.move_limit);
    double scale = 1.0;
    double change = 0.0;
    const int limit_rows = std::max(cfg.max_iters, 1);
    for (int it = 0;; ++it) {
      const DensityField rho = physical_density(mesh, prob.filter, x);
      const Evaluation ev = evaluate_objective(model, rho, prob.objective);
      const auto& b = ev.breakdown;
      res.history.push_back({it, b.total_phi, b.mean_output_disp, b.total_strain_energy, volume_fraction(mesh, rho),
                             change});
      res.final_rho = rho;
      if (observe) observe(res.history.back(), rho);
      if (it == 0 && std::abs(b.total_phi) > 0.0) scale = 1.0 / std::abs(b.total_phi);
      if (it > 0 && change < cfg.convergence_tol) {
        res.converged = true;
        break;
      }
      if (it + 1 >= limit_rows) break;
      std::vector<double> g = design_gradient(mesh, prob.filter, gradient(model, rho, prob.objective, ev));
      for (double& v : g) v *= scale;
      std::vector<double> xn = mma.step(x, g, vgrad, cfg.volume_fraction);
      change = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) change = std::max(change, std::abs(xn[j] - x[j]));
      x = std::move(xn);
    }
  } catch (const Error& e) {
    res.failed = true;
    res.error = e.what();
  }
  res.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline RunResult run(const RunConfig& cfg) {
  try {
    cfg.validate();
    const Problem prob(cfg);
    return run(cfg, prob);
  } catch (const Error& e) {
    RunResult res;
    res.config = cfg;
    res.failed = true;
    res.error = e.what();
    return res;
  }
}

}  // namespace softfinger

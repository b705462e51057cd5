#pragma once

// Multi-load-case objective phi = sum_n (w * L u_n + E_n) and its adjoint
// gradient with respect to physical element densities.

#include <string>
#include <vector>

#include "softfinger/domain.hpp"
#include "softfinger/error.hpp"
#include "softfinger/fem.hpp"
#include "softfinger/filter.hpp"

namespace softfinger {

struct ObjectiveParams {
  double w = 1e5;
  std::vector<LoadCase> load_cases;
  NodeSelector output;

  void validate() const {
    if (!(w >= 0.0)) throw ConfigError("objective: weighting w must be non-negative");
    if (load_cases.empty()) throw ConfigError("objective: no load cases");
    if (output.nodes.empty()) throw ConfigError("objective: empty output selector");
  }
};

struct CaseTerms {
  double weighted_output = 0.0;  // w * L u_n
  double strain_energy = 0.0;    // E_n
};

struct ObjectiveBreakdown {
  std::vector<CaseTerms> per_case;
  double total_phi = 0.0;
  double mean_output_disp = 0.0;     // (1/n) sum L u_n, mm
  double total_strain_energy = 0.0;  // sum E_n, N mm
};

struct Evaluation {
  ObjectiveBreakdown breakdown;
  std::vector<SolveResult> solves;  // cached for the gradient
};

/// Load cases for a formulation: six +x face forces (passive), or F_in1..F_in3
/// plus the prescribed actuation displacement x_in (active).
inline ObjectiveParams make_objective(const Mesh& m, Formulation f, double force_magnitude, double x_in, double w) {
  ObjectiveParams p;
  p.w = w;
  p.output = make_selector(m, "output");
  const int nforce = f == Formulation::passive ? 6 : 3;
  for (int i = 1; i <= nforce; ++i) {
    const std::string label = "F_in" + std::to_string(i);
    p.load_cases.push_back(LoadCase{label, LoadKind::force, make_selector(m, label), force_magnitude, {1.0, 0.0}});
  }
  if (f == Formulation::active) {
    if (!m.spec || !m.spec->actuation_face) throw ConfigError("active formulation needs an actuation face");
    p.load_cases.push_back(LoadCase{"X_in", LoadKind::prescribed_displacement, make_selector(m, "actuation"), x_in,
                                    m.spec->actuation_direction});
  }
  return p;
}

/// Assembles K(rho) once and solves every case with the same factorization.
inline Evaluation evaluate_objective(FemModel& model, const DensityField& rho, const ObjectiveParams& params) {
  params.validate();
  model.assemble(rho);
  Evaluation ev;
  ev.solves.reserve(params.load_cases.size());
  auto& b = ev.breakdown;
  for (const LoadCase& c : params.load_cases) {
    ev.solves.push_back(model.solve_case(c, params.output));
    const SolveResult& s = ev.solves.back();
    b.per_case.push_back({params.w * s.output_disp, s.strain_energy});
    b.total_phi += params.w * s.output_disp + s.strain_energy;
    b.mean_output_disp += s.output_disp;
    b.total_strain_energy += s.strain_energy;
  }
  b.mean_output_disp /= static_cast<double>(params.load_cases.size());
  return ev;
}

/// Stand-alone variant that builds its own model from the mesh boundary set.
inline Evaluation evaluate_objective(const Mesh& mesh, const DensityField& rho, const MaterialParams& mat,
                                     const ObjectiveParams& params) {
  FemModel model(mesh, mat, domain_boundary_conditions(mesh));
  return evaluate_objective(model, rho, params);
}

/// Adjoint of the output functional: K_ff lambda_f = L_f, zero on constrained
/// DOFs. The selector is shared by all cases, so one solve serves every case.
inline VectorXd output_adjoint(const FemModel& model, const NodeSelector& output) {
  VectorXd full = VectorXd::Zero(model.mesh().dof_count);
  for (std::size_t k = 0; k < output.nodes.size(); ++k) full[output.dof(k)] += output.weights[k];
  const auto& free = model.free_dofs();
  VectorXd rhs(static_cast<Eigen::Index>(free.size()));
  for (std::size_t i = 0; i < free.size(); ++i) rhs[static_cast<Eigen::Index>(i)] = full[free[i]];
  const VectorXd lf = model.solve_reduced(rhs);
  VectorXd lambda = VectorXd::Zero(full.size());
  for (std::size_t i = 0; i < free.size(); ++i) lambda[free[i]] = lf[static_cast<Eigen::Index>(i)];
  return lambda;
}

/// d phi / d rho_physical per active element; non-design entries are 0.
/// Requires the model to still hold the factorization used by `cached`.
inline std::vector<double> gradient(const FemModel& model, const DensityField& rho, const ObjectiveParams& params,
                                    const Evaluation& cached) {
  if (cached.solves.size() != params.load_cases.size()) {
    throw Error("gradient: cached solves missing or stale (" + std::to_string(cached.solves.size()) + " cached, " +
                std::to_string(params.load_cases.size()) + " cases)");
  }
  const Mesh& m = model.mesh();
  const MaterialParams& mat = model.material();
  const Matrix8& k0 = model.reference_stiffness();
  const VectorXd lambda = output_adjoint(model, params.output);

  std::vector<double> g(m.active_count(), 0.0);
  for (std::size_t a = 0; a < m.active_count(); ++a) {
    if (m.nondesign_mask[static_cast<std::size_t>(m.active_ids[a])]) continue;
    const double dscale = mat.modulus_derivative(rho[a]) * mat.thickness;
    const Vector8 le = model.gather(a, lambda);
    double ga = 0.0;
    for (std::size_t c = 0; c < params.load_cases.size(); ++c) {
      const Vector8 ue = model.gather(a, cached.solves[c].u);
      const Vector8 ku = dscale * (k0 * ue);
      const double energy = ue.dot(ku);
      // Fixed load: dE = -u^T dK u. Prescribed displacement: dE = +u^T dK u.
      const double de = params.load_cases[c].kind == LoadKind::force ? -energy : energy;
      ga += -params.w * le.dot(ku) + de;
    }
    g[a] = ga;
  }
  return g;
}

/// Gradient with respect to design variables through the density filter.
inline std::vector<double> design_gradient(const Mesh& m, const FilterKernel& kernel,
                                           const std::vector<double>& physical_gradient) {
  return chain_rule(kernel, restrict_design(m, DensityField{physical_gradient}));
}

}  // namespace softfinger

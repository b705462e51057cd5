#pragma once

// SIMP-interpolated plane-stress linear elasticity on the structured grid.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "softfinger/domain.hpp"
#include "softfinger/error.hpp"

namespace softfinger {

using Matrix8 = Eigen::Matrix<double, 8, 8>;
using Vector8 = Eigen::Matrix<double, 8, 1>;
using Eigen::VectorXd;

struct MaterialParams {
  double E0 = 23.0;        // MPa
  double E_min = 23.0e-6;  // MPa
  double nu = 0.3;
  double penalty_p = 3.0;
  double thickness = 5.0;  // mm

  void validate() const {
    if (!(E0 > 0.0) || !(E_min > 0.0) || !(E_min < 1e-2 * E0)) throw ConfigError("material: need 0 < E_min << E0");
    if (!(nu > 0.0 && nu < 0.5)) throw ConfigError("material: Poisson ratio must lie in (0, 0.5)");
    if (!(penalty_p >= 1.0)) throw ConfigError("material: penalty exponent must be >= 1");
    if (!(thickness > 0.0)) throw ConfigError("material: thickness must be positive");
  }

  /// E_min + rho^p (E0 - E_min)
  [[nodiscard]] double modulus(double rho) const { return E_min + std::pow(rho, penalty_p) * (E0 - E_min); }
  [[nodiscard]] double modulus_derivative(double rho) const {
    return penalty_p * std::pow(rho, penalty_p - 1.0) * (E0 - E_min);
  }
};

/// Physical density per active element (ordered as Mesh::active_ids).
struct DensityField {
  std::vector<double> rho;

  [[nodiscard]] std::size_t size() const { return rho.size(); }
  double& operator[](std::size_t i) { return rho[i]; }
  double operator[](std::size_t i) const { return rho[i]; }
  bool operator==(const DensityField&) const = default;
};

inline DensityField solid_density(const Mesh& m) { return DensityField{std::vector<double>(m.active_count(), 1.0)}; }

/// Every entry in [0, 1]; non-design entries exactly 1.
inline void validate_density(const Mesh& m, const DensityField& d) {
  if (d.size() != m.active_count()) throw Error("density field size does not match the mesh");
  for (std::size_t a = 0; a < d.size(); ++a) {
    if (!(d[a] >= 0.0 && d[a] <= 1.0)) throw Error("density out of [0,1] at active element " + std::to_string(a));
    if (m.nondesign_mask[static_cast<std::size_t>(m.active_ids[a])] && d[a] != 1.0) {
      throw Error("non-design element " + std::to_string(a) + " is not solid");
    }
  }
}

/// Mean physical density over design elements.
inline double volume_fraction(const Mesh& m, const DensityField& d) {
  if (m.design_count() == 0) return 0.0;
  double s = 0.0;
  for (int a : m.design_positions) s += d[static_cast<std::size_t>(a)];
  return s / static_cast<double>(m.design_count());
}

enum class LoadKind { force, prescribed_displacement };

struct LoadCase {
  std::string label;
  LoadKind kind = LoadKind::force;
  NodeSelector selector;
  double magnitude = 1.0;  // N or mm
  Point direction{1.0, 0.0};
};

/// 8x8 plane-stress stiffness of a square bilinear element at unit modulus and
/// unit thickness, 2x2 Gauss. For square cells the matrix does not depend on
/// the side length.
inline Matrix8 reference_element_stiffness(double nu) {
  Eigen::Matrix3d D;
  D << 1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, 0.5 * (1.0 - nu);
  D /= (1.0 - nu * nu);
  constexpr std::array<double, 4> xi{-1.0, 1.0, 1.0, -1.0};
  constexpr std::array<double, 4> eta{-1.0, -1.0, 1.0, 1.0};
  const double g = 1.0 / std::sqrt(3.0);
  Matrix8 K = Matrix8::Zero();
  for (double gx : {-g, g}) {
    for (double gy : {-g, g}) {
      // Unit square: x = (1 + xi) / 2, so d/dx = 2 d/dxi and detJ = 1/4.
      Eigen::Matrix<double, 3, 8> B = Eigen::Matrix<double, 3, 8>::Zero();
      for (int a = 0; a < 4; ++a) {
        const double dndx = 2.0 * 0.25 * xi[a] * (1.0 + eta[a] * gy);
        const double dndy = 2.0 * 0.25 * eta[a] * (1.0 + xi[a] * gx);
        B(0, 2 * a) = dndx;
        B(1, 2 * a + 1) = dndy;
        B(2, 2 * a) = dndy;
        B(2, 2 * a + 1) = dndx;
      }
      K += B.transpose() * D * B * 0.25;
    }
  }
  return K;
}

/// Solid element stiffness for the given material (E0, thickness).
inline Matrix8 element_stiffness(const MaterialParams& mat) {
  return mat.E0 * mat.thickness * reference_element_stiffness(mat.nu);
}

struct SolveResult {
  VectorXd u;                  // full DOF vector, mm
  double strain_energy = 0.0;  // u^T K u, N mm
  double output_disp = 0.0;    // L u, mm
  VectorXd reactions;          // K u - f on constrained DOFs, zero elsewhere, N
  VectorXd applied;            // applied nodal forces, N
  double residual = 0.0;       // ||K_ff u_f - f_eff|| / ||f_eff||
};

/// Clamped DOFs (held at zero in every case) and driven DOFs (prescribed by
/// displacement cases, zero in force cases).
struct BoundaryConditions {
  std::vector<int> fixed_dofs;
  std::vector<int> driven_dofs;
};

inline BoundaryConditions clamp_nodes(const std::vector<int>& nodes) {
  BoundaryConditions bc;
  for (int n : nodes) {
    bc.fixed_dofs.push_back(2 * n);
    bc.fixed_dofs.push_back(2 * n + 1);
  }
  return bc;
}

/// Supports from the mesh plus the actuation DOFs when the domain has an
/// actuation face.
inline BoundaryConditions domain_boundary_conditions(const Mesh& m) {
  BoundaryConditions bc = clamp_nodes(m.support_nodes);
  if (m.spec && m.spec->actuation_face) {
    const NodeSelector act = make_selector(m, "actuation");
    const Point dir = m.spec->actuation_direction;
    for (int n : act.nodes) {
      if (std::binary_search(m.support_nodes.begin(), m.support_nodes.end(), n)) continue;
      if (dir.x != 0.0) bc.driven_dofs.push_back(2 * n);
      if (dir.y != 0.0) bc.driven_dofs.push_back(2 * n + 1);
    }
  }
  return bc;
}

/// Element moduli E(rho) times thickness, per active element.
inline std::vector<double> element_scales(const DensityField& rho, const MaterialParams& mat) {
  std::vector<double> s(rho.size());
  for (std::size_t a = 0; a < rho.size(); ++a) s[a] = mat.modulus(rho[a]) * mat.thickness;
  return s;
}

/// Stiffness model for one mesh and boundary set. The sparsity pattern and
/// fill-reducing ordering are computed once; assemble() refills values and
/// refactorizes, after which any number of cases can be solved.
class FemModel {
 public:
  using SpMat = Eigen::SparseMatrix<double>;

  FemModel(const Mesh& mesh, MaterialParams mat, BoundaryConditions bc)
      : mesh_(&mesh), mat_(mat), bc_(std::move(bc)), ke0_(reference_element_stiffness(mat.nu)) {
    mat_.validate();
    const int ndof = mesh.dof_count;
    kind_.assign(static_cast<std::size_t>(ndof), DofKind::unused);
    for (std::size_t n = 0; n < mesh.nodes.size(); ++n) {
      if (mesh.node_used[n]) {
        kind_[2 * n] = DofKind::free;
        kind_[2 * n + 1] = DofKind::free;
      }
    }
    auto mark = [&](const std::vector<int>& dofs, DofKind k) {
      for (int d : dofs) {
        if (d < 0 || d >= ndof || kind_[static_cast<std::size_t>(d)] == DofKind::unused) {
          throw DomainError("boundary condition references a DOF outside the active mesh");
        }
        kind_[static_cast<std::size_t>(d)] = k;
      }
    };
    mark(bc_.fixed_dofs, DofKind::fixed);
    mark(bc_.driven_dofs, DofKind::driven);
    if (bc_.fixed_dofs.empty() && bc_.driven_dofs.empty()) {
      throw SolverError("singular system: no supports or prescribed DOFs");
    }

    free_index_.assign(static_cast<std::size_t>(ndof), -1);
    for (int d = 0; d < ndof; ++d) {
      if (kind_[static_cast<std::size_t>(d)] == DofKind::free) {
        free_index_[static_cast<std::size_t>(d)] = static_cast<int>(free_dofs_.size());
        free_dofs_.push_back(d);
      }
    }
    const auto nf = static_cast<Eigen::Index>(free_dofs_.size());

    edofs_.resize(mesh.active_count());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(mesh.active_count() * 64);
    for (std::size_t a = 0; a < mesh.active_count(); ++a) {
      const auto& q = mesh.elements[static_cast<std::size_t>(mesh.active_ids[a])];
      for (int k = 0; k < 4; ++k) {
        edofs_[a][2 * k] = 2 * q[k];
        edofs_[a][2 * k + 1] = 2 * q[k] + 1;
      }
      for (int r = 0; r < 8; ++r) {
        const int fr = free_index_[static_cast<std::size_t>(edofs_[a][r])];
        if (fr < 0) continue;
        for (int c = 0; c < 8; ++c) {
          const int fc = free_index_[static_cast<std::size_t>(edofs_[a][c])];
          if (fc >= 0) trip.emplace_back(fr, fc, 0.0);
        }
      }
    }
    kff_.resize(nf, nf);
    kff_.setFromTriplets(trip.begin(), trip.end());
    kff_.makeCompressed();

    slot_.resize(mesh.active_count());
    for (std::size_t a = 0; a < mesh.active_count(); ++a) {
      for (int r = 0; r < 8; ++r) {
        const int fr = free_index_[static_cast<std::size_t>(edofs_[a][r])];
        for (int c = 0; c < 8; ++c) {
          const int fc = free_index_[static_cast<std::size_t>(edofs_[a][c])];
          slot_[a][static_cast<std::size_t>(8 * r + c)] = (fr >= 0 && fc >= 0) ? value_index(fr, fc) : -1;
        }
      }
    }
    solver_->analyzePattern(kff_);
  }

  [[nodiscard]] const Mesh& mesh() const { return *mesh_; }
  [[nodiscard]] const MaterialParams& material() const { return mat_; }
  [[nodiscard]] const BoundaryConditions& boundary() const { return bc_; }
  [[nodiscard]] const Matrix8& reference_stiffness() const { return ke0_; }
  [[nodiscard]] const std::vector<int>& free_dofs() const { return free_dofs_; }
  [[nodiscard]] const std::array<int, 8>& element_dofs(std::size_t a) const { return edofs_[a]; }
  [[nodiscard]] bool is_free(int dof) const { return free_index_[static_cast<std::size_t>(dof)] >= 0; }
  [[nodiscard]] bool is_driven(int dof) const { return kind_[static_cast<std::size_t>(dof)] == DofKind::driven; }
  [[nodiscard]] const SpMat& reduced_matrix() const { return kff_; }
  [[nodiscard]] const std::vector<double>& scales() const { return scale_; }

  /// Refill K_ff(rho) and factorize.
  void assemble(const DensityField& rho) {
    validate_density(*mesh_, rho);
    scale_ = element_scales(rho, mat_);
    double* val = kff_.valuePtr();
    std::fill(val, val + kff_.nonZeros(), 0.0);
    for (std::size_t a = 0; a < scale_.size(); ++a) {
      const double s = scale_[a];
      const auto& sl = slot_[a];
      for (int r = 0; r < 8; ++r) {
        for (int c = 0; c < 8; ++c) {
          const int i = sl[static_cast<std::size_t>(8 * r + c)];
          if (i >= 0) val[i] += s * ke0_(r, c);
        }
      }
    }
    solver_->factorize(kff_);
    if (solver_->info() != Eigen::Success) {
      throw SolverError("factorization failed: " + diagnostics());
    }
    const VectorXd& d = solver_->vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    const double dmin = d.minCoeff();
    if (!(dmin > 1e-14 * dmax)) {
      throw SolverError("singular or indefinite stiffness: min pivot " + std::to_string(dmin) + ", max pivot " +
                        std::to_string(dmax) + "; " + diagnostics());
    }
    factorized_ = true;
  }

  [[nodiscard]] bool factorized() const { return factorized_; }

  /// Solve K u = f with u prescribed on driven DOFs. `f` and `u_driven` are
  /// full-length; entries of `u_driven` off driven DOFs are ignored.
  [[nodiscard]] VectorXd solve_full(const VectorXd& f, const VectorXd& u_driven, double* residual = nullptr) const {
    require_factorized();
    const auto ndof = static_cast<Eigen::Index>(mesh_->dof_count);
    VectorXd u = VectorXd::Zero(ndof);
    for (int d : bc_.driven_dofs) u[d] = u_driven[d];
    VectorXd rhs(static_cast<Eigen::Index>(free_dofs_.size()));
    for (std::size_t i = 0; i < free_dofs_.size(); ++i) rhs[static_cast<Eigen::Index>(i)] = f[free_dofs_[i]];
    if (!bc_.driven_dofs.empty()) {
      // f_eq = -K_fp u_p, accumulated element by element.
      for (std::size_t a = 0; a < edofs_.size(); ++a) {
        Vector8 up;
        bool any = false;
        for (int k = 0; k < 8; ++k) {
          const int d = edofs_[a][k];
          up[k] = is_driven(d) ? u[d] : 0.0;
          any = any || up[k] != 0.0;
        }
        if (!any) continue;
        const Vector8 fe = scale_[a] * (ke0_ * up);
        for (int k = 0; k < 8; ++k) {
          const int fi = free_index_[static_cast<std::size_t>(edofs_[a][k])];
          if (fi >= 0) rhs[fi] -= fe[k];
        }
      }
    }
    const VectorXd uf = solve_refined(rhs);
    for (std::size_t i = 0; i < free_dofs_.size(); ++i) u[free_dofs_[i]] = uf[static_cast<Eigen::Index>(i)];
    if (residual != nullptr) {
      const double nr = rhs.norm();
      *residual = nr > 0.0 ? (kff_ * uf - rhs).norm() / nr : (kff_ * uf).norm();
    }
    return u;
  }

  /// Solve against a reduced right-hand side (free DOFs only). Used for adjoints.
  [[nodiscard]] VectorXd solve_reduced(const VectorXd& rhs) const {
    require_factorized();
    return solve_refined(rhs);
  }

  /// Full K u accumulated element by element.
  [[nodiscard]] VectorXd apply_stiffness(const VectorXd& u) const {
    VectorXd out = VectorXd::Zero(u.size());
    for (std::size_t a = 0; a < edofs_.size(); ++a) {
      const Vector8 ue = gather(a, u);
      const Vector8 fe = scale_[a] * (ke0_ * ue);
      for (int k = 0; k < 8; ++k) out[edofs_[a][k]] += fe[k];
    }
    return out;
  }

  [[nodiscard]] Vector8 gather(std::size_t a, const VectorXd& u) const {
    Vector8 ue;
    for (int k = 0; k < 8; ++k) ue[k] = u[edofs_[a][k]];
    return ue;
  }

  /// u^T K u.
  [[nodiscard]] double strain_energy(const VectorXd& u) const {
    double e = 0.0;
    for (std::size_t a = 0; a < edofs_.size(); ++a) {
      const Vector8 ue = gather(a, u);
      e += scale_[a] * ue.dot(ke0_ * ue);
    }
    return e;
  }

  /// Nodal force vector for a force case.
  [[nodiscard]] VectorXd load_vector(const LoadCase& c) const {
    VectorXd f = VectorXd::Zero(mesh_->dof_count);
    if (c.kind != LoadKind::force) return f;
    for (std::size_t k = 0; k < c.selector.nodes.size(); ++k) {
      const int n = c.selector.nodes[k];
      f[2 * n] += c.selector.weights[k] * c.magnitude * c.direction.x;
      f[2 * n + 1] += c.selector.weights[k] * c.magnitude * c.direction.y;
    }
    return f;
  }

  /// Prescribed values on driven DOFs for a displacement case.
  [[nodiscard]] VectorXd driven_vector(const LoadCase& c) const {
    VectorXd up = VectorXd::Zero(mesh_->dof_count);
    if (c.kind != LoadKind::prescribed_displacement) return up;
    for (int n : c.selector.nodes) {
      for (int ax = 0; ax < 2; ++ax) {
        const double comp = ax == 0 ? c.direction.x : c.direction.y;
        if (comp == 0.0) continue;
        const int d = 2 * n + ax;
        if (!is_driven(d)) {
          throw SolverError("prescribed displacement on DOF " + std::to_string(d) + " which is not a driven DOF");
        }
        up[d] = c.magnitude * comp;
      }
    }
    return up;
  }

  [[nodiscard]] SolveResult solve_case(const LoadCase& c, const NodeSelector& output) const {
    SolveResult r;
    r.applied = load_vector(c);
    r.u = solve_full(r.applied, driven_vector(c), &r.residual);
    r.strain_energy = strain_energy(r.u);
    r.output_disp = output.apply(r.u);
    r.reactions = apply_stiffness(r.u) - r.applied;
    for (int d : free_dofs_) r.reactions[d] = 0.0;
    return r;
  }

  [[nodiscard]] std::string diagnostics() const {
    std::string s = "free DOFs " + std::to_string(free_dofs_.size());
    if (kff_.nonZeros() > 0) {
      const VectorXd diag = kff_.diagonal();
      s += ", diag(K_ff) range [" + std::to_string(diag.minCoeff()) + ", " + std::to_string(diag.maxCoeff()) + "]";
    }
    return s;
  }

 private:
  enum class DofKind : unsigned char { unused, free, fixed, driven };

  /// Back-substitution plus one refinement step with the residual accumulated
  /// in extended precision, so finite differences of outputs stay clean.
  VectorXd solve_refined(const VectorXd& rhs) const {
    VectorXd x = solver_->solve(rhs);
    if (solver_->info() != Eigen::Success) throw SolverError("back-substitution failed: " + diagnostics());
    std::vector<long double> acc(static_cast<std::size_t>(rhs.size()));
    for (Eigen::Index i = 0; i < rhs.size(); ++i) acc[static_cast<std::size_t>(i)] = rhs[i];
    for (Eigen::Index k = 0; k < kff_.outerSize(); ++k) {
      for (SpMat::InnerIterator it(kff_, k); it; ++it) {
        acc[static_cast<std::size_t>(it.row())] -= static_cast<long double>(it.value()) * x[it.col()];
      }
    }
    VectorXd r(rhs.size());
    for (Eigen::Index i = 0; i < rhs.size(); ++i) r[i] = static_cast<double>(acc[static_cast<std::size_t>(i)]);
    x += solver_->solve(r);
    return x;
  }

  void require_factorized() const {
    if (!factorized_) throw SolverError("stiffness has not been assembled");
  }

  int value_index(int row, int col) const {
    const int* outer = kff_.outerIndexPtr();
    const int* inner = kff_.innerIndexPtr();
    const int* first = inner + outer[col];
    const int* last = inner + outer[col + 1];
    const int* it = std::lower_bound(first, last, row);
    return static_cast<int>(it - inner);
  }

  const Mesh* mesh_;
  MaterialParams mat_;
  BoundaryConditions bc_;
  Matrix8 ke0_;
  std::vector<DofKind> kind_;
  std::vector<int> free_index_;
  std::vector<int> free_dofs_;
  std::vector<std::array<int, 8>> edofs_;
  std::vector<std::array<int, 64>> slot_;
  SpMat kff_;
  std::vector<double> scale_;
  using Solver = Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>>;
  std::unique_ptr<Solver> solver_ = std::make_unique<Solver>();
  bool factorized_ = false;
};

/// Convenience wrapper: build a model for the mesh's own boundary conditions
/// and assemble it for `rho`.
inline FemModel assemble(const Mesh& mesh, const DensityField& rho, const MaterialParams& mat) {
  FemModel model(mesh, mat, domain_boundary_conditions(mesh));
  model.assemble(rho);
  return model;
}

inline SolveResult solve_case(const FemModel& model, const LoadCase& c, const NodeSelector& output) {
  return model.solve_case(c, output);
}

struct StressField {
  std::vector<double> von_mises;       // per active element, MPa
  std::vector<std::uint8_t> is_void;   // rho below the threshold
  [[nodiscard]] double max_solid() const {
    double m = 0.0;
    for (std::size_t a = 0; a < von_mises.size(); ++a) {
      if (!is_void[a]) m = std::max(m, von_mises[a]);
    }
    return m;
  }
};

/// Element-centroid plane-stress von Mises stress with the interpolated modulus.
inline StressField von_mises(const Mesh& mesh, const DensityField& rho, const MaterialParams& mat, const VectorXd& u,
                             double void_threshold = 0.5) {
  const double h = mesh.element_size;
  constexpr std::array<double, 4> xi{-1.0, 1.0, 1.0, -1.0};
  constexpr std::array<double, 4> eta{-1.0, -1.0, 1.0, 1.0};
  Eigen::Matrix<double, 3, 8> B = Eigen::Matrix<double, 3, 8>::Zero();
  for (int a = 0; a < 4; ++a) {
    const double dndx = 0.25 * xi[a] * 2.0 / h;
    const double dndy = 0.25 * eta[a] * 2.0 / h;
    B(0, 2 * a) = dndx;
    B(1, 2 * a + 1) = dndy;
    B(2, 2 * a) = dndy;
    B(2, 2 * a + 1) = dndx;
  }
  const double nu = mat.nu;
  StressField out;
  out.von_mises.resize(mesh.active_count());
  out.is_void.resize(mesh.active_count());
  for (std::size_t a = 0; a < mesh.active_count(); ++a) {
    const auto& q = mesh.elements[static_cast<std::size_t>(mesh.active_ids[a])];
    Vector8 ue;
    for (int k = 0; k < 4; ++k) {
      ue[2 * k] = u[2 * q[k]];
      ue[2 * k + 1] = u[2 * q[k] + 1];
    }
    const Eigen::Vector3d eps = B * ue;
    const double c = mat.modulus(rho[a]) / (1.0 - nu * nu);
    const double sx = c * (eps[0] + nu * eps[1]);
    const double sy = c * (nu * eps[0] + eps[1]);
    const double txy = c * 0.5 * (1.0 - nu) * eps[2];
    out.von_mises[a] = std::sqrt(std::max(0.0, sx * sx - sx * sy + sy * sy + 3.0 * txy * txy));
    out.is_void[a] = rho[a] < void_threshold;
  }
  return out;
}

}  // namespace softfinger

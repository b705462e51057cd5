#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace sftest;

namespace {

Eigen::MatrixXd reduced_dense(const FemModel& model) { return Eigen::MatrixXd(model.reduced_matrix()); }

std::vector<int> constrained(const BoundaryConditions& bc) {
  std::vector<int> c = bc.fixed_dofs;
  c.insert(c.end(), bc.driven_dofs.begin(), bc.driven_dofs.end());
  return c;
}

}  // namespace

TEST(Fem, ElementStiffnessMatchesOracles) {
  for (double nu : {0.0, 0.25, 0.3, 0.45}) {
    const Matrix8 k = reference_element_stiffness(nu);
    const auto g = gauss3_element(1.0, nu, 1.0, 1.0);
    const auto c = closed_form_element(nu);
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) {
        EXPECT_NEAR(k(i, j), g(i, j), 1e-12);
        EXPECT_NEAR(k(i, j), c(i, j), 1e-12);
      }
    }
  }
}

TEST(Fem, ElementStiffnessProperties) {
  const Matrix8 k = reference_element_stiffness(0.3);
  EXPECT_LT((k - k.transpose()).norm(), 1e-15);
  const Eigen::SelfAdjointEigenSolver<Matrix8> es(k);
  int zero = 0;
  for (int i = 0; i < 8; ++i) {
    EXPECT_GT(es.eigenvalues()[i], -1e-12);
    zero += std::abs(es.eigenvalues()[i]) < 1e-12;
  }
  EXPECT_EQ(zero, 3);  // two translations and one rotation
  MaterialParams mat;
  EXPECT_NEAR((element_stiffness(mat) - mat.E0 * mat.thickness * k).norm(), 0.0, 1e-10);
}

TEST(Fem, AssemblyMatchesDenseOracle) {
  MaterialParams mat;
  for (Formulation f : {Formulation::passive, Formulation::active}) {
    const Mesh m = build_domain(make_finger_spec(small_layout(f)));
    const DensityField rho = random_density(m, 7);
    FemModel model(m, mat, domain_boundary_conditions(m));
    model.assemble(rho);
    const Eigen::MatrixXd K = dense_global(m, rho, mat);
    const Eigen::MatrixXd Kff = reduced_dense(model);
    const auto& fd = model.free_dofs();
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
      for (std::size_t j = 0; j < fd.size(); ++j) {
        const double d = Kff(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) - K(fd[i], fd[j]);
        num = std::max(num, std::abs(d));
        den = std::max(den, std::abs(K(fd[i], fd[j])));
      }
    }
    EXPECT_LT(num / den, 1e-9);
    // Full operator applied element-wise agrees with the dense matrix.
    const Eigen::VectorXd u = Eigen::VectorXd::Random(m.dof_count);
    Eigen::VectorXd ku = K * u;
    Eigen::VectorXd ku2 = model.apply_stiffness(u);
    for (int d = 0; d < m.dof_count; ++d) {
      if (!m.node_used[static_cast<std::size_t>(d / 2)]) ku[d] = ku2[d] = 0.0;
    }
    EXPECT_LT((ku - ku2).norm() / ku.norm(), 1e-12);
  }
}

TEST(Fem, SolveMatchesDenseSolve) {
  MaterialParams mat;
  const Mesh m = build_domain(make_finger_spec(small_layout(Formulation::active)));
  const DensityField rho = random_density(m, 3, 0.3, 1.0);
  FemModel model(m, mat, domain_boundary_conditions(m));
  model.assemble(rho);
  const Eigen::MatrixXd K = dense_global(m, rho, mat);
  const NodeSelector tip = make_selector(m, "tip");

  const LoadCase force{"F_in2", LoadKind::force, make_selector(m, "F_in2"), 2.5, {1.0, 0.0}};
  const SolveResult rf = model.solve_case(force, tip);
  const Eigen::VectorXd uf =
      dense_solve(K, model.load_vector(force), constrained(model.boundary()), Eigen::VectorXd::Zero(m.dof_count), m.node_used);
  EXPECT_LT((rf.u - uf).norm() / uf.norm(), 1e-9);

  const LoadCase drive{"X_in", LoadKind::prescribed_displacement, make_selector(m, "actuation"), 4.0, {0.0, -1.0}};
  const SolveResult rd = model.solve_case(drive, tip);
  const Eigen::VectorXd ud =
      dense_solve(K, Eigen::VectorXd::Zero(m.dof_count), constrained(model.boundary()), model.driven_vector(drive), m.node_used);
  EXPECT_LT((rd.u - ud).norm() / ud.norm(), 1e-9);
  for (int n : drive.selector.nodes) EXPECT_DOUBLE_EQ(rd.u[2 * n + 1], -4.0);
  EXPECT_LT(rd.residual, 1e-10);
}

TEST(Fem, StrainEnergyIdentityOnRandomForces) {
  MaterialParams mat;
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const DensityField rho = random_density(m, 100 + static_cast<std::uint64_t>(trial));
    FemModel model(m, mat, domain_boundary_conditions(m));
    model.assemble(rho);
    Eigen::VectorXd f = Eigen::VectorXd::Zero(m.dof_count);
    for (int d : model.free_dofs()) f[d] = u(rng);
    const Eigen::VectorXd x = model.solve_full(f, Eigen::VectorXd::Zero(m.dof_count));
    const double E = model.strain_energy(x);
    EXPECT_LT(std::abs(E - f.dot(x)) / E, 1e-8);
  }
}

TEST(Fem, LinearInForceMagnitude) {
  MaterialParams mat;
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  FemModel model(m, mat, domain_boundary_conditions(m));
  model.assemble(random_density(m, 5));
  const NodeSelector tip = make_selector(m, "tip");
  LoadCase c{"F_in4", LoadKind::force, make_selector(m, "F_in4"), 1.0, {1.0, 0.0}};
  const SolveResult r1 = model.solve_case(c, tip);
  c.magnitude = 37.5;
  const SolveResult r2 = model.solve_case(c, tip);
  EXPECT_LT((r2.u - 37.5 * r1.u).norm() / r2.u.norm(), 1e-10);
  EXPECT_NEAR(r2.strain_energy / r1.strain_energy, 37.5 * 37.5, 1e-6 * 37.5 * 37.5);
}

TEST(Fem, ZeroForceGivesZeroResponse) {
  MaterialParams mat;
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  FemModel model(m, mat, domain_boundary_conditions(m));
  model.assemble(solid_density(m));
  const LoadCase c{"F_in1", LoadKind::force, make_selector(m, "F_in1"), 0.0, {1.0, 0.0}};
  const SolveResult r = model.solve_case(c, make_selector(m, "tip"));
  EXPECT_EQ(r.u.norm(), 0.0);
  EXPECT_EQ(r.strain_energy, 0.0);
  EXPECT_EQ(r.output_disp, 0.0);
}

TEST(Fem, ReactionsBalanceAppliedLoad) {
  MaterialParams mat;
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  FemModel model(m, mat, domain_boundary_conditions(m));
  model.assemble(solid_density(m));
  const LoadCase c{"F_in6", LoadKind::force, make_selector(m, "F_in6"), 3.0, {1.0, 0.0}};
  const SolveResult r = model.solve_case(c, make_selector(m, "tip"));
  double rx = 0.0;
  double ry = 0.0;
  for (int n = 0; n < static_cast<int>(m.nodes.size()); ++n) {
    rx += r.reactions[2 * n];
    ry += r.reactions[2 * n + 1];
  }
  EXPECT_NEAR(rx, -3.0, 1e-8);
  EXPECT_NEAR(ry, 0.0, 1e-8);
}

TEST(Fem, UnsupportedSystemIsRejected) {
  MaterialParams mat;
  const Mesh m = build_grid(4, 4, 1.0);
  EXPECT_THROW(FemModel(m, mat, BoundaryConditions{}), SolverError);
  // A single pinned node leaves rigid rotation free.
  FemModel pinned(m, mat, BoundaryConditions{{0, 1}, {}});
  EXPECT_THROW(pinned.assemble(solid_density(m)), SolverError);
}

TEST(Fem, InvalidDensityIsRejected) {
  MaterialParams mat;
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  FemModel model(m, mat, domain_boundary_conditions(m));
  DensityField rho = solid_density(m);
  rho.rho[3] = 1.5;
  EXPECT_THROW(model.assemble(rho), Error);
  rho.rho[3] = std::nan("");
  EXPECT_THROW(model.assemble(rho), Error);
  EXPECT_THROW(model.assemble(DensityField{{0.5, 0.5}}), Error);
}

TEST(Fem, MaterialValidation) {
  MaterialParams mat;
  mat.E_min = 0.0;
  EXPECT_THROW(mat.validate(), Error);
  mat = MaterialParams{};
  mat.nu = 0.5;
  EXPECT_THROW(mat.validate(), Error);
  mat = MaterialParams{};
  EXPECT_DOUBLE_EQ(mat.modulus(1.0), mat.E0);
  EXPECT_DOUBLE_EQ(mat.modulus(0.0), mat.E_min);
  const double r = 0.4;
  const double fd = (mat.modulus(r + 1e-6) - mat.modulus(r - 1e-6)) / 2e-6;
  EXPECT_NEAR(mat.modulus_derivative(r), fd, 1e-6 * std::abs(fd));
}

TEST(Fem, CantileverConvergesToBeamTheory) {
  const double coarse = cantilever_error(1);
  const double fine = cantilever_error(2);
  EXPECT_LT(fine, coarse);
  EXPECT_LT(fine, 0.15);
}

TEST(Fem, UniaxialStressRecovery) {
  // Bar clamped in x on the left (one node pinned in y), pulled on the right.
  MaterialParams mat;
  const int nx = 10;
  const int ny = 2;
  const Mesh m = build_grid(nx, ny, 1.0);
  BoundaryConditions bc;
  std::vector<int> right;
  for (int j = 0; j <= ny; ++j) {
    bc.fixed_dofs.push_back(2 * m.node_id(0, j));
    right.push_back(m.node_id(nx, j));
  }
  bc.fixed_dofs.push_back(2 * m.node_id(0, 0) + 1);
  FemModel model(m, mat, bc);
  model.assemble(solid_density(m));
  // Consistent nodal loads for a uniform traction: half weight on corners.
  Eigen::VectorXd f = Eigen::VectorXd::Zero(m.dof_count);
  const double total = 2.0 * ny * mat.thickness;  // sigma = 2 MPa over a 2 x t section
  for (int j = 0; j <= ny; ++j) f[2 * m.node_id(nx, j)] = total / ny * ((j == 0 || j == ny) ? 0.5 : 1.0);
  const Eigen::VectorXd u = model.solve_full(f, Eigen::VectorXd::Zero(m.dof_count));
  const StressField s = von_mises(m, solid_density(m), mat, u);
  for (double v : s.von_mises) EXPECT_NEAR(v, 2.0, 1e-9);
  EXPECT_NEAR(s.max_solid(), 2.0, 1e-9);
}

#include <gtest/gtest.h>

#include "softfinger/filter.hpp"
#include "test_support.hpp"

using namespace sftest;

namespace {

/// Dense filter matrix by brute force over every pair of design elements.
Eigen::MatrixXd dense_filter(const Mesh& m, double radius) {
  const std::size_t nd = m.design_count();
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(nd), static_cast<Eigen::Index>(nd));
  for (std::size_t i = 0; i < nd; ++i) {
    const Point ci = m.centroid(m.active_ids[static_cast<std::size_t>(m.design_positions[i])]);
    for (std::size_t j = 0; j < nd; ++j) {
      const Point cj = m.centroid(m.active_ids[static_cast<std::size_t>(m.design_positions[j])]);
      const double d = std::hypot(ci.x - cj.x, ci.y - cj.y) / m.element_size;
      W(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = std::max(0.0, radius - d);
    }
    W.row(static_cast<Eigen::Index>(i)) /= W.row(static_cast<Eigen::Index>(i)).sum();
  }
  return W;
}

}  // namespace

TEST(Filter, MatchesBruteForceMatrix) {
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  for (double r : {1.5, 2.0, 3.0}) {
    const FilterKernel k = make_filter(m, r);
    const Eigen::MatrixXd W = dense_filter(m, r);
    const std::vector<double> x = random_field(m.design_count(), 9);
    const std::vector<double> y = apply_filter(k, x);
    const Eigen::VectorXd yd = W * Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], yd[static_cast<Eigen::Index>(i)], 1e-13);
  }
}

TEST(Filter, RowsSumToOneAndPreserveConstants) {
  const Mesh m = build_domain(make_finger_spec(desk_layout()));
  const FilterKernel k = make_filter(m, 2.0);
  for (std::size_t i = 0; i < k.size(); ++i) {
    double s = 0.0;
    for (int p = k.row_start[i]; p < k.row_start[i + 1]; ++p) s += k.weights[static_cast<std::size_t>(p)];
    EXPECT_NEAR(s, 1.0, 1e-14);
  }
  const std::vector<double> c(m.design_count(), 0.37);
  for (double v : apply_filter(k, c)) EXPECT_NEAR(v, 0.37, 1e-14);
}

TEST(Filter, ChainRuleIsTheTranspose) {
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  const FilterKernel k = make_filter(m, 2.0);
  const std::vector<double> x = random_field(m.design_count(), 1, -1.0, 1.0);
  const std::vector<double> g = random_field(m.design_count(), 2, -1.0, 1.0);
  const std::vector<double> wx = apply_filter(k, x);
  const std::vector<double> wtg = chain_rule(k, g);
  double a = 0.0;
  double b = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    a += wx[i] * g[i];
    b += x[i] * wtg[i];
  }
  EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
}

TEST(Filter, SmallRadiusFallsBackToIdentity) {
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  const FilterKernel k = make_filter(m, 0.5);
  EXPECT_TRUE(k.identity);
  EXPECT_FALSE(k.warning.empty());
  const std::vector<double> x = random_field(m.design_count(), 4);
  EXPECT_EQ(apply_filter(k, x), x);
}

TEST(Filter, NondesignStaysSolid) {
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  const FilterKernel k = make_filter(m, 2.0);
  const DensityField rho = physical_density(m, k, std::vector<double>(m.design_count(), 0.0));
  std::size_t solid = 0;
  for (double v : rho.rho) solid += v == 1.0;
  EXPECT_EQ(solid, m.active_count() - m.design_count());
  EXPECT_EQ(restrict_design(m, rho), std::vector<double>(m.design_count(), 0.0));
}

TEST(Filter, SizeMismatchThrows) {
  const Mesh m = build_domain(make_finger_spec(small_layout()));
  const FilterKernel k = make_filter(m, 2.0);
  EXPECT_THROW(apply_filter(k, std::vector<double>(3, 0.0)), Error);
  EXPECT_THROW(chain_rule(k, std::vector<double>(3, 0.0)), Error);
}

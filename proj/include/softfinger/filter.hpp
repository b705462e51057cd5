#pragma once

// Linear-decay density filter over design elements.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "softfinger/domain.hpp"
#include "softfinger/error.hpp"
#include "softfinger/fem.hpp"

namespace softfinger {

/// Row-normalized convolution weights, one row per design element (in the
/// order of Mesh::design_positions). Neighbours are other design elements
/// whose centroid lies strictly within `radius` element sizes; boundary rows
/// are renormalized over the truncated support.
struct FilterKernel {
  double radius = 2.0;  // in element sizes
  bool identity = false;
  std::string warning;
  std::vector<int> row_start;  // CSR
  std::vector<int> cols;
  std::vector<double> weights;

  [[nodiscard]] std::size_t size() const { return row_start.empty() ? 0 : row_start.size() - 1; }
};

inline FilterKernel make_filter(const Mesh& m, double radius) {
  FilterKernel k;
  k.radius = radius;
  const std::size_t nd = m.design_count();
  k.row_start.assign(nd + 1, 0);
  if (radius < 1.0) {
    k.identity = true;
    k.warning = "filter radius " + std::to_string(radius) + " < 1 element; using identity filter";
    for (std::size_t i = 0; i < nd; ++i) {
      k.row_start[i + 1] = static_cast<int>(i + 1);
      k.cols.push_back(static_cast<int>(i));
      k.weights.push_back(1.0);
    }
    return k;
  }

  // Grid cell -> design index.
  std::vector<int> design_of(m.elements.size(), -1);
  for (std::size_t i = 0; i < nd; ++i) {
    design_of[static_cast<std::size_t>(m.active_ids[static_cast<std::size_t>(m.design_positions[i])])] =
        static_cast<int>(i);
  }
  const int reach = static_cast<int>(std::ceil(radius));
  for (std::size_t i = 0; i < nd; ++i) {
    const int e = m.active_ids[static_cast<std::size_t>(m.design_positions[i])];
    const int ci = e % m.nx;
    const int cj = e / m.nx;
    double total = 0.0;
    const auto begin = k.weights.size();
    for (int dj = -reach; dj <= reach; ++dj) {
      const int j = cj + dj;
      if (j < 0 || j >= m.ny) continue;
      for (int di = -reach; di <= reach; ++di) {
        const int ii = ci + di;
        if (ii < 0 || ii >= m.nx) continue;
        const int nb = design_of[static_cast<std::size_t>(m.element_id(ii, j))];
        if (nb < 0) continue;
        const double w = radius - std::sqrt(static_cast<double>(di * di + dj * dj));
        if (w <= 0.0) continue;
        k.cols.push_back(nb);
        k.weights.push_back(w);
        total += w;
      }
    }
    for (auto p = begin; p < k.weights.size(); ++p) k.weights[p] /= total;
    k.row_start[i + 1] = static_cast<int>(k.weights.size());
  }
  return k;
}

/// rho_physical = W rho_design.
inline std::vector<double> apply_filter(const FilterKernel& k, std::span<const double> x) {
  if (x.size() != k.size()) throw Error("filter input size mismatch");
  std::vector<double> y(k.size(), 0.0);
  for (std::size_t i = 0; i < k.size(); ++i) {
    double s = 0.0;
    for (int p = k.row_start[i]; p < k.row_start[i + 1]; ++p) {
      s += k.weights[static_cast<std::size_t>(p)] * x[static_cast<std::size_t>(k.cols[static_cast<std::size_t>(p)])];
    }
    y[i] = s;
  }
  return y;
}

/// Transpose of apply_filter: d/d(rho_design) from d/d(rho_physical).
inline std::vector<double> chain_rule(const FilterKernel& k, std::span<const double> g) {
  if (g.size() != k.size()) throw Error("filter cotangent size mismatch");
  std::vector<double> out(k.size(), 0.0);
  for (std::size_t i = 0; i < k.size(); ++i) {
    for (int p = k.row_start[i]; p < k.row_start[i + 1]; ++p) {
      out[static_cast<std::size_t>(k.cols[static_cast<std::size_t>(p)])] += k.weights[static_cast<std::size_t>(p)] * g[i];
    }
  }
  return out;
}

/// Full active-element field from design values: non-design elements are 1.
inline DensityField expand_design(const Mesh& m, std::span<const double> design) {
  DensityField d{std::vector<double>(m.active_count(), 1.0)};
  for (std::size_t i = 0; i < m.design_count(); ++i) d[static_cast<std::size_t>(m.design_positions[i])] = design[i];
  return d;
}

inline std::vector<double> restrict_design(const Mesh& m, const DensityField& d) {
  std::vector<double> x(m.design_count());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = d[static_cast<std::size_t>(m.design_positions[i])];
  return x;
}

/// Filtered physical field for a vector of design variables. Row sums are 1
/// only up to round-off, so results are clipped back into [0, 1].
inline DensityField physical_density(const Mesh& m, const FilterKernel& k, std::span<const double> design) {
  std::vector<double> y = apply_filter(k, design);
  for (double& v : y) v = std::clamp(v, 0.0, 1.0);
  return expand_design(m, y);
}

}  // namespace softfinger

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "softfinger/error.hpp"

namespace softfinger {

/// Campaign coordinates of one run; both objectives are minimized.
struct ParetoPoint {
  std::string run_id;
  double mean_output_disp = 0.0;     // mm, more negative is better
  double total_strain_energy = 0.0;  // N mm
  bool dominated = false;
};

/// Flags every point as dominated or not; order and contents are otherwise
/// preserved. Non-finite points are dropped. Among exact duplicates only the
/// smallest run_id stays on the front.
inline std::vector<ParetoPoint> pareto_front(std::vector<ParetoPoint> pts) {
  std::erase_if(pts, [](const ParetoPoint& p) {
    return !std::isfinite(p.mean_output_disp) || !std::isfinite(p.total_strain_energy);
  });
  std::vector<std::size_t> order(pts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& p = pts[a];
    const auto& q = pts[b];
    if (p.mean_output_disp != q.mean_output_disp) return p.mean_output_disp < q.mean_output_disp;
    if (p.total_strain_energy != q.total_strain_energy) return p.total_strain_energy < q.total_strain_energy;
    return p.run_id < q.run_id;
  });
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i : order) {
    pts[i].dominated = !(pts[i].total_strain_energy < best);
    if (!pts[i].dominated) best = pts[i].total_strain_energy;
  }
  return pts;
}

/// Front members sorted by mean output displacement.
inline std::vector<ParetoPoint> front_members(const std::vector<ParetoPoint>& flagged) {
  std::vector<ParetoPoint> f;
  for (const auto& p : flagged) {
    if (!p.dominated) f.push_back(p);
  }
  std::sort(f.begin(), f.end(), [](const ParetoPoint& a, const ParetoPoint& b) {
    return a.mean_output_disp < b.mean_output_disp;
  });
  return f;
}

struct DiversityStats {
  std::size_t count = 0;
  double threshold = 0.0;
  /// Condensed upper triangle, row-major: (0,1), (0,2), ..., (1,2), ...
  std::vector<double> pairwise;
  double min_distance = 0.0;
  double mean_distance = 0.0;
  double max_distance = 0.0;
  /// Single-linkage clusters with edges shorter than `threshold`.
  std::size_t clusters = 0;
  std::vector<int> labels;

  [[nodiscard]] double distance(std::size_t i, std::size_t j) const {
    if (i == j) return 0.0;
    if (i > j) std::swap(i, j);
    return pairwise[i * count - i * (i + 1) / 2 + (j - i - 1)];
  }
};

/// Pairwise L2 distances between final density fields. The default threshold
/// is 0.05 * sqrt(#elements).
inline DiversityStats diversity_stats(const std::vector<std::vector<double>>& fields, double threshold = -1.0) {
  if (fields.size() < 2) throw Error("diversity_stats needs at least two designs");
  const std::size_t n = fields.size();
  const std::size_t ne = fields.front().size();
  for (const auto& f : fields) {
    if (f.size() != ne) throw Error("diversity_stats: designs live on different meshes");
  }
  DiversityStats s;
  s.count = n;
  s.threshold = threshold >= 0.0 ? threshold : 0.05 * std::sqrt(static_cast<double>(ne));
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  s.min_distance = std::numeric_limits<double>::infinity();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < ne; ++k) {
        const double d = fields[i][k] - fields[j][k];
        d2 += d * d;
      }
      const double d = std::sqrt(d2);
      s.pairwise.push_back(d);
      s.min_distance = std::min(s.min_distance, d);
      s.max_distance = std::max(s.max_distance, d);
      sum += d;
      if (d < s.threshold || d == 0.0) parent[static_cast<std::size_t>(find(static_cast<int>(i)))] = find(static_cast<int>(j));
    }
  }
  s.mean_distance = sum / static_cast<double>(s.pairwise.size());
  s.labels.assign(n, -1);
  std::vector<int> root_label(n, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int r = find(static_cast<int>(i));
    if (root_label[static_cast<std::size_t>(r)] < 0) root_label[static_cast<std::size_t>(r)] = next++;
    s.labels[i] = root_label[static_cast<std::size_t>(r)];
  }
  s.clusters = static_cast<std::size_t>(next);
  return s;
}

}  // namespace softfinger

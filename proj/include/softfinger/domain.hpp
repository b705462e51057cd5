#pragma once

// Tapered finger design domain on a structured quadrilateral grid.
//
// Coordinates are millimetres with the origin at the bottom-left corner of the
// bounding box. The grasping edge is the straight left edge (x = 0), the tip
// is at the bottom (y = 0) and the mount is at the top (y = height). The back
// edge tapers from width_top at the mount to width_bottom at the tip; cells
// whose centroid lies inside the trapezoid are active (staircase boundary).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "softfinger/error.hpp"

namespace softfinger {

enum class Formulation { passive, active };

inline std::string_view to_string(Formulation f) {
  return f == Formulation::passive ? "passive" : "active";
}

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned rectangle, closed.
struct Rect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  [[nodiscard]] bool contains(Point p, double eps = 0.0) const {
    return p.x >= x0 - eps && p.x <= x1 + eps && p.y >= y0 - eps && p.y <= y1 + eps;
  }
};

enum class Edge { grasping, top };

/// Labelled segment on a boundary edge. For the grasping edge `from`/`to` are
/// y coordinates, for the top edge they are x coordinates.
struct EdgeSegment {
  std::string label;
  Edge edge = Edge::grasping;
  double from = 0.0;
  double to = 0.0;
};

enum class Axis : int { x = 0, y = 1 };

struct DomainSpec {
  double height = 100.0;
  double width_top = 40.0;
  double width_bottom = 15.0;
  double element_size = 1.0;
  std::array<Rect, 2> slot_regions{};
  /// F_in1 (tip) ... F_in6 (base).
  std::array<EdgeSegment, 6> input_faces{};
  /// Output region L on the grasping edge (also the tip region for verification).
  EdgeSegment output{};
  /// Indices into slot_regions whose nodes are clamped.
  std::vector<int> support_slots{0, 1};
  /// Present only for the active formulation.
  std::optional<EdgeSegment> actuation_face{};
  /// Direction of the prescribed actuation displacement (unit, axis-aligned).
  Point actuation_direction{0.0, -1.0};

  [[nodiscard]] double width_at(double y) const {
    return width_bottom + (width_top - width_bottom) * y / height;
  }
};

/// Proportional layout used to derive a DomainSpec from a handful of sizes.
struct FingerLayout {
  double height = 100.0;
  double width_top = 40.0;
  double width_bottom = 15.0;
  double element_size = 1.0;
  double slot_width = 8.0;
  double slot_height = 8.0;
  /// Gap between the top edge and the top of each slot (mm).
  double slot_top_margin = 6.0;
  /// Slot centres as fractions of width_top.
  double slot1_center = 0.25;
  double slot2_center = 0.75;
  /// Fraction of the height, measured from the tip, covered by the six faces.
  double contact_span = 0.84;
  /// Fraction of each face's pitch occupied by the face itself.
  double face_fill = 0.5;
  double tip_length = 10.0;
  Formulation formulation = Formulation::passive;
};

/// Six equal faces evenly spaced tip to base, slots near the mount, output at
/// the tip. The active formulation clamps slot 1 only and drives the top edge
/// above slot 2 downward.
inline DomainSpec make_finger_spec(const FingerLayout& l) {
  DomainSpec s;
  s.height = l.height;
  s.width_top = l.width_top;
  s.width_bottom = l.width_bottom;
  s.element_size = l.element_size;

  const double y1 = l.height - l.slot_top_margin;
  const double y0 = y1 - l.slot_height;
  const std::array<double, 2> centers{l.slot1_center * l.width_top, l.slot2_center * l.width_top};
  for (std::size_t k = 0; k < 2; ++k) {
    s.slot_regions[k] = Rect{centers[k] - 0.5 * l.slot_width, y0, centers[k] + 0.5 * l.slot_width, y1};
  }

  const double pitch = l.contact_span * l.height / 6.0;
  const double len = l.face_fill * pitch;
  for (int i = 0; i < 6; ++i) {
    const double c = (i + 0.5) * pitch;
    s.input_faces[i] = EdgeSegment{"F_in" + std::to_string(i + 1), Edge::grasping, c - 0.5 * len, c + 0.5 * len};
  }
  s.output = EdgeSegment{"output", Edge::grasping, 0.0, l.tip_length};

  if (l.formulation == Formulation::active) {
    s.support_slots = {0};
    const Rect& r = s.slot_regions[1];
    s.actuation_face = EdgeSegment{"actuation", Edge::top, r.x0, r.x1};
  } else {
    s.support_slots = {0, 1};
  }
  return s;
}

struct Mesh {
  double element_size = 1.0;
  int nx = 0;  // cells along x
  int ny = 0;  // cells along y
  std::vector<Point> nodes;
  /// Counter-clockwise: bottom-left, bottom-right, top-right, top-left.
  std::vector<std::array<int, 4>> elements;
  std::vector<std::uint8_t> active_mask;
  std::vector<std::uint8_t> nondesign_mask;
  int dof_count = 0;

  /// Element ids of active elements, ascending.
  std::vector<int> active_ids;
  /// Position of each element in active_ids, -1 when inactive.
  std::vector<int> active_index;
  /// Active positions (into active_ids) of design (non-pinned) elements.
  std::vector<int> design_positions;
  /// Nodes referenced by at least one active element.
  std::vector<std::uint8_t> node_used;
  /// Nodes shared by fewer than four active elements.
  std::vector<std::uint8_t> node_on_boundary;
  /// Clamped nodes (both DOFs fixed).
  std::vector<int> support_nodes;

  /// Source description, absent for meshes built directly on a grid.
  std::optional<DomainSpec> spec;

  [[nodiscard]] int node_id(int i, int j) const { return j * (nx + 1) + i; }
  [[nodiscard]] int element_id(int i, int j) const { return j * nx + i; }
  [[nodiscard]] std::size_t active_count() const { return active_ids.size(); }
  [[nodiscard]] std::size_t design_count() const { return design_positions.size(); }
  [[nodiscard]] Point centroid(int e) const {
    const auto& q = elements[static_cast<std::size_t>(e)];
    Point c;
    for (int n : q) {
      c.x += 0.25 * nodes[static_cast<std::size_t>(n)].x;
      c.y += 0.25 * nodes[static_cast<std::size_t>(n)].y;
    }
    return c;
  }
};

/// Fills the derived index tables from the masks. Called by the builders.
inline void finalize_mesh(Mesh& m) {
  const std::size_t ne = m.elements.size();
  m.active_ids.clear();
  m.active_index.assign(ne, -1);
  m.design_positions.clear();
  for (std::size_t e = 0; e < ne; ++e) {
    if (m.nondesign_mask[e] && !m.active_mask[e]) {
      throw DomainError("non-design element " + std::to_string(e) + " lies outside the active region");
    }
    if (!m.active_mask[e]) continue;
    m.active_index[e] = static_cast<int>(m.active_ids.size());
    if (!m.nondesign_mask[e]) m.design_positions.push_back(static_cast<int>(m.active_ids.size()));
    m.active_ids.push_back(static_cast<int>(e));
  }
  std::vector<int> share(m.nodes.size(), 0);
  for (int e : m.active_ids) {
    for (int n : m.elements[static_cast<std::size_t>(e)]) ++share[static_cast<std::size_t>(n)];
  }
  m.node_used.assign(m.nodes.size(), 0);
  m.node_on_boundary.assign(m.nodes.size(), 0);
  for (std::size_t n = 0; n < m.nodes.size(); ++n) {
    m.node_used[n] = share[n] > 0;
    m.node_on_boundary[n] = share[n] > 0 && share[n] < 4;
  }
  m.dof_count = 2 * static_cast<int>(m.nodes.size());
}

/// Structured nx-by-ny grid of square cells, all active, nothing pinned.
/// Used directly for benchmark geometries (beams, bars) that are not fingers.
inline Mesh build_grid(int nx, int ny, double element_size) {
  if (nx < 1 || ny < 1 || !(element_size > 0.0)) throw DomainError("grid needs positive dimensions");
  Mesh m;
  m.element_size = element_size;
  m.nx = nx;
  m.ny = ny;
  m.nodes.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) m.nodes.push_back({i * element_size, j * element_size});
  }
  m.elements.reserve(static_cast<std::size_t>(nx * ny));
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      m.elements.push_back({m.node_id(i, j), m.node_id(i + 1, j), m.node_id(i + 1, j + 1), m.node_id(i, j + 1)});
    }
  }
  m.active_mask.assign(m.elements.size(), 1);
  m.nondesign_mask.assign(m.elements.size(), 0);
  finalize_mesh(m);
  return m;
}

namespace detail {

inline double geom_eps(const DomainSpec& s) { return 1e-9 * std::max(s.height, s.width_top); }

inline void check_segment(const DomainSpec& s, const EdgeSegment& seg) {
  if (!(seg.to > seg.from)) throw DomainError("segment '" + seg.label + "' has zero or negative length");
  const double eps = geom_eps(s);
  if (seg.edge == Edge::grasping) {
    if (seg.from < -eps || seg.to > s.height + eps) {
      throw DomainError("segment '" + seg.label + "' falls outside the grasping edge");
    }
  } else {
    if (seg.from < -eps || seg.to > s.width_top + eps) {
      throw DomainError("segment '" + seg.label + "' falls outside the top edge");
    }
  }
}

inline bool on_segment(const Mesh& m, const DomainSpec& s, const EdgeSegment& seg, int n) {
  const double eps = geom_eps(s);
  const Point p = m.nodes[static_cast<std::size_t>(n)];
  if (!m.node_used[static_cast<std::size_t>(n)]) return false;
  if (seg.edge == Edge::grasping) {
    return std::abs(p.x) <= eps && p.y >= seg.from - eps && p.y <= seg.to + eps;
  }
  return std::abs(p.y - s.height) <= eps && p.x >= seg.from - eps && p.x <= seg.to + eps;
}

}  // namespace detail

inline constexpr std::size_t kMinActiveElements = 100;

inline Mesh build_domain(const DomainSpec& s) {
  const double h = s.element_size;
  if (!(h > 0.0) || !(s.height > 0.0)) throw DomainError("height and element_size must be positive");
  if (!(s.width_bottom < s.width_top)) {
    throw DomainError("taper invariant violated: width_bottom must be smaller than width_top");
  }
  const double rows = s.height / h;
  if (std::abs(rows - std::round(rows)) > 1e-9 * rows) throw DomainError("element_size must divide height");
  if (s.width_bottom < 4.0 * h - 1e-12) throw DomainError("widths must be at least four elements");

  const double eps = detail::geom_eps(s);
  for (const Rect& r : s.slot_regions) {
    if (!(r.x1 > r.x0) || !(r.y1 > r.y0)) throw DomainError("slot region is empty");
    if (r.x0 < -eps || r.y0 < -eps || r.y1 > s.height + eps || r.x1 > s.width_at(r.y0) + eps) {
      throw DomainError("slot region falls outside the trapezoid");
    }
  }
  for (const auto& f : s.input_faces) detail::check_segment(s, f);
  for (std::size_t a = 0; a < s.input_faces.size(); ++a) {
    if (a + 1 < s.input_faces.size() && !(s.input_faces[a].to < s.input_faces[a + 1].from)) {
      throw DomainError("input faces must be disjoint and ordered tip to base");
    }
  }
  detail::check_segment(s, s.output);
  if (s.actuation_face) detail::check_segment(s, *s.actuation_face);
  for (int k : s.support_slots) {
    if (k < 0 || k > 1) throw DomainError("support slot index out of range");
  }

  const int nx = static_cast<int>(std::ceil(s.width_top / h - 1e-9));
  const int ny = static_cast<int>(std::lround(rows));
  Mesh m = build_grid(nx, ny, h);
  m.spec = s;

  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const int e = m.element_id(i, j);
      const Point c = m.centroid(e);
      m.active_mask[static_cast<std::size_t>(e)] = c.x < s.width_at(c.y);
    }
  }

  for (std::size_t e = 0; e < m.elements.size(); ++e) {
    if (!m.active_mask[e]) continue;
    const Point c = m.centroid(static_cast<int>(e));
    for (const Rect& r : s.slot_regions) {
      if (r.contains(c)) m.nondesign_mask[e] = 1;
    }
  }
  // One-element-deep strip along each input face.
  for (const auto& f : s.input_faces) {
    bool any = false;
    for (int j = 0; j < ny; ++j) {
      const double lo = j * h;
      const double hi = lo + h;
      if (std::min(hi, f.to) - std::max(lo, f.from) > eps) {
        const auto e = static_cast<std::size_t>(m.element_id(0, j));
        if (!m.active_mask[e]) throw DomainError("input face '" + f.label + "' strip lies outside the domain");
        m.nondesign_mask[e] = 1;
        any = true;
      }
    }
    if (!any) throw DomainError("input face '" + f.label + "' covers no element");
  }
  for (const Rect& r : s.slot_regions) {
    bool any = false;
    for (std::size_t e = 0; e < m.elements.size(); ++e) any = any || (m.nondesign_mask[e] && r.contains(m.centroid(static_cast<int>(e))));
    if (!any) throw DomainError("slot region covers no element centroid");
  }

  finalize_mesh(m);
  if (m.active_count() < kMinActiveElements) {
    throw DomainError("too few active elements (" + std::to_string(m.active_count()) + " < " +
                      std::to_string(kMinActiveElements) + ")");
  }

  for (int k : s.support_slots) {
    const Rect& r = s.slot_regions[static_cast<std::size_t>(k)];
    for (std::size_t n = 0; n < m.nodes.size(); ++n) {
      if (m.node_used[n] && r.contains(m.nodes[n], eps)) m.support_nodes.push_back(static_cast<int>(n));
    }
  }
  std::sort(m.support_nodes.begin(), m.support_nodes.end());
  m.support_nodes.erase(std::unique(m.support_nodes.begin(), m.support_nodes.end()), m.support_nodes.end());
  if (m.support_nodes.empty()) throw DomainError("support slots contain no mesh nodes");
  return m;
}

/// Weighted node set; applied to a displacement vector it returns
/// sum(weights * u[node, axis]).
struct NodeSelector {
  std::vector<int> nodes;
  Axis dof_axis = Axis::x;
  std::vector<double> weights;

  [[nodiscard]] int dof(std::size_t k) const { return 2 * nodes[k] + static_cast<int>(dof_axis); }

  template <typename Vec>
  [[nodiscard]] double apply(const Vec& u) const {
    double s = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) s += weights[k] * u[dof(k)];
    return s;
  }
};

inline NodeSelector uniform_selector(std::vector<int> nodes, Axis axis) {
  if (nodes.empty()) throw DomainError("selector has no nodes");
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  NodeSelector s;
  s.dof_axis = axis;
  s.weights.assign(nodes.size(), 1.0 / static_cast<double>(nodes.size()));
  s.nodes = std::move(nodes);
  return s;
}

/// Selector over every used node satisfying `pred`.
template <typename Pred>
NodeSelector select_nodes(const Mesh& m, Pred pred, Axis axis) {
  std::vector<int> nodes;
  for (std::size_t n = 0; n < m.nodes.size(); ++n) {
    if (m.node_used[n] && pred(m.nodes[n])) nodes.push_back(static_cast<int>(n));
  }
  return uniform_selector(std::move(nodes), axis);
}

/// Labels: F_in1..F_in6, "output" (alias "tip"), "actuation".
inline NodeSelector make_selector(const Mesh& m, std::string_view label) {
  if (!m.spec) throw DomainError("mesh has no domain description for selector '" + std::string(label) + "'");
  const DomainSpec& s = *m.spec;
  const EdgeSegment* seg = nullptr;
  for (const auto& f : s.input_faces) {
    if (f.label == label) seg = &f;
  }
  if (label == "output" || label == "tip") seg = &s.output;
  if (label == "actuation") {
    if (!s.actuation_face) throw DomainError("domain has no actuation face");
    seg = &*s.actuation_face;
  }
  if (seg == nullptr) throw DomainError("unknown selector label '" + std::string(label) + "'");
  if (!(seg->to > seg->from)) throw DomainError("segment '" + seg->label + "' is empty");

  std::vector<int> nodes;
  for (std::size_t n = 0; n < m.nodes.size(); ++n) {
    if (detail::on_segment(m, s, *seg, static_cast<int>(n))) nodes.push_back(static_cast<int>(n));
  }
  if (nodes.empty()) throw DomainError("segment '" + seg->label + "' contains no mesh nodes");
  Axis axis = Axis::x;
  if (seg->edge == Edge::top) axis = std::abs(s.actuation_direction.x) > 0.0 ? Axis::x : Axis::y;
  return uniform_selector(std::move(nodes), axis);
}

/// Plain-text node/element listing for debugging.
inline void write_mesh_listing(std::ostream& os, const Mesh& m) {
  os << "# nodes " << m.nodes.size() << "\n";
  for (std::size_t n = 0; n < m.nodes.size(); ++n) {
    os << n << ' ' << m.nodes[n].x << ' ' << m.nodes[n].y << "\n";
  }
  os << "# elements " << m.elements.size() << " (id n0 n1 n2 n3 active nondesign)\n";
  for (std::size_t e = 0; e < m.elements.size(); ++e) {
    const auto& q = m.elements[e];
    os << e << ' ' << q[0] << ' ' << q[1] << ' ' << q[2] << ' ' << q[3] << ' ' << int(m.active_mask[e]) << ' '
       << int(m.nondesign_mask[e]) << "\n";
  }
}

}  // namespace softfinger

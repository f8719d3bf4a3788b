#pragma once

#include "odt/core.hpp"

#include <boost/geometry.hpp>
#include <boost/geometry/geometries/point_xy.hpp>
#include <boost/geometry/geometries/polygon.hpp>
#include <boost/geometry/geometries/multi_point.hpp>

#include <vector>

namespace odt {

/// Convex hull of planar points, counter-clockwise, first vertex not repeated.
inline std::vector<Vec2> convex_hull_2d(const std::vector<Vec2>& pts) {
  namespace bg = boost::geometry;
  using P = bg::model::d2::point_xy<double>;
  bg::model::multi_point<P> mp;
  for (const auto& p : pts) mp.push_back(P(p.x(), p.y()));
  bg::model::polygon<P, false> hull;  // counter-clockwise
  bg::convex_hull(mp, hull);
  std::vector<Vec2> out;
  const auto& ring = hull.outer();
  for (std::size_t i = 0; i + 1 < ring.size(); ++i) out.emplace_back(ring[i].x(), ring[i].y());
  return out;
}

inline double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * std::abs(a);
}

/// Volume of the convex hull of 3D points by incremental construction. Degenerate sets give 0.
inline double convex_hull_volume(const std::vector<Vec3>& pts) {
  if (pts.size() < 4) return 0.0;
  double scale = 0;
  for (const auto& p : pts) scale = std::max(scale, (p - pts[0]).norm());
  if (scale == 0) return 0.0;
  const double eps = 1e-12 * scale;

  // initial tetrahedron
  std::size_t i0 = 0, i1 = 0, i2 = 0, i3 = 0;
  double best = 0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    if ((pts[i] - pts[i0]).norm() > best) best = (pts[i] - pts[i0]).norm(), i1 = i;
  best = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double a = (pts[i1] - pts[i0]).cross(pts[i] - pts[i0]).norm();
    if (a > best) best = a, i2 = i;
  }
  if (best <= eps * scale) return 0.0;
  Vec3 n0 = (pts[i1] - pts[i0]).cross(pts[i2] - pts[i0]);
  best = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double v = std::abs(n0.dot(pts[i] - pts[i0]));
    if (v > best) best = v, i3 = i;
  }
  if (best <= eps * scale * scale) return 0.0;

  struct Face {
    std::size_t a, b, c;
    Vec3 n;
    double off;
  };
  Vec3 inner = 0.25 * (pts[i0] + pts[i1] + pts[i2] + pts[i3]);
  std::vector<Face> faces;
  auto make = [&](std::size_t a, std::size_t b, std::size_t c) {
    Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
    if (n.dot(inner - pts[a]) > 0) {
      std::swap(b, c);
      n = -n;
    }
    faces.push_back({a, b, c, n, n.dot(pts[a])});
  };
  make(i0, i1, i2);
  make(i0, i1, i3);
  make(i0, i2, i3);
  make(i1, i2, i3);

  for (std::size_t p = 0; p < pts.size(); ++p) {
    if (p == i0 || p == i1 || p == i2 || p == i3) continue;
    std::vector<char> visible(faces.size(), 0);
    bool any = false;
    for (std::size_t f = 0; f < faces.size(); ++f)
      if (faces[f].n.dot(pts[p]) - faces[f].off > eps * faces[f].n.norm()) visible[f] = 1, any = true;
    if (!any) continue;
    // horizon: directed edges of visible faces whose twin is on a hidden face
    std::vector<std::pair<std::size_t, std::size_t>> horizon;
    for (std::size_t f = 0; f < faces.size(); ++f) {
      if (!visible[f]) continue;
      const std::size_t e[3][2] = {{faces[f].a, faces[f].b}, {faces[f].b, faces[f].c},
                                   {faces[f].c, faces[f].a}};
      for (auto& ed : e) {
        bool twin_visible = false;
        for (std::size_t g = 0; g < faces.size(); ++g) {
          if (g == f || !visible[g]) continue;
          const Face& F = faces[g];
          if ((F.a == ed[1] && F.b == ed[0]) || (F.b == ed[1] && F.c == ed[0]) ||
              (F.c == ed[1] && F.a == ed[0]))
            twin_visible = true;
        }
        if (!twin_visible) horizon.emplace_back(ed[0], ed[1]);
      }
    }
    std::vector<Face> kept;
    for (std::size_t f = 0; f < faces.size(); ++f)
      if (!visible[f]) kept.push_back(faces[f]);
    faces.swap(kept);
    for (auto [a, b] : horizon) {
      Vec3 n = (pts[b] - pts[a]).cross(pts[p] - pts[a]);
      faces.push_back({a, b, p, n, n.dot(pts[a])});
    }
  }
  double vol = 0;
  for (const auto& f : faces)
    vol += (pts[f.a] - inner).dot((pts[f.b] - inner).cross(pts[f.c] - inner));
  return std::abs(vol) / 6.0;
}

}  // namespace odt

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "radiff/augment/augment.hpp"

namespace radiff::augment {

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool inside_convex(const std::array<Vec2, 4>& poly, const Vec2& p) {
  for (std::size_t i = 0; i < 4; ++i) {
    if (cross(poly[i], poly[(i + 1) % 4], p) < -1e-12) return false;
  }
  return true;
}

bool segment_hit(const Vec2& p, const Vec2& p2, const Vec2& q, const Vec2& q2, Vec2& out) {
  const double rx = p2.x - p.x, ry = p2.y - p.y;
  const double sx = q2.x - q.x, sy = q2.y - q.y;
  const double den = rx * sy - ry * sx;
  if (std::abs(den) < 1e-15) return false;  // parallel edges add no new vertex
  const double t = ((q.x - p.x) * sy - (q.y - p.y) * sx) / den;
  const double u = ((q.x - p.x) * ry - (q.y - p.y) * rx) / den;
  if (t < 0.0 || t > 1.0 || u < 0.0 || u > 1.0) return false;
  out = {p.x + t * rx, p.y + t * ry};
  return true;
}

// Largest gap between the projections of the two footprints over the four
// edge normals; positive means separated.
double separation(const std::array<Vec2, 4>& a, const std::array<Vec2, 4>& b) {
  double best = -std::numeric_limits<double>::infinity();
  for (const auto* poly : {&a, &b}) {
    for (std::size_t i = 0; i < 2; ++i) {
      const Vec2 e{(*poly)[i + 1].x - (*poly)[i].x, (*poly)[i + 1].y - (*poly)[i].y};
      const double len = std::hypot(e.x, e.y);
      const Vec2 n{-e.y / len, e.x / len};
      double amin = std::numeric_limits<double>::infinity(), amax = -amin, bmin = amin, bmax = -amin;
      for (const auto& v : a) {
        const double d = v.x * n.x + v.y * n.y;
        amin = std::min(amin, d);
        amax = std::max(amax, d);
      }
      for (const auto& v : b) {
        const double d = v.x * n.x + v.y * n.y;
        bmin = std::min(bmin, d);
        bmax = std::max(bmax, d);
      }
      best = std::max(best, std::max(bmin - amax, amin - bmax));
    }
  }
  return best;
}

}  // namespace

std::array<Vec2, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  const double lx[4] = {hl, -hl, -hl, hl};
  const double ly[4] = {hw, hw, -hw, -hw};
  std::array<Vec2, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = {b.center.x + c * lx[i] - s * ly[i], b.center.y + s * lx[i] + c * ly[i]};
  return out;
}

double bev_overlap(const Box3D& a, const Box3D& b) {
  const auto pa = bev_corners(a), pb = bev_corners(b);
  if (separation(pa, pb) >= 0.0) return 0.0;

  std::vector<Vec2> verts;
  for (const auto& v : pa)
    if (inside_convex(pb, v)) verts.push_back(v);
  for (const auto& v : pb)
    if (inside_convex(pa, v)) verts.push_back(v);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      Vec2 hit;
      if (segment_hit(pa[i], pa[(i + 1) % 4], pb[j], pb[(j + 1) % 4], hit)) verts.push_back(hit);
    }
  }
  if (verts.size() < 3) return 0.0;
  Vec2 c{0, 0};
  for (const auto& v : verts) {
    c.x += v.x;
    c.y += v.y;
  }
  c.x /= static_cast<double>(verts.size());
  c.y /= static_cast<double>(verts.size());
  std::sort(verts.begin(), verts.end(), [&](const Vec2& u, const Vec2& v) {
    return std::atan2(u.y - c.y, u.x - c.x) < std::atan2(v.y - c.y, v.x - c.x);
  });
  double area2 = 0.0;
  for (std::size_t i = 0; i < verts.size(); ++i) {
    const auto& u = verts[i];
    const auto& v = verts[(i + 1) % verts.size()];
    area2 += u.x * v.y - v.x * u.y;
  }
  return std::max(0.0, 0.5 * area2);
}

bool bev_collide(const Box3D& a, const Box3D& b, double clearance) {
  return separation(bev_corners(a), bev_corners(b)) < clearance;
}

Vec3 to_box_local(const Vec3& p, const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double dx = p.x - box.center.x, dy = p.y - box.center.y;
  return {c * dx + s * dy, -s * dx + c * dy, p.z - box.center.z};
}

Vec3 to_box_world(const Vec3& p, const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  return {box.center.x + c * p.x - s * p.y, box.center.y + s * p.x + c * p.y, box.center.z + p.z};
}

}  // namespace radiff::augment

#include "radiff/radarframe/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "radiff/radarframe/frame_ops.hpp"

namespace radiff::radar {

namespace {

constexpr double kPi = std::numbers::pi;

struct Wall {
  double x0, y0, x1, y1;
};

double segment_distance(double px, double py, const Wall& w) {
  const double dx = w.x1 - w.x0, dy = w.y1 - w.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - w.x0) * dx + (py - w.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (w.x0 + t * dx), py - (w.y0 + t * dy));
}

double footprint_radius(const Box3D& b) { return 0.5 * std::hypot(b.length, b.width); }

// Faces of a box as (local center, local normal, half extent along the face).
struct Face {
  double cx, cy, nx, ny, half;
};

std::array<Face, 4> box_faces(const Box3D& b) {
  const double hl = 0.5 * b.length, hw = 0.5 * b.width;
  return {{{hl, 0, 1, 0, hw}, {-hl, 0, -1, 0, hw}, {0, hw, 0, 1, hl}, {0, -hw, 0, -1, hl}}};
}

Vec3 to_world(const Box3D& b, double lx, double ly, double lz) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  return {b.center.x + c * lx - s * ly, b.center.y + s * lx + c * ly, b.center.z + lz};
}

bool face_visible(const Box3D& b, const Face& f) {
  const Vec3 fc = to_world(b, f.cx, f.cy, 0.0);
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double nx = c * f.nx - s * f.ny, ny = s * f.nx + c * f.ny;
  return nx * fc.x + ny * fc.y < 0.0;
}

}  // namespace

ClassPrior class_prior(int class_id) {
  switch (class_id) {
    case kCar: return {4.4, 1.85, 1.6, 12.0, 10.0};
    case kPedestrian: return {0.6, 0.6, 1.75, 2.0, -6.0};
    case kCyclist: return {1.8, 0.7, 1.7, 6.0, -1.0};
    default: throw std::invalid_argument("class_prior: unknown class id " + std::to_string(class_id));
  }
}

SynthConfig SynthConfig::for_profile(Profile p) {
  SynthConfig c;
  c.range = RangeSpec::for_profile(p);
  switch (p) {
    case Profile::Toy: break;
    case Profile::Vod:
      c.max_walls = 5;
      break;
    case Profile::TruckScenes:
      c.max_walls = 8;
      c.surface_spacing = 0.7;
      break;
  }
  return c;
}

Frame synth_scene(std::uint64_t seed, const SynthConfig& cfg, std::uint64_t frame_id) {
  cfg.range.validate();
  if (cfg.min_boxes < 0 || cfg.max_boxes < cfg.min_boxes) throw std::invalid_argument("synth: bad box count range");
  if (!(cfg.surface_spacing > 0) || !(cfg.lidar_spacing > 0)) throw std::invalid_argument("synth: spacing must be > 0");

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(frame_id), static_cast<std::uint32_t>(frame_id >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const auto& R = cfg.range;
  const double ground = std::max(R.z.lo + 0.5, -1.5);

  Frame f;
  f.frame_id = frame_id;
  f.timestamp_us = (frame_id + 1) * 100000;
  f.ego = {uniform(0.0, 8.0), 0.0, 0.05 * gauss(rng)};

  // Boxes, placed by rejection on a conservative footprint-circle test.
  const int want = std::uniform_int_distribution<int>(cfg.min_boxes, cfg.max_boxes)(rng);
  std::discrete_distribution<int> class_pick({0.5, 0.25, 0.25});
  for (int attempt = 0; attempt < want * 40 && static_cast<int>(f.boxes.size()) < want; ++attempt) {
    Box3D b;
    b.class_id = class_pick(rng) + 1;
    const auto prior = class_prior(b.class_id);
    b.length = prior.length * uniform(0.9, 1.1);
    b.width = prior.width * uniform(0.9, 1.1);
    b.height = prior.height * uniform(0.9, 1.1);
    const double r = footprint_radius(b);
    const double xlo = std::max(R.x.lo + r, 2.0 + r), xhi = R.x.hi - r;
    const double ylo = R.y.lo + r, yhi = R.y.hi - r;
    if (xlo >= xhi || ylo >= yhi) continue;
    b.center = {uniform(xlo, xhi), uniform(ylo, yhi), ground + 0.5 * b.height};
    if (b.center.z + 0.5 * b.height > R.z.hi) continue;
    b.yaw = wrap_angle(uniform(-kPi, kPi));
    if (unit(rng) < cfg.moving_fraction) {
      const double speed = uniform(0.3, prior.max_speed);
      b.vx = speed * std::cos(b.yaw);
      b.vy = speed * std::sin(b.yaw);
    }
    bool clear = true;
    for (const auto& o : f.boxes)
      if (std::hypot(o.center.x - b.center.x, o.center.y - b.center.y) <= r + footprint_radius(o) + 0.3) clear = false;
    if (clear) f.boxes.push_back(b);
  }

  // Walls avoid every box footprint.
  std::vector<Wall> walls;
  const int n_walls = std::uniform_int_distribution<int>(1, std::max(1, cfg.max_walls))(rng);
  const double extent = std::min(R.x.span(), R.y.span());
  for (int attempt = 0; attempt < n_walls * 40 && static_cast<int>(walls.size()) < n_walls; ++attempt) {
    const double cx = uniform(R.x.lo, R.x.hi), cy = uniform(R.y.lo, R.y.hi);
    const double ang = uniform(-kPi, kPi), half = 0.5 * uniform(0.25, 0.75) * extent;
    Wall w{cx - half * std::cos(ang), cy - half * std::sin(ang), cx + half * std::cos(ang), cy + half * std::sin(ang)};
    if (segment_distance(0.0, 0.0, w) < 2.0) continue;
    bool clear = true;
    for (const auto& b : f.boxes)
      if (segment_distance(b.center.x, b.center.y, w) <= footprint_radius(b) + 0.3) clear = false;
    if (clear) walls.push_back(w);
  }

  auto poisson = [&](double mean) { return mean > 0 ? std::poisson_distribution<int>(mean)(rng) : 0; };
  auto clamp_feat = [](double v, const Interval& in) { return std::clamp(v, in.lo, in.hi); };

  // Object returns and LiDAR on the sensor-facing faces.
  for (const auto& b : f.boxes) {
    const auto prior = class_prior(b.class_id);
    for (const auto& face : box_faces(b)) {
      if (!face_visible(b, face)) continue;
      const double tx = -face.ny, ty = face.nx;  // in-face tangent (local)
      const double inset = 0.98;
      const int n = poisson(2.0 * face.half * b.height / (cfg.surface_spacing * cfg.surface_spacing));
      for (int i = 0; i < n; ++i) {
        const double a = uniform(-face.half, face.half) * inset;
        const double h = uniform(-0.5, 0.5) * b.height * inset;
        const Vec3 p = to_world(b, face.cx * inset + tx * a, face.cy * inset + ty * a, h);
        if (!R.contains(p)) continue;
        const double range = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
        const double dop = (b.vx * p.x + b.vy * p.y) / range + cfg.doppler_noise * gauss(rng);
        const double rcs = prior.rcs_mean + cfg.rcs_noise * gauss(rng);
        f.radar.push_back({p.x, p.y, p.z, clamp_feat(dop, cfg.features.doppler), clamp_feat(rcs, cfg.features.rcs)});
      }
      const int na = std::max(1, static_cast<int>(2.0 * face.half / cfg.lidar_spacing));
      const int nh = std::max(1, static_cast<int>(b.height / cfg.lidar_spacing));
      for (int i = 0; i < na; ++i) {
        for (int j = 0; j < nh; ++j) {
          const double a = (-face.half + (i + 0.5) * 2.0 * face.half / na) * inset;
          const double h = (-0.5 + (j + 0.5) / nh) * b.height * inset;
          const Vec3 p = to_world(b, face.cx * inset + tx * a, face.cy * inset + ty * a, h);
          if (R.contains(p)) f.lidar.push_back(p);
        }
      }
    }
  }

  // Wall LiDAR grid and static radar clutter.
  const double top = std::min(R.z.hi, ground + cfg.wall_height);
  for (const auto& w : walls) {
    const double len = std::hypot(w.x1 - w.x0, w.y1 - w.y0);
    const int na = std::max(1, static_cast<int>(len / cfg.lidar_spacing));
    const int nh = std::max(1, static_cast<int>((top - ground) / cfg.lidar_spacing));
    for (int i = 0; i < na; ++i) {
      const double t = (i + 0.5) / na;
      for (int j = 0; j < nh; ++j) {
        const Vec3 p{w.x0 + t * (w.x1 - w.x0), w.y0 + t * (w.y1 - w.y0), ground + (j + 0.5) * (top - ground) / nh};
        if (R.contains(p)) f.lidar.push_back(p);
      }
    }
    const int nc = poisson(cfg.clutter_per_meter * len);
    for (int i = 0; i < nc; ++i) {
      const double t = unit(rng);
      const Vec3 p{w.x0 + t * (w.x1 - w.x0), w.y0 + t * (w.y1 - w.y0), uniform(ground, std::min(top, ground + 2.0))};
      const double dop = cfg.clutter_doppler_noise * gauss(rng);
      const double rcs = -5.0 + 3.0 * gauss(rng);
      if (!R.contains(p) || containing_box(p, f.boxes) >= 0) continue;
      f.radar.push_back({p.x, p.y, p.z, clamp_feat(dop, cfg.features.doppler), clamp_feat(rcs, cfg.features.rcs)});
    }
  }
  return f;
}

}  // namespace radiff::radar

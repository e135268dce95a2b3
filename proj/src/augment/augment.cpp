#include "radiff/augment/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "radiff/radarframe/frame_ops.hpp"
#include "radiff/radarframe/rdf.hpp"

namespace radiff::augment {

std::size_t GtDatabase::count(int class_id) const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [&](const GtEntry& e) { return e.class_id == class_id; }));
}

GtDatabase build_gt_database(const std::vector<Frame>& frames) {
  GtDatabase db;
  for (const auto& f : frames) {
    std::vector<GtEntry> per_box(f.boxes.size());
    for (std::size_t b = 0; b < f.boxes.size(); ++b) {
      per_box[b].box = f.boxes[b];
      per_box[b].class_id = f.boxes[b].class_id;
      per_box[b].source_frame = f.frame_id;
    }
    for (std::size_t i = 0; i < f.radar.points.size(); ++i) {
      if (!f.radar.mask[i]) continue;
      const auto& p = f.radar.points[i];
      const int b = radar::containing_box(p.position(), f.boxes);
      if (b < 0) continue;
      const Vec3 local = to_box_local(p.position(), f.boxes[b]);
      per_box[b].points.push_back({local.x, local.y, local.z, p.doppler, p.rcs});
    }
    for (auto& e : per_box)
      if (e.points.size() >= kMinEntryPoints) db.entries.push_back(std::move(e));
  }
  return db;
}

void save_database(const GtDatabase& db, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "index.txt", std::ios::binary);
  if (!index) throw std::runtime_error("cannot write " + (dir / "index.txt").string());
  index << "# file class_id points source_frame\n";
  for (std::size_t i = 0; i < db.entries.size(); ++i) {
    const auto& e = db.entries[i];
    Frame f;
    f.frame_id = e.source_frame;
    f.boxes.push_back(e.box);
    for (const auto& p : e.points) f.radar.push_back(p);
    const auto name = fmt::format("entry_{:06d}.rdf", i);
    radar::save_frame(f, dir / name);
    index << fmt::format("{} {} {} {}\n", name, e.class_id, e.points.size(), e.source_frame);
  }
}

GtDatabase load_database(const std::filesystem::path& dir) {
  std::ifstream index(dir / "index.txt", std::ios::binary);
  if (!index) throw std::runtime_error("cannot open " + (dir / "index.txt").string());
  GtDatabase db;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(index, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string name;
    int cls = 0;
    std::size_t npts = 0;
    std::uint64_t src = 0;
    if (!(ss >> name >> cls >> npts >> src)) throw radar::FormatError("bad index line", lineno);
    const Frame f = radar::load_frame(dir / name);
    if (f.boxes.size() != 1 || f.radar.points.size() != npts || f.boxes[0].class_id != cls) {
      throw radar::FormatError("entry " + name + " does not match its index line", lineno);
    }
    db.entries.push_back({f.boxes[0], f.radar.points, src, cls});
  }
  return db;
}

namespace {

bool collides_any(const Box3D& b, const std::vector<Box3D>& boxes) {
  return std::any_of(boxes.begin(), boxes.end(), [&](const Box3D& o) { return bev_collide(b, o); });
}

void place_entry(Frame& f, const GtEntry& e) {
  RadarPointCloud kept;
  for (std::size_t i = 0; i < f.radar.points.size(); ++i) {
    if (f.radar.mask[i] && radar::point_in_box(f.radar.points[i].position(), e.box)) continue;
    kept.push_back(f.radar.points[i], f.radar.mask[i] != 0);
  }
  for (const auto& p : e.points) {
    const Vec3 w = to_box_world({p.x, p.y, p.z}, e.box);
    kept.push_back({w.x, w.y, w.z, p.doppler, p.rcs});
  }
  f.radar = std::move(kept);
  f.boxes.push_back(e.box);
}

std::size_t foreground_count(const Frame& f) { return radar::split_fg_bg(f.radar, f.boxes).foreground.size(); }

}  // namespace

InsertResult gt_sample_insert(const Frame& frame, const GtDatabase& db, const std::map<int, int>& per_class,
                              std::uint64_t seed) {
  InsertResult res{frame, 0, {}};
  std::mt19937_64 rng(seed);
  for (const auto& [cls, want] : per_class) {
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < db.entries.size(); ++i)
      if (db.entries[i].class_id == cls) cand.push_back(i);
    std::shuffle(cand.begin(), cand.end(), rng);
    int placed = 0;
    for (auto i : cand) {
      if (placed >= want) break;
      const auto& e = db.entries[i];
      if (collides_any(e.box, res.frame.boxes)) continue;
      place_entry(res.frame, e);
      ++placed;
    }
    if (placed < want) {
      res.warnings.push_back(
          fmt::format("class {}: inserted {} of {} requested ({} candidates)", cls, placed, want, cand.size()));
    }
    res.inserted += static_cast<std::size_t>(placed);
  }
  return res;
}

int azimuth_sector(double x, double y, int sectors) {
  const double a = std::atan2(y, x);  // [-pi, pi]
  int s = static_cast<int>(std::floor((a + std::numbers::pi) / (2.0 * std::numbers::pi) * sectors));
  return std::clamp(s, 0, sectors - 1);
}

InsertResult polar_mix_fill(const Frame& frame, const GtDatabase& db, std::size_t target_fg_points,
                            std::uint64_t seed, int sectors) {
  if (sectors < 1) throw std::invalid_argument("polar_mix_fill: sectors must be >= 1");
  InsertResult res{frame, 0, {}};
  std::size_t fg = foreground_count(res.frame);
  if (fg >= target_fg_points) return res;
  std::vector<int> order(static_cast<std::size_t>(sectors));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  for (int s : order) {
    for (const auto& e : db.entries) {
      if (e.source_frame == frame.frame_id) continue;
      if (azimuth_sector(e.box.center.x, e.box.center.y, sectors) != s) continue;
      if (collides_any(e.box, res.frame.boxes)) continue;
      place_entry(res.frame, e);
      ++res.inserted;
    }
    fg = foreground_count(res.frame);
    if (fg >= target_fg_points) return res;
  }
  res.warnings.push_back(fmt::format("sectors exhausted at {} of {} foreground points", fg, target_fg_points));
  return res;
}

namespace {

// Rotates (x, y) and nudges the result by a few ulps so that hypot of the
// output equals hypot of the input exactly.
void rotate_keep_range(double& x, double& y, double c, double s) {
  const double r = std::hypot(x, y);
  const double rx = c * x - s * y, ry = s * x + c * y;
  if (std::hypot(rx, ry) == r) {
    x = rx;
    y = ry;
    return;
  }
  auto step = [](double v, int k) {
    const double dir = k > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    for (int i = 0; i < std::abs(k); ++i) v = std::nextafter(v, dir);
    return v;
  };
  for (int radius = 1; radius <= 16; ++radius) {
    for (int dx = -radius; dx <= radius; ++dx) {
      for (int dy = -radius; dy <= radius; ++dy) {
        if (std::max(std::abs(dx), std::abs(dy)) != radius) continue;
        const double cx = step(rx, dx), cy = step(ry, dy);
        if (std::hypot(cx, cy) == r) {
          x = cx;
          y = cy;
          return;
        }
      }
    }
  }
  x = rx;
  y = ry;
}

void rotate_xy(double& x, double& y, double c, double s) {
  const double rx = c * x - s * y, ry = s * x + c * y;
  x = rx;
  y = ry;
}

}  // namespace

Frame global_flip_y(const Frame& f) {
  Frame out = f;
  for (auto& p : out.radar.points) p.y = -p.y;
  for (auto& q : out.lidar) q.y = -q.y;
  for (auto& b : out.boxes) {
    b.center.y = -b.center.y;
    b.yaw = radar::wrap_angle(-b.yaw);
    b.vy = -b.vy;
  }
  out.ego.vy = -out.ego.vy;
  out.ego.yaw_rate = -out.ego.yaw_rate;
  return out;
}

Frame global_rotate(const Frame& f, double theta) {
  if (theta == 0.0) return f;
  Frame out = f;
  const double c = std::cos(theta), s = std::sin(theta);
  for (auto& p : out.radar.points) rotate_keep_range(p.x, p.y, c, s);
  for (auto& q : out.lidar) rotate_xy(q.x, q.y, c, s);
  for (auto& b : out.boxes) {
    rotate_xy(b.center.x, b.center.y, c, s);
    rotate_xy(b.vx, b.vy, c, s);
    b.yaw = radar::wrap_angle(b.yaw + theta);
  }
  rotate_xy(out.ego.vx, out.ego.vy, c, s);
  return out;
}

Frame global_scale(const Frame& f, double s) {
  if (!(s > 0.0)) throw std::invalid_argument("global_scale: factor must be positive");
  Frame out = f;
  for (auto& p : out.radar.points) {
    p.x *= s;
    p.y *= s;
    p.z *= s;
  }
  for (auto& q : out.lidar) {
    q.x *= s;
    q.y *= s;
    q.z *= s;
  }
  for (auto& b : out.boxes) {
    b.center = {b.center.x * s, b.center.y * s, b.center.z * s};
    b.length *= s;
    b.width *= s;
    b.height *= s;
  }
  return out;
}

GlobalAugParams sample_global_params(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GlobalAugParams p;
  p.flip = u(rng) < 0.5;
  p.theta = -std::numbers::pi / 4 + u(rng) * (std::numbers::pi / 2);
  p.scale = 0.95 + u(rng) * 0.1;
  return p;
}

Frame apply_global(const Frame& f, const GlobalAugParams& p) {
  Frame out = p.flip ? global_flip_y(f) : f;
  out = global_rotate(out, p.theta);
  return global_scale(out, p.scale);
}

FusedCloud fuse(const RadarPointCloud& fg, const RadarPointCloud& bg) {
  FusedCloud out;
  for (std::size_t i = 0; i < fg.points.size(); ++i) {
    if (!fg.mask[i]) continue;
    out.cloud.push_back(fg.points[i]);
    out.is_foreground.push_back(1);
  }
  for (std::size_t i = 0; i < bg.points.size(); ++i) {
    if (!bg.mask[i]) continue;
    out.cloud.push_back(bg.points[i]);
    out.is_foreground.push_back(0);
  }
  return out;
}

}  // namespace radiff::augment

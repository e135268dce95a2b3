#include "radiff/radarframe/frame_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

namespace radiff::radar {

RadarPointCloud RadarPointCloud::from_points(std::vector<RadarPoint> pts) {
  RadarPointCloud pc;
  pc.mask.assign(pts.size(), 1);
  pc.points = std::move(pts);
  return pc;
}

std::size_t RadarPointCloud::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

std::vector<RadarPoint> RadarPointCloud::valid_points() const {
  std::vector<RadarPoint> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i)
    if (mask[i]) out.push_back(points[i]);
  return out;
}

void RadarPointCloud::push_back(const RadarPoint& p, bool valid) {
  points.push_back(p);
  mask.push_back(valid ? 1 : 0);
}

std::string profile_name(Profile p) {
  switch (p) {
    case Profile::Vod: return "vod";
    case Profile::TruckScenes: return "truckscenes";
    case Profile::Toy: return "toy";
  }
  return "toy";
}

Profile parse_profile(const std::string& name) {
  if (name == "vod") return Profile::Vod;
  if (name == "truckscenes") return Profile::TruckScenes;
  if (name == "toy") return Profile::Toy;
  throw std::invalid_argument("unknown profile '" + name + "' (expected vod, truckscenes or toy)");
}

RangeSpec RangeSpec::for_profile(Profile p) {
  switch (p) {
    case Profile::Vod: return {{0.0, 51.2}, {-25.6, 25.6}, {-3.0, 2.0}, p, 5};
    case Profile::TruckScenes: return {{-75.0, 75.0}, {-75.0, 75.0}, {-2.5, 4.5}, p, 6};
    case Profile::Toy: return {{0.0, 20.0}, {-10.0, 10.0}, {-2.0, 2.0}, p, 1};
  }
  return {};
}

void RangeSpec::validate() const {
  if (!(x.lo < x.hi) || !(y.lo < y.hi) || !(z.lo < z.hi)) {
    throw std::invalid_argument("range spec needs min < max on every axis");
  }
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

double point_range(const RadarPoint& p) { return std::hypot(p.x, p.y); }

Vec3 Pose2D::apply(const Vec3& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p.x - s * p.y + x, s * p.x + c * p.y + y, p.z};
}

AggregateResult aggregate_sweeps(std::span<const Frame> frames, std::size_t k, std::span<const Pose2D> poses) {
  if (k == 0) throw std::invalid_argument("aggregate_sweeps: k must be at least 1");
  if (poses.size() != frames.size()) throw std::invalid_argument("aggregate_sweeps: one pose per frame required");
  AggregateResult result;
  result.truncated = k > frames.size();
  result.sweeps_used = std::min(k, frames.size());
  const std::size_t first = frames.size() - result.sweeps_used;
  for (std::size_t f = first; f < frames.size(); ++f) {
    const auto& radar = frames[f].radar;
    for (std::size_t i = 0; i < radar.points.size(); ++i) {
      if (!radar.mask[i]) continue;
      RadarPoint p = radar.points[i];
      const Vec3 q = poses[f].apply(p.position());
      p.x = q.x;
      p.y = q.y;
      p.z = q.z;
      result.cloud.push_back(p);
    }
  }
  return result;
}

std::vector<Pose2D> relative_poses_from_ego(std::span<const Frame> frames) {
  std::vector<Pose2D> world(frames.size());
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (frames[i].timestamp_us <= frames[i - 1].timestamp_us) {
      throw std::invalid_argument("relative_poses_from_ego: timestamps must be strictly increasing");
    }
    const double dt = static_cast<double>(frames[i].timestamp_us - frames[i - 1].timestamp_us) * 1e-6;
    const auto& ego = frames[i - 1].ego;
    const auto& prev = world[i - 1];
    const double c = std::cos(prev.yaw), s = std::sin(prev.yaw);
    world[i] = {prev.x + (c * ego.vx - s * ego.vy) * dt, prev.y + (s * ego.vx + c * ego.vy) * dt,
                prev.yaw + ego.yaw_rate * dt};
  }
  std::vector<Pose2D> rel(frames.size());
  if (frames.empty()) return rel;
  const auto& last = world.back();
  const double c = std::cos(last.yaw), s = std::sin(last.yaw);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const double dx = world[i].x - last.x, dy = world[i].y - last.y;
    rel[i] = {c * dx + s * dy, -s * dx + c * dy, world[i].yaw - last.yaw};
  }
  return rel;
}

double compensate_doppler(double raw_doppler, const Vec3& point, const Vec2& ego_velocity) {
  const double r = std::sqrt(point.x * point.x + point.y * point.y + point.z * point.z);
  if (r < 1e-6) throw std::invalid_argument("compensate_doppler: point at sensor origin has no ray direction");
  return raw_doppler + (ego_velocity.x * point.x + ego_velocity.y * point.y) / r;
}

double to_unit(double v, const Interval& in) {
  if (!(in.hi > in.lo)) throw std::invalid_argument("normalize: degenerate interval");
  return 2.0 * (v - in.lo) / (in.hi - in.lo) - 1.0;
}

double from_unit(double u, const Interval& in) {
  if (!(in.hi > in.lo)) throw std::invalid_argument("denormalize: degenerate interval");
  return in.lo + (u + 1.0) * 0.5 * (in.hi - in.lo);
}

namespace {

template <class F>
RadarPointCloud map_points(const RadarPointCloud& pc, const RangeSpec& spec, const FeatureRanges& features, F f) {
  spec.validate();
  if (!(features.doppler.hi > features.doppler.lo) || !(features.rcs.hi > features.rcs.lo)) {
    throw std::invalid_argument("normalize: degenerate feature interval");
  }
  RadarPointCloud out = pc;
  for (std::size_t i = 0; i < out.points.size(); ++i) {
    if (!out.mask[i]) continue;
    auto& p = out.points[i];
    p = {f(p.x, spec.x), f(p.y, spec.y), f(p.z, spec.z), f(p.doppler, features.doppler), f(p.rcs, features.rcs)};
  }
  return out;
}

}  // namespace

RadarPointCloud normalize(const RadarPointCloud& pc, const RangeSpec& spec, const FeatureRanges& features) {
  return map_points(pc, spec, features, [](double v, const Interval& in) { return to_unit(v, in); });
}

RadarPointCloud denormalize(const RadarPointCloud& pc, const RangeSpec& spec, const FeatureRanges& features) {
  return map_points(pc, spec, features, [](double v, const Interval& in) { return from_unit(v, in); });
}

RadarPointCloud clip_to_range(const RadarPointCloud& pc, const RangeSpec& spec) {
  RadarPointCloud out;
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    if (pc.mask[i] && spec.contains(pc.points[i].position())) out.push_back(pc.points[i]);
  }
  return out;
}

RadarPointCloud pad_or_downsample(const RadarPointCloud& pc, std::size_t target_n, std::uint64_t seed) {
  if (target_n == 0) throw std::invalid_argument("pad_or_downsample: target_n must be at least 1");
  auto valid = pc.valid_points();
  RadarPointCloud out;
  if (valid.size() > target_n) {
    std::vector<std::size_t> all(valid.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::size_t> keep;
    keep.reserve(target_n);
    std::mt19937_64 rng(seed);
    std::sample(all.begin(), all.end(), std::back_inserter(keep), target_n, rng);
    for (auto i : keep) out.push_back(valid[i]);
    return out;
  }
  for (const auto& p : valid) out.push_back(p);
  while (out.points.size() < target_n) out.push_back(RadarPoint{}, false);
  return out;
}

bool point_in_box(const Vec3& p, const Box3D& box) {
  const double dx = p.x - box.center.x, dy = p.y - box.center.y, dz = p.z - box.center.z;
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * box.length && std::abs(ly) <= 0.5 * box.width && std::abs(dz) <= 0.5 * box.height;
}

int containing_box(const Vec3& p, std::span<const Box3D> boxes) {
  for (std::size_t b = 0; b < boxes.size(); ++b)
    if (point_in_box(p, boxes[b])) return static_cast<int>(b);
  return -1;
}

FgBgSplit split_fg_bg(const RadarPointCloud& pc, std::span<const Box3D> boxes) {
  FgBgSplit out;
  for (std::size_t i = 0; i < pc.points.size(); ++i) {
    if (!pc.mask[i]) continue;
    const auto& p = pc.points[i];
    if (containing_box(p.position(), boxes) >= 0) {
      out.foreground.push_back(p);
    } else {
      out.background.push_back(p);
    }
  }
  return out;
}

VelocityEstimate derive_box_velocity(std::span<const Box3D> track, std::span<const std::uint64_t> timestamps_us) {
  if (track.size() != timestamps_us.size()) {
    throw std::invalid_argument("derive_box_velocity: one timestamp per observation required");
  }
  VelocityEstimate est;
  if (track.empty()) return est;
  if (track.size() == 1) {
    est.velocities.push_back({0.0, 0.0});
    est.single_observation = true;
    return est;
  }
  auto diff = [&](std::size_t a, std::size_t b) {
    if (timestamps_us[b] <= timestamps_us[a]) {
      throw std::invalid_argument("derive_box_velocity: timestamps must be strictly increasing");
    }
    const double dt = static_cast<double>(timestamps_us[b] - timestamps_us[a]) * 1e-6;
    return Vec2{(track[b].center.x - track[a].center.x) / dt, (track[b].center.y - track[a].center.y) / dt};
  };
  const std::size_t n = track.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      est.velocities.push_back(diff(0, 1));
    } else if (i + 1 == n) {
      est.velocities.push_back(diff(n - 2, n - 1));
    } else {
      est.velocities.push_back(diff(i - 1, i + 1));
    }
  }
  return est;
}

void validate_frame(const Frame& frame, int num_classes) {
  const auto& radar = frame.radar;
  if (radar.mask.size() != radar.points.size()) throw std::invalid_argument("radar mask/points size mismatch");
  for (const auto& p : radar.points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z) || !std::isfinite(p.doppler) ||
        !std::isfinite(p.rcs)) {
      throw std::invalid_argument("non-finite radar point");
    }
  }
  for (const auto& b : frame.boxes) {
    if (!(b.length > 0.0 && b.width > 0.0 && b.height > 0.0)) throw std::invalid_argument("box size must be positive");
    if (!(b.yaw > -std::numbers::pi && b.yaw <= std::numbers::pi)) throw std::invalid_argument("box yaw not wrapped");
    if (b.class_id < 1 || b.class_id > num_classes) {
      throw std::invalid_argument("box class id " + std::to_string(b.class_id) + " outside [1, " +
                                  std::to_string(num_classes) + "]");
    }
  }
}

}  // namespace radiff::radar

#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "radiff/radarframe/types.hpp"

namespace radiff::radar {

// Planar rigid transform p' = R(yaw) p + (x, y).
struct Pose2D {
  double x = 0.0, y = 0.0, yaw = 0.0;
  Vec3 apply(const Vec3& p) const;
};

struct AggregateResult {
  RadarPointCloud cloud;
  std::size_t sweeps_used = 0;
  bool truncated = false;  // fewer sweeps available than requested
};

// Union of the last k sweeps, each mapped into the latest sweep's frame by
// poses[i] (one pose per input frame). Doppler/RCS are carried unchanged.
AggregateResult aggregate_sweeps(std::span<const Frame> frames, std::size_t k, std::span<const Pose2D> poses);

// Poses of each frame relative to the last one, integrating the recorded
// constant-velocity/yaw-rate ego motion between timestamps.
std::vector<Pose2D> relative_poses_from_ego(std::span<const Frame> frames);

// v_comp = v_raw + v_ego . r_hat, with r_hat the unit ray from the sensor to
// the point (positive = receding).
double compensate_doppler(double raw_doppler, const Vec3& point, const Vec2& ego_velocity);

// Affine per-channel map onto [-1, 1]^5 and its inverse.
RadarPointCloud normalize(const RadarPointCloud& pc, const RangeSpec& spec, const FeatureRanges& features);
RadarPointCloud denormalize(const RadarPointCloud& pc, const RangeSpec& spec, const FeatureRanges& features);
double to_unit(double v, const Interval& in);
double from_unit(double u, const Interval& in);

// Keeps the valid points whose position lies inside the spec.
RadarPointCloud clip_to_range(const RadarPointCloud& pc, const RangeSpec& spec);

// Exactly target_n slots: a seeded uniform subset without replacement when
// there are more valid points, zero padding (mask 0) when fewer.
RadarPointCloud pad_or_downsample(const RadarPointCloud& pc, std::size_t target_n, std::uint64_t seed);

bool point_in_box(const Vec3& p, const Box3D& box);
// Index of the first box containing p, or -1.
int containing_box(const Vec3& p, std::span<const Box3D> boxes);

struct FgBgSplit {
  RadarPointCloud foreground;
  RadarPointCloud background;
};
FgBgSplit split_fg_bg(const RadarPointCloud& pc, std::span<const Box3D> boxes);

struct VelocityEstimate {
  std::vector<Vec2> velocities;  // one per observation
  bool single_observation = false;
};

// Central differences of box centers over time; one-sided at the ends.
VelocityEstimate derive_box_velocity(std::span<const Box3D> track, std::span<const std::uint64_t> timestamps_us);

// Throws std::invalid_argument describing the first violated invariant.
void validate_frame(const Frame& frame, int num_classes = kDefaultNumClasses);

}  // namespace radiff::radar

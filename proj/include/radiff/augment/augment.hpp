#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "radiff/radarframe/types.hpp"

namespace radiff::augment {

using radar::Box3D;
using radar::Frame;
using radar::RadarPoint;
using radar::RadarPointCloud;
using radar::Vec2;
using radar::Vec3;

// ---- BEV geometry ----

// Counter-clockwise footprint corners.
std::array<Vec2, 4> bev_corners(const Box3D& b);

// Exact intersection area of two yaw-rotated footprints.
double bev_overlap(const Box3D& a, const Box3D& b);

// True unless a separating axis leaves a gap of at least `clearance` metres.
// Accepted boxes therefore never share any area, not even a touching edge.
bool bev_collide(const Box3D& a, const Box3D& b, double clearance = 1e-6);

// ---- GT database ----

struct GtEntry {
  Box3D box;                        // world pose in the source frame
  std::vector<RadarPoint> points;   // box-local positions, features unchanged
  std::uint64_t source_frame = 0;
  int class_id = 1;
};

inline constexpr std::size_t kMinEntryPoints = 5;

struct GtDatabase {
  std::vector<GtEntry> entries;
  std::size_t count(int class_id) const;
};

Vec3 to_box_local(const Vec3& p, const Box3D& box);
Vec3 to_box_world(const Vec3& p, const Box3D& box);

GtDatabase build_gt_database(const std::vector<Frame>& frames);

void save_database(const GtDatabase& db, const std::filesystem::path& dir);
GtDatabase load_database(const std::filesystem::path& dir);

struct InsertResult {
  Frame frame;
  std::size_t inserted = 0;
  std::vector<std::string> warnings;
};

// Samples entries per class and places them at their stored world poses.
// Candidates colliding with any present box are skipped; existing radar
// points inside an accepted box are replaced by the entry's points.
InsertResult gt_sample_insert(const Frame& frame, const GtDatabase& db, const std::map<int, int>& per_class,
                              std::uint64_t seed);

// Adds database objects one azimuth sector at a time (sectors visited in a
// seeded order) until the frame holds target_fg_points foreground points.
InsertResult polar_mix_fill(const Frame& frame, const GtDatabase& db, std::size_t target_fg_points,
                            std::uint64_t seed, int sectors = 8);

int azimuth_sector(double x, double y, int sectors);

// ---- global augmentations (about the sensor origin) ----

Frame global_flip_y(const Frame& f);
// Rotated radar points keep hypot(x, y) bit-identical to the input.
Frame global_rotate(const Frame& f, double theta);
Frame global_scale(const Frame& f, double s);

struct GlobalAugParams {
  bool flip = false;
  double theta = 0.0;
  double scale = 1.0;
};
// flip with p = 0.5, theta in [-pi/4, pi/4], scale in [0.95, 1.05].
GlobalAugParams sample_global_params(std::uint64_t seed);
Frame apply_global(const Frame& f, const GlobalAugParams& p);

// ---- fusion ----

struct FusedCloud {
  RadarPointCloud cloud;
  std::vector<std::uint8_t> is_foreground;  // in-memory provenance only
};
FusedCloud fuse(const RadarPointCloud& fg, const RadarPointCloud& bg);

}  // namespace radiff::augment

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "radiff/radarframe/types.hpp"

namespace radiff::metrics {

using radar::RadarPointCloud;
using radar::Vec3;

inline double sq_dist(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

// Exact nearest neighbour by squared Euclidean distance. Reference points are
// sorted by x once; a query scans outward from its x position and stops when
// the x gap alone exceeds the best distance. Ties go to the lowest index.
class NearestNeighbor {
 public:
  struct Hit {
    std::size_t index = 0;
    double sq_dist = 0.0;
  };

  explicit NearestNeighbor(std::span<const Vec3> reference);
  Hit query(const Vec3& q) const;
  std::size_t size() const { return pts_.size(); }

 private:
  std::vector<Vec3> pts_;           // sorted by x
  std::vector<std::size_t> index_;  // original index of pts_[i]
};

std::vector<Vec3> positions(const RadarPointCloud& pc);  // valid points only

// Mean squared nearest distance A->B plus B->A. Throws on empty input.
double chamfer(std::span<const Vec3> a, std::span<const Vec3> b);
double cd(const RadarPointCloud& real, const RadarPointCloud& generated);

enum class Channel { Doppler, Rcs };
// Mean |f(v) - f(u*)| over generated points v, u* the nearest real point.
double cd_feature(const RadarPointCloud& real, const RadarPointCloud& generated, Channel channel);

struct BevGrid {
  radar::Interval x{0.0, 1.0}, y{0.0, 1.0};
  int nx = 100, ny = 100;
  static BevGrid over(const radar::RangeSpec& spec, int cells = 100) {
    return {spec.x, spec.y, cells, cells};
  }
  // Cell of a point; coordinates outside the grid clamp to the border cells.
  std::size_t cell(double px, double py) const;
};

// Normalized BEV occupancy of every valid point in the collection.
std::vector<double> bev_histogram(std::span<const RadarPointCloud> clouds, const BevGrid& grid);
// Base-2 Jensen-Shannon divergence of two distributions on the same support.
double jsd(std::span<const double> p, std::span<const double> q);
double jsd_bev(std::span<const RadarPointCloud> real, std::span<const RadarPointCloud> generated,
               const BevGrid& grid);

// For each real cloud the smallest CD to any generated cloud, averaged.
double mmd(std::span<const RadarPointCloud> real, std::span<const RadarPointCloud> generated);

struct MetricReport {
  double cd = 0.0, cd_doppler = 0.0, cd_rcs = 0.0, jsd = 0.0, mmd = 0.0;
  std::size_t real_frames = 0, generated_frames = 0, paired_frames = 0, skipped_pairs = 0;
  int grid_nx = 100, grid_ny = 100;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

struct EvalConfig {
  radar::RangeSpec range = radar::RangeSpec::for_profile(radar::Profile::Toy);
  int grid_cells = 100;
};

// Frames are paired by frame_id; unmatched ids only produce a warning. CD
// terms are averaged over pairs where both clouds are nonempty.
MetricReport evaluate(std::span<const radar::Frame> real, std::span<const radar::Frame> generated,
                      const EvalConfig& config);
MetricReport evaluate_dirs(const std::filesystem::path& real_dir, const std::filesystem::path& generated_dir,
                           const EvalConfig& config);

// Sorted *.rdf files of a directory, loaded in name order.
std::vector<radar::Frame> load_frames(const std::filesystem::path& dir);

}  // namespace radiff::metrics

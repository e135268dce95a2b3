#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "radiff/numcore/layers.hpp"
#include "radiff/radarframe/types.hpp"

namespace radiff::cond {

using numcore::ParamSet;
using numcore::Rng;
using numcore::Tensor;

// Encoder output for a batch of B scenes: token rows of scene b are
// [offsets[b], offsets[b+1]) of `tokens`; `global` has one row per scene.
struct ConditionBatch {
  Tensor tokens;
  std::vector<std::size_t> offsets{0};
  Tensor global;
  std::size_t batch() const { return offsets.size() - 1; }
  std::size_t width() const { return global.cols(); }
};

// An empty condition (no tokens, zero global embedding) for every scene.
ConditionBatch empty_condition(std::size_t batch, std::size_t width);

// ---- bounding-box layout ----

struct BoxNorm {
  double size_max = 25.0;  // m
  double v_max = 30.0;     // m/s
};

using BoxVector = std::array<double, 9>;  // cx cy cz l w h yaw vx vy

// Centers map affinely from the range, sizes from (0, size_max], yaw from
// (-pi, pi], velocities from [-v_max, v_max]; sizes and velocities beyond
// the caps are clamped so every component stays in [0, 1].
BoxVector normalize_box(const radar::Box3D& box, const radar::RangeSpec& spec, const BoxNorm& norm = {});
radar::Box3D denormalize_box(const BoxVector& b, int class_id, const radar::RangeSpec& spec,
                             const BoxNorm& norm = {});

struct LayoutObject {
  BoxVector b{};
  int c = 0;
};

struct LayoutSet {
  std::vector<LayoutObject> objects;
  bool truncated = false;  // more than n-1 boxes; a random subset was kept
};

BoxVector global_object_box();

// [o0, boxes..., padding...], exactly n objects. Padding has c = C+1, b = 0.
LayoutSet build_layout_set(std::span<const radar::Box3D> boxes, std::size_t n, const radar::RangeSpec& spec,
                           int num_classes = radar::kDefaultNumClasses, const BoxNorm& norm = {},
                           std::uint64_t seed = 0);

struct LayoutEncoderConfig {
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t layers = 2;
  int num_classes = radar::kDefaultNumClasses;
};

// Box embedding + class embedding, summed, then pre-norm self-attention
// layers over the set (no positional encoding among objects).
class LayoutEncoder {
 public:
  LayoutEncoder() = default;
  LayoutEncoder(ParamSet& params, const std::string& name, const LayoutEncoderConfig& cfg, Rng& rng);
  ConditionBatch operator()(std::span<const LayoutSet> sets) const;
  const LayoutEncoderConfig& config() const { return cfg_; }

 private:
  LayoutEncoderConfig cfg_;
  numcore::Linear box_embed_;
  Tensor class_table_;  // (C+2) x width
  std::vector<numcore::LayerNorm> norms_;
  std::vector<numcore::MultiHeadAttention> attn_;
  std::vector<numcore::FeedForward> ff_;
};

// ---- LiDAR pillars ----

struct PillarConfig {
  double cell = 0.8;             // g, metres
  std::size_t max_points = 16;   // P per pillar
  std::size_t max_tokens = 256;  // K_max
  std::size_t width = 128;
};

struct Pillar {
  std::size_t ix = 0, iy = 0;
  // Per point: x, y, z, dx, dy (offsets to the cell center), metres.
  std::vector<std::array<double, 5>> points;
};

struct PillarGrid {
  std::size_t nx = 0, ny = 0;
  double cell = 0.8;
  radar::RangeSpec range;
  std::vector<Pillar> pillars;  // nonempty cells, ordered by (iy, ix)
  std::array<double, 2> center(const Pillar& p) const;
};

// Cells are half-open [lower, upper); a point exactly on the far range edge
// joins the last cell. Points outside the range are dropped.
PillarGrid pillarize(std::span<const radar::Vec3> lidar, const radar::RangeSpec& spec, double cell,
                     std::size_t max_points, std::uint64_t seed);

// Greedy farthest-point selection over pillar centers, starting at the
// first pillar; returns at most k indices in selection order.
std::vector<std::size_t> farthest_pillars(const PillarGrid& grid, std::size_t k);

class PillarEncoder {
 public:
  PillarEncoder() = default;
  PillarEncoder(ParamSet& params, const std::string& name, const PillarConfig& cfg, Rng& rng);
  ConditionBatch operator()(std::span<const PillarGrid> grids) const;
  const PillarConfig& config() const { return cfg_; }

 private:
  PillarConfig cfg_;
  numcore::Mlp point_mlp_;
  numcore::Linear token_proj_;
};

// 2D sinusoidal encoding: half the columns for x, half for y.
Tensor sinusoidal_2d(std::span<const std::array<double, 2>> xy, std::size_t dim);

}  // namespace radiff::cond

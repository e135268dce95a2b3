#include "radiff/conditioning/conditioning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

namespace radiff::cond {

using numcore::Segments;

ConditionBatch empty_condition(std::size_t batch, std::size_t width) {
  ConditionBatch c;
  c.tokens = Tensor::zeros({0, width});
  c.offsets.assign(batch + 1, 0);
  c.global = Tensor::zeros({batch, width});
  return c;
}

// ---- layout ----

namespace {

double unit(double v, double lo, double hi) { return (v - lo) / (hi - lo); }
double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

BoxVector normalize_box(const radar::Box3D& box, const radar::RangeSpec& spec, const BoxNorm& norm) {
  if (!spec.contains(box.center)) throw std::invalid_argument("normalize_box: box center outside the range");
  const double tp = 2.0 * std::numbers::pi;
  return {unit(box.center.x, spec.x.lo, spec.x.hi),
          unit(box.center.y, spec.y.lo, spec.y.hi),
          unit(box.center.z, spec.z.lo, spec.z.hi),
          clamp01(box.length / norm.size_max),
          clamp01(box.width / norm.size_max),
          clamp01(box.height / norm.size_max),
          clamp01((box.yaw + std::numbers::pi) / tp),
          clamp01((box.vx + norm.v_max) / (2.0 * norm.v_max)),
          clamp01((box.vy + norm.v_max) / (2.0 * norm.v_max))};
}

radar::Box3D denormalize_box(const BoxVector& b, int class_id, const radar::RangeSpec& spec, const BoxNorm& norm) {
  radar::Box3D out;
  out.center = {spec.x.lo + b[0] * spec.x.span(), spec.y.lo + b[1] * spec.y.span(), spec.z.lo + b[2] * spec.z.span()};
  out.length = b[3] * norm.size_max;
  out.width = b[4] * norm.size_max;
  out.height = b[5] * norm.size_max;
  out.yaw = b[6] * 2.0 * std::numbers::pi - std::numbers::pi;
  out.vx = b[7] * 2.0 * norm.v_max - norm.v_max;
  out.vy = b[8] * 2.0 * norm.v_max - norm.v_max;
  out.class_id = class_id;
  return out;
}

BoxVector global_object_box() { return {0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5}; }

LayoutSet build_layout_set(std::span<const radar::Box3D> boxes, std::size_t n, const radar::RangeSpec& spec,
                           int num_classes, const BoxNorm& norm, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("build_layout_set: n must be at least 1");
  LayoutSet set;
  set.objects.push_back({global_object_box(), 0});
  std::vector<std::size_t> keep(boxes.size());
  std::iota(keep.begin(), keep.end(), std::size_t{0});
  if (boxes.size() > n - 1) {
    set.truncated = true;
    std::vector<std::size_t> subset;
    std::mt19937_64 rng(seed);
    std::sample(keep.begin(), keep.end(), std::back_inserter(subset), n - 1, rng);
    keep = std::move(subset);
  }
  for (auto i : keep) set.objects.push_back({normalize_box(boxes[i], spec, norm), boxes[i].class_id});
  while (set.objects.size() < n) set.objects.push_back({BoxVector{}, num_classes + 1});
  return set;
}

LayoutEncoder::LayoutEncoder(ParamSet& params, const std::string& name, const LayoutEncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  box_embed_ = numcore::Linear(params, name + ".box", 9, cfg.width, rng);
  class_table_ = params.add(name + ".class_table",
                            Tensor::randn({static_cast<std::size_t>(cfg.num_classes + 2), cfg.width}, rng,
                                          1.0 / std::sqrt(static_cast<double>(cfg.width)), true));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto p = name + ".layer" + std::to_string(l);
    norms_.emplace_back(params, p + ".norm", cfg.width);
    attn_.emplace_back(params, p + ".attn", cfg.width, cfg.width, cfg.width, cfg.heads, rng);
    ff_.emplace_back(params, p + ".ff", cfg.width, 2 * cfg.width, rng);
  }
}

ConditionBatch LayoutEncoder::operator()(std::span<const LayoutSet> sets) const {
  const std::size_t batch = sets.size();
  const std::size_t n = batch ? sets[0].objects.size() : 0;
  std::vector<double> boxes;
  std::vector<std::size_t> classes;
  boxes.reserve(batch * n * 9);
  for (const auto& s : sets) {
    if (s.objects.size() != n) throw std::invalid_argument("layout encoder: sets differ in length");
    for (const auto& o : s.objects) {
      if (o.c < 0 || o.c > cfg_.num_classes + 1) throw std::invalid_argument("layout encoder: class id out of range");
      boxes.insert(boxes.end(), o.b.begin(), o.b.end());
      classes.push_back(static_cast<std::size_t>(o.c));
    }
  }
  if (batch == 0 || n == 0) return empty_condition(batch, cfg_.width);
  Tensor x = box_embed_(Tensor::from_data({batch * n, 9}, std::move(boxes))) +
             numcore::gather_rows(class_table_, classes);
  const auto seg = Segments::uniform(batch, n, n);
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const Tensor h = norms_[l](x);
    x = x + attn_[l](h, h, seg);
    x = ff_[l](x);
  }
  ConditionBatch out;
  out.tokens = x;
  out.offsets.resize(batch + 1);
  std::vector<std::size_t> firsts(batch);
  for (std::size_t b = 0; b <= batch; ++b) out.offsets[b] = b * n;
  for (std::size_t b = 0; b < batch; ++b) firsts[b] = b * n;
  out.global = numcore::gather_rows(x, firsts);
  return out;
}

// ---- pillars ----

std::array<double, 2> PillarGrid::center(const Pillar& p) const {
  return {range.x.lo + (static_cast<double>(p.ix) + 0.5) * cell, range.y.lo + (static_cast<double>(p.iy) + 0.5) * cell};
}

PillarGrid pillarize(std::span<const radar::Vec3> lidar, const radar::RangeSpec& spec, double cell,
                     std::size_t max_points, std::uint64_t seed) {
  if (!(cell > 0.0)) throw std::invalid_argument("pillarize: cell size must be positive");
  if (max_points < 1) throw std::invalid_argument("pillarize: need at least one point per pillar");
  spec.validate();
  PillarGrid grid;
  grid.cell = cell;
  grid.range = spec;
  grid.nx = static_cast<std::size_t>(std::ceil(spec.x.span() / cell));
  grid.ny = static_cast<std::size_t>(std::ceil(spec.y.span() / cell));
  std::map<std::size_t, std::vector<std::size_t>> cells;  // ordered by iy * nx + ix
  for (std::size_t i = 0; i < lidar.size(); ++i) {
    const auto& p = lidar[i];
    if (!spec.contains(p)) continue;
    const auto ix = std::min(grid.nx - 1, static_cast<std::size_t>(std::floor((p.x - spec.x.lo) / cell)));
    const auto iy = std::min(grid.ny - 1, static_cast<std::size_t>(std::floor((p.y - spec.y.lo) / cell)));
    cells[iy * grid.nx + ix].push_back(i);
  }
  std::mt19937_64 rng(seed);
  for (auto& [key, idx] : cells) {
    if (idx.size() > max_points) {
      std::vector<std::size_t> keep;
      std::sample(idx.begin(), idx.end(), std::back_inserter(keep), max_points, rng);
      idx = std::move(keep);
    }
    Pillar pl;
    pl.ix = key % grid.nx;
    pl.iy = key / grid.nx;
    const auto c = grid.center(pl);
    for (auto i : idx) {
      const auto& p = lidar[i];
      pl.points.push_back({p.x, p.y, p.z, p.x - c[0], p.y - c[1]});
    }
    grid.pillars.push_back(std::move(pl));
  }
  return grid;
}

std::vector<std::size_t> farthest_pillars(const PillarGrid& grid, std::size_t k) {
  const std::size_t n = grid.pillars.size();
  if (n <= k) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  std::vector<std::array<double, 2>> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = grid.center(grid.pillars[i]);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> out;
  out.reserve(k);
  std::size_t cur = 0;
  for (std::size_t s = 0; s < k; ++s) {
    out.push_back(cur);
    std::size_t next = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dx = c[i][0] - c[cur][0], dy = c[i][1] - c[cur][1];
      dist[i] = std::min(dist[i], dx * dx + dy * dy);
      if (dist[i] > best) {
        best = dist[i];
        next = i;
      }
    }
    cur = next;
  }
  return out;
}

Tensor sinusoidal_2d(std::span<const std::array<double, 2>> xy, std::size_t dim) {
  if (dim % 4 != 0) throw std::invalid_argument("sinusoidal_2d: dim must be a multiple of 4");
  std::vector<double> xs, ys;
  for (const auto& p : xy) {
    xs.push_back(p[0]);
    ys.push_back(p[1]);
  }
  const Tensor parts[] = {numcore::sinusoidal_embedding(xs, dim / 2), numcore::sinusoidal_embedding(ys, dim / 2)};
  return numcore::concat_cols(parts);
}

PillarEncoder::PillarEncoder(ParamSet& params, const std::string& name, const PillarConfig& cfg, Rng& rng)
    : cfg_(cfg) {
  point_mlp_ = numcore::Mlp(params, name + ".point", {5, cfg.width, cfg.width}, rng);
  token_proj_ = numcore::Linear(params, name + ".proj", cfg.width, cfg.width, rng);
}

ConditionBatch PillarEncoder::operator()(std::span<const PillarGrid> grids) const {
  const std::size_t batch = grids.size();
  std::vector<double> feats;
  std::vector<std::size_t> point_pillar;
  std::vector<std::array<double, 2>> centers;
  std::vector<std::size_t> token_scene;
  ConditionBatch out;
  out.offsets.assign(1, 0);
  std::size_t pillar_count = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& g = grids[b];
    for (auto pi : farthest_pillars(g, cfg_.max_tokens)) {
      const auto& pl = g.pillars[pi];
      for (const auto& p : pl.points) {
        // Positions scaled to [-1, 1] over the range, offsets in cell units.
        feats.push_back(2.0 * (p[0] - g.range.x.lo) / g.range.x.span() - 1.0);
        feats.push_back(2.0 * (p[1] - g.range.y.lo) / g.range.y.span() - 1.0);
        feats.push_back(2.0 * (p[2] - g.range.z.lo) / g.range.z.span() - 1.0);
        feats.push_back(p[3] / g.cell);
        feats.push_back(p[4] / g.cell);
        point_pillar.push_back(pillar_count);
      }
      centers.push_back({static_cast<double>(pl.ix) + 0.5, static_cast<double>(pl.iy) + 0.5});
      token_scene.push_back(b);
      ++pillar_count;
    }
    out.offsets.push_back(pillar_count);
  }
  if (pillar_count == 0) return empty_condition(batch, cfg_.width);
  const Tensor per_point = point_mlp_(Tensor::from_data({point_pillar.size(), 5}, std::move(feats)));
  const Tensor pooled = numcore::segment_max(per_point, point_pillar, pillar_count);
  out.tokens = token_proj_(pooled) + sinusoidal_2d(centers, cfg_.width);
  out.global = numcore::segment_mean(out.tokens, token_scene, batch);
  return out;
}

}  // namespace radiff::cond

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <tuple>

#include "radiff/metrics/metrics.hpp"
#include "radiff/vae/vae.hpp"

namespace radiff::vae {

using metrics::sq_dist;

std::size_t VaeConfig::level_size(std::size_t level) const {
  std::size_t n = num_points;
  for (std::size_t s = 0; s < level && s < factors.size(); ++s) n /= factors[s];
  return n;
}

void VaeConfig::validate() const {
  if (factors.empty()) throw std::invalid_argument("vae: at least one stage is required");
  std::size_t n = num_points;
  for (auto f : factors) {
    if (f < 2) throw std::invalid_argument("vae: downsampling factors must be at least 2");
    if (n % f != 0) throw std::invalid_argument("vae: num_points must be divisible by every factor");
    n /= f;
  }
  if (width == 0 || latent_dim == 0) throw std::invalid_argument("vae: width and latent_dim must be positive");
  if (heads == 0 || width % heads != 0) throw std::invalid_argument("vae: width must be divisible by heads");
  for (double l : {lambda_reg, lambda_den, lambda_card, lambda_d, lambda_c, lambda_f})
    if (!(l >= 0.0)) throw std::invalid_argument("vae: loss weights must be nonnegative");
}

CollapsedAssignment fps_downsample(std::span<const Vec3> points, std::size_t count, std::size_t start) {
  const std::size_t n = points.size();
  if (count > n) throw std::invalid_argument("fps_downsample: count exceeds the number of points");
  CollapsedAssignment out;
  if (count == 0) return out;
  if (start >= n) throw std::invalid_argument("fps_downsample: start index out of range");
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<bool> taken(n, false);
  std::size_t cur = start;
  for (std::size_t s = 0; s < count; ++s) {
    out.kept.push_back(cur);
    taken[cur] = true;
    std::size_t next = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      dist[i] = std::min(dist[i], sq_dist(points[i], points[cur]));
      if (!taken[i] && dist[i] > best) {
        best = dist[i];
        next = i;
      }
    }
    cur = next;
  }
  out.members.resize(count);
  for (std::size_t i = 0; i < n; ++i) {
    if (taken[i]) continue;
    std::size_t owner = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < count; ++k) {
      const double d = sq_dist(points[i], points[out.kept[k]]);
      if (d < bd) {
        bd = d;
        owner = k;
      }
    }
    out.members[owner].push_back(i);
  }
  return out;
}

CollapsedAssignment fps_downsample_padded(std::span<const Vec3> points, std::size_t count) {
  if (points.empty()) throw std::invalid_argument("fps_downsample: no points");
  if (points.size() >= count) return fps_downsample(points, count);
  auto out = fps_downsample(points, points.size());
  const std::size_t distinct = out.kept.size();
  for (std::size_t i = distinct; i < count; ++i) {
    out.kept.push_back(out.kept[i % distinct]);
    out.members.emplace_back();
  }
  return out;
}

std::vector<double> mean_member_distance(std::span<const Vec3> points, const CollapsedAssignment& a) {
  std::vector<double> out(a.kept.size(), 0.0);
  for (std::size_t k = 0; k < a.kept.size(); ++k) {
    if (a.members[k].empty()) continue;
    double s = 0.0;
    for (auto m : a.members[k]) s += std::sqrt(sq_dist(points[m], points[a.kept[k]]));
    out[k] = s / static_cast<double>(a.members[k].size());
  }
  return out;
}

void add_group(StageGroups& sg, const Vec3& center, std::size_t center_row, std::span<const Vec3> member_pos,
               std::span<const std::size_t> member_rows) {
  std::vector<std::size_t> order(member_pos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& p = member_pos[a];
    const auto& q = member_pos[b];
    return std::tie(p.x, p.y, p.z) < std::tie(q.x, q.y, q.z);
  });
  sg.centers.push_back(center);
  sg.center_rows.push_back(center_row);
  for (auto i : order) {
    sg.member_pos.push_back(member_pos[i]);
    sg.member_rows.push_back(member_rows[i]);
  }
  sg.member_offsets.push_back(sg.member_rows.size());
}

}  // namespace radiff::vae

#include "radiff/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "radiff/radarframe/rdf.hpp"

namespace radiff::metrics {

NearestNeighbor::NearestNeighbor(std::span<const Vec3> reference) {
  if (reference.empty()) throw std::invalid_argument("nearest neighbour: empty reference set");
  index_.resize(reference.size());
  std::iota(index_.begin(), index_.end(), std::size_t{0});
  std::stable_sort(index_.begin(), index_.end(),
                   [&](std::size_t a, std::size_t b) { return reference[a].x < reference[b].x; });
  pts_.reserve(reference.size());
  for (auto i : index_) pts_.push_back(reference[i]);
}

NearestNeighbor::Hit NearestNeighbor::query(const Vec3& q) const {
  const auto n = pts_.size();
  const auto start = static_cast<std::size_t>(
      std::lower_bound(pts_.begin(), pts_.end(), q.x, [](const Vec3& p, double x) { return p.x < x; }) -
      pts_.begin());
  Hit best{std::numeric_limits<std::size_t>::max(), std::numeric_limits<double>::infinity()};
  auto consider = [&](std::size_t k) {
    const double d = sq_dist(q, pts_[k]);
    if (d < best.sq_dist || (d == best.sq_dist && index_[k] < best.index)) best = {index_[k], d};
  };
  // Scan right then left; a point can only tie or win while dx^2 <= best.
  for (std::size_t k = start; k < n; ++k) {
    const double dx = pts_[k].x - q.x;
    if (dx * dx > best.sq_dist) break;
    consider(k);
  }
  for (std::size_t k = start; k-- > 0;) {
    const double dx = q.x - pts_[k].x;
    if (dx * dx > best.sq_dist) break;
    consider(k);
  }
  return best;
}

std::vector<Vec3> positions(const RadarPointCloud& pc) {
  std::vector<Vec3> out;
  out.reserve(pc.points.size());
  for (std::size_t i = 0; i < pc.points.size(); ++i)
    if (pc.mask[i]) out.push_back(pc.points[i].position());
  return out;
}

namespace {

double directed(std::span<const Vec3> from, std::span<const Vec3> to) {
  const NearestNeighbor nn(to);
  double sum = 0.0;
  for (const auto& p : from) sum += nn.query(p).sq_dist;
  return sum / static_cast<double>(from.size());
}

double channel_of(const radar::RadarPoint& p, Channel c) { return c == Channel::Doppler ? p.doppler : p.rcs; }

}  // namespace

double chamfer(std::span<const Vec3> a, std::span<const Vec3> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("chamfer: both point sets must be nonempty");
  return directed(a, b) + directed(b, a);
}

double cd(const RadarPointCloud& real, const RadarPointCloud& generated) {
  const auto a = positions(real), b = positions(generated);
  return chamfer(a, b);
}

double cd_feature(const RadarPointCloud& real, const RadarPointCloud& generated, Channel channel) {
  const auto real_pts = real.valid_points();
  const auto gen_pts = generated.valid_points();
  if (real_pts.empty() || gen_pts.empty()) throw std::invalid_argument("cd_feature: both clouds must be nonempty");
  std::vector<Vec3> real_pos;
  real_pos.reserve(real_pts.size());
  for (const auto& p : real_pts) real_pos.push_back(p.position());
  const NearestNeighbor nn(real_pos);
  double sum = 0.0;
  for (const auto& v : gen_pts) {
    const auto& u = real_pts[nn.query(v.position()).index];
    sum += std::abs(channel_of(v, channel) - channel_of(u, channel));
  }
  return sum / static_cast<double>(gen_pts.size());
}

std::size_t BevGrid::cell(double px, double py) const {
  auto bin = [](double v, const radar::Interval& in, int n) {
    const double t = (v - in.lo) / (in.hi - in.lo) * n;
    const double idx = std::floor(t);
    if (!(idx >= 0.0)) return 0;
    return idx >= n ? n - 1 : static_cast<int>(idx);
  };
  return static_cast<std::size_t>(bin(py, y, ny)) * static_cast<std::size_t>(nx) +
         static_cast<std::size_t>(bin(px, x, nx));
}

std::vector<double> bev_histogram(std::span<const RadarPointCloud> clouds, const BevGrid& grid) {
  if (grid.nx < 1 || grid.ny < 1 || !(grid.x.hi > grid.x.lo) || !(grid.y.hi > grid.y.lo)) {
    throw std::invalid_argument("bev grid: need positive cell counts and nonempty extents");
  }
  std::vector<double> counts(static_cast<std::size_t>(grid.nx) * static_cast<std::size_t>(grid.ny), 0.0);
  double total = 0.0;
  for (const auto& pc : clouds) {
    for (std::size_t i = 0; i < pc.points.size(); ++i) {
      if (!pc.mask[i]) continue;
      counts[grid.cell(pc.points[i].x, pc.points[i].y)] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw std::invalid_argument("bev histogram: no points");
  for (auto& c : counts) c /= total;
  return counts;
}

double jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("jsd: distributions differ in support size");
  // 0.5 KL(p || m) + 0.5 KL(q || m) with 0 log 0 = 0.
  double kl_p = 0.0, kl_q = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) kl_p += p[i] * std::log2(p[i] / m);
    if (q[i] > 0.0) kl_q += q[i] * std::log2(q[i] / m);
  }
  return std::clamp(0.5 * kl_p + 0.5 * kl_q, 0.0, 1.0);
}

double jsd_bev(std::span<const RadarPointCloud> real, std::span<const RadarPointCloud> generated,
               const BevGrid& grid) {
  if (real.empty() || generated.empty()) throw std::invalid_argument("jsd_bev: both collections must be nonempty");
  const auto p = bev_histogram(real, grid);
  const auto q = bev_histogram(generated, grid);
  return jsd(p, q);
}

double mmd(std::span<const RadarPointCloud> real, std::span<const RadarPointCloud> generated) {
  if (real.empty() || generated.empty()) throw std::invalid_argument("mmd: both collections must be nonempty");
  std::vector<std::vector<Vec3>> gen_pos;
  for (const auto& g : generated) gen_pos.push_back(positions(g));
  double sum = 0.0;
  for (const auto& r : real) {
    const auto rp = positions(r);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& gp : gen_pos) best = std::min(best, chamfer(rp, gp));
    sum += best;
  }
  return sum / static_cast<double>(real.size());
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["cd"] = cd;
  j["cd_doppler"] = cd_doppler;
  j["cd_rcs"] = cd_rcs;
  j["jsd"] = jsd;
  j["mmd"] = mmd;
  j["mmd_x1e4"] = mmd * 1e4;
  j["real_frames"] = real_frames;
  j["generated_frames"] = generated_frames;
  j["paired_frames"] = paired_frames;
  j["skipped_pairs"] = skipped_pairs;
  j["config"] = {{"jsd_grid", {grid_nx, grid_ny}},
                 {"jsd_log_base", 2},
                 {"jsd_mmd_channels", "xyz"},
                 {"units", "metric (m, m/s, dBsm); cd in m^2"}};
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

MetricReport evaluate(std::span<const radar::Frame> real, std::span<const radar::Frame> generated,
                      const EvalConfig& config) {
  MetricReport rep;
  rep.real_frames = real.size();
  rep.generated_frames = generated.size();
  rep.grid_nx = rep.grid_ny = config.grid_cells;

  std::map<std::uint64_t, const radar::Frame*> gen_by_id;
  for (const auto& g : generated) gen_by_id[g.frame_id] = &g;
  std::vector<RadarPointCloud> real_set, gen_set;
  double sum_cd = 0.0, sum_dop = 0.0, sum_rcs = 0.0;
  std::size_t scored = 0;
  for (const auto& r : real) {
    auto it = gen_by_id.find(r.frame_id);
    if (it == gen_by_id.end()) continue;
    const auto& g = *it->second;
    ++rep.paired_frames;
    if (r.radar.valid_count() == 0 || g.radar.valid_count() == 0) {
      ++rep.skipped_pairs;
      continue;
    }
    real_set.push_back(r.radar);
    gen_set.push_back(g.radar);
    sum_cd += cd(r.radar, g.radar);
    sum_dop += cd_feature(r.radar, g.radar, Channel::Doppler);
    sum_rcs += cd_feature(r.radar, g.radar, Channel::Rcs);
    ++scored;
  }
  if (rep.paired_frames != real.size() || rep.paired_frames != generated.size()) {
    rep.warnings.push_back("frame ids differ; evaluated the intersection of " + std::to_string(rep.paired_frames) +
                           " ids");
  }
  if (rep.skipped_pairs) {
    rep.warnings.push_back(std::to_string(rep.skipped_pairs) + " pairs skipped because one side had no points");
  }
  if (scored == 0) {
    rep.warnings.push_back("no scorable frame pairs");
    return rep;
  }
  const double n = static_cast<double>(scored);
  rep.cd = sum_cd / n;
  rep.cd_doppler = sum_dop / n;
  rep.cd_rcs = sum_rcs / n;
  rep.jsd = jsd_bev(real_set, gen_set, BevGrid::over(config.range, config.grid_cells));
  rep.mmd = mmd(real_set, gen_set);
  return rep;
}

std::vector<radar::Frame> load_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".rdf") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<radar::Frame> frames;
  frames.reserve(files.size());
  for (const auto& f : files) frames.push_back(radar::load_frame(f));
  return frames;
}

MetricReport evaluate_dirs(const std::filesystem::path& real_dir, const std::filesystem::path& generated_dir,
                           const EvalConfig& config) {
  const auto real = load_frames(real_dir);
  const auto gen = load_frames(generated_dir);
  return evaluate(real, gen, config);
}

}  // namespace radiff::metrics

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include "radiff/vae/vae.hpp"

namespace radiff::vae {

using numcore::Segments;
namespace nc = numcore;

namespace {

// Offsets in normalized units are a few hundredths; scaled so the first
// layer sees inputs of order one.
constexpr double kOffsetScale = 10.0;

Tensor column(const std::vector<double>& v) { return Tensor::from_data({v.size(), 1}, v); }

Tensor rows_of(std::span<const Vec3> pts) {
  std::vector<double> d;
  d.reserve(pts.size() * 3);
  for (const auto& p : pts) {
    d.push_back(p.x);
    d.push_back(p.y);
    d.push_back(p.z);
  }
  return Tensor::from_data({pts.size(), 3}, std::move(d));
}

void require_finite(const Tensor& t, const std::string& where) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw std::runtime_error("vae: non-finite activation in " + where);
}

std::vector<std::size_t> frame_of_rows(const std::vector<std::size_t>& offsets) {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f + 1 < offsets.size(); ++f) out.insert(out.end(), offsets[f + 1] - offsets[f], f);
  return out;
}

}  // namespace

// ---- encoder stage ----

EncoderStage::EncoderStage(ParamSet& params, const std::string& name, std::size_t width, std::size_t heads,
                           std::size_t u_max, Rng& rng)
    : u_max_(u_max) {
  density_mlp_ = nc::Mlp(params, name + ".density", {1, width, width}, rng);
  local_mlp_ = nc::Mlp(params, name + ".local", {4, width, width}, rng);
  local_attn_ = nc::MultiHeadAttention(params, name + ".local_attn", width, width, width, heads, rng);
  null_token_ = params.add(name + ".null", Tensor::randn({1, width}, rng, 0.1, true));
  relpos_mlp_ = nc::Mlp(params, name + ".relpos", {3, width, width}, rng);
  ancestor_attn_ = nc::MultiHeadAttention(params, name + ".ancestor", width, width, width, heads, rng);
  fuse_mlp_ = nc::Mlp(params, name + ".fuse", {3 * width + 3, width, width}, rng);
  fuse_norm_ = nc::LayerNorm(params, name + ".fuse_norm", width);
}

Tensor EncoderStage::density(std::span<const double> u) const {
  std::vector<double> s;
  s.reserve(u.size());
  const double cap = static_cast<double>(u_max_);
  for (double v : u) s.push_back(std::min(v, cap) / cap);
  return density_mlp_(Tensor::from_data({u.size(), 1}, std::move(s)));
}

Tensor EncoderStage::local_position(const StageGroups& sg) const {
  const std::size_t g = sg.groups();
  const std::size_t m = sg.member_rows.size();
  std::vector<double> empty(g);
  for (std::size_t i = 0; i < g; ++i) empty[i] = sg.members(i) == 0 ? 1.0 : 0.0;
  const Tensor null_part = nc::mul(column(empty), null_token_);
  if (m == 0) return null_part;
  std::vector<double> feats;
  feats.reserve(m * 4);
  std::vector<std::size_t> owner(m);
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = sg.member_offsets[i]; j < sg.member_offsets[i + 1]; ++j) {
      const Vec3& q = sg.member_pos[j];
      const double dx = q.x - sg.centers[i].x, dy = q.y - sg.centers[i].y, dz = q.z - sg.centers[i].z;
      const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
      const double inv = dist > 0.0 ? 1.0 / dist : 0.0;
      feats.insert(feats.end(), {dx * inv, dy * inv, dz * inv, dist * kOffsetScale});
      owner[j] = i;
    }
  }
  Tensor h = local_mlp_(Tensor::from_data({m, 4}, std::move(feats)));
  const Segments seg{sg.member_offsets, sg.member_offsets};
  h = h + local_attn_(h, h, seg);
  return nc::segment_max(h, owner, g) + null_part;
}

Tensor EncoderStage::ancestor(const Tensor& prev_features, const StageGroups& sg) const {
  const std::size_t g = sg.groups();
  std::vector<std::size_t> kv_rows, kv_offsets{0}, q_offsets(g + 1);
  std::vector<double> rel;
  for (std::size_t i = 0; i < g; ++i) {
    q_offsets[i + 1] = i + 1;
    kv_rows.push_back(sg.center_rows[i]);
    rel.insert(rel.end(), {0.0, 0.0, 0.0});
    for (std::size_t j = sg.member_offsets[i]; j < sg.member_offsets[i + 1]; ++j) {
      kv_rows.push_back(sg.member_rows[j]);
      const Vec3& q = sg.member_pos[j];
      rel.insert(rel.end(), {(q.x - sg.centers[i].x) * kOffsetScale, (q.y - sg.centers[i].y) * kOffsetScale,
                             (q.z - sg.centers[i].z) * kOffsetScale});
    }
    kv_offsets.push_back(kv_rows.size());
  }
  const Tensor pe = relpos_mlp_(Tensor::from_data({kv_rows.size(), 3}, std::move(rel)));
  const Tensor queries = nc::gather_rows(prev_features, sg.center_rows);
  const Tensor kv = nc::gather_rows(prev_features, kv_rows);
  return ancestor_attn_.with_bias(queries, kv, pe, pe, Segments{q_offsets, kv_offsets});
}

Tensor EncoderStage::operator()(const Tensor& prev_features, const StageGroups& sg, std::span<const double> u) const {
  const Tensor parts[] = {density(u), local_position(sg), ancestor(prev_features, sg), rows_of(sg.centers)};
  return fuse_norm_(fuse_mlp_(nc::concat_cols(parts)));
}

// ---- decoder stage ----

DecoderStage::DecoderStage(ParamSet& params, const std::string& name, std::size_t width, std::size_t factor,
                           std::size_t u_max, Rng& rng)
    : u_max_(u_max) {
  count_head_ = nc::Linear(params, name + ".count", width, 1, rng, 0.1);
  // softplus(bias) = f_s - 1, the mean collapse-set size.
  count_head_.bias().mutable_data()[0] = std::log(std::expm1(static_cast<double>(factor) - 1.0));
  offset_head_ = nc::Linear(params, name + ".offsets", width, 3 * u_max, rng, 0.1);
  slots_ = params.add(name + ".slots", Tensor::randn({u_max, width}, rng, 0.1, true));
  child_mlp_ = nc::Mlp(params, name + ".child", {2 * width + 3, width, width}, rng);
}

std::pair<Tensor, Tensor> DecoderStage::operator()(const Tensor& positions, const Tensor& features,
                                                   const std::vector<std::size_t>& offsets, UpsampleLevel& level,
                                                   std::vector<std::size_t>& child_offsets) const {
  const std::size_t n = positions.rows();
  const std::size_t cap = u_max_;
  level.positions = positions;
  level.offsets = offsets;
  level.pred_count = nc::softplus(count_head_(features));
  level.k.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = std::round(level.pred_count.data()[i]);
    level.k[i] = static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(cap - 1))) + 1;
  }
  const Tensor all_offsets = nc::reshape(offset_head_(features), {n * cap, 3});

  std::vector<std::size_t> slot_rows, parent, slot, extra_rows, extra_parent;
  child_offsets.assign(1, 0);
  for (std::size_t f = 0; f + 1 < offsets.size(); ++f) {
    for (std::size_t i = offsets[f]; i < offsets[f + 1]; ++i) {
      for (std::size_t j = 0; j < level.k[i]; ++j) {
        if (j > 0) {
          extra_rows.push_back(slot_rows.size());
          extra_parent.push_back(i);
        }
        slot_rows.push_back(i * cap + j);
        parent.push_back(i);
        slot.push_back(j);
      }
    }
    child_offsets.push_back(slot_rows.size());
  }
  const Tensor child_off = nc::gather_rows(all_offsets, slot_rows);
  const Tensor child_pos = nc::gather_rows(positions, parent) + child_off;
  if (extra_rows.empty()) {
    level.pred_mean_dist = Tensor::zeros({n, 1});
  } else {
    level.pred_mean_dist = nc::segment_mean(nc::row_norm(nc::gather_rows(child_off, extra_rows)), extra_parent, n);
  }
  const Tensor parent_feat = nc::gather_rows(features, parent);
  const Tensor parts[] = {parent_feat, nc::gather_rows(slots_, slot), nc::scale(child_off, kOffsetScale)};
  const Tensor child_feat = parent_feat + child_mlp_(nc::concat_cols(parts));
  return {child_pos, child_feat};
}

// ---- model ----

Vae::Vae(const VaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t d = cfg_.width;
  input_lift_ = nc::Linear(params_, "vae.lift", 5, d, rng);
  for (std::size_t s = 0; s < cfg_.stages(); ++s)
    enc_.emplace_back(params_, "vae.enc" + std::to_string(s), d, cfg_.heads, cfg_.u_max(s), rng);
  head_ = nc::Linear(params_, "vae.head", d, 2 * cfg_.latent_dim, rng, 0.1);
  point_mlp_ = nc::Mlp(params_, "vae.struct.point", {cfg_.latent_dim, d, d}, rng);
  coord_mlp_ = nc::Mlp(params_, "vae.struct.coord", {2 * d, d, 3}, rng);
  feature_mlp_ = nc::Mlp(params_, "vae.struct.feature", {cfg_.latent_dim, d, d}, rng);
  for (std::size_t s = 0; s < cfg_.stages(); ++s)
    dec_.emplace_back(params_, "vae.dec" + std::to_string(s), d, cfg_.factors[s], cfg_.u_max(s), rng);
  out_head_ = nc::Linear(params_, "vae.out", d, 2, rng);
}

EncodeResult Vae::encode(std::span<const RadarPointCloud> batch, std::uint64_t noise_seed, bool sample) const {
  const std::size_t b = batch.size();
  const std::size_t stages = cfg_.stages();
  EncodeResult out;
  out.levels.resize(stages + 1, std::vector<std::vector<Vec3>>(b));
  out.counts.resize(stages + 1, std::vector<std::vector<double>>(b));
  out.mean_dist.resize(stages + 1, std::vector<std::vector<double>>(b));
  out.inputs.resize(b);

  std::vector<double> raw;
  std::vector<std::size_t> level_offsets{0};
  for (std::size_t f = 0; f < b; ++f) {
    out.inputs[f] = batch[f].valid_points();
    if (out.inputs[f].empty()) throw std::invalid_argument("vae encode: frame without valid points");
    if (out.inputs[f].size() > cfg_.num_points) throw std::invalid_argument("vae encode: frame exceeds num_points");
    for (const auto& p : out.inputs[f]) {
      raw.insert(raw.end(), {p.x, p.y, p.z, p.doppler, p.rcs});
      out.levels[0][f].push_back(p.position());
    }
    level_offsets.push_back(level_offsets.back() + out.inputs[f].size());
  }
  const std::size_t total_points = raw.size() / 5;
  Tensor h = input_lift_(Tensor::from_data({total_points, 5}, std::move(raw)));

  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t count = cfg_.level_size(s + 1);
    StageGroups sg;
    std::vector<double> u;
    std::vector<std::size_t> next_offsets{0};
    for (std::size_t f = 0; f < b; ++f) {
      const auto& pts = out.levels[s][f];
      const auto a = fps_downsample_padded(pts, count);
      out.mean_dist[s + 1][f] = mean_member_distance(pts, a);
      for (std::size_t k = 0; k < a.kept.size(); ++k) {
        std::vector<Vec3> mp;
        std::vector<std::size_t> mr;
        for (auto m : a.members[k]) {
          mp.push_back(pts[m]);
          mr.push_back(level_offsets[f] + m);
        }
        add_group(sg, pts[a.kept[k]], level_offsets[f] + a.kept[k], mp, mr);
        out.levels[s + 1][f].push_back(pts[a.kept[k]]);
        out.counts[s + 1][f].push_back(static_cast<double>(a.u(k)));
        u.push_back(static_cast<double>(a.u(k)));
      }
      next_offsets.push_back(next_offsets.back() + count);
    }
    h = enc_[s](h, sg, u);
    require_finite(h, "encoder stage " + std::to_string(s));
    level_offsets = std::move(next_offsets);
  }

  const Tensor stats = head_(h);
  out.mu = nc::slice_cols(stats, 0, cfg_.latent_dim);
  out.logvar = nc::slice_cols(stats, cfg_.latent_dim, cfg_.latent_dim);
  out.offsets = level_offsets;
  if (sample) {
    Rng rng(noise_seed);
    const Tensor eps = Tensor::randn({out.mu.rows(), cfg_.latent_dim}, rng);
    out.z = out.mu + nc::exp(nc::scale(out.logvar, 0.5)) * eps;
  } else {
    out.z = out.mu;
  }
  require_finite(out.z, "latent head");
  return out;
}

Structured Vae::latent_to_structured(const Tensor& z, const std::vector<std::size_t>& offsets) const {
  const auto frame = frame_of_rows(offsets);
  const std::size_t b = offsets.size() - 1;
  const Tensor h = point_mlp_(z);
  const Tensor global = nc::gather_rows(nc::segment_max(h, frame, b), frame);
  const Tensor parts[] = {h, global};
  return {coord_mlp_(nc::concat_cols(parts)), feature_mlp_(z)};
}

DecodeResult Vae::decode(const Tensor& z, const std::vector<std::size_t>& offsets) const {
  if (z.cols() != cfg_.latent_dim) throw std::invalid_argument("vae decode: latent width mismatch");
  if (offsets.empty() || offsets.back() != z.rows()) throw std::invalid_argument("vae decode: bad frame offsets");
  DecodeResult out;
  const auto st = latent_to_structured(z, offsets);
  out.latent_coords = st.coords;
  out.latent_offsets = offsets;
  out.upsample.resize(cfg_.stages());
  Tensor pos = st.coords, feat = st.features;
  std::vector<std::size_t> off = offsets;
  for (std::size_t s = cfg_.stages(); s-- > 0;) {
    std::vector<std::size_t> child_off;
    std::tie(pos, feat) = dec_[s](pos, feat, off, out.upsample[s], child_off);
    off = std::move(child_off);
  }
  out.positions = pos;
  out.features = nc::tanh(out_head_(feat));
  out.offsets = off;
  return out;
}

std::vector<RadarPointCloud> Vae::to_clouds(const DecodeResult& d) const {
  std::vector<RadarPointCloud> out;
  for (std::size_t f = 0; f + 1 < d.offsets.size(); ++f) {
    RadarPointCloud pc;
    for (std::size_t r = d.offsets[f]; r < d.offsets[f + 1]; ++r)
      pc.push_back({d.positions.at(r, 0), d.positions.at(r, 1), d.positions.at(r, 2), d.features.at(r, 0),
                    d.features.at(r, 1)});
    out.push_back(std::move(pc));
  }
  return out;
}

}  // namespace radiff::vae

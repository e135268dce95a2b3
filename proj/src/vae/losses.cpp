#include <cmath>
#include <stdexcept>

#include "radiff/metrics/metrics.hpp"
#include "radiff/vae/vae.hpp"

namespace radiff::vae {

namespace nc = numcore;
using metrics::NearestNeighbor;

namespace {

std::vector<Vec3> frame_points(const Tensor& t, std::size_t begin, std::size_t end) {
  std::vector<Vec3> out;
  out.reserve(end - begin);
  for (std::size_t r = begin; r < end; ++r) out.push_back({t.at(r, 0), t.at(r, 1), t.at(r, 2)});
  return out;
}

// Weight 1 / (rows in frame * frames) for every row, so a weighted sum is
// the mean over frames of per-frame means.
Tensor frame_weights(const std::vector<std::size_t>& offsets) {
  const std::size_t frames = offsets.size() - 1;
  std::vector<double> w(offsets.back());
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t n = offsets[f + 1] - offsets[f];
    for (std::size_t r = offsets[f]; r < offsets[f + 1]; ++r)
      w[r] = 1.0 / (static_cast<double>(n) * static_cast<double>(frames));
  }
  const std::size_t rows = w.size();
  return Tensor::from_data({rows, 1}, std::move(w));
}

void check_offsets(const std::vector<std::size_t>& offsets, std::size_t rows, std::size_t frames, const char* what) {
  if (offsets.size() != frames + 1 || offsets.front() != 0 || offsets.back() != rows)
    throw std::invalid_argument(std::string(what) + ": frame offsets do not match the inputs");
  for (std::size_t f = 0; f < frames; ++f)
    if (offsets[f + 1] <= offsets[f]) throw std::invalid_argument(std::string(what) + ": empty frame");
}

// Index of the nearest reference point for each row in [begin, end).
std::vector<std::size_t> nearest_rows(const Tensor& pos, std::size_t begin, std::size_t end,
                                      std::span<const Vec3> reference) {
  const NearestNeighbor nn(reference);
  std::vector<std::size_t> out;
  out.reserve(end - begin);
  for (std::size_t r = begin; r < end; ++r) out.push_back(nn.query({pos.at(r, 0), pos.at(r, 1), pos.at(r, 2)}).index);
  return out;
}

}  // namespace

Tensor chamfer_loss(const Tensor& pred, const std::vector<std::size_t>& offsets,
                    const std::vector<std::vector<Vec3>>& reference) {
  const std::size_t frames = reference.size();
  if (pred.cols() != 3) throw std::invalid_argument("chamfer_loss: predictions must have 3 columns");
  check_offsets(offsets, pred.rows(), frames, "chamfer_loss");
  const double bf = static_cast<double>(frames);
  std::vector<double> grad(pred.numel(), 0.0);
  double total = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    const auto& ref = reference[f];
    if (ref.empty()) throw std::invalid_argument("chamfer_loss: empty reference set");
    const auto a = frame_points(pred, offsets[f], offsets[f + 1]);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(ref.size());
    const NearestNeighbor to_ref(ref), to_pred(a);
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto hit = to_ref.query(a[i]);
      s1 += hit.sq_dist;
      const Vec3& b = ref[hit.index];
      double* g = grad.data() + (offsets[f] + i) * 3;
      g[0] += 2.0 * (a[i].x - b.x) / na / bf;
      g[1] += 2.0 * (a[i].y - b.y) / na / bf;
      g[2] += 2.0 * (a[i].z - b.z) / na / bf;
    }
    for (const auto& b : ref) {
      const auto hit = to_pred.query(b);
      s2 += hit.sq_dist;
      const Vec3& p = a[hit.index];
      double* g = grad.data() + (offsets[f] + hit.index) * 3;
      g[0] += 2.0 * (p.x - b.x) / nb / bf;
      g[1] += 2.0 * (p.y - b.y) / nb / bf;
      g[2] += 2.0 * (p.z - b.z) / nb / bf;
    }
    total += s1 / na + s2 / nb;
  }
  return nc::detail::make_result({}, {total / bf}, {pred}, [grad = std::move(grad)](nc::Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double up = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * grad[i];
  });
}

Tensor feature_loss(const Tensor& pred_positions, const Tensor& pred_features, const std::vector<std::size_t>& offsets,
                    const std::vector<std::vector<radar::RadarPoint>>& reference) {
  const std::size_t frames = reference.size();
  if (pred_features.cols() != 2) throw std::invalid_argument("feature_loss: features must have 2 columns");
  if (pred_features.rows() != pred_positions.rows())
    throw std::invalid_argument("feature_loss: positions and features differ in rows");
  check_offsets(offsets, pred_positions.rows(), frames, "feature_loss");
  std::vector<double> target;
  target.reserve(pred_features.numel());
  for (std::size_t f = 0; f < frames; ++f) {
    if (reference[f].empty()) throw std::invalid_argument("feature_loss: empty ground truth");
    std::vector<Vec3> pos;
    for (const auto& p : reference[f]) pos.push_back(p.position());
    for (auto j : nearest_rows(pred_positions, offsets[f], offsets[f + 1], pos))
      target.insert(target.end(), {reference[f][j].doppler, reference[f][j].rcs});
  }
  const Tensor diff = pred_features - Tensor::from_data({pred_features.rows(), 2}, std::move(target));
  return nc::sum(nc::sum_cols(nc::square(diff)) * frame_weights(offsets));
}

Tensor density_loss(std::span<const DensityTerm> stages, double lambda_d) {
  Tensor total = Tensor::scalar(0.0);
  for (const auto& st : stages) {
    const std::size_t n = st.pred_count.rows();
    if (st.count.size() != n || st.mean_dist.size() != n || st.pred_mean_dist.rows() != n)
      throw std::invalid_argument("density_loss: stage-aligned inputs differ in length");
    check_offsets(st.offsets, n, st.offsets.size() - 1, "density_loss");
    const Tensor per_point = nc::abs(st.pred_count - Tensor::from_data({n, 1}, st.count)) +
                             nc::scale(nc::abs(st.pred_mean_dist - Tensor::from_data({n, 1}, st.mean_dist)), lambda_d);
    total = total + nc::sum(per_point * frame_weights(st.offsets));
  }
  return total;
}

double cardinality_loss(std::span<const std::size_t> counts, std::span<const std::size_t> predicted) {
  if (counts.size() != predicted.size()) throw std::invalid_argument("cardinality_loss: stage counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < counts.size(); ++i)
    s += counts[i] > predicted[i] ? static_cast<double>(counts[i] - predicted[i])
                                  : static_cast<double>(predicted[i] - counts[i]);
  return s;
}

Tensor kl_regularizer(const Tensor& mu, const Tensor& logvar) {
  if (mu.shape() != logvar.shape()) throw std::invalid_argument("kl_regularizer: shape mismatch");
  const Tensor terms = nc::square(mu) + nc::exp(logvar) - logvar;
  return nc::scale(nc::add_scalar(nc::sum(terms), -static_cast<double>(mu.numel())),
                   0.5 / static_cast<double>(mu.rows()));
}

VaeLoss vae_loss(const EncodeResult& enc, const DecodeResult& dec, const VaeConfig& cfg) {
  const std::size_t stages = cfg.stages();
  const std::size_t frames = enc.inputs.size();
  VaeLoss out;

  const Tensor cd = chamfer_loss(dec.positions, dec.offsets, enc.levels[0]);
  Tensor cd_mid = Tensor::scalar(0.0);
  std::vector<DensityTerm> den(stages);
  for (std::size_t l = 1; l <= stages; ++l) {
    const auto& up = dec.upsample[l - 1];
    cd_mid = cd_mid + chamfer_loss(up.positions, up.offsets, enc.levels[l]);
    auto& term = den[l - 1];
    term.pred_count = up.pred_count;
    term.pred_mean_dist = up.pred_mean_dist;
    term.offsets = up.offsets;
    for (std::size_t f = 0; f < frames; ++f) {
      for (auto j : nearest_rows(up.positions, up.offsets[f], up.offsets[f + 1], enc.levels[l][f])) {
        term.count.push_back(enc.counts[l][f][j]);
        term.mean_dist.push_back(enc.mean_dist[l][f][j]);
      }
    }
  }
  const Tensor feat = feature_loss(dec.positions, dec.features, dec.offsets, enc.inputs);
  const Tensor dens = density_loss(den, cfg.lambda_d);
  const Tensor kl = kl_regularizer(enc.mu, enc.logvar);

  double card = 0.0;
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<std::size_t> want, got;
    want.push_back(enc.levels[0][f].size());
    got.push_back(dec.offsets[f + 1] - dec.offsets[f]);
    for (std::size_t l = 1; l < stages; ++l) {
      want.push_back(enc.levels[l][f].size());
      got.push_back(dec.upsample[l - 1].offsets[f + 1] - dec.upsample[l - 1].offsets[f]);
    }
    card += cardinality_loss(want, got);
  }
  card /= static_cast<double>(frames);

  out.total = cd + nc::scale(cd_mid, cfg.lambda_c) + nc::scale(feat, cfg.lambda_f) +
              nc::scale(dens, cfg.lambda_den) + nc::scale(kl, cfg.lambda_reg) +
              Tensor::scalar(cfg.lambda_card * card);
  out.parts.cd = cd.item();
  out.parts.cd_intermediate = cd_mid.item();
  out.parts.feature = feat.item();
  out.parts.density = dens.item();
  out.parts.cardinality = card;
  out.parts.kl = kl.item();
  out.parts.total = out.total.item();
  return out;
}

}  // namespace radiff::vae

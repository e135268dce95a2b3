#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "radiff/metrics/metrics.hpp"
#include "radiff/radarframe/frame_ops.hpp"
#include "radiff/radarframe/synth.hpp"
#include "radiff/vae/vae.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace radiff;
using namespace radiff::vae;
namespace oracle = radiff::testing;
namespace nc = radiff::numcore;

namespace {

std::vector<Vec3> random_points(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Vec3> out(n);
  for (auto& p : out) p = {u(rng), u(rng), u(rng)};
  return out;
}

RadarPointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  RadarPointCloud pc;
  for (std::size_t i = 0; i < n; ++i) pc.push_back({u(rng), u(rng), 0.3 * u(rng), 0.5 * u(rng), 0.5 * u(rng)});
  return pc;
}

VaeConfig tiny_config() {
  VaeConfig c;
  c.num_points = 16;
  c.factors = {2, 2};
  c.width = 8;
  c.heads = 2;
  return c;
}

std::vector<Tensor> param_tensors(const Vae& m) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : m.params().entries()) out.push_back(t);
  return out;
}

bool same_values(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST(Fps, CollinearAndIdentity) {
  std::vector<Vec3> line{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}};
  const auto a = fps_downsample(line, 2, 0);
  EXPECT_EQ(a.kept, (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(a.members[0], (std::vector<std::size_t>{1}));
  EXPECT_EQ(a.members[1], (std::vector<std::size_t>{2}));

  const auto all = fps_downsample(line, 4, 0);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(all.u(k), 0u);
  EXPECT_THROW(fps_downsample(line, 5, 0), std::invalid_argument);
}

TEST(Fps, PartitionAndNearestAssignment) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pts = random_points(40 + trial, rng);
    const std::size_t count = 5 + trial % 11;
    const auto a = fps_downsample(pts, count, trial % pts.size());
    std::size_t total = 0;
    std::vector<int> seen(pts.size(), 0);
    for (auto k : a.kept) ++seen[k];
    std::vector<Vec3> kept_pos;
    for (auto k : a.kept) kept_pos.push_back(pts[k]);
    for (std::size_t k = 0; k < a.kept.size(); ++k) {
      total += a.u(k);
      for (auto m : a.members[k]) {
        ++seen[m];
        EXPECT_EQ(oracle::brute_nearest(kept_pos, pts[m]), k);
      }
    }
    EXPECT_EQ(total, pts.size() - count);
    for (int s : seen) EXPECT_EQ(s, 1);
  }
}

TEST(Fps, PaddedRepeatsSelection) {
  std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}};
  const auto a = fps_downsample_padded(pts, 7);
  ASSERT_EQ(a.kept.size(), 7u);
  for (std::size_t i = 3; i < 7; ++i) {
    EXPECT_EQ(a.kept[i], a.kept[i % 3]);
    EXPECT_EQ(a.u(i), 0u);
  }
  const auto md = mean_member_distance(pts, fps_downsample(pts, 1, 0));
  EXPECT_DOUBLE_EQ(md[0], 1.5);
}

TEST(EncoderStage, DensityEmbedding) {
  Rng rng(2);
  ParamSet params;
  EncoderStage st(params, "s", 8, 2, 8, rng);
  std::vector<double> u{0, 3, 3, 4, 8, 20};
  const auto e = st.density(u);
  ASSERT_EQ(e.rows(), 6u);
  for (std::size_t c = 0; c < 8; ++c) {
    EXPECT_EQ(e.at(1, c), e.at(2, c));
    EXPECT_EQ(e.at(4, c), e.at(5, c));  // clamped at U_max
  }
  bool differs = false;
  for (std::size_t c = 0; c < 8; ++c) differs |= e.at(2, c) != e.at(3, c);
  EXPECT_TRUE(differs);
}

TEST(EncoderStage, LocalEmbeddingInvariances) {
  Rng rng(3);
  ParamSet params;
  EncoderStage st(params, "s", 8, 2, 8, rng);
  // Dyadic coordinates keep offsets exact under the integer shift below.
  const Vec3 c{0.5, 0.25, 0.0};
  std::vector<Vec3> m{{0.625, 0.25, 0.0}, {0.5, 0.375, 0.125}, {0.25, 0.25, -0.125}};
  std::vector<std::size_t> rows{1, 2, 3};

  StageGroups a, b, shifted;
  add_group(a, c, 0, m, rows);
  add_group(a, {2, 2, 0}, 4, {}, {});
  std::vector<Vec3> mp{m[2], m[0], m[1]};
  std::vector<std::size_t> rp{3, 1, 2};
  add_group(b, c, 0, mp, rp);
  add_group(b, {2, 2, 0}, 4, {}, {});
  std::vector<Vec3> ms;
  for (const auto& p : m) ms.push_back({p.x + 1.0, p.y - 2.0, p.z + 1.0});
  add_group(shifted, {c.x + 1.0, c.y - 2.0, c.z + 1.0}, 0, ms, rows);

  const auto ea = st.local_position(a), eb = st.local_position(b), es = st.local_position(shifted);
  EXPECT_TRUE(same_values(ea, eb));
  const auto null = params.get("s.null");
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(ea.at(0, k), es.at(0, k));
    EXPECT_EQ(ea.at(1, k), null.data()[k]);
  }
}

TEST(EncoderStage, AncestorEmptySetAndGradients) {
  Rng rng(4);
  ParamSet params;
  EncoderStage st(params, "s", 8, 2, 8, rng);
  const Tensor feats = Tensor::randn({6, 8}, rng, 1.0, true);
  // Two empty groups around the same feature row at different places give
  // the same output: only p's own feature is attended.
  StageGroups empty;
  add_group(empty, {0, 0, 0}, 2, {}, {});
  add_group(empty, {5, 5, 5}, 2, {}, {});
  const auto e = st.ancestor(feats, empty);
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(e.at(0, k), e.at(1, k));

  StageGroups sg;
  std::vector<Vec3> mp{{0.1, 0, 0}, {0, 0.2, 0.1}};
  std::vector<std::size_t> mr{1, 3};
  add_group(sg, {0, 0, 0}, 0, mp, mr);
  std::vector<Vec3> mp2{{1.1, 1, 0}};
  std::vector<std::size_t> mr2{5};
  add_group(sg, {1, 1, 0}, 4, mp2, mr2);
  std::vector<double> u{2, 1};
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : params.entries()) inputs.push_back(t);
  inputs.push_back(feats);
  const auto res = oracle::check_gradients([&] { return nc::mean(nc::square(st(feats, sg, u))); }, inputs);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Vae, EncodeShapesAndDeterminism) {
  VaeConfig cfg;
  cfg.width = 16;
  Vae m(cfg, 5);
  std::vector<RadarPointCloud> batch{random_cloud(128, 1), random_cloud(70, 2), random_cloud(5, 3)};
  const auto e1 = m.encode(batch, 9);
  const auto e2 = m.encode(batch, 9);
  EXPECT_EQ(cfg.latent_count(), 8u);
  EXPECT_EQ(e1.z.rows(), 24u);
  EXPECT_EQ(e1.z.cols(), 4u);
  EXPECT_EQ(e1.offsets, (std::vector<std::size_t>{0, 8, 16, 24}));
  EXPECT_TRUE(same_values(e1.z, e2.z));
  const auto det = m.encode(batch, 9, false);
  EXPECT_TRUE(same_values(det.z, det.mu));
  EXPECT_EQ(e1.levels[1][0].size(), 32u);
  EXPECT_EQ(e1.levels[1][2].size(), 32u);  // repeats of the 5 input points
  std::vector<RadarPointCloud> none{RadarPointCloud{}};
  EXPECT_THROW(m.encode(none, 1), std::invalid_argument);
}

TEST(Vae, StructuredIsPermutationEquivariant) {
  Vae m(tiny_config(), 6);
  Rng rng(7);
  const Tensor z = Tensor::randn({8, 4}, rng);
  std::vector<std::size_t> perm{3, 1, 0, 2, 7, 5, 6, 4};
  const Tensor zp = nc::gather_rows(z, perm);
  const std::vector<std::size_t> off{0, 4, 8};
  const auto a = m.latent_to_structured(z, off), b = m.latent_to_structured(zp, off);
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(b.coords.at(i, c), a.coords.at(perm[i], c));
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(b.features.at(i, c), a.features.at(perm[i], c));
  }
}

TEST(Vae, DecodeCountsAndFeatureRange) {
  const auto cfg = tiny_config();
  Vae m(cfg, 8);
  Rng rng(9);
  const Tensor z = Tensor::randn({8, 4}, rng);
  const std::vector<std::size_t> off{0, 4, 8};
  const auto d = m.decode(z, off);
  const std::size_t cap = cfg.u_max(0) * cfg.u_max(1) * 8;
  EXPECT_LE(d.positions.rows(), cap);
  EXPECT_EQ(d.offsets.back(), d.positions.rows());
  for (double v : d.features.data()) EXPECT_TRUE(v >= -1.0 && v <= 1.0);
  for (const auto& lvl : d.upsample)
    for (auto k : lvl.k) EXPECT_TRUE(k >= 1 && k <= 4);

  // Force k = 1 everywhere: every stage keeps its point count.
  for (const char* name : {"vae.dec0.count.bias", "vae.dec1.count.bias"}) {
    Tensor b = m.params().get(name);
    b.mutable_data()[0] = -50.0;
  }
  const auto one = m.decode(z, off);
  EXPECT_EQ(one.offsets, off);
  for (double v : one.upsample[0].pred_mean_dist.data()) EXPECT_EQ(v, 0.0);
}

TEST(Losses, ChamferExamplesAndOracle) {
  const Tensor a = Tensor::from_data({1, 3}, {0, 0, 0});
  EXPECT_EQ(chamfer_loss(a, {0, 1}, {{{1, 0, 0}}}).item(), 2.0);
  EXPECT_EQ(chamfer_loss(a, {0, 1}, {{{0, 0, 0}}}).item(), 0.0);
  std::mt19937_64 rng(10);
  for (int i = 0; i < 200; ++i) {
    const auto p = random_points(50, rng), q = random_points(50, rng);
    std::vector<double> flat;
    for (const auto& v : p) flat.insert(flat.end(), {v.x, v.y, v.z});
    const double got = chamfer_loss(Tensor::from_data({50, 3}, flat), {0, 50}, {q}).item();
    EXPECT_EQ(got, oracle::brute_chamfer(p, q));
    EXPECT_EQ(got, metrics::chamfer(p, q));
  }
  EXPECT_THROW(chamfer_loss(a, {0, 1}, {{}}), std::invalid_argument);
}

TEST(Losses, FeatureLossExamplesAndOracle) {
  const Tensor pos = Tensor::from_data({1, 3}, {0, 0, 0});
  const Tensor f = Tensor::from_data({1, 2}, {0.3, 0.4});
  std::vector<std::vector<radar::RadarPoint>> ref{{{0.1, 0, 0, 0.0, 0.0}, {5, 5, 5, 1.0, 1.0}}};
  EXPECT_NEAR(feature_loss(pos, f, {0, 1}, ref).item(), 0.25, 1e-15);

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 20; ++t) {
    const auto pred_pts = random_points(12, rng), gt_pts = random_points(9, rng);
    std::vector<double> pflat, fflat;
    std::vector<radar::RadarPoint> gt;
    for (const auto& p : pred_pts) {
      pflat.insert(pflat.end(), {p.x, p.y, p.z});
      fflat.insert(fflat.end(), {u(rng), u(rng)});
    }
    for (const auto& p : gt_pts) gt.push_back({p.x, p.y, p.z, u(rng), u(rng)});
    double want = 0.0;
    for (std::size_t i = 0; i < pred_pts.size(); ++i) {
      const auto& g = gt[oracle::brute_nearest(gt_pts, pred_pts[i])];
      want += std::pow(g.doppler - fflat[2 * i], 2) + std::pow(g.rcs - fflat[2 * i + 1], 2);
    }
    want /= 12.0;
    const double got =
        feature_loss(Tensor::from_data({12, 3}, pflat), Tensor::from_data({12, 2}, fflat), {0, 12}, {gt}).item();
    EXPECT_NEAR(got, want, 1e-14);
  }
}

TEST(Losses, DensityCardinalityKl) {
  DensityTerm t;
  t.pred_count = Tensor::from_data({1, 1}, {2.0});
  t.pred_mean_dist = Tensor::from_data({1, 1}, {0.3});
  t.count = {3.0};
  t.mean_dist = {0.3};
  t.offsets = {0, 1};
  EXPECT_EQ(density_loss(std::span<const DensityTerm>(&t, 1), 50.0).item(), 1.0);
  t.count = {2.0};
  EXPECT_EQ(density_loss(std::span<const DensityTerm>(&t, 1), 50.0).item(), 0.0);

  const std::vector<std::size_t> want{100, 25}, got{90, 25};
  EXPECT_EQ(cardinality_loss(want, got), 10.0);
  EXPECT_EQ(cardinality_loss(want, want), 0.0);

  EXPECT_EQ(kl_regularizer(Tensor::zeros({3, 4}), Tensor::zeros({3, 4})).item(), 0.0);
  EXPECT_DOUBLE_EQ(kl_regularizer(Tensor::from_data({1, 1}, {1.0}), Tensor::zeros({1, 1})).item(), 0.5);
  Rng rng(12);
  for (int i = 0; i < 100; ++i) EXPECT_GE(kl_regularizer(Tensor::randn({4, 4}, rng), Tensor::randn({4, 4}, rng)).item(), 0.0);
}

TEST(Losses, DefaultWeightsMatchTrainingTable) {
  const VaeConfig c;
  EXPECT_EQ(c.lambda_reg, 1e-5);
  EXPECT_EQ(c.lambda_den, 1e-4);
  EXPECT_EQ(c.lambda_card, 5e-7);
  EXPECT_EQ(c.lambda_d, 50.0);
  EXPECT_EQ(c.lambda_c, 0.1);
  EXPECT_EQ(c.lambda_f, 0.05);
  EXPECT_EQ(c.latent_dim, 4u);
}

TEST(Losses, PerfectReconstructionIsZeroAndTotalIsWeightedSum) {
  const auto cfg = tiny_config();
  Vae m(cfg, 13);
  std::vector<RadarPointCloud> batch{random_cloud(16, 4), random_cloud(11, 5)};
  const auto enc = m.encode(batch, 1);

  // A hand-built decode that reproduces every level exactly.
  DecodeResult perfect;
  std::vector<double> pos, feat;
  perfect.offsets = {0};
  for (const auto& pts : enc.inputs) {
    for (const auto& p : pts) {
      pos.insert(pos.end(), {p.x, p.y, p.z});
      feat.insert(feat.end(), {p.doppler, p.rcs});
    }
    perfect.offsets.push_back(perfect.offsets.back() + pts.size());
  }
  perfect.positions = Tensor::from_data({perfect.offsets.back(), 3}, pos);
  perfect.features = Tensor::from_data({perfect.offsets.back(), 2}, feat);
  for (std::size_t l = 1; l <= cfg.stages(); ++l) {
    UpsampleLevel lvl;
    std::vector<double> p, c, d;
    for (std::size_t f = 0; f < batch.size(); ++f) {
      for (std::size_t i = 0; i < enc.levels[l][f].size(); ++i) {
        const auto& v = enc.levels[l][f][i];
        p.insert(p.end(), {v.x, v.y, v.z});
        c.push_back(enc.counts[l][f][i]);
        d.push_back(enc.mean_dist[l][f][i]);
      }
      lvl.offsets.push_back(lvl.offsets.back() + enc.levels[l][f].size());
    }
    lvl.positions = Tensor::from_data({c.size(), 3}, p);
    lvl.pred_count = Tensor::from_data({c.size(), 1}, c);
    lvl.pred_mean_dist = Tensor::from_data({c.size(), 1}, d);
    perfect.upsample.push_back(lvl);
  }
  EncodeResult ideal = enc;
  ideal.mu = Tensor::zeros({enc.mu.rows(), 4});
  ideal.logvar = Tensor::zeros({enc.mu.rows(), 4});
  const auto zero = vae_loss(ideal, perfect, cfg);
  EXPECT_EQ(zero.parts.total, 0.0);

  const auto d = m.decode(enc.z, enc.offsets);
  const auto l = vae_loss(enc, d, cfg);
  const auto& p = l.parts;
  const double sum = p.cd + cfg.lambda_c * p.cd_intermediate + cfg.lambda_f * p.feature + cfg.lambda_den * p.density +
                     cfg.lambda_reg * p.kl + cfg.lambda_card * p.cardinality;
  EXPECT_NEAR(p.total, sum, 1e-12 * std::abs(sum));
  EXPECT_GT(p.cd, 0.0);
}

TEST(Losses, GradientsMatchFiniteDifferences) {
  Rng rng(14);
  std::mt19937_64 prng(15);
  const auto ref = random_points(7, prng);
  const Tensor pred = Tensor::randn({9, 3}, rng, 1.0, true);
  const Tensor feats = Tensor::randn({9, 2}, rng, 1.0, true);
  std::vector<radar::RadarPoint> gt;
  for (const auto& p : ref) gt.push_back({p.x, p.y, p.z, 0.2, -0.1});
  const std::vector<std::size_t> off{0, 4, 9};
  const std::vector<std::vector<Vec3>> refs{ref, {ref[0], ref[1]}};
  const std::vector<std::vector<radar::RadarPoint>> gts{gt, {gt[2]}};

  auto r1 = oracle::check_gradients([&] { return chamfer_loss(pred, off, refs); }, {pred});
  EXPECT_LT(r1.max_rel_error, 1e-4) << r1.worst;
  auto r2 = oracle::check_gradients([&] { return feature_loss(pred, feats, off, gts); }, {feats});
  EXPECT_LT(r2.max_rel_error, 1e-4) << r2.worst;

  const Tensor mu = Tensor::randn({5, 4}, rng, 1.0, true), lv = Tensor::randn({5, 4}, rng, 0.5, true);
  auto r3 = oracle::check_gradients([&] { return kl_regularizer(mu, lv); }, {mu, lv});
  EXPECT_LT(r3.max_rel_error, 1e-4) << r3.worst;

  const Tensor pc = Tensor::from_data({3, 1}, {1.3, 2.7, 0.4}, true);
  const Tensor pd = Tensor::from_data({3, 1}, {0.1, 0.25, 0.0}, true);
  auto r4 = oracle::check_gradients(
      [&] {
        DensityTerm t{pc, pd, {2, 1, 0}, {0.2, 0.1, 0.05}, {0, 2, 3}};
        return density_loss(std::span<const DensityTerm>(&t, 1), 50.0);
      },
      {pc, pd});
  EXPECT_LT(r4.max_rel_error, 1e-4) << r4.worst;
}

TEST(Vae, FullLossGradientsMatchFiniteDifferences) {
  const auto cfg = tiny_config();
  Vae m(cfg, 16);
  std::vector<RadarPointCloud> batch{random_cloud(16, 6), random_cloud(9, 7)};
  const auto res = oracle::check_gradients(
      [&] {
        const auto e = m.encode(batch, 3);
        return vae_loss(e, m.decode(e.z, e.offsets), cfg).total;
      },
      param_tensors(m), 1e-6, 8);
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

TEST(Vae, TrainingIsDeterministicAndRecordsHistory) {
  const auto cfg = tiny_config();
  std::vector<RadarPointCloud> data;
  for (std::uint64_t i = 0; i < 6; ++i) data.push_back(random_cloud(10 + i, 20 + i));
  data.push_back(RadarPointCloud{});  // skipped
  VaeTrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  Vae a(cfg, 1), b(cfg, 1);
  const auto ra = train_vae(a, data, tc, 42), rb = train_vae(b, data, tc, 42);
  EXPECT_FALSE(ra.diverged) << ra.message;
  EXPECT_EQ(ra.history.size(), 3u);
  EXPECT_EQ(a.params().checksum(), b.params().checksum());
  EXPECT_EQ(ra.history.back().total, rb.history.back().total);
  EXPECT_NE(a.params().checksum(), Vae(cfg, 1).params().checksum());
}

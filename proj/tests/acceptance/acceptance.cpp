// Acceptance run: one PASS/FAIL line per criterion. With arguments only the
// listed criteria run, e.g. `radiff_acceptance 1 2 3`; `--report FILE` also
// writes the lines to FILE.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "radiff/augment/augment.hpp"
#include "radiff/cli/checkpoint.hpp"
#include "radiff/cli/commands.hpp"
#include "radiff/cli/config.hpp"
#include "radiff/cli/pipeline.hpp"
#include "radiff/diffusion/diffusion.hpp"
#include "radiff/metrics/metrics.hpp"
#include "radiff/numcore/layers.hpp"
#include "radiff/numcore/ops.hpp"
#include "radiff/radarframe/frame_ops.hpp"
#include "radiff/radarframe/rdf.hpp"
#include "radiff/radarframe/synth.hpp"
#include "radiff/vae/vae.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace radiff;
namespace nc = radiff::numcore;
namespace oracle = radiff::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Records the first failed check; later checks only add detail.
struct Checks {
  bool ok = true;
  std::vector<std::string> failures;
  void expect(bool cond, const std::string& what) {
    if (cond) return;
    ok = false;
    if (failures.size() < 5) failures.push_back(what);
  }
  Outcome outcome(std::string detail) const {
    for (const auto& f : failures) detail += "; failed: " + f;
    return {ok, detail};
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void progress(const std::string& msg) {
  std::fprintf(stderr, "  .. %s\n", msg.c_str());
  std::fflush(stderr);
}

std::vector<nc::Tensor> param_list(const nc::ParamSet& p) {
  std::vector<nc::Tensor> out;
  for (const auto& [name, t] : p.entries()) out.push_back(t);
  return out;
}

// Zero-initialized biases and heads get small random values so every
// parameter carries gradient.
void jitter(nc::ParamSet& p, std::uint64_t seed, double sd = 0.2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  for (auto& [name, t] : p.entries()) {
    auto copy = t;
    for (auto& v : copy.mutable_data()) v += g(rng);
  }
}

std::vector<std::size_t> random_offsets(std::size_t groups, std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> n(lo, hi);
  std::vector<std::size_t> off{0};
  for (std::size_t g = 0; g < groups; ++g) off.push_back(off.back() + n(rng));
  return off;
}

radar::RadarPointCloud unit_cloud(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  radar::RadarPointCloud pc;
  for (std::size_t i = 0; i < n; ++i) pc.push_back({u(rng), u(rng), 0.3 * u(rng), 0.5 * u(rng), 0.5 * u(rng)});
  return pc;
}

// ---- 1: gradients of micro networks ----

Outcome numerics() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> dim(2, 6);
  double worst = 0.0;
  std::string worst_name;
  std::size_t nets = 0;
  // Step for smooth networks. With h = 1e-5 the rounding noise of the loss
  // (~1e-10 on gradients) already shows against the 1e-6 floor on exactly
  // zero gradients such as key biases; nearest-neighbour losses keep the
  // smaller step so no assignment flips inside the stencil.
  const double h = 1e-4;
  auto record = [&](const std::string& name, const oracle::GradCheckResult& r) {
    ++nets;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = name + " " + r.worst;
    }
  };

  for (int k = 0; k < 12; ++k) {
    nc::Rng r(200 + k);
    nc::ParamSet params;
    std::vector<std::size_t> widths{dim(rng)};
    for (std::size_t l = 0, depth = 1 + k % 3; l < depth; ++l) widths.push_back(dim(rng));
    widths.push_back(1 + k % 2);
    nc::Mlp mlp(params, "mlp", widths, r);
    jitter(params, 300 + k);
    const auto x = nc::Tensor::randn({dim(rng), widths.front()}, r, 1.0, true);
    auto inputs = param_list(params);
    inputs.push_back(x);
    record("mlp", oracle::check_gradients([&] { return nc::mean(nc::square(mlp(x))); }, inputs, h));
  }

  for (int k = 0; k < 12; ++k) {
    nc::Rng r(400 + k);
    nc::ParamSet params;
    const std::size_t heads = 1 + k % 2, width = heads * (1 + k % 3) * 2;
    const std::size_t qdim = dim(rng);
    nc::MultiHeadAttention attn(params, "self", qdim, qdim, width, heads, r);
    jitter(params, 500 + k);
    const auto off = random_offsets(1 + k % 3, 1, 4, rng);
    const auto x = nc::Tensor::randn({off.back(), qdim}, r, 1.0, true);
    const auto w = nc::Tensor::randn({off.back(), width}, r);
    auto inputs = param_list(params);
    inputs.push_back(x);
    record("self-attention",
           oracle::check_gradients([&] { return nc::sum(attn(x, x, nc::Segments{off, off}) * w); }, inputs, h));
  }

  for (int k = 0; k < 12; ++k) {
    nc::Rng r(600 + k);
    nc::ParamSet params;
    const std::size_t heads = 1 + k % 2, width = heads * 2 * (1 + k % 2);
    const std::size_t qdim = dim(rng), kvdim = dim(rng);
    nc::MultiHeadAttention attn(params, "cross", qdim, kvdim, width, heads, r);
    jitter(params, 700 + k);
    const std::size_t groups = 1 + k % 3;
    const auto qoff = random_offsets(groups, 1, 4, rng), kvoff = random_offsets(groups, 1, 5, rng);
    const auto q = nc::Tensor::randn({qoff.back(), qdim}, r, 1.0, true);
    const auto kv = nc::Tensor::randn({kvoff.back(), kvdim}, r, 1.0, true);
    const auto w = nc::Tensor::randn({qoff.back(), width}, r);
    auto inputs = param_list(params);
    inputs.push_back(q);
    inputs.push_back(kv);
    record("cross-attention",
           oracle::check_gradients([&] { return nc::sum(attn(q, kv, nc::Segments{qoff, kvoff}) * w); }, inputs, h));
  }

  // VAE loss terms, each on its own random instance, then the full loss.
  for (int k = 0; k < 4; ++k) {
    nc::Rng r(800 + k);
    const auto off = random_offsets(2, 3, 7, rng);
    const auto pred = nc::Tensor::randn({off.back(), 3}, r, 1.0, true);
    const auto feats = nc::Tensor::randn({off.back(), 2}, r, 1.0, true);
    std::vector<std::vector<vae::Vec3>> refs;
    std::vector<std::vector<radar::RadarPoint>> gts;
    for (int g = 0; g < 2; ++g) {
      const auto pc = unit_cloud(dim(rng), rng);
      refs.push_back(metrics::positions(pc));
      gts.push_back(pc.points);
    }
    record("chamfer", oracle::check_gradients([&] { return vae::chamfer_loss(pred, off, refs); }, {pred}));
    record("feature", oracle::check_gradients([&] { return vae::feature_loss(pred, feats, off, gts); }, {feats}));

    const std::size_t m = dim(rng);
    std::uniform_real_distribution<double> u(0.05, 3.0);
    std::vector<double> pc_v(m), pd_v(m), cnt(m), md(m);
    for (std::size_t i = 0; i < m; ++i) {
      pc_v[i] = u(rng);
      pd_v[i] = 0.1 * u(rng);
      cnt[i] = std::floor(u(rng));
      md[i] = 0.1 * u(rng);
    }
    const auto pcount = nc::Tensor::from_data({m, 1}, pc_v, true);
    const auto pdist = nc::Tensor::from_data({m, 1}, pd_v, true);
    const std::vector<std::size_t> doff{0, m / 2, m};
    record("density", oracle::check_gradients(
                          [&] {
                            vae::DensityTerm t{pcount, pdist, cnt, md, doff};
                            return vae::density_loss(std::span<const vae::DensityTerm>(&t, 1), 50.0);
                          },
                          {pcount, pdist}, h));

    const auto mu = nc::Tensor::randn({m, 4}, r, 1.0, true), lv = nc::Tensor::randn({m, 4}, r, 0.5, true);
    record("kl", oracle::check_gradients([&] { return vae::kl_regularizer(mu, lv); }, {mu, lv}, h));
  }
  for (int k = 0; k < 2; ++k) {
    vae::VaeConfig cfg;
    cfg.num_points = 16;
    cfg.factors = {2, 2};
    cfg.width = 8;
    cfg.heads = 2;
    vae::Vae model(cfg, 900 + k);
    std::vector<radar::RadarPointCloud> batch{unit_cloud(16, rng), unit_cloud(7 + 4 * k, rng)};
    record("vae-loss", oracle::check_gradients(
                           [&] {
                             const auto e = model.encode(batch, 3);
                             return vae::vae_loss(e, model.decode(e.z, e.offsets), cfg).total;
                           },
                           param_list(model.params()), 1e-5, 8));
  }

  // Noise-prediction objective through a small denoiser.
  const auto sched = diffusion::make_schedule();
  for (int k = 0; k < 8; ++k) {
    nc::Rng r(1000 + k);
    nc::ParamSet params;
    diffusion::DenoiserConfig dc;
    dc.latent_dim = 2 + k % 3;
    dc.width = 8;
    dc.blocks = 1;
    dc.heads = 2;
    dc.cond_width = 4;
    diffusion::Denoiser net(params, "den", dc, r);
    jitter(params, 1100 + k);
    const auto off = random_offsets(2, 2, 4, rng);
    const auto z0 = nc::Tensor::randn({off.back(), dc.latent_dim}, r, 1.0, true);
    cond::ConditionBatch c;
    c.global = nc::Tensor::randn({2, 4}, r, 1.0, true);
    c.tokens = nc::Tensor::randn({3, 4}, r, 1.0, true);
    c.offsets = {0, static_cast<std::size_t>(1 + k % 2), 3};
    auto inputs = param_list(params);
    inputs.insert(inputs.end(), {z0, c.global, c.tokens});
    const std::uint64_t noise_seed = 1200 + k;
    record("ldm-loss", oracle::check_gradients(
                           [&] {
                             nc::Rng noise(noise_seed);
                             return diffusion::ldm_loss(z0, off, sched, noise, [&](const nc::Tensor& zt, auto t) {
                               return net(zt, off, t, c);
                             });
                           },
                           inputs, h, 6));
  }

  const double secs = seconds_since(t0);
  Checks ch;
  ch.expect(nets >= 50, "fewer than 50 networks");
  ch.expect(worst < 1e-4, "relative error " + worst_name);
  ch.expect(secs < 120.0, "runtime over 2 min");
  return ch.outcome(fmt::format("{} networks, max rel. error {:.2e}, {:.1f} s", nets, worst, secs));
}

// ---- 2: schedule, forward moments, noise-free reverse chain ----

Outcome diffusion_algebra() {
  const auto t0 = std::chrono::steady_clock::now();
  Checks ch;
  const auto s = diffusion::make_schedule();
  ch.expect(s.T == 1000, "T");
  ch.expect(s.beta_at(1) == 1e-4, "beta_1");
  ch.expect(s.beta_at(1000) == 0.02, "beta_1000");

  const std::size_t n = 100000;
  nc::Rng rng(21);
  double worst = 0.0;
  for (double z : {1.5, -0.7}) {
    const auto z0 = nc::Tensor::full({n, 1}, z);
    for (std::size_t t : {1u, 500u, 1000u}) {
      const auto zt = diffusion::q_sample(z0, t, nc::Tensor::randn({n, 1}, rng), s);
      double m = 0.0, v = 0.0;
      for (double x : zt.data()) m += x;
      m /= static_cast<double>(n);
      for (double x : zt.data()) v += (x - m) * (x - m);
      v /= static_cast<double>(n - 1);
      const double ab = s.alpha_bar_at(t);
      const double want_m = std::sqrt(ab) * z, want_v = 1.0 - ab;
      // The mean at t = 1000 is ~0.01 z, so its error is taken relative to
      // the marginal standard deviation.
      const double em = std::abs(m - want_m) / std::max(std::abs(want_m), std::sqrt(want_v));
      const double ev = std::abs(v - want_v) / want_v;
      worst = std::max({worst, em, ev});
      ch.expect(em < 0.02 && ev < 0.02, fmt::format("moments at t={} z0={}", t, z));
    }
  }

  double chain_err = 0.0;
  nc::Rng r2(22);
  for (int trial = 0; trial < 20; ++trial) {
    const auto z0 = nc::Tensor::randn({1, 1}, r2, 2.0);
    auto z = diffusion::q_sample(z0, s.T, nc::Tensor::randn({1, 1}, r2), s);
    for (std::size_t t = s.T; t >= 1; --t) {
      const double ab = s.alpha_bar_at(t);
      const auto eps = nc::scale(z - nc::scale(z0, std::sqrt(ab)), 1.0 / std::sqrt(1.0 - ab));
      z = diffusion::p_mean(z, t, eps, s);
    }
    chain_err = std::max(chain_err, std::abs(z.item() - z0.item()));
  }
  ch.expect(chain_err < 1e-10, "reverse chain error");
  const double secs = seconds_since(t0);
  ch.expect(secs < 60.0, "runtime over 1 min");
  return ch.outcome(
      fmt::format("worst moment error {:.2f}%, chain error {:.1e}, {:.1f} s", 100.0 * worst, chain_err, secs));
}

// ---- 3: metric oracles ----

radar::RadarPointCloud metric_cloud(std::mt19937_64& rng, bool coarse) {
  std::uniform_int_distribution<int> count(1, 64), grid(-3, 3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  radar::RadarPointCloud pc;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    if (coarse) {
      pc.push_back({double(grid(rng)), double(grid(rng)), double(grid(rng)), u(rng), u(rng)});
    } else {
      pc.push_back({u(rng), u(rng), u(rng), u(rng), u(rng)});
    }
  }
  return pc;
}

Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  Checks ch;
  std::mt19937_64 rng(31);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const bool coarse = trial % 3 == 0;
    const auto a = metric_cloud(rng, coarse), b = metric_cloud(rng, coarse), c = metric_cloud(rng, coarse);
    const auto pa = oracle::brute_positions(a), pb = oracle::brute_positions(b);
    mismatches += metrics::cd(a, b) != oracle::brute_chamfer(pa, pb);
    mismatches += metrics::cd_feature(a, b, metrics::Channel::Doppler) != oracle::brute_cd_feature(a, b, true);
    mismatches += metrics::cd_feature(a, b, metrics::Channel::Rcs) != oracle::brute_cd_feature(a, b, false);

    const int cells = 1 + trial % 12;
    const metrics::BevGrid g{{-5, 5}, {-5, 5}, cells, cells};
    std::vector<radar::RadarPointCloud> R{a, c}, G{b};
    const double j = metrics::jsd_bev(R, G, g);
    const double want_j = std::clamp(
        oracle::brute_jsd(oracle::brute_bev(R, -5, 5, -5, 5, cells), oracle::brute_bev(G, -5, 5, -5, 5, cells)), 0.0,
        1.0);
    mismatches += j != want_j;
    ch.expect(j >= 0.0 && j <= 1.0, "jsd outside [0, 1]");

    std::vector<radar::RadarPointCloud> G2{b, c, a};
    double want_mmd = 0.0;
    for (const auto& r : R) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& gen : G2) best = std::min(best, oracle::brute_chamfer(oracle::brute_positions(r), oracle::brute_positions(gen)));
      want_mmd += best;
    }
    mismatches += metrics::mmd(R, G2) != want_mmd / static_cast<double>(R.size());
  }
  ch.expect(mismatches == 0, fmt::format("{} oracle mismatches", mismatches));

  radar::SynthConfig sc;
  std::vector<radar::Frame> frames;
  for (std::uint64_t i = 0; i < 8; ++i) frames.push_back(radar::synth_scene(32, sc, i));
  const auto rep = metrics::evaluate(frames, frames, {});
  ch.expect(rep.cd == 0.0 && rep.cd_doppler == 0.0 && rep.cd_rcs == 0.0 && rep.jsd == 0.0 && rep.mmd == 0.0,
            "self-evaluation not all zeros");
  const double secs = seconds_since(t0);
  ch.expect(secs < 60.0, "runtime over 1 min");
  return ch.outcome(fmt::format("200 instances x 5 metrics, {} mismatches, self-eval zero, {:.1f} s", mismatches, secs));
}

// ---- 4: VAE training on toy frames ----

Outcome vae_training() {
  const auto t0 = std::chrono::steady_clock::now();
  radar::SynthConfig sc;
  std::vector<radar::RadarPointCloud> data;
  for (std::uint64_t i = 0; data.size() < 512; ++i) {
    const auto f = radar::synth_scene(41, sc, i);
    auto n = radar::normalize(radar::clip_to_range(f.radar, sc.range), sc.range, sc.features);
    n = radar::pad_or_downsample(n, 128, i);
    if (n.valid_count() > 0) data.push_back(n);
  }
  vae::VaeConfig vc;  // d_z = 4 and the loss weights stay at their defaults
  vc.num_points = 128;
  vc.width = 32;
  vae::Vae model(vc, 42);
  vae::VaeTrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 128;
  const auto res = vae::train_vae(model, data, tc, 43, [&](std::size_t e, const vae::LossBreakdown& l) {
    if (e % 20 == 0) progress(fmt::format("vae epoch {} cd {:.4f} feature {:.4f}", e + 1, l.cd, l.feature));
  });
  Checks ch;
  ch.expect(!res.diverged && res.history.size() == 200, "training incomplete: " + res.message);
  if (!ch.ok) return ch.outcome("");
  const auto& h = res.history;
  const double cd_ratio = h.back().cd / h.front().cd, f_ratio = h.back().feature / h.front().feature;
  bool monotone = true;
  std::string first10;
  for (std::size_t e = 0; e < 10; ++e) {
    if (e > 0) monotone = monotone && h[e].total <= h[e - 1].total;
    first10 += fmt::format("{}{:.4f}", e ? " " : "", h[e].total);
  }
  ch.expect(cd_ratio < 0.2, "CD ratio");
  ch.expect(f_ratio < 0.3, "feature ratio");
  ch.expect(monotone, "first 10 epoch averages not monotone: " + first10);
  const double secs = seconds_since(t0);
  ch.expect(secs < 1200.0, "runtime over 20 min");
  return ch.outcome(fmt::format("CD at {:.1f}% and feature loss at {:.1f}% of epoch 1, first 10 epochs monotone: {}, "
                                "{:.0f} s",
                                100.0 * cd_ratio, 100.0 * f_ratio, monotone ? "yes" : "no", secs));
}

// Frames without task points are dropped by the dataset builder, so extra
// held-out frames are drawn and the first 64 usable ones kept.
cli::TaskDataset held_out(const radar::SynthConfig& sc, std::uint64_t seed, diffusion::Task task,
                          const cli::RunConfig& cfg, std::uint64_t ds_seed) {
  std::vector<radar::Frame> frames;
  for (std::uint64_t i = 0; i < 96; ++i) frames.push_back(radar::synth_scene(seed, sc, i));
  auto te = cli::build_task_dataset(frames, task, cfg, ds_seed);
  const std::size_t n = std::min<std::size_t>(64, te.inputs.size());
  te.inputs.resize(n);
  te.conditions.resize(n);
  te.frame_ids.resize(n);
  return te;
}

// ---- 5: foreground fidelity ----

Outcome foreground_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  auto sc = radar::SynthConfig::for_profile(radar::Profile::Toy);
  sc.min_boxes = 1;
  sc.max_boxes = 1;
  const double doppler_bound = 2.0 * sc.doppler_noise;
  const double cd_bound = 3.0 * sc.surface_spacing;

  cli::RunConfig cfg;
  cfg.data.num_points = 32;
  cfg.data.doppler_min = -15.0;
  cfg.data.doppler_max = 15.0;
  cfg.vae.factors = {4, 2};
  cfg.vae.width = 32;
  cfg.vae.batch_size_fg = 32;
  cfg.vae.lambda_f = 1.0;
  cfg.vae.epochs = 60;
  cfg.layout.objects = 4;
  cfg.layout.layers = 1;
  cfg.layout.width = 64;
  cfg.diffusion.width = 64;
  cfg.diffusion.blocks = 2;
  cfg.diffusion.epochs = 800;
  cfg.diffusion.lr = 1e-3;
  cfg.diffusion.batch_size_fg = 64;

  std::vector<radar::Frame> train;
  for (std::uint64_t i = 0; i < 2048; ++i) train.push_back(radar::synth_scene(51, sc, i));
  const auto tr = cli::build_task_dataset(train, diffusion::Task::Foreground, cfg, 53);
  const auto te = held_out(sc, 52, diffusion::Task::Foreground, cfg, 54);

  vae::Vae model(cli::vae_config(cfg), 55);
  vae::train_vae(model, tr.inputs, cli::vae_train_config(cfg, diffusion::Task::Foreground), 56,
                 [&](std::size_t e, const vae::LossBreakdown& l) {
                   if (e % 20 == 0) progress(fmt::format("fg vae epoch {} cd {:.4f}", e + 1, l.cd));
                 });
  const auto latents = cli::encode_latents(model, tr.inputs, 64);
  diffusion::ConditionalLdm ldm(cli::ldm_config(cfg, diffusion::Task::Foreground), 57);
  diffusion::train_ldm(ldm, latents, tr.conditions, cli::ldm_train_config(cfg, diffusion::Task::Foreground), 58,
                       [&](std::size_t e, double l) {
                         if (e % 100 == 0) progress(fmt::format("fg ldm epoch {} loss {:.4f}", e + 1, l));
                       });
  const auto m = model.config().latent_count();
  const auto gen = cli::decode_latents(model, ldm.generate(te.conditions, m, 59), te.conditions.size(), cfg);

  double cd = 0.0, cd_dop = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    const auto real = cli::model_output(te.inputs[i], cfg);
    if (real.valid_count() == 0 || gen[i].valid_count() == 0) continue;
    cd += metrics::cd(real, gen[i]);
    cd_dop += metrics::cd_feature(real, gen[i], metrics::Channel::Doppler);
    ++pairs;
  }
  Checks ch;
  ch.expect(pairs == 64, fmt::format("only {} nonempty pairs", pairs));
  cd /= static_cast<double>(std::max<std::size_t>(pairs, 1));
  cd_dop /= static_cast<double>(std::max<std::size_t>(pairs, 1));
  ch.expect(cd_dop < doppler_bound, "CD_Doppler bound");
  ch.expect(cd < cd_bound, "CD bound");
  const double secs = seconds_since(t0);
  ch.expect(secs < 3600.0, "runtime over 60 min");
  return ch.outcome(fmt::format("CD_Doppler {:.3f} < {:.3f}, CD {:.3f} < {:.3f} over {} held-out scenes, {:.0f} s",
                                cd_dop, doppler_bound, cd, cd_bound, pairs, secs));
}

// ---- 6: background conditioning ----

Outcome background_conditioning() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto sc = radar::SynthConfig::for_profile(radar::Profile::Toy);
  cli::RunConfig cfg;
  cfg.data.num_points = 64;
  cfg.vae.factors = {4, 4};
  cfg.vae.width = 32;
  cfg.vae.batch_size_bg = 32;
  cfg.vae.epochs = 60;
  cfg.pillars.cell = 2.0;
  cfg.pillars.max_tokens = 64;
  cfg.pillars.width = 64;
  cfg.diffusion.width = 64;
  cfg.diffusion.blocks = 2;
  cfg.diffusion.epochs = 300;
  cfg.diffusion.lr = 1e-3;
  cfg.diffusion.batch_size_bg = 64;
  cfg.diffusion.cond_dropout = 0.1;
  cfg.metrics.grid_cells = 10;

  std::vector<radar::Frame> train;
  for (std::uint64_t i = 0; i < 1024; ++i) train.push_back(radar::synth_scene(61, sc, i));
  const auto tr = cli::build_task_dataset(train, diffusion::Task::Background, cfg, 63);
  const auto te = held_out(sc, 62, diffusion::Task::Background, cfg, 64);

  vae::Vae model(cli::vae_config(cfg), 65);
  vae::train_vae(model, tr.inputs, cli::vae_train_config(cfg, diffusion::Task::Background), 66,
                 [&](std::size_t e, const vae::LossBreakdown& l) {
                   if (e % 20 == 0) progress(fmt::format("bg vae epoch {} cd {:.4f}", e + 1, l.cd));
                 });
  const auto latents = cli::encode_latents(model, tr.inputs, 64);
  diffusion::ConditionalLdm ldm(cli::ldm_config(cfg, diffusion::Task::Background), 67);
  diffusion::train_ldm(ldm, latents, tr.conditions, cli::ldm_train_config(cfg, diffusion::Task::Background), 68,
                       [&](std::size_t e, double l) {
                         if (e % 50 == 0) progress(fmt::format("bg ldm epoch {} loss {:.4f}", e + 1, l));
                       });
  // Same sampling seed for both arms: the pairs share their initial noise.
  const auto m = model.config().latent_count();
  const auto n = te.conditions.size();
  const auto cond = cli::decode_latents(model, ldm.generate(te.conditions, m, 69), n, cfg);
  const auto uncond = cli::decode_latents(model, ldm.generate(te.conditions, m, 69, true), n, cfg);

  const auto grid = metrics::BevGrid::over(cfg.range(), cfg.metrics.grid_cells);
  // The default 100 x 100 grid is reported for reference only.
  const auto fine = metrics::BevGrid::over(cfg.range(), cli::MetricsSection{}.grid_cells);
  std::size_t wins = 0, fine_wins = 0, fine_ties = 0;
  double jc = 0.0, ju = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<radar::RadarPointCloud> real{cli::model_output(te.inputs[i], cfg)};
    const double a = metrics::jsd_bev(real, std::span(&cond[i], 1), grid);
    const double b = metrics::jsd_bev(real, std::span(&uncond[i], 1), grid);
    wins += a < b;
    const double fa = metrics::jsd_bev(real, std::span(&cond[i], 1), fine);
    const double fb = metrics::jsd_bev(real, std::span(&uncond[i], 1), fine);
    fine_wins += fa < fb;
    fine_ties += fa == fb;
    jc += a / static_cast<double>(n);
    ju += b / static_cast<double>(n);
  }
  Checks ch;
  ch.expect(n == 64, fmt::format("{} held-out frames", n));
  ch.expect(wins * 5 >= n * 4, "conditional wins below 80%");
  const double secs = seconds_since(t0);
  ch.expect(secs < 1800.0, "runtime over 30 min");
  return ch.outcome(fmt::format("conditional lower JSD on {}/{} frames (mean {:.3f} vs {:.3f}) on a {}x{} grid; "
                                "{} wins and {} ties on the {}x{} grid; {:.0f} s",
                                wins, n, jc, ju, grid.nx, grid.ny, fine_wins, fine_ties, fine.nx, fine.ny, secs));
}

// ---- 7: augmentation invariants ----

Outcome augmentation() {
  const auto t0 = std::chrono::steady_clock::now();
  radar::SynthConfig sc;
  std::vector<radar::Frame> frames;
  for (std::uint64_t i = 0; i < 60; ++i) frames.push_back(radar::synth_scene(71, sc, i));
  const auto db = augment::build_gt_database(frames);
  Checks ch;
  std::mt19937_64 rng(72);
  std::uniform_int_distribution<int> count(0, 4);
  std::uniform_int_distribution<std::size_t> target(0, 200);
  std::uniform_real_distribution<double> angle(-3.14159, 3.14159);
  std::size_t inserted = 0, overlaps = 0, thin = 0, rotate_mismatch = 0;
  for (std::uint64_t k = 0; k < 1000; ++k) {
    const auto& f = frames[k % frames.size()];
    const auto res = k % 2 == 0 ? augment::gt_sample_insert(f, db, {{1, count(rng)}, {2, count(rng)}, {3, count(rng)}}, k)
                                : augment::polar_mix_fill(f, db, target(rng), k, 4 + static_cast<int>(k % 3) * 2);
    const auto& out = res.frame;
    inserted += res.inserted;
    for (std::size_t i = 0; i < out.boxes.size(); ++i)
      for (std::size_t j = i + 1; j < out.boxes.size(); ++j) overlaps += oracle::box_overlap_oracle(out.boxes[i], out.boxes[j]) != 0.0;
    for (std::size_t b = f.boxes.size(); b < out.boxes.size(); ++b) {
      std::size_t inside = 0;
      for (const auto& p : out.radar.points) inside += radar::point_in_box(p.position(), out.boxes[b]);
      thin += inside < 5;
    }
    const auto r = augment::global_rotate(out, angle(rng));
    for (std::size_t i = 0; i < out.radar.size(); ++i) {
      const auto &p = out.radar.points[i], &q = r.radar.points[i];
      rotate_mismatch += std::hypot(p.x, p.y) != std::hypot(q.x, q.y) || p.z != q.z || p.doppler != q.doppler;
    }
  }
  ch.expect(inserted > 0, "nothing inserted");
  ch.expect(overlaps == 0, "overlapping boxes");
  ch.expect(thin == 0, "inserted object with fewer than 5 points");
  ch.expect(rotate_mismatch == 0, "rotation changed range or Doppler");
  return ch.outcome(fmt::format("1000 calls, {} objects inserted, {} overlaps, {} under 5 points, {} rotation "
                                "mismatches, {:.1f} s",
                                inserted, overlaps, thin, rotate_mismatch, seconds_since(t0)));
}

// ---- 8: reproducibility and persistence ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

int run(const std::vector<std::string>& args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run_cli(args, o, e);
  if (out) *out = o.str();
  if (code != 0) progress("command failed: " + e.str());
  return code;
}

cli::RunConfig small_config() {
  cli::RunConfig c;
  c.data.num_points = 16;
  c.vae.factors = {2, 2};
  c.vae.width = 8;
  c.vae.heads = 2;
  c.vae.epochs = 2;
  c.vae.batch_size_fg = c.vae.batch_size_bg = 4;
  c.diffusion.epochs = 2;
  c.diffusion.batch_size_fg = c.diffusion.batch_size_bg = 4;
  c.diffusion.steps = 10;
  c.diffusion.width = 8;
  c.diffusion.blocks = 1;
  c.diffusion.heads = 2;
  c.layout.width = c.pillars.width = 8;
  c.layout.heads = 2;
  c.layout.layers = 1;
  c.layout.objects = 4;
  c.pillars.max_tokens = 16;
  c.augment.polar_target = 20;
  return c;
}

Outcome reproducibility() {
  const auto t0 = std::chrono::steady_clock::now();
  Checks ch;
  const auto root = fs::temp_directory_path() / "radiff_acceptance_repro";
  fs::remove_all(root);
  fs::create_directories(root);
  const auto cfg = (root / "small.ini").string();
  std::ofstream(cfg) << cli::echo_config(small_config());

  std::size_t commands = 0;
  for (const std::string tag : {"a", "b"}) {
    const auto d = root / tag;
    fs::create_directories(d);
    auto p = [&](const char* name) { return (d / name).string(); };
    const std::vector<std::vector<std::string>> cmds = {
        {"--seed", "3", "synth", "--out", p("data"), "--frames", "8"},
        {"--seed", "4", "train-vae", "--task", "fg", "--data", p("data"), "--config", cfg, "--out", p("vae_fg")},
        {"--seed", "5", "train-ldm", "--task", "fg", "--data", p("data"), "--config", cfg, "--vae", p("vae_fg"), "--out",
         p("ldm_fg")},
        {"--seed", "6", "generate", "--task", "fg", "--ldm", p("ldm_fg"), "--vae", p("vae_fg"), "--cond", p("data"),
         "--config", cfg, "--out", p("gen_fg")},
        {"--seed", "4", "train-vae", "--task", "bg", "--data", p("data"), "--config", cfg, "--out", p("vae_bg")},
        {"--seed", "5", "train-ldm", "--task", "bg", "--data", p("data"), "--config", cfg, "--vae", p("vae_bg"), "--out",
         p("ldm_bg")},
        {"--seed", "6", "generate", "--task", "bg", "--ldm", p("ldm_bg"), "--vae", p("vae_bg"), "--cond", p("data"),
         "--config", cfg, "--out", p("gen_bg")},
        {"fuse", "--fg", p("gen_fg"), "--bg", p("gen_bg"), "--out", p("fused")},
        {"--seed", "7", "augment", "--data", p("data"), "--config", cfg, "--out", p("aug")},
        {"eval", "--real", p("data"), "--gen", p("fused"), "--config", cfg, "--out", p("report.json")},
        {"config", "--config", cfg},
    };
    for (const auto& c : cmds) {
      std::string out;
      ch.expect(run(c, &out) == 0, "command " + c[c[0] == "--seed" ? 2 : 0]);
      if (c[0] == "config") std::ofstream(d / "config_echo.ini") << out;
      ++commands;
    }
  }
  const auto a = tree(root / "a"), b = tree(root / "b");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) differing += !b.count(name) || b.at(name) != bytes;
  ch.expect(a.size() == b.size() && differing == 0, fmt::format("{} output files differ", differing));

  // Checkpoint round trip, in memory and through a file.
  nc::Rng rng(81);
  cli::TensorMap tm;
  tm.emplace("a", nc::Tensor::randn({7, 5}, rng, 3.0));
  tm.emplace("b", nc::Tensor::full({1, 1}, 1.0 / 3.0));
  tm.emplace("c", nc::Tensor::randn({2, 9}, rng, 1e-3));
  cli::save_checkpoint(root / "ck.bin", tm);
  const auto back = cli::load_checkpoint(root / "ck.bin");
  bool exact = back.size() == tm.size();
  for (const auto& [name, t] : tm) {
    if (!back.count(name)) {
      exact = false;
      continue;
    }
    const auto& u = back.at(name);
    // Values are stored as float32; the round trip must reproduce the
    // stored values bit for bit.
    exact = exact && u.shape() == t.shape();
    for (std::size_t i = 0; exact && i < t.numel(); ++i)
      exact = static_cast<double>(static_cast<float>(t.data()[i])) == u.data()[i];
  }
  ch.expect(exact, "checkpoint values changed");
  ch.expect(cli::encode_checkpoint(back) == slurp(root / "ck.bin"), "checkpoint re-encode differs");

  // RDF text keeps six significant digits.
  std::mt19937_64 r(82);
  std::uniform_real_distribution<double> mag(-6.0, 3.0), sign(-1.0, 1.0);
  auto value = [&] { return (sign(r) < 0 ? -1.0 : 1.0) * std::pow(10.0, mag(r)); };
  std::size_t rdf_bad = 0;
  radar::SynthConfig sc;
  for (std::uint64_t i = 0; i < 200; ++i) {
    auto f = radar::synth_scene(83, sc, i);
    for (auto& p : f.radar.points) {
      p.doppler = value();
      p.rcs = value();
    }
    std::istringstream in(radar::format_frame(f));
    const auto g = radar::parse_frame(in);
    auto close6 = [](double x, double y) { return std::abs(x - y) <= 5e-6 * std::abs(x); };
    rdf_bad += g.radar.size() != f.radar.size() || g.boxes.size() != f.boxes.size();
    for (std::size_t k = 0; k < std::min(f.radar.size(), g.radar.size()); ++k) {
      const auto &p = f.radar.points[k], &q = g.radar.points[k];
      rdf_bad += !(close6(p.x, q.x) && close6(p.y, q.y) && close6(p.z, q.z) && close6(p.doppler, q.doppler) &&
                   close6(p.rcs, q.rcs));
    }
  }
  ch.expect(rdf_bad == 0, fmt::format("{} RDF values lost precision", rdf_bad));
  fs::remove_all(root);
  return ch.outcome(fmt::format("{} command runs, {} files byte-identical, checkpoint bit-exact, RDF at 6 digits, "
                                "{:.1f} s",
                                commands, a.size(), seconds_since(t0)));
}

// ---- 9: shipped defaults ----

Outcome default_configs() {
  Checks ch;
  const fs::path src(RADIFF_SOURCE_DIR);
  const auto shipped = cli::load_config(src / "configs/radiff.ini");
  ch.expect(cli::echo_config(shipped) == slurp(src / "tests/golden/config_echo.ini"), "echo differs from golden");
  ch.expect(cli::echo_config(cli::RunConfig{}) == cli::echo_config(shipped), "shipped config differs from defaults");

  const auto& v = shipped.vae;
  ch.expect(v.epochs == 300 && v.batch_size_fg == 128 && v.batch_size_bg == 32 && v.lr == 1e-3 &&
                v.optimizer == "adam" && v.scheduler == "steplr" && v.step_size == 45 && v.gamma == 0.5,
            "VAE optimisation values");
  ch.expect(v.lambda_reg == 1e-5 && v.lambda_den == 1e-4 && v.lambda_card == 5e-7 && v.lambda_d == 50.0 &&
                v.lambda_c == 0.1 && v.lambda_f == 0.05 && v.latent_dim == 4,
            "VAE loss weights");
  const auto& d = shipped.diffusion;
  ch.expect(d.epochs == 1000 && d.batch_size_fg == 128 && d.batch_size_bg == 16 && d.lr == 1e-4 &&
                d.optimizer == "adamw" && d.weight_decay == 1e-6 && d.scheduler == "onecycle",
            "LDM optimisation values");
  ch.expect(d.beta_start == 1e-4 && d.beta_end == 0.02 && d.beta_schedule == "linear" && d.steps == 1000,
            "LDM schedule values");
  const auto s = diffusion::make_schedule(d.beta_start, d.beta_end, d.steps);
  ch.expect(s.beta_at(1) == 1e-4 && s.beta_at(1000) == 0.02, "schedule endpoints");
  return ch.outcome("config echo matches golden, table values asserted");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"numerics", numerics},
      {"diffusion algebra", diffusion_algebra},
      {"metric oracles", metric_oracles},
      {"VAE training", vae_training},
      {"foreground fidelity", foreground_fidelity},
      {"background conditioning", background_conditioning},
      {"augmentation invariants", augmentation},
      {"reproducibility", reproducibility},
      {"default configs", default_configs},
  };
  std::set<int> selected;
  std::ofstream report;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--report" && i + 1 < argc) {
      report.open(argv[++i]);
    } else {
      selected.insert(std::atoi(argv[i]));
    }
  }

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    const auto line = fmt::format("{} criterion {} ({}): {}", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (report.is_open()) report << line << std::endl;
  }
  return failed == 0 ? 0 : 1;
}

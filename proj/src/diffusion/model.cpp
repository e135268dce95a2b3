#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "radiff/diffusion/diffusion.hpp"
#include "radiff/numcore/optim.hpp"

namespace radiff::diffusion {

namespace nc = numcore;
using nc::Segments;

void DenoiserConfig::validate() const {
  if (latent_dim == 0 || width == 0 || blocks == 0) throw std::invalid_argument("denoiser: sizes must be positive");
  if (heads == 0 || width % heads != 0) throw std::invalid_argument("denoiser: width must be divisible by heads");
  if (width % 2 != 0) throw std::invalid_argument("denoiser: width must be even");
}

Denoiser::Denoiser(ParamSet& params, const std::string& name, const DenoiserConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t w = cfg.width;
  lift_ = nc::Linear(params, name + ".lift", cfg.latent_dim, w, rng);
  time_mlp_ = nc::Mlp(params, name + ".time", {w, w, w}, rng);
  global_proj_ = nc::Linear(params, name + ".global", cfg.cond_width, w, rng);
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    const auto p = name + ".block" + std::to_string(b);
    self_norm_.emplace_back(params, p + ".self_norm", w);
    self_attn_.emplace_back(params, p + ".self", w, w, w, cfg.heads, rng);
    cross_norm_.emplace_back(params, p + ".cross_norm", w);
    cross_attn_.emplace_back(params, p + ".cross", w, cfg.cond_width, w, cfg.heads, rng);
    ff_.emplace_back(params, p + ".ff", w, 2 * w, rng);
  }
  out_norm_ = nc::LayerNorm(params, name + ".out_norm", w);
  // Zero-initialized output: the untrained model predicts no noise.
  head_ = nc::Linear(params, name + ".head", w, cfg.latent_dim, rng, 0.0);
}

Tensor Denoiser::operator()(const Tensor& zt, const std::vector<std::size_t>& offsets, std::span<const std::size_t> t,
                            const cond::ConditionBatch& c) const {
  const std::size_t scenes = offsets.size() - 1;
  if (t.size() != scenes || c.batch() != scenes) throw std::invalid_argument("denoiser: batch sizes differ");
  if (zt.cols() != cfg_.latent_dim) throw std::invalid_argument("denoiser: latent width mismatch");
  if (c.global.cols() != cfg_.cond_width || (c.tokens.rows() > 0 && c.tokens.cols() != cfg_.cond_width))
    throw std::invalid_argument("denoiser: condition width " + std::to_string(c.global.cols()) + " but expected " +
                                std::to_string(cfg_.cond_width));

  std::vector<double> tv(t.begin(), t.end());
  std::vector<std::size_t> scene_of_row;
  std::vector<double> has_cond;
  for (std::size_t s = 0; s < scenes; ++s) {
    const double flag = c.offsets[s + 1] > c.offsets[s] ? 1.0 : 0.0;
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
      scene_of_row.push_back(s);
      has_cond.push_back(flag);
    }
  }
  const Tensor emb = time_mlp_(nc::sinusoidal_embedding(tv, cfg_.width)) + global_proj_(c.global);
  Tensor x = lift_(zt) + nc::gather_rows(emb, scene_of_row);

  const Segments self_seg{offsets, offsets};
  const Segments cross_seg{offsets, c.offsets};
  const bool any_cond = c.tokens.defined() && c.tokens.rows() > 0;
  const std::size_t rows = zt.rows();
  const Tensor cond_mask = Tensor::from_data({rows, 1}, has_cond);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    const Tensor h = self_norm_[b](x);
    x = x + self_attn_[b](h, h, self_seg);
    if (any_cond) {
      // Scenes without tokens would otherwise pick up the output bias.
      x = x + cross_attn_[b](cross_norm_[b](x), c.tokens, cross_seg) * cond_mask;
    }
    x = ff_[b](x);
  }
  return head_(out_norm_(x));
}

std::string task_name(Task t) { return t == Task::Foreground ? "fg" : "bg"; }

Task parse_task(const std::string& s) {
  if (s == "fg") return Task::Foreground;
  if (s == "bg") return Task::Background;
  throw std::invalid_argument("unknown task '" + s + "' (expected fg or bg)");
}

// ---- conditional model ----

ConditionalLdm::ConditionalLdm(const LdmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  sched_ = make_schedule(cfg.beta_start, cfg.beta_end, cfg.steps);
  if (!(cfg.cond_dropout >= 0.0 && cfg.cond_dropout <= 1.0))
    throw std::invalid_argument("ldm: condition dropout must lie in [0, 1]");
  Rng rng(seed);
  if (cfg.task == Task::Foreground) {
    if (cfg.layout.width != cfg.denoiser.cond_width)
      throw std::invalid_argument("ldm: layout width must equal the denoiser condition width");
    layout_ = cond::LayoutEncoder(params_, "layout", cfg.layout, rng);
  } else {
    if (cfg.pillars.width != cfg.denoiser.cond_width)
      throw std::invalid_argument("ldm: pillar width must equal the denoiser condition width");
    pillars_ = cond::PillarEncoder(params_, "pillars", cfg.pillars, rng);
  }
  denoiser_ = Denoiser(params_, "denoiser", cfg.denoiser, rng);
  mean_.assign(cfg.denoiser.latent_dim, 0.0);
  std_.assign(cfg.denoiser.latent_dim, 1.0);
}

cond::ConditionBatch ConditionalLdm::condition(std::span<const SceneCondition> scenes,
                                               const std::vector<bool>& drop) const {
  const std::size_t n = scenes.size();
  const std::size_t w = cfg_.denoiser.cond_width;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (drop.empty() || !drop.at(i)) keep.push_back(i);
  if (keep.empty()) return cond::empty_condition(n, w);

  cond::ConditionBatch enc;
  if (cfg_.task == Task::Foreground) {
    std::vector<cond::LayoutSet> sets;
    for (auto i : keep) sets.push_back(scenes[i].layout);
    enc = layout_(sets);
  } else {
    std::vector<cond::PillarGrid> grids;
    for (auto i : keep) grids.push_back(scenes[i].pillars);
    enc = pillars_(grids);
  }
  if (keep.size() == n) return enc;

  // Re-expand to all scenes with empty entries for the dropped ones.
  cond::ConditionBatch out;
  out.offsets.assign(1, 0);
  std::vector<std::size_t> token_rows, global_rows;
  std::vector<double> global_mask;
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (k < keep.size() && keep[k] == i) {
      for (std::size_t r = enc.offsets[k]; r < enc.offsets[k + 1]; ++r) token_rows.push_back(r);
      global_rows.push_back(k);
      global_mask.push_back(1.0);
      ++k;
    } else {
      global_rows.push_back(0);
      global_mask.push_back(0.0);
    }
    out.offsets.push_back(token_rows.size());
  }
  out.tokens = token_rows.empty() ? Tensor::zeros({0, w}) : nc::gather_rows(enc.tokens, token_rows);
  out.global = nc::gather_rows(enc.global, global_rows) * Tensor::from_data({n, 1}, global_mask);
  return out;
}

Tensor ConditionalLdm::loss(const Tensor& z0, const std::vector<std::size_t>& offsets,
                            std::span<const SceneCondition> scenes, Rng& rng) const {
  std::vector<bool> drop(scenes.size(), false);
  if (cfg_.cond_dropout > 0.0) {
    std::bernoulli_distribution coin(cfg_.cond_dropout);
    for (std::size_t i = 0; i < drop.size(); ++i) drop[i] = coin(rng);
  }
  const auto c = condition(scenes, drop);
  return ldm_loss(z0, offsets, sched_, rng, [&](const Tensor& zt, std::span<const std::size_t> t) {
    return denoiser_(zt, offsets, t, c);
  });
}

Tensor ConditionalLdm::generate(std::span<const SceneCondition> scenes, std::size_t tokens, std::uint64_t seed,
                                bool empty_condition) const {
  nc::NoGradGuard guard;
  const std::size_t n = scenes.size();
  const auto c = empty_condition ? cond::empty_condition(n, cfg_.denoiser.cond_width) : condition(scenes);
  std::vector<std::size_t> offsets(n + 1);
  for (std::size_t i = 0; i <= n; ++i) offsets[i] = i * tokens;
  const Tensor z = sample(sched_, n, tokens, cfg_.denoiser.latent_dim, seed,
                          [&](const Tensor& zt, std::span<const std::size_t> t) { return denoiser_(zt, offsets, t, c); });
  return destandardize(z);
}

void ConditionalLdm::set_latent_stats(std::vector<double> mean, std::vector<double> stddev) {
  if (mean.size() != cfg_.denoiser.latent_dim || stddev.size() != cfg_.denoiser.latent_dim)
    throw std::invalid_argument("ldm: latent statistics have the wrong length");
  for (double s : stddev)
    if (!(s > 0.0)) throw std::invalid_argument("ldm: latent standard deviations must be positive");
  mean_ = std::move(mean);
  std_ = std::move(stddev);
}

Tensor ConditionalLdm::standardize(const Tensor& z) const {
  std::vector<double> inv(std_.size());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / std_[i];
  const std::size_t d = mean_.size();
  return (z - Tensor::from_data({1, d}, mean_)) * Tensor::from_data({1, d}, std::move(inv));
}

Tensor ConditionalLdm::destandardize(const Tensor& z) const {
  const std::size_t d = mean_.size();
  return z * Tensor::from_data({1, d}, std_) + Tensor::from_data({1, d}, mean_);
}

// ---- training ----

LdmTrainResult train_ldm(ConditionalLdm& model, std::span<const Tensor> latents,
                         std::span<const SceneCondition> conditions, const LdmTrainConfig& tc, std::uint64_t seed,
                         const LdmEpochCallback& on_epoch) {
  if (latents.empty()) throw std::invalid_argument("train_ldm: no latents");
  if (latents.size() != conditions.size()) throw std::invalid_argument("train_ldm: latents and conditions differ");
  if (tc.epochs == 0 || tc.batch_size == 0) throw std::invalid_argument("train_ldm: epochs and batch size must be positive");
  const std::size_t m = latents[0].rows(), d = latents[0].cols();
  if (d != model.config().denoiser.latent_dim) throw std::invalid_argument("train_ldm: latent width mismatch");
  for (const auto& z : latents)
    if (z.rows() != m || z.cols() != d) throw std::invalid_argument("train_ldm: latents differ in shape");

  // Per-dimension statistics over every token.
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  const double count = static_cast<double>(latents.size() * m);
  for (const auto& z : latents)
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) mean[c] += z.at(r, c) / count;
  for (const auto& z : latents)
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < d; ++c) var[c] += (z.at(r, c) - mean[c]) * (z.at(r, c) - mean[c]) / count;
  for (auto& v : var) v = std::sqrt(std::max(v, 1e-12));
  model.set_latent_stats(mean, var);

  std::vector<Tensor> standardized;
  for (const auto& z : latents) standardized.push_back(model.standardize(z.detach()));

  nc::AdamOptions opts;
  opts.lr = tc.lr;
  opts.weight_decay = tc.weight_decay;
  opts.decoupled = true;
  nc::Adam adam(model.params(), opts);
  const std::size_t n = latents.size();
  const std::size_t batches = (n + tc.batch_size - 1) / tc.batch_size;
  const auto schedule = nc::LrSchedule::one_cycle(tc.lr, tc.epochs * batches);

  LdmTrainResult result;
  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::size_t step = 0;
  auto good = model.params().snapshot();
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double avg = 0.0;
    for (std::size_t start = 0; start < n; start += tc.batch_size) {
      const std::size_t end = std::min(n, start + tc.batch_size);
      std::vector<Tensor> parts;
      std::vector<SceneCondition> conds;
      std::vector<std::size_t> offsets{0};
      for (std::size_t i = start; i < end; ++i) {
        parts.push_back(standardized[order[i]]);
        conds.push_back(conditions[order[i]]);
        offsets.push_back(offsets.back() + m);
      }
      adam.set_lr(nc::lr_value(schedule, step++));
      model.params().zero_grad();
      const Tensor loss = model.loss(nc::concat_rows(parts), offsets, conds, rng);
      const double value = loss.item();
      try {
        if (!std::isfinite(value)) throw std::runtime_error("non-finite loss");
        nc::backward(loss);
        adam.step();
      } catch (const std::runtime_error& e) {
        model.params().restore(good);
        result.diverged = true;
        result.message = "epoch " + std::to_string(epoch) + ": " + e.what();
        return result;
      }
      avg += value * static_cast<double>(end - start) / static_cast<double>(n);
    }
    result.history.push_back(avg);
    good = model.params().snapshot();
    if (on_epoch) on_epoch(epoch, avg);
  }
  return result;
}

}  // namespace radiff::diffusion

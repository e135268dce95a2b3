#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "radiff/conditioning/conditioning.hpp"
#include "radiff/numcore/layers.hpp"

namespace radiff::diffusion {

using numcore::ParamSet;
using numcore::Rng;
using numcore::Tensor;

// Tables are indexed by t - 1 for t = 1..T.
struct DiffusionSchedule {
  std::size_t T = 0;
  std::vector<double> beta, alpha, alpha_bar;

  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  double alpha_bar_at(std::size_t t) const { return alpha_bar.at(t - 1); }
};

// Linear betas from beta_start (t = 1) to beta_end (t = T).
DiffusionSchedule make_schedule(double beta_start = 1e-4, double beta_end = 0.02, std::size_t steps = 1000);

// sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& z0, std::size_t t, const Tensor& eps, const DiffusionSchedule& s);
// (z_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t).
Tensor p_mean(const Tensor& zt, std::size_t t, const Tensor& eps_hat, const DiffusionSchedule& s);
// p_mean plus sqrt(beta_t) noise; the t = 1 step adds none.
Tensor p_sample_step(const Tensor& zt, std::size_t t, const Tensor& eps_hat, const DiffusionSchedule& s, Rng& rng);

struct DenoiserConfig {
  std::size_t latent_dim = 4;
  std::size_t width = 128;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  std::size_t cond_width = 128;
  void validate() const;
};

// Token denoiser: lift, timestep + global condition embedding added to
// every token, then blocks of self-attention, cross-attention to the
// condition tokens and feed-forward, all pre-norm with residuals.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(ParamSet& params, const std::string& name, const DenoiserConfig& cfg, Rng& rng);

  // Latent rows of scene b are [offsets[b], offsets[b+1]); t has one entry
  // per scene. Scenes without condition tokens get no cross-attention term.
  Tensor operator()(const Tensor& zt, const std::vector<std::size_t>& offsets, std::span<const std::size_t> t,
                    const cond::ConditionBatch& c) const;
  const DenoiserConfig& config() const { return cfg_; }

 private:
  DenoiserConfig cfg_;
  numcore::Linear lift_, global_proj_, head_;
  numcore::Mlp time_mlp_;
  std::vector<numcore::LayerNorm> self_norm_, cross_norm_;
  std::vector<numcore::MultiHeadAttention> self_attn_, cross_attn_;
  std::vector<numcore::FeedForward> ff_;
  numcore::LayerNorm out_norm_;
};

// Noise prediction given noisy latents and one timestep per scene.
using EpsPredictor = std::function<Tensor(const Tensor& zt, std::span<const std::size_t> t)>;

// Uniform t per scene, Gaussian noise, squared error between the true and
// predicted noise summed over latent dimensions and averaged over tokens.
Tensor ldm_loss(const Tensor& z0, const std::vector<std::size_t>& offsets, const DiffusionSchedule& s, Rng& rng,
                const EpsPredictor& predict);

// Full reverse chain from z_T ~ N(0, I); `tokens` rows per scene.
Tensor sample(const DiffusionSchedule& s, std::size_t scenes, std::size_t tokens, std::size_t dim, std::uint64_t seed,
              const EpsPredictor& predict);

// ---- task-level model ----

enum class Task { Foreground, Background };

std::string task_name(Task t);
Task parse_task(const std::string& s);

// Foreground scenes use `layout`, background scenes use `pillars`.
struct SceneCondition {
  cond::LayoutSet layout;
  cond::PillarGrid pillars;
};

struct LdmConfig {
  Task task = Task::Foreground;
  DenoiserConfig denoiser;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::size_t steps = 1000;
  cond::LayoutEncoderConfig layout;
  cond::PillarConfig pillars;
  // Probability of training a scene with the empty condition.
  double cond_dropout = 0.0;
};

class ConditionalLdm {
 public:
  ConditionalLdm() = default;
  ConditionalLdm(const LdmConfig& cfg, std::uint64_t seed);

  // Encodes the scenes' conditions; scenes flagged in `drop` get the empty
  // condition.
  cond::ConditionBatch condition(std::span<const SceneCondition> scenes, const std::vector<bool>& drop = {}) const;
  Tensor predict(const Tensor& zt, const std::vector<std::size_t>& offsets, std::span<const std::size_t> t,
                 const cond::ConditionBatch& c) const {
    return denoiser_(zt, offsets, t, c);
  }
  // Latents in model units (standardized) per scene, all with M rows.
  Tensor loss(const Tensor& z0, const std::vector<std::size_t>& offsets, std::span<const SceneCondition> scenes,
              Rng& rng) const;
  // Samples M latent tokens per scene and maps them back to VAE units.
  // `empty_condition` requests the unconditional path.
  Tensor generate(std::span<const SceneCondition> scenes, std::size_t tokens, std::uint64_t seed,
                  bool empty_condition = false) const;

  void set_latent_stats(std::vector<double> mean, std::vector<double> stddev);
  const std::vector<double>& latent_mean() const { return mean_; }
  const std::vector<double>& latent_std() const { return std_; }
  Tensor standardize(const Tensor& z) const;
  Tensor destandardize(const Tensor& z) const;

  const LdmConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return sched_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  LdmConfig cfg_;
  DiffusionSchedule sched_;
  ParamSet params_;
  cond::LayoutEncoder layout_;
  cond::PillarEncoder pillars_;
  Denoiser denoiser_;
  std::vector<double> mean_, std_;
};

struct LdmTrainConfig {
  std::size_t epochs = 1000;
  std::size_t batch_size = 128;
  double lr = 1e-4;
  double weight_decay = 1e-6;
};

struct LdmTrainResult {
  std::vector<double> history;  // epoch-average loss
  bool diverged = false;
  std::string message;
};

using LdmEpochCallback = std::function<void(std::size_t epoch, double avg_loss)>;

// AdamW with a one-cycle schedule over all steps. Latents are per scene
// (M x d_z each, VAE units); their per-dimension statistics are stored in
// the model and training runs on standardized values.
LdmTrainResult train_ldm(ConditionalLdm& model, std::span<const Tensor> latents,
                         std::span<const SceneCondition> conditions, const LdmTrainConfig& tc, std::uint64_t seed,
                         const LdmEpochCallback& on_epoch = {});

}  // namespace radiff::diffusion

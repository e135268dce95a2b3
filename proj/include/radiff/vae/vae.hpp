#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "radiff/numcore/layers.hpp"
#include "radiff/radarframe/types.hpp"

namespace radiff::vae {

using numcore::ParamSet;
using numcore::Rng;
using numcore::Tensor;
using radar::RadarPointCloud;
using radar::Vec3;

struct VaeConfig {
  std::size_t num_points = 128;              // N, padded input size
  std::vector<std::size_t> factors{4, 4};    // f_s per stage
  std::size_t width = 64;                    // d
  std::size_t latent_dim = 4;                // d_z
  std::size_t heads = 4;
  double lambda_reg = 1e-5;
  double lambda_den = 1e-4;
  double lambda_card = 5e-7;
  double lambda_d = 50.0;
  double lambda_c = 0.1;
  double lambda_f = 0.05;

  std::size_t stages() const { return factors.size(); }
  // Upsampling cap of a stage: twice its factor.
  std::size_t u_max(std::size_t stage) const { return 2 * factors.at(stage); }
  // Nominal point count after `level` downsampling stages (level 0 = N).
  std::size_t level_size(std::size_t level) const;
  std::size_t latent_count() const { return level_size(stages()); }
  void validate() const;
};

// ---- farthest point sampling ----

struct CollapsedAssignment {
  std::vector<std::size_t> kept;                  // selection order
  std::vector<std::vector<std::size_t>> members;  // C(p) per kept point, ascending index
  std::size_t u(std::size_t i) const { return members[i].size(); }
};

// Greedy farthest-point selection from `start`; every discarded point joins
// the set of its nearest kept point (ties to the earlier kept point).
CollapsedAssignment fps_downsample(std::span<const Vec3> points, std::size_t count, std::size_t start = 0);

// Like fps_downsample, but when fewer than `count` points exist the
// selection order is repeated; the repeats get empty collapse sets.
CollapsedAssignment fps_downsample_padded(std::span<const Vec3> points, std::size_t count);

// Mean distance of the members of each set to their kept point, 0 if empty.
std::vector<double> mean_member_distance(std::span<const Vec3> points, const CollapsedAssignment& a);

// One encoder stage over a batch: a group per kept point. Rows refer to the
// previous level's rows (all frames concatenated).
struct StageGroups {
  std::vector<Vec3> centers;
  std::vector<std::size_t> center_rows;
  std::vector<std::size_t> member_offsets{0};
  std::vector<std::size_t> member_rows;
  std::vector<Vec3> member_pos;
  std::size_t groups() const { return centers.size(); }
  std::size_t members(std::size_t g) const { return member_offsets[g + 1] - member_offsets[g]; }
};

// Groups members in a canonical (coordinate-sorted) order so embeddings do
// not depend on the input order of C(p).
void add_group(StageGroups& sg, const Vec3& center, std::size_t center_row, std::span<const Vec3> member_pos,
               std::span<const std::size_t> member_rows);

class EncoderStage {
 public:
  EncoderStage() = default;
  EncoderStage(ParamSet& params, const std::string& name, std::size_t width, std::size_t heads, std::size_t u_max,
               Rng& rng);

  // Embeds min(u, U_max) / U_max.
  Tensor density(std::span<const double> u) const;
  // Offsets of C(p) relative to p as direction and distance, MLP, in-set
  // self-attention, max-pool; empty sets yield the learned null token.
  Tensor local_position(const StageGroups& sg) const;
  // Attention from p over C(p) and p itself with relative-position terms
  // on keys and values.
  Tensor ancestor(const Tensor& prev_features, const StageGroups& sg) const;
  // Fuses the three embeddings and the kept positions.
  Tensor operator()(const Tensor& prev_features, const StageGroups& sg, std::span<const double> u) const;

 private:
  std::size_t u_max_ = 8;
  numcore::Mlp density_mlp_, local_mlp_, relpos_mlp_, fuse_mlp_;
  numcore::MultiHeadAttention local_attn_, ancestor_attn_;
  numcore::LayerNorm fuse_norm_;
  Tensor null_token_;
};

// Per-point upsampling record of one decoder stage.
struct UpsampleLevel {
  Tensor positions;                      // parents, n x 3
  std::vector<std::size_t> offsets{0};   // parent rows per frame
  Tensor pred_count;                     // softplus output, n x 1
  Tensor pred_mean_dist;                 // mean |offset| of children 1..k-1, n x 1
  std::vector<std::size_t> k;            // children per parent
};

class DecoderStage {
 public:
  DecoderStage() = default;
  DecoderStage(ParamSet& params, const std::string& name, std::size_t width, std::size_t factor, std::size_t u_max,
               Rng& rng);
  // Returns child positions and features; fills `level` with the parent
  // side of the stage.
  std::pair<Tensor, Tensor> operator()(const Tensor& positions, const Tensor& features,
                                       const std::vector<std::size_t>& offsets, UpsampleLevel& level,
                                       std::vector<std::size_t>& child_offsets) const;

 private:
  std::size_t u_max_ = 8;
  numcore::Linear count_head_, offset_head_;
  numcore::Mlp child_mlp_;
  Tensor slots_;
};

// ---- model ----

struct EncodeResult {
  Tensor mu, logvar, z;                // M*B x d_z
  std::vector<std::size_t> offsets;    // latent rows per frame
  // levels[l][f]: frame f's points after l stages (levels[0] = input).
  std::vector<std::vector<std::vector<Vec3>>> levels;
  // For l >= 1: |C(p)| and mean member distance per kept point.
  std::vector<std::vector<std::vector<double>>> counts, mean_dist;
  std::vector<std::vector<radar::RadarPoint>> inputs;  // valid input points per frame
};

struct Structured {
  Tensor coords;    // rows x 3
  Tensor features;  // rows x d
};

struct DecodeResult {
  Tensor positions;                    // output points x 3
  Tensor features;                     // output points x 2, in [-1, 1]
  std::vector<std::size_t> offsets;    // output rows per frame
  // upsample[l] is the stage that produces level l from level l+1;
  // upsample[l].positions are the decoded points of level l+1.
  std::vector<UpsampleLevel> upsample;
  Tensor latent_coords;                // level S positions
  std::vector<std::size_t> latent_offsets;
};

class Vae {
 public:
  Vae() = default;
  Vae(const VaeConfig& cfg, std::uint64_t seed);

  // Pass sample = false to return z = mu.
  EncodeResult encode(std::span<const RadarPointCloud> batch, std::uint64_t noise_seed, bool sample = true) const;
  Structured latent_to_structured(const Tensor& z, const std::vector<std::size_t>& offsets) const;
  DecodeResult decode(const Tensor& z, const std::vector<std::size_t>& offsets) const;
  // Decoded clouds with valid masks, still in normalized units.
  std::vector<RadarPointCloud> to_clouds(const DecodeResult& d) const;

  const EncoderStage& encoder_stage(std::size_t s) const { return enc_.at(s); }
  const VaeConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

 private:
  VaeConfig cfg_;
  ParamSet params_;
  numcore::Linear input_lift_, head_;
  std::vector<EncoderStage> enc_;
  numcore::Mlp point_mlp_, coord_mlp_, feature_mlp_;
  std::vector<DecoderStage> dec_;
  numcore::Linear out_head_;
};

// ---- losses ----

// Differentiable Chamfer distance of predicted rows (per frame) against
// fixed reference sets, averaged over frames. Per frame it equals
// metrics::chamfer of the predicted values and the reference.
Tensor chamfer_loss(const Tensor& pred, const std::vector<std::size_t>& offsets,
                    const std::vector<std::vector<Vec3>>& reference);

// Mean squared feature error against each predicted point's nearest
// reference point, averaged over frames.
Tensor feature_loss(const Tensor& pred_positions, const Tensor& pred_features, const std::vector<std::size_t>& offsets,
                    const std::vector<std::vector<radar::RadarPoint>>& reference);

struct DensityTerm {
  Tensor pred_count, pred_mean_dist;   // n x 1
  std::vector<double> count, mean_dist;  // matched targets, one per row
  std::vector<std::size_t> offsets{0};   // rows per frame
};

// Per stage: frame mean of |u - u~| + lambda_d |d - d~| averaged over
// frames, then summed over stages.
Tensor density_loss(std::span<const DensityTerm> stages, double lambda_d);

double cardinality_loss(std::span<const std::size_t> counts, std::span<const std::size_t> predicted);

// 0.5 * sum_dims (mu^2 + exp(lv) - 1 - lv), averaged over rows.
Tensor kl_regularizer(const Tensor& mu, const Tensor& logvar);

struct LossBreakdown {
  double cd = 0.0, cd_intermediate = 0.0, feature = 0.0, density = 0.0, cardinality = 0.0, kl = 0.0, total = 0.0;
};

struct VaeLoss {
  Tensor total;
  LossBreakdown parts;
};

VaeLoss vae_loss(const EncodeResult& enc, const DecodeResult& dec, const VaeConfig& cfg);

// ---- training ----

struct VaeTrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::size_t step_size = 45;
  double gamma = 0.5;
};

struct VaeTrainResult {
  std::vector<LossBreakdown> history;  // epoch averages
  bool diverged = false;
  std::string message;
};

using EpochCallback = std::function<void(std::size_t epoch, const LossBreakdown& avg)>;

// Adam with StepLR; frames without valid points are skipped. On a
// non-finite loss or gradient the parameters of the last finished epoch
// are restored.
VaeTrainResult train_vae(Vae& model, std::span<const RadarPointCloud> data, const VaeTrainConfig& tc,
                         std::uint64_t seed, const EpochCallback& on_epoch = {});

}  // namespace radiff::vae

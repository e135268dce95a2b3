#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "radiff/cli/config.hpp"
#include "radiff/diffusion/diffusion.hpp"
#include "radiff/radarframe/types.hpp"
#include "radiff/vae/vae.hpp"

namespace radiff::cli {

using diffusion::Task;
using radar::Frame;
using radar::RadarPointCloud;

// Independent seed for item `index` of RNG consumer `stream`.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

vae::VaeConfig vae_config(const RunConfig& cfg);
vae::VaeTrainConfig vae_train_config(const RunConfig& cfg, Task task);
diffusion::LdmConfig ldm_config(const RunConfig& cfg, Task task);
diffusion::LdmTrainConfig ldm_train_config(const RunConfig& cfg, Task task);

// Radar points of frame i, merged with up to sweeps - 1 preceding frames.
RadarPointCloud radar_cloud(std::span<const Frame> frames, std::size_t i, std::size_t sweeps);
// The points inside the frame's boxes (fg) or outside them (bg).
RadarPointCloud task_cloud(const RadarPointCloud& cloud, const Frame& frame, Task task);
// Clipped to the range, normalized to [-1, 1] and padded or subsampled to N.
RadarPointCloud model_input(const RadarPointCloud& cloud, const RunConfig& cfg, std::uint64_t seed);
// Decoded valid points mapped back to metric units.
RadarPointCloud model_output(const RadarPointCloud& normalized, const RunConfig& cfg);

diffusion::SceneCondition scene_condition(const Frame& frame, Task task, const RunConfig& cfg, std::uint64_t seed);

struct TaskDataset {
  std::vector<RadarPointCloud> inputs;                  // model inputs
  std::vector<diffusion::SceneCondition> conditions;    // aligned with inputs
  std::vector<std::uint64_t> frame_ids;
};

// Frames whose task cloud is empty are left out. Foreground scenes are
// topped up PolarMix-style when augment.polar_target is set.
TaskDataset build_task_dataset(std::span<const Frame> frames, Task task, const RunConfig& cfg, std::uint64_t seed);

// Posterior means, M x d_z per frame.
std::vector<numcore::Tensor> encode_latents(const vae::Vae& model, std::span<const RadarPointCloud> inputs,
                                            std::size_t batch_size);
// Decodes `scenes` stacked latent sets into metric clouds.
std::vector<RadarPointCloud> decode_latents(const vae::Vae& model, const numcore::Tensor& z, std::size_t scenes,
                                            const RunConfig& cfg);

}  // namespace radiff::cli

#include "radiff/cli/pipeline.hpp"

#include <algorithm>
#include <stdexcept>

#include "radiff/augment/augment.hpp"
#include "radiff/conditioning/conditioning.hpp"
#include "radiff/radarframe/frame_ops.hpp"

namespace radiff::cli {

namespace nc = numcore;

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 over the combined key
  std::uint64_t x = seed ^ (stream * 0x9e3779b97f4a7c15ULL) ^ (index * 0xd1b54a32d192ed03ULL);
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

vae::VaeConfig vae_config(const RunConfig& cfg) {
  vae::VaeConfig v;
  v.num_points = cfg.data.num_points;
  v.factors = cfg.vae.factors;
  v.width = cfg.vae.width;
  v.latent_dim = cfg.vae.latent_dim;
  v.heads = cfg.vae.heads;
  v.lambda_reg = cfg.vae.lambda_reg;
  v.lambda_den = cfg.vae.lambda_den;
  v.lambda_card = cfg.vae.lambda_card;
  v.lambda_d = cfg.vae.lambda_d;
  v.lambda_c = cfg.vae.lambda_c;
  v.lambda_f = cfg.vae.lambda_f;
  v.validate();
  return v;
}

vae::VaeTrainConfig vae_train_config(const RunConfig& cfg, Task task) {
  vae::VaeTrainConfig t;
  t.epochs = cfg.vae.epochs;
  t.batch_size = task == Task::Foreground ? cfg.vae.batch_size_fg : cfg.vae.batch_size_bg;
  t.lr = cfg.vae.lr;
  t.step_size = cfg.vae.step_size;
  t.gamma = cfg.vae.gamma;
  return t;
}

diffusion::LdmConfig ldm_config(const RunConfig& cfg, Task task) {
  diffusion::LdmConfig c;
  c.task = task;
  c.denoiser.latent_dim = cfg.vae.latent_dim;
  c.denoiser.width = cfg.diffusion.width;
  c.denoiser.blocks = cfg.diffusion.blocks;
  c.denoiser.heads = cfg.diffusion.heads;
  c.denoiser.cond_width = task == Task::Foreground ? cfg.layout.width : cfg.pillars.width;
  c.beta_start = cfg.diffusion.beta_start;
  c.beta_end = cfg.diffusion.beta_end;
  c.steps = cfg.diffusion.steps;
  c.layout.width = cfg.layout.width;
  c.layout.heads = cfg.layout.heads;
  c.layout.layers = cfg.layout.layers;
  c.layout.num_classes = cfg.layout.num_classes;
  c.pillars.cell = cfg.pillars.cell;
  c.pillars.max_points = cfg.pillars.max_points;
  c.pillars.max_tokens = cfg.pillars.max_tokens;
  c.pillars.width = cfg.pillars.width;
  c.cond_dropout = cfg.diffusion.cond_dropout;
  return c;
}

diffusion::LdmTrainConfig ldm_train_config(const RunConfig& cfg, Task task) {
  diffusion::LdmTrainConfig t;
  t.epochs = cfg.diffusion.epochs;
  t.batch_size = task == Task::Foreground ? cfg.diffusion.batch_size_fg : cfg.diffusion.batch_size_bg;
  t.lr = cfg.diffusion.lr;
  t.weight_decay = cfg.diffusion.weight_decay;
  return t;
}

RadarPointCloud radar_cloud(std::span<const Frame> frames, std::size_t i, std::size_t sweeps) {
  if (i >= frames.size()) throw std::out_of_range("radar_cloud: frame index");
  if (sweeps <= 1) return frames[i].radar;
  const std::size_t first = i + 1 >= sweeps ? i + 1 - sweeps : 0;
  const auto window = frames.subspan(first, i + 1 - first);
  const auto poses = radar::relative_poses_from_ego(window);
  return radar::aggregate_sweeps(window, window.size(), poses).cloud;
}

RadarPointCloud task_cloud(const RadarPointCloud& cloud, const Frame& frame, Task task) {
  auto split = radar::split_fg_bg(cloud, frame.boxes);
  return task == Task::Foreground ? std::move(split.foreground) : std::move(split.background);
}

RadarPointCloud model_input(const RadarPointCloud& cloud, const RunConfig& cfg, std::uint64_t seed) {
  auto norm = radar::normalize(radar::clip_to_range(cloud, cfg.range()), cfg.range(), cfg.features());
  // Features beyond the configured ranges saturate, like the decoder output.
  for (auto& p : norm.points) {
    p.doppler = std::clamp(p.doppler, -1.0, 1.0);
    p.rcs = std::clamp(p.rcs, -1.0, 1.0);
  }
  return radar::pad_or_downsample(norm, cfg.data.num_points, seed);
}

RadarPointCloud model_output(const RadarPointCloud& normalized, const RunConfig& cfg) {
  const auto valid = RadarPointCloud::from_points(normalized.valid_points());
  return radar::denormalize(valid, cfg.range(), cfg.features());
}

diffusion::SceneCondition scene_condition(const Frame& frame, Task task, const RunConfig& cfg, std::uint64_t seed) {
  diffusion::SceneCondition c;
  if (task == Task::Foreground) {
    const cond::BoxNorm norm{cfg.layout.size_max, cfg.layout.v_max};
    c.layout = cond::build_layout_set(frame.boxes, cfg.layout.objects, cfg.range(), cfg.layout.num_classes, norm, seed);
  } else {
    c.pillars = cond::pillarize(frame.lidar, cfg.range(), cfg.pillars.cell, cfg.pillars.max_points, seed);
  }
  return c;
}

TaskDataset build_task_dataset(std::span<const Frame> frames, Task task, const RunConfig& cfg, std::uint64_t seed) {
  const bool fg = task == Task::Foreground;
  if (fg && std::none_of(frames.begin(), frames.end(), [](const Frame& f) { return !f.boxes.empty(); }))
    throw std::invalid_argument("foreground task needs frames with boxes, but the data has none");

  augment::GtDatabase db;
  const bool fill = fg && cfg.augment.polar_target > 0;
  if (fill) db = augment::build_gt_database(std::vector<Frame>(frames.begin(), frames.end()));

  TaskDataset out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    Frame frame = frames[i];
    frame.radar = radar_cloud(frames, i, cfg.data.sweeps);
    if (fill && !db.entries.empty())
      frame = augment::polar_mix_fill(frame, db, cfg.augment.polar_target, stream_seed(seed, 1, i),
                                      cfg.augment.polar_sectors)
                  .frame;
    const auto cloud = task_cloud(frame.radar, frame, task);
    if (radar::clip_to_range(cloud, cfg.range()).valid_count() == 0) continue;
    out.inputs.push_back(model_input(cloud, cfg, stream_seed(seed, 2, i)));
    out.conditions.push_back(scene_condition(frame, task, cfg, stream_seed(seed, 3, i)));
    out.frame_ids.push_back(frame.frame_id);
  }
  return out;
}

std::vector<nc::Tensor> encode_latents(const vae::Vae& model, std::span<const RadarPointCloud> inputs,
                                       std::size_t batch_size) {
  nc::NoGradGuard guard;
  std::vector<nc::Tensor> out;
  const std::size_t m = model.config().latent_count();
  const std::size_t d = model.config().latent_dim;
  for (std::size_t start = 0; start < inputs.size(); start += batch_size) {
    const auto batch = inputs.subspan(start, std::min(batch_size, inputs.size() - start));
    const auto enc = model.encode(batch, 0, false);
    const auto mu = enc.mu.data();
    for (std::size_t f = 0; f < batch.size(); ++f) {
      std::vector<double> rows(mu.begin() + static_cast<std::ptrdiff_t>(enc.offsets[f] * d),
                               mu.begin() + static_cast<std::ptrdiff_t>(enc.offsets[f + 1] * d));
      out.push_back(nc::Tensor::from_data({m, d}, std::move(rows)));
    }
  }
  return out;
}

std::vector<RadarPointCloud> decode_latents(const vae::Vae& model, const nc::Tensor& z, std::size_t scenes,
                                            const RunConfig& cfg) {
  nc::NoGradGuard guard;
  const std::size_t m = model.config().latent_count();
  if (z.rows() != scenes * m) throw std::invalid_argument("decode_latents: latent rows do not match the scene count");
  std::vector<std::size_t> offsets(scenes + 1);
  for (std::size_t i = 0; i <= scenes; ++i) offsets[i] = i * m;
  const auto clouds = model.to_clouds(model.decode(z, offsets));
  std::vector<RadarPointCloud> out;
  for (const auto& c : clouds) out.push_back(model_output(c, cfg));
  return out;
}

}  // namespace radiff::cli

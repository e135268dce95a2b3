#include "radiff/cli/commands.hpp"

#include <algorithm>
#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "radiff/augment/augment.hpp"
#include "radiff/cli/checkpoint.hpp"
#include "radiff/cli/pipeline.hpp"
#include "radiff/metrics/metrics.hpp"
#include "radiff/radarframe/frame_ops.hpp"
#include "radiff/radarframe/rdf.hpp"
#include "radiff/radarframe/synth.hpp"

namespace radiff::cli {

namespace nc = numcore;
using json = nlohmann::json;

namespace {

// RNG streams, so every consumer of the top-level seed is independent.
enum Stream : std::uint64_t { kVaeInit = 10, kVaeTrain, kLdmInit, kLdmTrain, kData, kSample, kInsert, kGlobal };

std::vector<fs::path> rdf_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".rdf") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Frame> load_all(const std::vector<fs::path>& files) {
  std::vector<Frame> out;
  for (const auto& f : files) out.push_back(radar::load_frame(f));
  return out;
}

// Output directories may only be cleared when they hold nothing but files
// this tool writes.
void prepare_output_dir(const fs::path& dir, bool force) {
  if (dir.empty()) throw std::invalid_argument("an output directory is required");
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw std::runtime_error(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw std::runtime_error(dir.string() + " is not empty (use --force to replace it)");
      for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        const bool ours = e.path().extension() == ".rdf" || name == "manifest.json" || name == "db";
        if (!ours) throw std::runtime_error("refusing to clear " + dir.string() + ": it contains " + name);
      }
      for (const auto& e : fs::directory_iterator(dir)) fs::remove_all(e.path());
    }
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string frame_name(std::size_t i) { return fmt::format("frame_{:06d}.rdf", i); }

fs::path history_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".history.json"); }

void load_vae(vae::Vae& model, const fs::path& path) {
  if (path.empty()) throw std::invalid_argument("a VAE checkpoint (--vae) is required");
  assign(model.params(), load_checkpoint(path));
}

std::vector<double> row_values(const nc::Tensor& t) { return {t.data().begin(), t.data().end()}; }

nc::Tensor row_tensor(const std::vector<double>& v) { return nc::Tensor::from_data({1, v.size()}, v); }

bool has_boxes(const std::vector<Frame>& frames) {
  return std::any_of(frames.begin(), frames.end(), [](const Frame& f) { return !f.boxes.empty(); });
}

bool has_lidar(const std::vector<Frame>& frames) {
  return std::any_of(frames.begin(), frames.end(), [](const Frame& f) { return !f.lidar.empty(); });
}

void check_conditions(const std::vector<Frame>& frames, Task task) {
  if (task == Task::Foreground && !has_boxes(frames))
    throw std::invalid_argument("the foreground task is conditioned on boxes, but the frames have none");
  if (task == Task::Background && !has_lidar(frames))
    throw std::invalid_argument("the background task is conditioned on LiDAR, but the frames have none");
}

}  // namespace

RunConfig config_or_defaults(const fs::path& path) { return path.empty() ? RunConfig{} : load_config(path); }

void cmd_synth(const SynthOptions& o, std::ostream& log) {
  const auto profile = radar::parse_profile(o.profile);
  const auto sc = radar::SynthConfig::for_profile(profile);
  prepare_output_dir(o.out, o.force);
  json files = json::array();
  for (std::size_t i = 0; i < o.frames; ++i) {
    const auto frame = radar::synth_scene(o.seed, sc, i);
    radar::validate_frame(frame);
    radar::save_frame(frame, o.out / frame_name(i));
    files.push_back(frame_name(i));
  }
  json manifest = {{"generator", "radiff-synth"}, {"generator_version", 1}, {"seed", o.seed},
                   {"profile", radar::profile_name(profile)}, {"frames", o.frames}, {"files", files}};
  write_text(o.out / "manifest.json", manifest.dump(2) + "\n");
  log << "wrote " << o.frames << " frames to " << o.out.string() << "\n";
}

void cmd_train_vae(const TrainOptions& o, std::ostream& log) {
  auto cfg = config_or_defaults(o.config);
  if (o.epochs) cfg.vae.epochs = *o.epochs;
  const auto task = diffusion::parse_task(o.task);
  if (o.out.empty()) throw std::invalid_argument("an output checkpoint (--out) is required");
  const auto frames = load_all(rdf_files(o.data));
  check_conditions(frames, task);
  const auto data = build_task_dataset(frames, task, cfg, stream_seed(o.seed, kData, 0));
  if (data.inputs.empty()) throw std::runtime_error("no frame has points for the " + o.task + " task");
  log << "training the " << o.task << " VAE on " << data.inputs.size() << " frames\n";

  vae::Vae model(vae_config(cfg), stream_seed(o.seed, kVaeInit, 0));
  const auto result = vae::train_vae(model, data.inputs, vae_train_config(cfg, task), stream_seed(o.seed, kVaeTrain, 0),
                                     [&](std::size_t epoch, const vae::LossBreakdown& l) {
                                       log << fmt::format("epoch {} total {:.6g} cd {:.6g} feature {:.6g}\n",
                                                          epoch + 1, l.total, l.cd, l.feature);
                                     });
  TensorMap tensors;
  collect(model.params(), tensors);
  save_checkpoint(o.out, tensors);

  json history = json::array();
  for (const auto& l : result.history)
    history.push_back({{"total", l.total}, {"cd", l.cd}, {"cd_intermediate", l.cd_intermediate},
                       {"feature", l.feature}, {"density", l.density}, {"cardinality", l.cardinality},
                       {"kl", l.kl}});
  json doc = {{"model", "vae"}, {"task", o.task}, {"seed", o.seed}, {"frames", data.inputs.size()},
              {"diverged", result.diverged}, {"message", result.message}, {"history", history}};
  write_text(history_path(o.out), doc.dump(2) + "\n");
  if (result.diverged) throw std::runtime_error("training diverged (" + result.message + "); last good checkpoint saved");
}

void cmd_train_ldm(const TrainOptions& o, std::ostream& log) {
  auto cfg = config_or_defaults(o.config);
  if (o.epochs) cfg.diffusion.epochs = *o.epochs;
  const auto task = diffusion::parse_task(o.task);
  if (o.out.empty()) throw std::invalid_argument("an output checkpoint (--out) is required");
  vae::Vae autoencoder(vae_config(cfg), 0);
  load_vae(autoencoder, o.vae);
  const auto frozen = autoencoder.params().checksum();

  const auto frames = load_all(rdf_files(o.data));
  check_conditions(frames, task);
  const auto data = build_task_dataset(frames, task, cfg, stream_seed(o.seed, kData, 0));
  if (data.inputs.empty()) throw std::runtime_error("no frame has points for the " + o.task + " task");
  const auto latents = encode_latents(autoencoder, data.inputs, vae_train_config(cfg, task).batch_size);
  log << "training the " << o.task << " LDM on " << latents.size() << " latent sets\n";

  diffusion::ConditionalLdm model(ldm_config(cfg, task), stream_seed(o.seed, kLdmInit, 0));
  const auto result = diffusion::train_ldm(model, latents, data.conditions, ldm_train_config(cfg, task),
                                           stream_seed(o.seed, kLdmTrain, 0), [&](std::size_t epoch, double loss) {
                                             log << fmt::format("epoch {} loss {:.6g}\n", epoch + 1, loss);
                                           });
  if (autoencoder.params().checksum() != frozen) throw std::logic_error("the VAE changed during LDM training");

  TensorMap tensors;
  collect(model.params(), tensors);
  tensors.emplace("meta.latent_mean", row_tensor(model.latent_mean()));
  tensors.emplace("meta.latent_std", row_tensor(model.latent_std()));
  tensors.emplace("meta.schedule", row_tensor({cfg.diffusion.beta_start, cfg.diffusion.beta_end,
                                               static_cast<double>(cfg.diffusion.steps)}));
  save_checkpoint(o.out, tensors);

  json doc = {{"model", "ldm"}, {"task", o.task}, {"seed", o.seed}, {"scenes", latents.size()},
              {"diverged", result.diverged}, {"message", result.message}, {"history", result.history}};
  write_text(history_path(o.out), doc.dump(2) + "\n");
  if (result.diverged) throw std::runtime_error("training diverged (" + result.message + "); last good checkpoint saved");
}

void cmd_generate(const GenerateOptions& o, std::ostream& log) {
  auto cfg = config_or_defaults(o.config);
  const auto task = diffusion::parse_task(o.task);
  vae::Vae autoencoder(vae_config(cfg), 0);
  load_vae(autoencoder, o.vae);

  if (o.ldm.empty()) throw std::invalid_argument("an LDM checkpoint (--ldm) is required");
  const auto stored = load_checkpoint(o.ldm);
  for (const char* key : {"meta.latent_mean", "meta.latent_std", "meta.schedule"})
    if (!stored.count(key)) throw CheckpointError(o.ldm.string() + " is not an LDM checkpoint (missing " + key + ")");
  const auto schedule = row_values(stored.at("meta.schedule"));
  const auto trained_steps = static_cast<std::size_t>(schedule.at(2));
  const std::size_t steps = o.steps.value_or(cfg.diffusion.steps);
  if (steps != trained_steps)
    throw std::invalid_argument(fmt::format("--steps {} differs from the trained schedule length {}", steps, trained_steps));
  if (static_cast<float>(cfg.diffusion.beta_start) != static_cast<float>(schedule.at(0)) ||
      static_cast<float>(cfg.diffusion.beta_end) != static_cast<float>(schedule.at(1)))
    throw std::invalid_argument("the config's beta schedule differs from the one the LDM was trained with");
  cfg.diffusion.steps = trained_steps;

  diffusion::ConditionalLdm model(ldm_config(cfg, task), 0);
  assign(model.params(), stored);
  model.set_latent_stats(row_values(stored.at("meta.latent_mean")), row_values(stored.at("meta.latent_std")));

  const auto files = rdf_files(o.cond);
  const auto frames = load_all(files);
  check_conditions(frames, task);
  prepare_output_dir(o.out, o.force);

  const std::size_t m = autoencoder.config().latent_count();
  const std::size_t batch = 16;
  for (std::size_t start = 0; start < frames.size(); start += batch) {
    const std::size_t end = std::min(frames.size(), start + batch);
    std::vector<diffusion::SceneCondition> conds;
    for (std::size_t i = start; i < end; ++i)
      conds.push_back(scene_condition(frames[i], task, cfg, stream_seed(o.seed, kData, i)));
    const auto z = model.generate(conds, m, stream_seed(o.seed, kSample, start / batch));
    const auto clouds = decode_latents(autoencoder, z, conds.size(), cfg);
    for (std::size_t i = start; i < end; ++i) {
      Frame out;
      out.frame_id = frames[i].frame_id;
      out.timestamp_us = frames[i].timestamp_us;
      out.ego = frames[i].ego;
      out.radar = clouds[i - start];
      if (task == Task::Foreground) out.boxes = frames[i].boxes;
      radar::save_frame(out, o.out / files[i].filename());
    }
    log << "generated " << end << " / " << frames.size() << " frames\n";
  }
  json manifest = {{"generator", "radiff-generate"}, {"task", o.task}, {"seed", o.seed}, {"steps", steps},
                   {"frames", frames.size()}};
  write_text(o.out / "manifest.json", manifest.dump(2) + "\n");
}

void cmd_fuse(const FuseOptions& o, std::ostream& log) {
  const auto fg_files = rdf_files(o.fg);
  const auto bg_files = rdf_files(o.bg);
  if (fg_files.size() != bg_files.size())
    throw std::runtime_error(fmt::format("fuse: {} foreground frames but {} background frames", fg_files.size(),
                                         bg_files.size()));
  const auto fg = load_all(fg_files);
  const auto bg = load_all(bg_files);
  for (std::size_t i = 0; i < fg.size(); ++i)
    if (fg[i].frame_id != bg[i].frame_id)
      throw std::runtime_error(fmt::format("fuse: frame id mismatch ({} vs {}) at {}", fg[i].frame_id, bg[i].frame_id,
                                           bg_files[i].filename().string()));
  prepare_output_dir(o.out, o.force);
  for (std::size_t i = 0; i < fg.size(); ++i) {
    Frame out = bg[i];
    out.radar = augment::fuse(fg[i].radar, bg[i].radar).cloud;
    out.boxes = fg[i].boxes;
    radar::save_frame(out, o.out / bg_files[i].filename());
  }
  log << "fused " << fg.size() << " frames\n";
}

void cmd_augment(const AugmentOptions& o, std::ostream& log) {
  const auto cfg = config_or_defaults(o.config);
  const auto files = rdf_files(o.data);
  const auto frames = load_all(files);
  const auto db = augment::build_gt_database(frames);
  for (const auto& e : db.entries)
    if (e.points.size() < augment::kMinEntryPoints) throw std::logic_error("database entry with too few points");
  prepare_output_dir(o.out, o.force);
  augment::save_database(db, o.out / "db");

  const std::map<int, int> per_class = {{radar::kCar, static_cast<int>(cfg.augment.samples_car)},
                                        {radar::kPedestrian, static_cast<int>(cfg.augment.samples_pedestrian)},
                                        {radar::kCyclist, static_cast<int>(cfg.augment.samples_cyclist)}};
  std::size_t inserted = 0;
  json per_frame = json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::size_t original = frames[i].boxes.size();
    auto r = augment::gt_sample_insert(frames[i], db, per_class, stream_seed(o.seed, kInsert, i));
    for (const auto& w : r.warnings) log << files[i].filename().string() << ": " << w << "\n";
    Frame out = std::move(r.frame);
    if (cfg.augment.global) out = augment::apply_global(out, augment::sample_global_params(stream_seed(o.seed, kGlobal, i)));
    radar::validate_frame(out);
    // Inserted boxes must not touch any other box.
    for (std::size_t a = original; a < out.boxes.size(); ++a)
      for (std::size_t b = 0; b < out.boxes.size(); ++b)
        if (a != b && augment::bev_overlap(out.boxes[a], out.boxes[b]) > 0.0)
          throw std::logic_error("augment: inserted box overlaps another box in " + files[i].filename().string());
    radar::save_frame(out, o.out / files[i].filename());
    inserted += r.inserted;
    per_frame.push_back({{"file", files[i].filename().string()}, {"inserted", r.inserted}});
  }
  json manifest = {{"generator", "radiff-augment"}, {"seed", o.seed}, {"database_entries", db.entries.size()},
                   {"inserted", inserted}, {"global", cfg.augment.global}, {"frames", per_frame}};
  write_text(o.out / "manifest.json", manifest.dump(2) + "\n");
  log << "inserted " << inserted << " objects into " << frames.size() << " frames\n";
}

std::string cmd_eval(const EvalOptions& o) {
  const auto cfg = config_or_defaults(o.config);
  metrics::EvalConfig ec;
  ec.range = cfg.range();
  ec.grid_cells = cfg.metrics.grid_cells;
  const auto report = metrics::evaluate_dirs(o.real, o.generated, ec).to_json();
  if (!o.out.empty()) write_text(o.out, report + "\n");
  return report;
}

}  // namespace radiff::cli

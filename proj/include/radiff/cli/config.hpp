#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "radiff/radarframe/types.hpp"

namespace radiff::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  radar::Profile profile = radar::Profile::Toy;
  std::size_t num_points = 128;
  std::size_t sweeps = 1;
  double doppler_min = -30.0, doppler_max = 30.0;
  double rcs_min = -40.0, rcs_max = 20.0;
};

// Batch sizes are per task: foreground / background.
struct VaeSection {
  std::size_t epochs = 300;
  std::size_t batch_size_fg = 128;
  std::size_t batch_size_bg = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  std::string scheduler = "steplr";
  std::size_t step_size = 45;
  double gamma = 0.5;
  double lambda_reg = 1e-5;
  double lambda_den = 1e-4;
  double lambda_card = 5e-7;
  double lambda_d = 50.0;
  double lambda_c = 0.1;
  double lambda_f = 0.05;
  std::size_t latent_dim = 4;
  std::vector<std::size_t> factors{4, 4};
  std::size_t width = 64;
  std::size_t heads = 4;
};

struct DiffusionSection {
  std::size_t epochs = 1000;
  std::size_t batch_size_fg = 128;
  std::size_t batch_size_bg = 16;
  double lr = 1e-4;
  std::string optimizer = "adamw";
  double weight_decay = 1e-6;
  std::string scheduler = "onecycle";
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::string beta_schedule = "linear";
  std::size_t steps = 1000;
  std::size_t width = 128;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  double cond_dropout = 0.0;
};

struct LayoutSection {
  std::size_t objects = 16;
  int num_classes = radar::kDefaultNumClasses;
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t layers = 2;
  double size_max = 25.0;
  double v_max = 30.0;
};

struct PillarSection {
  double cell = 0.8;
  std::size_t max_points = 16;
  std::size_t max_tokens = 256;
  std::size_t width = 128;
};

struct MetricsSection {
  int grid_cells = 100;
};

struct AugmentSection {
  std::size_t samples_car = 4;
  std::size_t samples_pedestrian = 4;
  std::size_t samples_cyclist = 4;
  bool global = true;
  // Foreground point target for PolarMix-style filling of sparse training
  // scenes; 0 turns the filling off.
  std::size_t polar_target = 0;
  int polar_sectors = 8;
};

struct RunConfig {
  DataSection data;
  VaeSection vae;
  DiffusionSection diffusion;
  LayoutSection layout;
  PillarSection pillars;
  MetricsSection metrics;
  AugmentSection augment;

  radar::RangeSpec range() const;
  radar::FeatureRanges features() const;
};

// INI text: `key = value` lines under `[section]` headers, `;` or `#`
// comments. Unknown sections or keys, duplicates and malformed values are
// errors. Keys that are absent keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Canonical text: every section and key in a fixed order, shortest
// round-trip number formatting.
std::string echo_config(const RunConfig& cfg);

}  // namespace radiff::cli

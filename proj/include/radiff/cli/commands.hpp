#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "radiff/cli/config.hpp"

namespace radiff::cli {

namespace fs = std::filesystem;

struct SynthOptions {
  fs::path out;
  std::size_t frames = 16;
  std::string profile = "toy";
  std::uint64_t seed = 0;
  bool force = false;
};

struct TrainOptions {
  std::string task = "fg";
  fs::path data, config, vae, out;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs;  // overrides the config
};

struct GenerateOptions {
  std::string task = "fg";
  fs::path ldm, vae, cond, config, out;
  std::optional<std::size_t> steps;  // must equal the trained schedule length
  std::uint64_t seed = 0;
  bool force = false;
};

struct FuseOptions {
  fs::path fg, bg, out;
  bool force = false;
};

struct AugmentOptions {
  fs::path data, config, out;
  std::uint64_t seed = 0;
  bool force = false;
};

struct EvalOptions {
  fs::path real, generated, config, out;
};

// Defaults when `path` is empty.
RunConfig config_or_defaults(const fs::path& path);

// Each writes its outputs and throws on failure; progress goes to `log`.
void cmd_synth(const SynthOptions& o, std::ostream& log);
void cmd_train_vae(const TrainOptions& o, std::ostream& log);
void cmd_train_ldm(const TrainOptions& o, std::ostream& log);
void cmd_generate(const GenerateOptions& o, std::ostream& log);
void cmd_fuse(const FuseOptions& o, std::ostream& log);
void cmd_augment(const AugmentOptions& o, std::ostream& log);
// Returns the JSON report, also written to o.out when given.
std::string cmd_eval(const EvalOptions& o);

// Parses the arguments (without the program name) and runs one command.
// Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace radiff::cli

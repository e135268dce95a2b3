#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "radiff/numcore/layers.hpp"

namespace radiff::numcore {

class NonFiniteGradient : public std::runtime_error {
 public:
  explicit NonFiniteGradient(const std::string& parameter)
      : std::runtime_error("non-finite gradient in parameter " + parameter), parameter_(parameter) {}
  const std::string& parameter() const { return parameter_; }

 private:
  std::string parameter_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // true: AdamW (decay applied to the parameter); false: Adam (L2 term
  // folded into the gradient).
  bool decoupled = true;
};

// Adam / AdamW with bias correction.
class Adam {
 public:
  Adam(const ParamSet& params, AdamOptions options);

  // Applies one update from the parameters' accumulated gradients. Throws
  // NonFiniteGradient before touching anything if a gradient is NaN/inf.
  void step();
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  std::size_t step_count() const { return steps_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamOptions options_;
  std::size_t steps_ = 0;
};

enum class LrScheduleKind { OneCycle, StepDecay, Constant };

struct LrSchedule {
  LrScheduleKind kind = LrScheduleKind::Constant;
  double max_lr = 1e-4;
  std::size_t total_steps = 1;
  // one-cycle
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  // step-decay (steps are epochs)
  std::size_t step_size = 45;
  double gamma = 0.5;

  static LrSchedule one_cycle(double max_lr, std::size_t total_steps);
  static LrSchedule step_decay(double base_lr, std::size_t total_epochs, std::size_t step_size, double gamma);
  static LrSchedule constant(double lr, std::size_t total_steps);

  // Index at which one-cycle reaches max_lr.
  std::size_t peak_step() const;
};

// Learning rate at `step` (0-based). One-cycle ramps with cosine curves from
// max/div_factor up to max and down to max/final_div_factor.
double lr_value(const LrSchedule& schedule, std::size_t step);

}  // namespace radiff::numcore

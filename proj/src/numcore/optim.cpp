#include "radiff/numcore/optim.hpp"

#include <cmath>
#include <numbers>

namespace radiff::numcore {

Adam::Adam(const ParamSet& params, AdamOptions options) : params_(params.entries()), options_(options) {
  for (const auto& [name, t] : params_) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::step() {
  for (const auto& [name, t] : params_) {
    if (!t.has_grad()) continue;
    for (double g : t.node()->grad)
      if (!std::isfinite(g)) throw NonFiniteGradient(name);
  }
  ++steps_;
  const auto& o = options_;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(steps_));
  for (std::size_t p = 0; p < params_.size(); ++p) {
    Tensor& t = params_[p].second;
    auto value = t.mutable_data();
    const auto& grad = t.node()->grad;
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < value.size(); ++i) {
      double g = grad.empty() ? 0.0 : grad[i];
      if (o.decoupled) {
        value[i] -= o.lr * o.weight_decay * value[i];
      } else {
        g += o.weight_decay * value[i];
      }
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
    }
  }
}

LrSchedule LrSchedule::one_cycle(double max_lr, std::size_t total_steps) {
  LrSchedule s;
  s.kind = LrScheduleKind::OneCycle;
  s.max_lr = max_lr;
  s.total_steps = total_steps;
  return s;
}

LrSchedule LrSchedule::step_decay(double base_lr, std::size_t total_epochs, std::size_t step_size, double gamma) {
  LrSchedule s;
  s.kind = LrScheduleKind::StepDecay;
  s.max_lr = base_lr;
  s.total_steps = total_epochs;
  s.step_size = step_size;
  s.gamma = gamma;
  return s;
}

LrSchedule LrSchedule::constant(double lr, std::size_t total_steps) {
  LrSchedule s;
  s.kind = LrScheduleKind::Constant;
  s.max_lr = lr;
  s.total_steps = total_steps;
  return s;
}

std::size_t LrSchedule::peak_step() const {
  const auto warm = static_cast<std::size_t>(std::floor(pct_start * static_cast<double>(total_steps)));
  return warm == 0 ? 0 : std::min(warm, total_steps - 1);
}

double lr_value(const LrSchedule& s, std::size_t step) {
  if (step >= s.total_steps) {
    throw std::out_of_range("lr_value: step " + std::to_string(step) + " outside schedule of " +
                            std::to_string(s.total_steps) + " steps");
  }
  switch (s.kind) {
    case LrScheduleKind::Constant:
      return s.max_lr;
    case LrScheduleKind::StepDecay:
      return s.max_lr * std::pow(s.gamma, static_cast<double>(step / s.step_size));
    case LrScheduleKind::OneCycle: {
      const double initial = s.max_lr / s.div_factor;
      const double final_lr = s.max_lr / s.final_div_factor;
      const std::size_t peak = s.peak_step();
      auto cosine = [](double from, double to, double frac) {
        return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
      };
      if (step <= peak) {
        if (peak == 0) return s.max_lr;
        return cosine(initial, s.max_lr, static_cast<double>(step) / static_cast<double>(peak));
      }
      const std::size_t span = s.total_steps - 1 - peak;
      return cosine(s.max_lr, final_lr, static_cast<double>(step - peak) / static_cast<double>(span));
    }
  }
  return s.max_lr;
}

}  // namespace radiff::numcore

#include <cmath>
#include <algorithm>
#include <random>
#include <stdexcept>

#include "radiff/diffusion/diffusion.hpp"

namespace radiff::diffusion {

namespace nc = numcore;

DiffusionSchedule make_schedule(double beta_start, double beta_end, std::size_t steps) {
  if (!(beta_start > 0.0 && beta_start < beta_end && beta_end < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_start < beta_end < 1");
  if (steps < 2) throw std::invalid_argument("make_schedule: need at least two steps");
  DiffusionSchedule s;
  s.T = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (std::size_t i = 0; i < steps; ++i) {
    // Endpoints are assigned directly so they hold exactly.
    if (i == 0)
      s.beta[i] = beta_start;
    else if (i + 1 == steps)
      s.beta[i] = beta_end;
    else
      s.beta[i] = beta_start + static_cast<double>(i) / static_cast<double>(steps - 1) * (beta_end - beta_start);
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

namespace {

void check_t(std::size_t t, const DiffusionSchedule& s) {
  if (t < 1 || t > s.T) throw std::out_of_range("diffusion: timestep " + std::to_string(t) + " outside [1, T]");
}

}  // namespace

Tensor q_sample(const Tensor& z0, std::size_t t, const Tensor& eps, const DiffusionSchedule& s) {
  check_t(t, s);
  const double ab = s.alpha_bar_at(t);
  return nc::scale(z0, std::sqrt(ab)) + nc::scale(eps, std::sqrt(1.0 - ab));
}

Tensor p_mean(const Tensor& zt, std::size_t t, const Tensor& eps_hat, const DiffusionSchedule& s) {
  check_t(t, s);
  const double coef = s.beta_at(t) / std::sqrt(1.0 - s.alpha_bar_at(t));
  return nc::scale(zt - nc::scale(eps_hat, coef), 1.0 / std::sqrt(s.alpha_at(t)));
}

Tensor p_sample_step(const Tensor& zt, std::size_t t, const Tensor& eps_hat, const DiffusionSchedule& s, Rng& rng) {
  const Tensor mean = p_mean(zt, t, eps_hat, s);
  if (t == 1) return mean;
  return mean + Tensor::randn(zt.shape(), rng, std::sqrt(s.beta_at(t)));
}

Tensor ldm_loss(const Tensor& z0, const std::vector<std::size_t>& offsets, const DiffusionSchedule& s, Rng& rng,
                const EpsPredictor& predict) {
  const std::size_t scenes = offsets.size() - 1;
  if (offsets.empty() || offsets.back() != z0.rows()) throw std::invalid_argument("ldm_loss: bad scene offsets");
  std::uniform_int_distribution<std::size_t> pick(1, s.T);
  std::vector<std::size_t> t(scenes);
  for (auto& v : t) v = pick(rng);
  const Tensor eps = Tensor::randn(z0.shape(), rng);
  // Per-row coefficients of the closed-form forward process.
  std::vector<double> a(z0.rows()), b(z0.rows());
  for (std::size_t sc = 0; sc < scenes; ++sc) {
    const double ab = s.alpha_bar_at(t[sc]);
    for (std::size_t r = offsets[sc]; r < offsets[sc + 1]; ++r) {
      a[r] = std::sqrt(ab);
      b[r] = std::sqrt(1.0 - ab);
    }
  }
  const std::size_t rows = z0.rows();
  const Tensor zt = z0 * Tensor::from_data({rows, 1}, std::move(a)) + eps * Tensor::from_data({rows, 1}, std::move(b));
  const Tensor diff = predict(zt, t) - eps;
  return nc::scale(nc::sum(nc::square(diff)), 1.0 / static_cast<double>(rows));
}

Tensor sample(const DiffusionSchedule& s, std::size_t scenes, std::size_t tokens, std::size_t dim, std::uint64_t seed,
              const EpsPredictor& predict) {
  nc::NoGradGuard guard;
  Rng rng(seed);
  Tensor z = Tensor::randn({scenes * tokens, dim}, rng);
  std::vector<std::size_t> t(scenes);
  for (std::size_t step = s.T; step >= 1; --step) {
    std::fill(t.begin(), t.end(), step);
    z = p_sample_step(z, step, predict(z, t), s, rng);
    for (double v : z.data())
      if (!std::isfinite(v)) throw std::runtime_error("sample: non-finite latent at step " + std::to_string(step));
  }
  return z;
}

}  // namespace radiff::diffusion

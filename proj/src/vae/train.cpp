#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "radiff/numcore/optim.hpp"
#include "radiff/vae/vae.hpp"

namespace radiff::vae {

namespace nc = numcore;

namespace {

void accumulate(LossBreakdown& acc, const LossBreakdown& x, double w) {
  acc.cd += w * x.cd;
  acc.cd_intermediate += w * x.cd_intermediate;
  acc.feature += w * x.feature;
  acc.density += w * x.density;
  acc.cardinality += w * x.cardinality;
  acc.kl += w * x.kl;
  acc.total += w * x.total;
}

}  // namespace

VaeTrainResult train_vae(Vae& model, std::span<const RadarPointCloud> data, const VaeTrainConfig& tc,
                         std::uint64_t seed, const EpochCallback& on_epoch) {
  if (tc.batch_size == 0 || tc.epochs == 0) throw std::invalid_argument("train_vae: epochs and batch size must be positive");
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i].valid_count() > 0) usable.push_back(i);
  if (usable.empty()) throw std::invalid_argument("train_vae: dataset has no frame with valid points");

  VaeTrainResult result;
  nc::AdamOptions opts;
  opts.lr = tc.lr;
  opts.decoupled = false;
  nc::Adam adam(model.params(), opts);
  const auto schedule = nc::LrSchedule::step_decay(tc.lr, tc.epochs, tc.step_size, tc.gamma);
  std::mt19937_64 rng(seed);
  auto good = model.params().snapshot();

  std::vector<RadarPointCloud> batch;
  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    adam.set_lr(nc::lr_value(schedule, epoch));
    std::shuffle(usable.begin(), usable.end(), rng);
    LossBreakdown avg;
    for (std::size_t start = 0; start < usable.size(); start += tc.batch_size) {
      const std::size_t end = std::min(usable.size(), start + tc.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[usable[i]]);
      try {
        model.params().zero_grad();
        const auto enc = model.encode(batch, rng());
        const auto dec = model.decode(enc.z, enc.offsets);
        const auto loss = vae_loss(enc, dec, model.config());
        if (!std::isfinite(loss.parts.total)) throw std::runtime_error("non-finite loss");
        nc::backward(loss.total);
        adam.step();
        accumulate(avg, loss.parts, static_cast<double>(end - start) / static_cast<double>(usable.size()));
      } catch (const std::runtime_error& e) {
        model.params().restore(good);
        result.diverged = true;
        result.message = "epoch " + std::to_string(epoch) + ": " + e.what();
        return result;
      }
    }
    result.history.push_back(avg);
    good = model.params().snapshot();
    if (on_epoch) on_epoch(epoch, avg);
  }
  return result;
}

}  // namespace radiff::vae

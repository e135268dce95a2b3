#include "radiff/numcore/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <stdexcept>

namespace radiff::numcore {

Tensor ParamSet::add(const std::string& name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  entries_.emplace_back(name, value);
  return value;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

const Tensor& ParamSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("unknown parameter: " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ParamSet::extend(const ParamSet& other) {
  for (const auto& [name, t] : other.entries_) add(name, t);
}

std::vector<std::vector<double>> ParamSet::snapshot() const {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : entries_) out.emplace_back(t.data().begin(), t.data().end());
  return out;
}

void ParamSet::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != entries_.size()) throw std::invalid_argument("ParamSet::restore: entry count differs");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& t = entries_[i].second;
    if (values[i].size() != t.numel()) throw std::invalid_argument("ParamSet::restore: size differs for " + entries_[i].first);
    std::copy(values[i].begin(), values[i].end(), t.mutable_data().begin());
  }
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : entries_) {
    mix(name.data(), name.size());
    mix(t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

Linear::Linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
               double init_gain, bool bias) {
  const double stddev = init_gain / std::sqrt(static_cast<double>(in));
  weight_ = params.add(name + ".weight", Tensor::randn({in, out}, rng, stddev, true));
  if (bias) bias_ = params.add(name + ".bias", Tensor::zeros({1, out}, true));
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight_, bias_); }

Mlp::Mlp(ParamSet& params, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng,
         double last_gain) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp " + name + " needs at least two widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers_.emplace_back(params, name + "." + std::to_string(i), widths[i], widths[i + 1], rng,
                         last ? last_gain : 1.0);
  }
}

Tensor Mlp::operator()(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = silu(h);
  }
  return h;
}

LayerNorm::LayerNorm(ParamSet& params, const std::string& name, std::size_t width) {
  gamma_ = params.add(name + ".gamma", Tensor::full({1, width}, 1.0, true));
  beta_ = params.add(name + ".beta", Tensor::zeros({1, width}, true));
}

MultiHeadAttention::MultiHeadAttention(ParamSet& params, const std::string& name, std::size_t query_dim,
                                       std::size_t kv_dim, std::size_t width, std::size_t heads, Rng& rng)
    : width_(width), heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw std::invalid_argument("attention " + name + ": width " + std::to_string(width) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  q_ = Linear(params, name + ".q", query_dim, width, rng);
  k_ = Linear(params, name + ".k", kv_dim, width, rng);
  v_ = Linear(params, name + ".v", kv_dim, width, rng);
  o_ = Linear(params, name + ".o", width, width, rng);
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys_values, const Segments& segments,
                                      std::vector<double>* weights) const {
  return o_(attention(q_(queries), k_(keys_values), v_(keys_values), heads_, segments, weights));
}

Tensor MultiHeadAttention::with_bias(const Tensor& queries, const Tensor& keys_values, const Tensor& key_bias,
                                     const Tensor& value_bias, const Segments& segments) const {
  return o_(attention(q_(queries), add(k_(keys_values), key_bias), add(v_(keys_values), value_bias), heads_,
                      segments));
}

FeedForward::FeedForward(ParamSet& params, const std::string& name, std::size_t width, std::size_t hidden,
                         Rng& rng) {
  norm_ = LayerNorm(params, name + ".norm", width);
  mlp_ = Mlp(params, name + ".mlp", {width, hidden, width}, rng);
}

Tensor FeedForward::operator()(const Tensor& x) const { return add(x, mlp_(norm_(x))); }

Tensor sinusoidal_embedding(std::span<const double> values, std::size_t dim, double max_period) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal embedding dimension must be even");
  const std::size_t half = dim / 2;
  std::vector<double> out(values.size() * dim);
  for (std::size_t i = 0; i < values.size(); ++i) {
    for (std::size_t j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(max_period) * static_cast<double>(j) / static_cast<double>(half));
      out[i * dim + j] = std::sin(values[i] * freq);
      out[i * dim + half + j] = std::cos(values[i] * freq);
    }
  }
  return Tensor::from_data({values.size(), dim}, std::move(out));
}

}  // namespace radiff::numcore

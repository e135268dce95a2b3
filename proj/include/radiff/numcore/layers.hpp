#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "radiff/numcore/ops.hpp"
#include "radiff/numcore/tensor.hpp"

namespace radiff::numcore {

// Named trainable tensors in registration order.
class ParamSet {
 public:
  Tensor add(const std::string& name, Tensor value);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;
  void zero_grad();
  // Appends another set's entries (names must stay unique).
  void extend(const ParamSet& other);
  // FNV-1a digest over names and raw values.
  std::uint64_t checksum() const;
  // Copies of every parameter's values, in entry order, and their inverse.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

class Linear {
 public:
  Linear() = default;
  Linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         double init_gain = 1.0, bool bias = true);
  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight_.rows(); }
  std::size_t out_features() const { return weight_.cols(); }
  Tensor& bias() { return bias_; }
  Tensor& weight() { return weight_; }

 private:
  Tensor weight_;
  Tensor bias_;
};

// Linear layers with SiLU between them (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamSet& params, const std::string& name, const std::vector<std::size_t>& widths, Rng& rng,
      double last_gain = 1.0);
  Tensor operator()(const Tensor& x) const;
  Linear& last() { return layers_.back(); }

 private:
  std::vector<Linear> layers_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamSet& params, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor gamma_;
  Tensor beta_;
};

// Multi-head attention with input and output projections. Self-attention
// is the case where queries and keys/values come from the same rows.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamSet& params, const std::string& name, std::size_t query_dim, std::size_t kv_dim,
                     std::size_t width, std::size_t heads, Rng& rng);
  Tensor operator()(const Tensor& queries, const Tensor& keys_values, const Segments& segments,
                    std::vector<double>* weights = nullptr) const;
  // Variant with additive terms on projected keys and values (relative
  // position encodings).
  Tensor with_bias(const Tensor& queries, const Tensor& keys_values, const Tensor& key_bias, const Tensor& value_bias,
                   const Segments& segments) const;
  std::size_t width() const { return width_; }
  std::size_t heads() const { return heads_; }

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 1;
  Linear q_, k_, v_, o_;
};

// Pre-norm feed-forward: x + W2 silu(W1 LN(x)).
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamSet& params, const std::string& name, std::size_t width, std::size_t hidden, Rng& rng);
  Tensor operator()(const Tensor& x) const;

 private:
  LayerNorm norm_;
  Mlp mlp_;
};

// Standard transformer sinusoidal features of scalar positions, one row per
// value, `dim` columns (sin block then cos block).
Tensor sinusoidal_embedding(std::span<const double> values, std::size_t dim, double max_period = 10000.0);

}  // namespace radiff::numcore

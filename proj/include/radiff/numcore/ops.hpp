#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "radiff/numcore/tensor.hpp"

// Differentiable operations. Everything is viewed as a row-major matrix
// (rows() x cols()); rank-0/1 tensors are a single row.
namespace radiff::numcore {

Tensor matmul(const Tensor& a, const Tensor& b);
// x·w + b, with b a [1 x out] row (may be undefined).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Elementwise with broadcasting: each operand's rows/cols must equal the
// result's or be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Sum over columns of each row: [rows x 1].
Tensor sum_cols(const Tensor& a);
// Sum over rows of each column: [1 x cols].
Tensor sum_rows(const Tensor& a);
// Euclidean norm of each row, sqrt(sum x^2 + eps): [rows x 1].
Tensor row_norm(const Tensor& a, double eps = 1e-12);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& x, Shape shape);

// out[i] = x[index[i]]; backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index);
// Reductions of rows into segments; empty segments produce zero rows.
Tensor segment_sum(const Tensor& x, std::span<const std::size_t> segment, std::size_t num_segments);
Tensor segment_mean(const Tensor& x, std::span<const std::size_t> segment, std::size_t num_segments);
Tensor segment_max(const Tensor& x, std::span<const std::size_t> segment, std::size_t num_segments);

// Row partition for batched attention: queries [q_offsets[g], q_offsets[g+1])
// attend to keys [kv_offsets[g], kv_offsets[g+1]).
struct Segments {
  std::vector<std::size_t> q_offsets;
  std::vector<std::size_t> kv_offsets;

  static Segments single(std::size_t num_queries, std::size_t num_keys);
  static Segments uniform(std::size_t groups, std::size_t queries_per_group, std::size_t keys_per_group);
  std::size_t groups() const { return q_offsets.empty() ? 0 : q_offsets.size() - 1; }
};

// Scaled dot-product attention over already-projected q, k, v, split into
// `heads` column blocks. Groups with no keys yield zero rows. When
// `weights` is given it receives the softmax weights, group-major then
// head-major, each query row contiguous.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const Segments& segments,
                 std::vector<double>* weights = nullptr);

}  // namespace radiff::numcore

#include "radiff/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace radiff::numcore {

using detail::make_result;

namespace {

Shape matrix_shape(std::size_t rows, std::size_t cols) { return {rows, cols}; }

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

// C += A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m x k] += dC[m x n] * B[k x n]^T
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = dc + i * n;
    double* arow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      arow[p] += acc;
    }
  }
}

// dB[k x n] += A[m x k]^T * dC[m x n]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * grow[j];
    }
  }
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

struct Broadcast {
  std::size_t rows, cols;
  Shape shape;
};

Broadcast broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  const std::size_t ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  const std::size_t r = std::max(ra, rb), c = std::max(ca, cb);
  const bool ok = (ra == r || ra == 1) && (rb == r || rb == 1) && (ca == c || ca == 1) && (cb == c || cb == 1);
  require(ok, std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() + " do not broadcast");
  if (a.shape() == b.shape()) return {r, c, a.shape()};
  return {r, c, matrix_shape(r, c)};
}

// Accumulates a [rows x cols] gradient into an operand that may have been
// broadcast along rows and/or cols.
void reduce_into(std::vector<double>& dst, std::size_t dr, std::size_t dc, const std::vector<double>& g,
                 std::size_t rows, std::size_t cols, const std::vector<double>* factor, std::size_t fr,
                 std::size_t fc) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      double v = g[i * cols + j];
      if (factor) v *= (*factor)[(fr == 1 ? 0 : i) * fc + (fc == 1 ? 0 : j)];
      dst[(dr == 1 ? 0 : i) * dc + (dc == 1 ? 0 : j)] += v;
    }
  }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const auto bc = broadcast_shape(a, b, name);
  const std::size_t ra = a.rows(), ca = a.cols(), rb = b.rows(), cb = b.cols();
  std::vector<double> out(bc.rows * bc.cols);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < bc.rows; ++i) {
    const double* arow = av.data() + (ra == 1 ? 0 : i) * ca;
    const double* brow = bv.data() + (rb == 1 ? 0 : i) * cb;
    double* orow = out.data() + i * bc.cols;
    for (std::size_t j = 0; j < bc.cols; ++j) {
      const double x = arow[ca == 1 ? 0 : j];
      const double y = brow[cb == 1 ? 0 : j];
      switch (op) {
        case BinOp::Add: orow[j] = x + y; break;
        case BinOp::Sub: orow[j] = x - y; break;
        case BinOp::Mul: orow[j] = x * y; break;
        case BinOp::Div: orow[j] = x / y; break;
      }
    }
  }
  const std::size_t R = bc.rows, C = bc.cols;
  return make_result(bc.shape, std::move(out), {a, b}, [op, ra, ca, rb, cb, R, C](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    switch (op) {
      case BinOp::Add:
        if (pa.requires_grad) reduce_into(pa.grad_buffer(), ra, ca, g, R, C, nullptr, 0, 0);
        if (pb.requires_grad) reduce_into(pb.grad_buffer(), rb, cb, g, R, C, nullptr, 0, 0);
        break;
      case BinOp::Sub:
        if (pa.requires_grad) reduce_into(pa.grad_buffer(), ra, ca, g, R, C, nullptr, 0, 0);
        if (pb.requires_grad) {
          std::vector<double> ng(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
          reduce_into(pb.grad_buffer(), rb, cb, ng, R, C, nullptr, 0, 0);
        }
        break;
      case BinOp::Mul:
        if (pa.requires_grad) reduce_into(pa.grad_buffer(), ra, ca, g, R, C, &pb.value, rb, cb);
        if (pb.requires_grad) reduce_into(pb.grad_buffer(), rb, cb, g, R, C, &pa.value, ra, ca);
        break;
      case BinOp::Div: {
        // d(x/y)/dx = 1/y, d(x/y)/dy = -x/y^2
        if (pa.requires_grad) {
          std::vector<double> inv(pb.value.size());
          for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 / pb.value[i];
          reduce_into(pa.grad_buffer(), ra, ca, g, R, C, &inv, rb, cb);
        }
        if (pb.requires_grad) {
          std::vector<double> gy(R * C);
          for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) {
              const double y = pb.value[(rb == 1 ? 0 : i) * cb + (cb == 1 ? 0 : j)];
              gy[i * C + j] = -g[i * C + j] * self.value[i * C + j] / y;
            }
          reduce_into(pb.grad_buffer(), rb, cb, gy, R, C, nullptr, 0, 0);
        }
        break;
      }
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner extents differ for " + a.shape_str() + " and " + b.shape_str());
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result(matrix_shape(m, n), std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) gemm_nt(self.grad.data(), pb.value.data(), pa.grad_buffer().data(), m, k, n);
    if (pb.requires_grad) gemm_tn(pa.value.data(), self.grad.data(), pb.grad_buffer().data(), m, k, n);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  require(w.rows() == k, "linear: input " + x.shape_str() + " does not match weight " + w.shape_str());
  const bool has_bias = b.defined();
  if (has_bias) require(b.numel() == n, "linear: bias " + b.shape_str() + " does not match weight " + w.shape_str());
  std::vector<double> out(m * n, 0.0);
  if (has_bias) {
    auto bv = b.data();
    for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + i * n);
  }
  gemm_nn(x.data().data(), w.data().data(), out.data(), m, k, n);
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return make_result(matrix_shape(m, n), std::move(out), std::move(parents), [m, k, n, has_bias](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    if (px.requires_grad) gemm_nt(self.grad.data(), pw.value.data(), px.grad_buffer().data(), m, k, n);
    if (pw.requires_grad) gemm_tn(px.value.data(), self.grad.data(), pw.grad_buffer().data(), m, k, n);
    if (has_bias && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::Div, "div"); }

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor abs(const Tensor& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary(a, [](double x) { return x / (1.0 + std::exp(-x)); },
               [](double x, double) {
                 const double s = 1.0 / (1.0 + std::exp(-x));
                 return s * (1.0 + x * (1.0 - s));
               });
}

Tensor softplus(const Tensor& a) {
  return unary(a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
               [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result({}, {s}, {a}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_cols(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  auto v = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += v[i * c + j];
  return make_result(matrix_shape(r, 1), std::move(out), {a}, [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
  });
}

Tensor sum_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(c, 0.0);
  auto v = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += v[i * c + j];
  return make_result(matrix_shape(1, c), std::move(out), {a}, [r, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j];
  });
}

Tensor row_norm(const Tensor& a, double eps) {
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r);
  auto v = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    double s = eps;
    for (std::size_t j = 0; j < c; ++j) s += v[i * c + j] * v[i * c + j];
    out[i] = std::sqrt(s);
  }
  return make_result(matrix_shape(r, 1), std::move(out), {a}, [r, c](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const double f = self.grad[i] / self.value[i];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += f * p.value[i * c + j];
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t r = x.rows(), c = x.cols();
  require(gamma.numel() == c && beta.numel() == c,
          "layer_norm: affine parameters " + gamma.shape_str() + " do not match input " + x.shape_str());
  std::vector<double> out(r * c), xhat(r * c), inv_std(r);
  auto xv = x.data();
  auto gv = gamma.data();
  auto bv = beta.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gamma, beta},
                     [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& px = *self.parents[0];
                       Node& pg = *self.parents[1];
                       Node& pb = *self.parents[2];
                       const auto& g = self.grad;
                       if (pg.requires_grad || pb.requires_grad) {
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j) {
                             if (pg.requires_grad) pg.grad_buffer()[j] += g[i * c + j] * xhat[i * c + j];
                             if (pb.requires_grad) pb.grad_buffer()[j] += g[i * c + j];
                           }
                       }
                       if (!px.requires_grad) return;
                       auto& gx = px.grad_buffer();
                       const double n = static_cast<double>(c);
                       for (std::size_t i = 0; i < r; ++i) {
                         double s1 = 0.0, s2 = 0.0;
                         for (std::size_t j = 0; j < c; ++j) {
                           const double dxh = g[i * c + j] * pg.value[j];
                           s1 += dxh;
                           s2 += dxh * xhat[i * c + j];
                         }
                         for (std::size_t j = 0; j < c; ++j) {
                           const double dxh = g[i * c + j] * pg.value[j];
                           gx[i * c + j] += inv_std[i] * (dxh - s1 / n - xhat[i * c + j] * s2 / n);
                         }
                       }
                     });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.rows() == r, "concat_cols: row count mismatch " + parts[0].shape_str() + " vs " + p.shape_str());
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].data();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.data() + i * widths[k], widths[k], out.data() + i * total + off);
    off += widths[k];
  }
  return make_result(matrix_shape(r, total), std::move(out), {parts.begin(), parts.end()},
                     [r, total, widths](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < widths.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (p.requires_grad) {
                           auto& g = p.grad_buffer();
                           for (std::size_t i = 0; i < r; ++i)
                             for (std::size_t j = 0; j < widths[k]; ++j)
                               g[i * widths[k] + j] += self.grad[i * total + off + j];
                         }
                         off += widths[k];
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require(p.cols() == c, "concat_rows: column mismatch " + parts[0].shape_str() + " vs " + p.shape_str());
    counts.push_back(p.numel());
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result(matrix_shape(total, c), std::move(out), {parts.begin(), parts.end()}, [counts](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      Node& p = *self.parents[k];
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        for (std::size_t i = 0; i < counts[k]; ++i) g[i] += self.grad[off + i];
      }
      off += counts[k];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  require(begin + count <= c, "slice_cols: range exceeds " + x.shape_str());
  std::vector<double> out(r * count);
  auto v = x.data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(v.data() + i * c + begin, count, out.data() + i * count);
  return make_result(matrix_shape(r, count), std::move(out), {x}, [r, c, begin, count](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * c + begin + j] += self.grad[i * count + j];
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  require(begin + count <= r, "slice_rows: range exceeds " + x.shape_str());
  auto v = x.data();
  std::vector<double> out(v.begin() + begin * c, v.begin() + (begin + count) * c);
  return make_result(matrix_shape(count, c), std::move(out), {x}, [begin, c](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(shape_numel(shape) == x.numel(), "reshape: " + x.shape_str() + " to " + shape_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> index) {
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(index.size() * c);
  auto v = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] < r, "gather_rows: index " + std::to_string(index[i]) + " out of range for " + x.shape_str());
    std::copy_n(v.data() + index[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result(matrix_shape(index.size(), c), std::move(out), {x}, [c, idx = std::move(idx)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor segment_sum(const Tensor& x, std::span<const std::size_t> segment, std::size_t num_segments) {
  const std::size_t r = x.rows(), c = x.cols();
  require(segment.size() == r, "segment_sum: segment ids do not cover " + x.shape_str());
  std::vector<double> out(num_segments * c, 0.0);
  auto v = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    require(segment[i] < num_segments, "segment_sum: segment id out of range");
    for (std::size_t j = 0; j < c; ++j) out[segment[i] * c + j] += v[i * c + j];
  }
  std::vector<std::size_t> seg(segment.begin(), segment.end());
  return make_result(matrix_shape(num_segments, c), std::move(out), {x}, [c, seg = std::move(seg)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < seg.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[seg[i] * c + j];
  });
}

Tensor segment_mean(const Tensor& x, std::span<const std::size_t> segment, std::size_t num_segments) {
  std::vector<double> counts(num_segments, 0.0);
  for (auto s : segment) {
    require(s < num_segments, "segment_mean: segment id out of range");
    counts[s] += 1.0;
  }
  std::vector<double> inv(num_segments);
  for (std::size_t s = 0; s < num_segments; ++s) inv[s] = counts[s] > 0.0 ? 1.0 / counts[s] : 0.0;
  return mul(segment_sum(x, segment, num_segments), Tensor::from_data({num_segments, 1}, std::move(inv)));
}

Tensor segment_max(const Tensor& x, std::span<const std::size_t> segment, std::size_t num_segments) {
  const std::size_t r = x.rows(), c = x.cols();
  require(segment.size() == r, "segment_max: segment ids do not cover " + x.shape_str());
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<double> out(num_segments * c, 0.0);
  std::vector<std::size_t> argmax(num_segments * c, kNone);
  auto v = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    require(segment[i] < num_segments, "segment_max: segment id out of range");
    for (std::size_t j = 0; j < c; ++j) {
      const std::size_t o = segment[i] * c + j;
      if (argmax[o] == kNone || v[i * c + j] > out[o]) {
        out[o] = v[i * c + j];
        argmax[o] = i;
      }
    }
  }
  return make_result(matrix_shape(num_segments, c), std::move(out), {x}, [c, argmax = std::move(argmax)](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax.size(); ++o)
      if (argmax[o] != kNone) g[argmax[o] * c + o % c] += self.grad[o];
  });
}

Segments Segments::single(std::size_t num_queries, std::size_t num_keys) { return {{0, num_queries}, {0, num_keys}}; }

Segments Segments::uniform(std::size_t groups, std::size_t queries_per_group, std::size_t keys_per_group) {
  Segments s;
  s.q_offsets.resize(groups + 1);
  s.kv_offsets.resize(groups + 1);
  for (std::size_t g = 0; g <= groups; ++g) {
    s.q_offsets[g] = g * queries_per_group;
    s.kv_offsets[g] = g * keys_per_group;
  }
  return s;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads, const Segments& segments,
                 std::vector<double>* weights) {
  const std::size_t w = q.cols();
  require(heads > 0 && w % heads == 0,
          "attention: width " + std::to_string(w) + " not divisible by " + std::to_string(heads) + " heads");
  require(k.cols() == w && v.cols() == w,
          "attention: key/value width mismatch " + k.shape_str() + ", " + v.shape_str() + " vs " + q.shape_str());
  require(k.rows() == v.rows(), "attention: keys " + k.shape_str() + " and values " + v.shape_str() + " differ");
  const std::size_t groups = segments.groups();
  require(segments.kv_offsets.size() == segments.q_offsets.size() && groups > 0, "attention: malformed segments");
  require(segments.q_offsets.back() == q.rows() && segments.kv_offsets.back() == k.rows(),
          "attention: segments do not cover q " + q.shape_str() + " / kv " + k.shape_str());

  const std::size_t dh = w / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  auto qv = q.data();
  auto kv = k.data();
  auto vv = v.data();
  std::vector<double> out(q.rows() * w, 0.0);

  // Probabilities per group/head, query-major.
  std::vector<std::size_t> prob_offset(groups + 1, 0);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t nq = segments.q_offsets[g + 1] - segments.q_offsets[g];
    const std::size_t nk = segments.kv_offsets[g + 1] - segments.kv_offsets[g];
    prob_offset[g + 1] = prob_offset[g] + heads * nq * nk;
  }
  std::vector<double> probs(prob_offset.back());

  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t q0 = segments.q_offsets[g], nq = segments.q_offsets[g + 1] - q0;
    const std::size_t k0 = segments.kv_offsets[g], nk = segments.kv_offsets[g + 1] - k0;
    if (nk == 0 || nq == 0) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs.data() + prob_offset[g] + h * nq * nk;
      for (std::size_t i = 0; i < nq; ++i) {
        const double* qrow = qv.data() + (q0 + i) * w + h * dh;
        double* prow = P + i * nk;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < nk; ++j) {
          const double* krow = kv.data() + (k0 + j) * w + h * dh;
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += qrow[d] * krow[d];
          prow[j] = s * inv_sqrt;
          mx = std::max(mx, prow[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < nk; ++j) {
          prow[j] = std::exp(prow[j] - mx);
          z += prow[j];
        }
        for (std::size_t j = 0; j < nk; ++j) prow[j] /= z;
        double* orow = out.data() + (q0 + i) * w + h * dh;
        for (std::size_t j = 0; j < nk; ++j) {
          const double* vrow = vv.data() + (k0 + j) * w + h * dh;
          for (std::size_t d = 0; d < dh; ++d) orow[d] += prow[j] * vrow[d];
        }
      }
    }
  }
  if (weights) *weights = probs;

  return make_result(q.shape(), std::move(out), {q, k, v},
                     [segments, heads, dh, w, inv_sqrt, probs = std::move(probs),
                      prob_offset = std::move(prob_offset)](Node& self) {
                       Node& pq = *self.parents[0];
                       Node& pk = *self.parents[1];
                       Node& pv = *self.parents[2];
                       std::vector<double> dummy;
                       auto& gq = pq.requires_grad ? pq.grad_buffer() : dummy;
                       auto& gk = pk.requires_grad ? pk.grad_buffer() : dummy;
                       auto& gv = pv.requires_grad ? pv.grad_buffer() : dummy;
                       const auto& go = self.grad;
                       std::vector<double> dp;
                       for (std::size_t g = 0; g + 1 < segments.q_offsets.size(); ++g) {
                         const std::size_t q0 = segments.q_offsets[g], nq = segments.q_offsets[g + 1] - q0;
                         const std::size_t k0 = segments.kv_offsets[g], nk = segments.kv_offsets[g + 1] - k0;
                         if (nk == 0 || nq == 0) continue;
                         dp.resize(nk);
                         for (std::size_t h = 0; h < heads; ++h) {
                           const double* P = probs.data() + prob_offset[g] + h * nq * nk;
                           for (std::size_t i = 0; i < nq; ++i) {
                             const double* prow = P + i * nk;
                             const double* grow = go.data() + (q0 + i) * w + h * dh;
                             double dot = 0.0;
                             for (std::size_t j = 0; j < nk; ++j) {
                               const double* vrow = pv.value.data() + (k0 + j) * w + h * dh;
                               double s = 0.0;
                               for (std::size_t d = 0; d < dh; ++d) s += grow[d] * vrow[d];
                               dp[j] = s;
                               dot += s * prow[j];
                               if (pv.requires_grad) {
                                 double* gvrow = gv.data() + (k0 + j) * w + h * dh;
                                 for (std::size_t d = 0; d < dh; ++d) gvrow[d] += prow[j] * grow[d];
                               }
                             }
                             const double* qrow = pq.value.data() + (q0 + i) * w + h * dh;
                             for (std::size_t j = 0; j < nk; ++j) {
                               const double ds = prow[j] * (dp[j] - dot) * inv_sqrt;
                               if (ds == 0.0) continue;
                               const double* krow = pk.value.data() + (k0 + j) * w + h * dh;
                               if (pq.requires_grad) {
                                 double* gqrow = gq.data() + (q0 + i) * w + h * dh;
                                 for (std::size_t d = 0; d < dh; ++d) gqrow[d] += ds * krow[d];
                               }
                               if (pk.requires_grad) {
                                 double* gkrow = gk.data() + (k0 + j) * w + h * dh;
                                 for (std::size_t d = 0; d < dh; ++d) gkrow[d] += ds * qrow[d];
                               }
                             }
                           }
                         }
                       }
                     });
}

}  // namespace radiff::numcore

#pragma once

// Differentiable operators used by the sequence models. Layouts are
// row-major with time-major sequences: [batch, time, channels].

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "wildtraj/engine/tensor.hpp"

namespace wildtraj::engine {

namespace detail {

template <class S>
using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <class S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

inline std::string shapes(const Shape& a, const Shape& b) { return to_string(a) + " vs " + to_string(b); }

template <class S, class F, class D>
Tensor<S> unary(const Tensor<S>& x, F f, D df) {
  std::vector<S> y(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  return make_result<S>(x.shape(), std::move(y), {x}, [df](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

}  // namespace detail

// ----------------------------------------------------------------- elementwise

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  expect(a.shape() == b.shape(), "add: shape mismatch " + detail::shapes(a.shape(), b.shape()));
  std::vector<S> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i];
  return make_result<S>(a.shape(), std::move(y), {a, b}, [](Node<S>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

// a + b where b matches the trailing dimensions of a and repeats over the
// leading ones (biases, positional tables).
template <class S>
Tensor<S> add_tail(const Tensor<S>& a, const Tensor<S>& b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  bool ok = bs.size() <= as.size();
  for (std::size_t i = 0; ok && i < bs.size(); ++i) ok = bs[bs.size() - 1 - i] == as[as.size() - 1 - i];
  expect(ok, "add_tail: trailing shape mismatch " + detail::shapes(as, bs));
  const std::size_t nb = b.size();
  std::vector<S> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] + b.values()[i % nb];
  return make_result<S>(as, std::move(y), {a, b}, [nb](Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % nb] += self.grad[i];
    }
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  expect(a.shape() == b.shape(), "mul: shape mismatch " + detail::shapes(a.shape(), b.shape()));
  std::vector<S> y(a.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.values()[i] * b.values()[i];
  return make_result<S>(a.shape(), std::move(y), {a, b}, [](Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  return detail::unary(x, [c](S v) { return v * c; }, [c](S, S) { return c; });
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  return detail::unary(x, [](S v) { return v > S(0) ? v : S(0); }, [](S v, S) { return v > S(0) ? S(1) : S(0); });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return detail::unary(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); }, [](S, S y) { return y * (S(1) - y); });
}

template <class S>
Tensor<S> tanh(const Tensor<S>& x) {
  return detail::unary(x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

// Tanh approximation of GELU.
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  constexpr S k = S(0.7978845608028654);  // sqrt(2/pi)
  constexpr S c = S(0.044715);
  return detail::unary(
      x, [](S v) { return S(0.5) * v * (S(1) + std::tanh(k * (v + c * v * v * v))); },
      [](S v, S) {
        const S t = std::tanh(k * (v + c * v * v * v));
        return S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * k * (S(1) + S(3) * c * v * v);
      });
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  S total = S(0);
  for (S v : x.values()) total += v;
  return make_result<S>({1}, {total}, {x}, [](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  expect(numel(shape) == x.size(), "reshape: " + detail::shapes(x.shape(), shape));
  std::vector<S> y(x.values().begin(), x.values().end());
  return make_result<S>(std::move(shape), std::move(y), {x}, [](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// -------------------------------------------------------------------- matmul

// x[..., K] @ w[K, N] -> [..., N]
template <class S>
Tensor<S> matmul(const Tensor<S>& x, const Tensor<S>& w) {
  expect(w.rank() == 2 && x.rank() >= 1 && x.shape().back() == w.dim(0),
         "matmul: shape mismatch " + detail::shapes(x.shape(), w.shape()));
  const std::size_t K = w.dim(0);
  const std::size_t N = w.dim(1);
  const std::size_t M = x.size() / K;
  Shape out = x.shape();
  out.back() = N;
  std::vector<S> y(M * N);
  detail::MatMap<S>(y.data(), M, N).noalias() =
      detail::ConstMatMap<S>(x.values().data(), M, K) * detail::ConstMatMap<S>(w.values().data(), K, N);
  return make_result<S>(std::move(out), std::move(y), {x, w}, [M, K, N](Node<S>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    detail::ConstMatMap<S> dy(self.grad.data(), M, N);
    if (px.requires_grad)
      detail::MatMap<S>(px.grad_buffer().data(), M, K).noalias() +=
          dy * detail::ConstMatMap<S>(pw.value.data(), K, N).transpose();
    if (pw.requires_grad)
      detail::MatMap<S>(pw.grad_buffer().data(), K, N).noalias() +=
          detail::ConstMatMap<S>(px.value.data(), M, K).transpose() * dy;
  });
}

// Batched a[G, M, K] @ b[G, K, N], or b[G, N, K] transposed when trans_b.
template <class S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool trans_b = false) {
  expect(a.rank() == 3 && b.rank() == 3 && a.dim(0) == b.dim(0) && a.dim(2) == (trans_b ? b.dim(2) : b.dim(1)),
         "bmm: shape mismatch " + detail::shapes(a.shape(), b.shape()));
  const std::size_t G = a.dim(0), M = a.dim(1), K = a.dim(2);
  const std::size_t N = trans_b ? b.dim(1) : b.dim(2);
  std::vector<S> y(G * M * N);
  for (std::size_t g = 0; g < G; ++g) {
    detail::ConstMatMap<S> A(a.values().data() + g * M * K, M, K);
    detail::MatMap<S> Y(y.data() + g * M * N, M, N);
    if (trans_b)
      Y.noalias() = A * detail::ConstMatMap<S>(b.values().data() + g * N * K, N, K).transpose();
    else
      Y.noalias() = A * detail::ConstMatMap<S>(b.values().data() + g * K * N, K, N);
  }
  return make_result<S>({G, M, N}, std::move(y), {a, b}, [G, M, K, N, trans_b](Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t g = 0; g < G; ++g) {
      detail::ConstMatMap<S> dY(self.grad.data() + g * M * N, M, N);
      if (trans_b) {
        detail::ConstMatMap<S> B(pb.value.data() + g * N * K, N, K);
        if (pa.requires_grad) detail::MatMap<S>(pa.grad_buffer().data() + g * M * K, M, K).noalias() += dY * B;
        if (pb.requires_grad)
          detail::MatMap<S>(pb.grad_buffer().data() + g * N * K, N, K).noalias() +=
              dY.transpose() * detail::ConstMatMap<S>(pa.value.data() + g * M * K, M, K);
      } else {
        detail::ConstMatMap<S> B(pb.value.data() + g * K * N, K, N);
        if (pa.requires_grad)
          detail::MatMap<S>(pa.grad_buffer().data() + g * M * K, M, K).noalias() += dY * B.transpose();
        if (pb.requires_grad)
          detail::MatMap<S>(pb.grad_buffer().data() + g * K * N, K, N).noalias() +=
              detail::ConstMatMap<S>(pa.value.data() + g * M * K, M, K).transpose() * dY;
      }
    }
  });
}

// x @ w + b
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_tail(matmul(x, w), b);
}

// ------------------------------------------------------------------- softmax

inline constexpr double kMaskedLogit = -1e9;

struct SoftmaxDiagnostics {
  std::size_t fully_masked_rows = 0;
};

// Softmax over the last axis of x[N, Q, K]. `key_mask` holds G*K entries
// (1 = keep) with N a multiple of G; row n uses mask row n / (N / G). Masked
// keys get an additive -1e9 before exponentiation. Rows whose keys are all
// masked produce zeros and are counted in `diag`. An empty mask keeps all.
template <class S>
Tensor<S> masked_softmax(const Tensor<S>& x, std::span<const std::uint8_t> key_mask = {},
                         SoftmaxDiagnostics* diag = nullptr) {
  expect(x.rank() >= 1, "masked_softmax: scalar input");
  const std::size_t K = x.shape().back();
  const std::size_t rows = x.size() / K;
  // Rank-3 inputs share one mask row across their Q query rows.
  const std::size_t Q = x.rank() >= 3 ? x.shape()[x.rank() - 2] : 1;
  const std::size_t N = rows / Q;
  std::size_t repeat = 1;
  if (!key_mask.empty()) {
    expect(key_mask.size() % K == 0 && N % (key_mask.size() / K) == 0,
           "masked_softmax: mask of " + std::to_string(key_mask.size()) + " entries does not fit " +
               to_string(x.shape()));
    repeat = N / (key_mask.size() / K);
  }
  std::vector<S> y(x.size());
  std::vector<S> z(K);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::uint8_t* m = key_mask.empty() ? nullptr : key_mask.data() + ((r / Q) / repeat) * K;
    const S* in = xv.data() + r * K;
    S* out = y.data() + r * K;
    bool any = false;
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      const bool keep = !m || m[k];
      any = any || keep;
      z[k] = keep ? in[k] : in[k] + S(kMaskedLogit);
      mx = std::max(mx, z[k]);
    }
    if (!any) {
      std::fill(out, out + K, S(0));
      if (diag) ++diag->fully_masked_rows;
      continue;
    }
    S total = S(0);
    for (std::size_t k = 0; k < K; ++k) {
      out[k] = std::exp(z[k] - mx);
      total += out[k];
    }
    for (std::size_t k = 0; k < K; ++k) out[k] /= total;
  }
  return make_result<S>(x.shape(), std::move(y), {x}, [K, rows](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const S* yv = self.value.data() + r * K;
      const S* dy = self.grad.data() + r * K;
      S dot = S(0);
      for (std::size_t k = 0; k < K; ++k) dot += yv[k] * dy[k];
      for (std::size_t k = 0; k < K; ++k) g[r * K + k] += yv[k] * (dy[k] - dot);
    }
  });
}

// --------------------------------------------------------------------- norms

// Normalizes over the last axis with learned scale and shift.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, S eps = S(1e-5)) {
  const std::size_t C = x.shape().back();
  expect(gamma.size() == C && beta.size() == C, "layer_norm: parameter size mismatch for " + to_string(x.shape()));
  const std::size_t rows = x.size() / C;
  std::vector<S> y(x.size());
  std::vector<S> xhat(x.size());
  std::vector<S> inv_std(rows);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const S* in = xv.data() + r * C;
    S mean = S(0);
    for (std::size_t c = 0; c < C; ++c) mean += in[c];
    mean /= S(C);
    S var = S(0);
    for (std::size_t c = 0; c < C; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= S(C);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < C; ++c) {
      xhat[r * C + c] = (in[c] - mean) * is;
      y[r * C + c] = xhat[r * C + c] * gamma.values()[c] + beta.values()[c];
    }
  }
  return make_result<S>(
      x.shape(), std::move(y), {x, gamma, beta},
      [C, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        for (std::size_t r = 0; r < rows; ++r) {
          const S* dy = self.grad.data() + r * C;
          const S* xh = xhat.data() + r * C;
          if (pg.requires_grad || pb.requires_grad) {
            for (std::size_t c = 0; c < C; ++c) {
              if (pg.requires_grad) pg.grad_buffer()[c] += dy[c] * xh[c];
              if (pb.requires_grad) pb.grad_buffer()[c] += dy[c];
            }
          }
          if (!px.requires_grad) continue;
          S mean_d = S(0), mean_dx = S(0);
          for (std::size_t c = 0; c < C; ++c) {
            const S d = dy[c] * pg.value[c];
            mean_d += d;
            mean_dx += d * xh[c];
          }
          mean_d /= S(C);
          mean_dx /= S(C);
          auto& g = px.grad_buffer();
          for (std::size_t c = 0; c < C; ++c)
            g[r * C + c] += inv_std[r] * (dy[c] * pg.value[c] - mean_d - xh[c] * mean_dx);
        }
      });
}

// Group normalization of x[B, T, C] with `groups` channel groups. Statistics
// per (batch, group) run over timesteps with time_mask = 1 (all timesteps
// when the mask is empty); masked timesteps output 0.
template <class S>
Tensor<S> group_norm(const Tensor<S>& x, std::size_t groups, const Tensor<S>& gamma, const Tensor<S>& beta,
                     std::span<const std::uint8_t> time_mask = {}, S eps = S(1e-5)) {
  expect(x.rank() == 3, "group_norm: expected [B,T,C], got " + to_string(x.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  expect(groups > 0 && C % groups == 0, "group_norm: " + std::to_string(C) + " channels not divisible by " +
                                            std::to_string(groups) + " groups");
  expect(gamma.size() == C && beta.size() == C, "group_norm: parameter size mismatch");
  expect(time_mask.empty() || time_mask.size() == B * T, "group_norm: mask size mismatch");
  const std::size_t cg = C / groups;
  const auto xv = x.values();
  std::vector<S> y(x.size(), S(0));
  std::vector<S> xhat(x.size(), S(0));
  std::vector<S> inv_std(B * groups, S(0));
  std::vector<std::size_t> counts(B * groups, 0);
  auto keep = [&](std::size_t b, std::size_t t) { return time_mask.empty() || time_mask[b * T + t]; };
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      S mean = S(0);
      std::size_t n = 0;
      for (std::size_t t = 0; t < T; ++t) {
        if (!keep(b, t)) continue;
        for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) mean += xv[(b * T + t) * C + c];
        n += cg;
      }
      counts[b * groups + g] = n;
      if (n == 0) continue;
      mean /= S(n);
      S var = S(0);
      for (std::size_t t = 0; t < T; ++t) {
        if (!keep(b, t)) continue;
        for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
          const S d = xv[(b * T + t) * C + c] - mean;
          var += d * d;
        }
      }
      var /= S(n);
      const S is = S(1) / std::sqrt(var + eps);
      inv_std[b * groups + g] = is;
      for (std::size_t t = 0; t < T; ++t) {
        if (!keep(b, t)) continue;
        for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
          const std::size_t i = (b * T + t) * C + c;
          xhat[i] = (xv[i] - mean) * is;
          y[i] = xhat[i] * gamma.values()[c] + beta.values()[c];
        }
      }
    }
  }
  std::vector<std::uint8_t> mask(time_mask.begin(), time_mask.end());
  return make_result<S>(
      x.shape(), std::move(y), {x, gamma, beta},
      [B, T, C, groups, cg, xhat = std::move(xhat), inv_std = std::move(inv_std), counts = std::move(counts),
       mask = std::move(mask)](Node<S>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        auto keep = [&](std::size_t b, std::size_t t) { return mask.empty() || mask[b * T + t]; };
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t g = 0; g < groups; ++g) {
            const std::size_t n = counts[b * groups + g];
            if (n == 0) continue;
            S mean_d = S(0), mean_dx = S(0);
            for (std::size_t t = 0; t < T; ++t) {
              if (!keep(b, t)) continue;
              for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                const std::size_t i = (b * T + t) * C + c;
                if (pg.requires_grad) pg.grad_buffer()[c] += self.grad[i] * xhat[i];
                if (pb.requires_grad) pb.grad_buffer()[c] += self.grad[i];
                const S d = self.grad[i] * pg.value[c];
                mean_d += d;
                mean_dx += d * xhat[i];
              }
            }
            if (!px.requires_grad) continue;
            mean_d /= S(n);
            mean_dx /= S(n);
            auto& gx = px.grad_buffer();
            const S is = inv_std[b * groups + g];
            for (std::size_t t = 0; t < T; ++t) {
              if (!keep(b, t)) continue;
              for (std::size_t c = g * cg; c < (g + 1) * cg; ++c) {
                const std::size_t i = (b * T + t) * C + c;
                gx[i] += is * (self.grad[i] * pg.value[c] - mean_d - xhat[i] * mean_dx);
              }
            }
          }
        }
      });
}

// ------------------------------------------------------------------- conv1d

enum class Padding { causal, same };

// x[B, T, Cin] convolved with w[K, Cin, Cout] plus bias[Cout]. Tap k reads
// input t - (K-1-k)*dilation (causal) or t + (k - (K-1)/2)*dilation (same,
// odd K). Out-of-range taps read zeros.
template <class S>
Tensor<S> conv1d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, std::size_t dilation,
                 Padding padding) {
  expect(x.rank() == 3 && w.rank() == 3 && w.dim(1) == x.dim(2) && bias.size() == w.dim(2),
         "conv1d: shape mismatch " + detail::shapes(x.shape(), w.shape()));
  expect(padding == Padding::causal || w.dim(0) % 2 == 1, "conv1d: same padding needs an odd kernel");
  expect(dilation >= 1, "conv1d: dilation must be >= 1");
  const std::size_t B = x.dim(0), T = x.dim(1), Cin = x.dim(2), K = w.dim(0), Cout = w.dim(2);
  auto offset = [=](std::size_t k) -> std::ptrdiff_t {
    const auto d = static_cast<std::ptrdiff_t>(dilation);
    if (padding == Padding::causal) return -static_cast<std::ptrdiff_t>(K - 1 - k) * d;
    return (static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>((K - 1) / 2)) * d;
  };
  // Output rows [t0, t1) read input rows [t0 + off, t1 + off).
  auto range = [=](std::size_t k, std::size_t& t0, std::size_t& t1) {
    const std::ptrdiff_t off = offset(k);
    const auto Ti = static_cast<std::ptrdiff_t>(T);
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -off);
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(Ti, Ti - off);
    t0 = static_cast<std::size_t>(lo);
    t1 = static_cast<std::size_t>(std::max(lo, hi));
  };
  std::vector<S> y(B * T * Cout);
  for (std::size_t i = 0; i < B * T; ++i)
    std::copy(bias.values().begin(), bias.values().end(), y.begin() + static_cast<std::ptrdiff_t>(i * Cout));
  const auto xv = x.values();
  const auto wv = w.values();
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t t0, t1;
    range(k, t0, t1);
    if (t1 <= t0) continue;
    const std::ptrdiff_t off = offset(k);
    detail::ConstMatMap<S> Wk(wv.data() + k * Cin * Cout, Cin, Cout);
    for (std::size_t b = 0; b < B; ++b) {
      const auto src = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t0) + off);
      detail::MatMap<S>(y.data() + (b * T + t0) * Cout, t1 - t0, Cout).noalias() +=
          detail::ConstMatMap<S>(xv.data() + (b * T + src) * Cin, t1 - t0, Cin) * Wk;
    }
  }
  return make_result<S>({B, T, Cout}, std::move(y), {x, w, bias}, [=](Node<S>& self) {
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    auto& pb = *self.parents[2];
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < B * T; ++i)
        for (std::size_t c = 0; c < Cout; ++c) g[c] += self.grad[i * Cout + c];
    }
    for (std::size_t k = 0; k < K; ++k) {
      std::size_t t0, t1;
      range(k, t0, t1);
      if (t1 <= t0) continue;
      const std::ptrdiff_t off = offset(k);
      for (std::size_t b = 0; b < B; ++b) {
        const auto src = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(t0) + off);
        detail::ConstMatMap<S> dY(self.grad.data() + (b * T + t0) * Cout, t1 - t0, Cout);
        if (px.requires_grad)
          detail::MatMap<S>(px.grad_buffer().data() + (b * T + src) * Cin, t1 - t0, Cin).noalias() +=
              dY * detail::ConstMatMap<S>(pw.value.data() + k * Cin * Cout, Cin, Cout).transpose();
        if (pw.requires_grad)
          detail::MatMap<S>(pw.grad_buffer().data() + k * Cin * Cout, Cin, Cout).noalias() +=
              detail::ConstMatMap<S>(px.value.data() + (b * T + src) * Cin, t1 - t0, Cin).transpose() * dY;
      }
    }
  });
}

// ------------------------------------------------------------------- dropout

// Inverted dropout. Identity when not training or p == 0.
template <class S, class Rng>
Tensor<S> dropout(const Tensor<S>& x, double p, bool training, Rng& rng) {
  expect(p >= 0.0 && p < 1.0, "dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const S kscale = S(1.0 / (1.0 - p));
  std::vector<S> factor(x.size());
  for (auto& f : factor) f = keep(rng) ? kscale : S(0);
  std::vector<S> y(x.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.values()[i] * factor[i];
  return make_result<S>(x.shape(), std::move(y), {x}, [factor = std::move(factor)](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor[i];
  });
}

// ---------------------------------------------------------------------- loss

// sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i]
template <class S>
Tensor<S> weighted_cross_entropy(const Tensor<S>& logits, std::span<const int> labels,
                                 std::span<const double> class_weights) {
  expect(logits.rank() == 2 && logits.dim(0) == labels.size() && logits.dim(1) == class_weights.size(),
         "weighted_cross_entropy: logits " + to_string(logits.shape()) + " vs " + std::to_string(labels.size()) +
             " labels and " + std::to_string(class_weights.size()) + " weights");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  std::vector<S> prob(B * K);
  S total_w = S(0);
  S loss = S(0);
  const auto lv = logits.values();
  for (std::size_t i = 0; i < B; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    expect(labels[i] >= 0 && y < K, "weighted_cross_entropy: label out of range");
    const S* z = lv.data() + i * K;
    S mx = *std::max_element(z, z + K);
    S se = S(0);
    for (std::size_t k = 0; k < K; ++k) se += std::exp(z[k] - mx);
    const S lse = mx + std::log(se);
    for (std::size_t k = 0; k < K; ++k) prob[i * K + k] = std::exp(z[k] - lse);
    const S w = S(class_weights[y]);
    total_w += w;
    loss += w * (lse - z[y]);
  }
  expect(total_w > S(0), "weighted_cross_entropy: zero total weight");
  std::vector<int> lab(labels.begin(), labels.end());
  std::vector<double> cw(class_weights.begin(), class_weights.end());
  return make_result<S>({1}, {loss / total_w}, {logits},
                        [B, K, total_w, prob = std::move(prob), lab = std::move(lab), cw = std::move(cw)](Node<S>& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          auto& g = p.grad_buffer();
                          const S up = self.grad[0] / total_w;
                          for (std::size_t i = 0; i < B; ++i) {
                            const auto y = static_cast<std::size_t>(lab[i]);
                            const S w = S(cw[y]) * up;
                            for (std::size_t k = 0; k < K; ++k)
                              g[i * K + k] += w * (prob[i * K + k] - (k == y ? S(1) : S(0)));
                          }
                        });
}

// ------------------------------------------------------------ sequence shape

// Mean of x[B, T, C] over timesteps with mask = 1; all-masked rows give 0.
template <class S>
Tensor<S> masked_mean(const Tensor<S>& x, std::span<const std::uint8_t> mask) {
  expect(x.rank() == 3 && mask.size() == x.dim(0) * x.dim(1), "masked_mean: shape mismatch " + to_string(x.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  std::vector<S> y(B * C, S(0));
  std::vector<S> inv(B, S(0));
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t n = 0;
    for (std::size_t t = 0; t < T; ++t) {
      if (!mask[b * T + t]) continue;
      ++n;
      for (std::size_t c = 0; c < C; ++c) y[b * C + c] += x.values()[(b * T + t) * C + c];
    }
    if (n == 0) continue;
    inv[b] = S(1) / S(n);
    for (std::size_t c = 0; c < C; ++c) y[b * C + c] *= inv[b];
  }
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_result<S>({B, C}, std::move(y), {x}, [B, T, C, inv = std::move(inv), m = std::move(m)](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t) {
        if (!m[b * T + t]) continue;
        for (std::size_t c = 0; c < C; ++c) g[(b * T + t) * C + c] += self.grad[b * C + c] * inv[b];
      }
  });
}

// Zeroes rows of x[B, T, C] where mask = 0.
template <class S>
Tensor<S> mask_rows(const Tensor<S>& x, std::span<const std::uint8_t> mask) {
  expect(x.rank() == 3 && mask.size() == x.dim(0) * x.dim(1), "mask_rows: shape mismatch " + to_string(x.shape()));
  const std::size_t rows = x.dim(0) * x.dim(1), C = x.dim(2);
  std::vector<S> y(x.size(), S(0));
  for (std::size_t r = 0; r < rows; ++r)
    if (mask[r]) std::copy_n(x.values().data() + r * C, C, y.data() + r * C);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_result<S>(x.shape(), std::move(y), {x}, [rows, C, m = std::move(m)](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      if (m[r])
        for (std::size_t c = 0; c < C; ++c) g[r * C + c] += self.grad[r * C + c];
  });
}

// Concatenates along the last axis; leading dimensions must agree.
template <class S>
Tensor<S> concat_last(const std::vector<Tensor<S>>& parts) {
  expect(!parts.empty(), "concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    Shape l = p.shape();
    const std::size_t w = l.back();
    l.pop_back();
    expect(l == lead, "concat_last: leading shape mismatch " + detail::shapes(parts[0].shape(), p.shape()));
    widths.push_back(w);
    total += w;
  }
  const std::size_t rows = numel(lead);
  std::vector<S> y(rows * total);
  std::size_t col = 0;
  for (std::size_t j = 0; j < parts.size(); ++j) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(parts[j].values().data() + r * widths[j], widths[j], y.data() + r * total + col);
    col += widths[j];
  }
  Shape out = lead;
  out.push_back(total);
  return make_result<S>(std::move(out), std::move(y), parts, [rows, total, widths](Node<S>& self) {
    std::size_t col = 0;
    for (std::size_t j = 0; j < widths.size(); ++j) {
      auto& p = *self.parents[j];
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < widths[j]; ++c) g[r * widths[j] + c] += self.grad[r * total + col + c];
      }
      col += widths[j];
    }
  });
}

// x[..., N] columns [start, start + len).
template <class S>
Tensor<S> slice_last(const Tensor<S>& x, std::size_t start, std::size_t len) {
  const std::size_t N = x.shape().back();
  expect(start + len <= N, "slice_last: range out of bounds for " + to_string(x.shape()));
  const std::size_t rows = x.size() / N;
  std::vector<S> y(rows * len);
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.values().data() + r * N + start, len, y.data() + r * len);
  Shape out = x.shape();
  out.back() = len;
  return make_result<S>(std::move(out), std::move(y), {x}, [rows, N, start, len](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < len; ++c) g[r * N + start + c] += self.grad[r * len + c];
  });
}

// x[B, T, C] at timestep t -> [B, C].
template <class S>
Tensor<S> select_time(const Tensor<S>& x, std::size_t t) {
  expect(x.rank() == 3 && t < x.dim(1), "select_time: bad index for " + to_string(x.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  std::vector<S> y(B * C);
  for (std::size_t b = 0; b < B; ++b) std::copy_n(x.values().data() + (b * T + t) * C, C, y.data() + b * C);
  return make_result<S>({B, C}, std::move(y), {x}, [B, T, C, t](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) g[(b * T + t) * C + c] += self.grad[b * C + c];
  });
}

// Prepends token[C] to every sequence of x[B, T, C] -> [B, T+1, C].
template <class S>
Tensor<S> prepend_token(const Tensor<S>& x, const Tensor<S>& token) {
  expect(x.rank() == 3 && token.size() == x.dim(2), "prepend_token: shape mismatch " +
                                                        detail::shapes(x.shape(), token.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), C = x.dim(2);
  std::vector<S> y(B * (T + 1) * C);
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(token.values().data(), C, y.data() + b * (T + 1) * C);
    std::copy_n(x.values().data() + b * T * C, T * C, y.data() + (b * (T + 1) + 1) * C);
  }
  return make_result<S>({B, T + 1, C}, std::move(y), {x, token}, [B, T, C](Node<S>& self) {
    auto& px = *self.parents[0];
    auto& pt = *self.parents[1];
    for (std::size_t b = 0; b < B; ++b) {
      const S* src = self.grad.data() + b * (T + 1) * C;
      if (pt.requires_grad)
        for (std::size_t c = 0; c < C; ++c) pt.grad_buffer()[c] += src[c];
      if (px.requires_grad) {
        auto& g = px.grad_buffer();
        for (std::size_t i = 0; i < T * C; ++i) g[b * T * C + i] += src[C + i];
      }
    }
  });
}

// [B, T, H*D] -> [B*H, T, D]
template <class S>
Tensor<S> split_heads(const Tensor<S>& x, std::size_t heads) {
  expect(x.rank() == 3 && heads > 0 && x.dim(2) % heads == 0, "split_heads: bad shape " + to_string(x.shape()));
  const std::size_t B = x.dim(0), T = x.dim(1), D = x.dim(2) / heads, H = heads;
  std::vector<S> y(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h)
        std::copy_n(x.values().data() + (b * T + t) * H * D + h * D, D, y.data() + ((b * H + h) * T + t) * D);
  return make_result<S>({B * H, T, D}, std::move(y), {x}, [B, T, D, H](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t d = 0; d < D; ++d)
            g[(b * T + t) * H * D + h * D + d] += self.grad[((b * H + h) * T + t) * D + d];
  });
}

// [B*H, T, D] -> [B, T, H*D]
template <class S>
Tensor<S> merge_heads(const Tensor<S>& x, std::size_t heads) {
  expect(x.rank() == 3 && heads > 0 && x.dim(0) % heads == 0, "merge_heads: bad shape " + to_string(x.shape()));
  const std::size_t H = heads, B = x.dim(0) / H, T = x.dim(1), D = x.dim(2);
  std::vector<S> y(x.size());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t h = 0; h < H; ++h)
        std::copy_n(x.values().data() + ((b * H + h) * T + t) * D, D, y.data() + (b * T + t) * H * D + h * D);
  return make_result<S>({B, T, H * D}, std::move(y), {x}, [B, T, D, H](Node<S>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t d = 0; d < D; ++d)
            g[((b * H + h) * T + t) * D + d] += self.grad[(b * T + t) * H * D + h * D + d];
  });
}

// Row-wise select on [B, N]: rows with mask = 1 take `a`, others `b`.
template <class S>
Tensor<S> select_rows(std::span<const std::uint8_t> mask, const Tensor<S>& a, const Tensor<S>& b) {
  expect(a.shape() == b.shape() && a.rank() == 2 && mask.size() == a.dim(0),
         "select_rows: shape mismatch " + detail::shapes(a.shape(), b.shape()));
  const std::size_t B = a.dim(0), N = a.dim(1);
  std::vector<S> y(a.size());
  for (std::size_t r = 0; r < B; ++r)
    std::copy_n((mask[r] ? a : b).values().data() + r * N, N, y.data() + r * N);
  std::vector<std::uint8_t> m(mask.begin(), mask.end());
  return make_result<S>(a.shape(), std::move(y), {a, b}, [B, N, m = std::move(m)](Node<S>& self) {
    for (std::size_t r = 0; r < B; ++r) {
      auto& p = *self.parents[m[r] ? 0 : 1];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t c = 0; c < N; ++c) g[r * N + c] += self.grad[r * N + c];
    }
  });
}

}  // namespace wildtraj::engine

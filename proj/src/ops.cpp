#include "metaformer/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace metaformer {

namespace {

[[noreturn]] void fail(std::string_view op, const std::string& what) {
  throw std::invalid_argument(std::string(op) + ": " + what);
}

template <typename T>
void require_rank(std::string_view op, const Tensor<T>& t, std::size_t rank,
                  std::string_view name) {
  if (!t.defined()) fail(op, std::string(name) + " is undefined");
  if (t.rank() != rank) {
    fail(op, std::string(name) + " must have rank " + std::to_string(rank) +
                 ", got shape " + to_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(std::string_view op, const Tensor<T>& a,
                        const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    fail(op, "shape mismatch " + to_string(a.shape()) + " vs " +
                 to_string(b.shape()));
  }
}

// Output columns [lo, hi) whose input column ow*stride + k - pad is in bounds.
struct Span1d {
  std::int64_t lo;
  std::int64_t hi;
};

Span1d valid_range(std::int64_t out_len, std::int64_t in_len, std::int64_t k,
                   std::int64_t stride, std::int64_t pad) {
  std::int64_t lo = 0;
  if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
  const std::int64_t last = in_len - 1 - k + pad;
  std::int64_t hi = last < 0 ? 0 : std::min(out_len, last / stride + 1);
  return {lo, std::max(lo, hi)};
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, const Conv2dOptions& opt) {
  constexpr std::string_view op = "conv2d";
  require_rank(op, input, 4, "input");
  require_rank(op, weight, 4, "weight");
  const std::int64_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2),
                     W = input.dim(3);
  const std::int64_t Cout = weight.dim(0), Cg = weight.dim(1),
                     Kh = weight.dim(2), Kw = weight.dim(3);
  const std::int64_t G = opt.groups;
  const std::int64_t sh = opt.stride[0], sw = opt.stride[1];
  const std::int64_t ph = opt.padding[0], pw = opt.padding[1];
  if (G < 1) fail(op, "groups must be >= 1, got " + std::to_string(G));
  if (sh < 1 || sw < 1) fail(op, "stride must be >= 1");
  if (ph < 0 || pw < 0) fail(op, "padding must be >= 0");
  if (Cin % G != 0) {
    fail(op, "input channels (dim 1) = " + std::to_string(Cin) +
                 " not divisible by groups " + std::to_string(G));
  }
  if (Cout % G != 0) {
    fail(op, "output channels (weight dim 0) = " + std::to_string(Cout) +
                 " not divisible by groups " + std::to_string(G));
  }
  if (Cg * G != Cin) {
    fail(op, "weight in-channels (dim 1) = " + std::to_string(Cg) +
                 " but input channels (dim 1) / groups = " +
                 std::to_string(Cin / G));
  }
  if (H + 2 * ph < Kh) {
    fail(op, "kernel height (dim 2) = " + std::to_string(Kh) +
                 " exceeds padded input height " + std::to_string(H + 2 * ph));
  }
  if (W + 2 * pw < Kw) {
    fail(op, "kernel width (dim 3) = " + std::to_string(Kw) +
                 " exceeds padded input width " + std::to_string(W + 2 * pw));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Cout)) {
    fail(op, "bias shape " + to_string(bias.shape()) + " must be [" +
                 std::to_string(Cout) + "]");
  }
  const std::int64_t Ho = (H + 2 * ph - Kh) / sh + 1;
  const std::int64_t Wo = (W + 2 * pw - Kw) / sw + 1;
  const std::int64_t cout_per_group = Cout / G;

  std::vector<Span1d> col_ranges(static_cast<std::size_t>(Kw));
  for (std::int64_t kw = 0; kw < Kw; ++kw) col_ranges[kw] = valid_range(Wo, W, kw, sw, pw);
  std::vector<Span1d> row_ranges(static_cast<std::size_t>(Kh));
  for (std::int64_t kh = 0; kh < Kh; ++kh) row_ranges[kh] = valid_range(Ho, H, kh, sh, ph);

  // Visits every (output cell, input cell, weight) triple exactly once.
  auto for_each_tap = [=](auto&& fn) {
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t co = 0; co < Cout; ++co) {
        const std::int64_t g = co / cout_per_group;
        for (std::int64_t cl = 0; cl < Cg; ++cl) {
          const std::int64_t ci = g * Cg + cl;
          for (std::int64_t kh = 0; kh < Kh; ++kh) {
            for (std::int64_t kw = 0; kw < Kw; ++kw) {
              const std::int64_t widx = ((co * Cg + cl) * Kh + kh) * Kw + kw;
              const auto rows = row_ranges[kh];
              const auto cols = col_ranges[kw];
              for (std::int64_t oh = rows.lo; oh < rows.hi; ++oh) {
                const std::int64_t ih = oh * sh + kh - ph;
                const std::int64_t out_row = ((b * Cout + co) * Ho + oh) * Wo;
                const std::int64_t in_row = ((b * Cin + ci) * H + ih) * W + kw - pw;
                fn(widx, out_row, in_row, cols.lo, cols.hi);
              }
            }
          }
        }
      }
    }
  };

  const auto x = input.data();
  const auto w = weight.data();
  std::vector<T> out(static_cast<std::size_t>(B * Cout * Ho * Wo), T(0));
  if (bias.defined()) {
    const auto bv = bias.data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t co = 0; co < Cout; ++co)
        std::fill_n(out.begin() + (b * Cout + co) * Ho * Wo, Ho * Wo, bv[co]);
  }
  for_each_tap([&](std::int64_t widx, std::int64_t out_row, std::int64_t in_row,
                   std::int64_t lo, std::int64_t hi) {
    const T wv = w[widx];
    T* o = out.data() + out_row;
    const T* xi = x.data();
    for (std::int64_t ow = lo; ow < hi; ++ow) o[ow] += wv * xi[in_row + ow * sw];
  });

  return record_op<T>(
      op, {B, Cout, Ho, Wo}, std::move(out), {input, weight, bias},
      [=](std::span<const T> gout, std::span<const T>) {
        T* gx = input.grad_target();
        T* gw = weight.grad_target();
        T* gb = bias.defined() ? bias.grad_target() : nullptr;
        const auto xv = input.data();
        const auto wv = weight.data();
        if (gx || gw) {
          for_each_tap([&](std::int64_t widx, std::int64_t out_row,
                           std::int64_t in_row, std::int64_t lo, std::int64_t hi) {
            const T* go = gout.data() + out_row;
            if (gx) {
              const T wval = wv[widx];
              for (std::int64_t ow = lo; ow < hi; ++ow) gx[in_row + ow * sw] += wval * go[ow];
            }
            if (gw) {
              const T* xi = xv.data();
              T acc = 0;
              for (std::int64_t ow = lo; ow < hi; ++ow) acc += go[ow] * xi[in_row + ow * sw];
              gw[widx] += acc;
            }
          });
        }
        if (gb) {
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t co = 0; co < Cout; ++co) {
              const T* go = gout.data() + (b * Cout + co) * Ho * Wo;
              T acc = 0;
              for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += go[i];
              gb[co] += acc;
            }
        }
      });
}

// ---------------------------------------------------------------------------
// avg_pool2d_excl

template <typename T>
Tensor<T> avg_pool2d_excl(const Tensor<T>& input, int k) {
  constexpr std::string_view op = "avg_pool2d_excl";
  require_rank(op, input, 4, "input");
  if (k < 1 || k % 2 == 0) {
    fail(op, "pool size must be a positive odd integer, got " + std::to_string(k));
  }
  const std::int64_t planes = input.dim(0) * input.dim(1);
  const std::int64_t H = input.dim(2), W = input.dim(3);
  const std::int64_t r = k / 2;

  // Window bounds along one axis, clipped to the image.
  auto bounds = [r](std::int64_t i, std::int64_t n) {
    return std::pair{std::max<std::int64_t>(0, i - r), std::min<std::int64_t>(n, i + r + 1)};
  };

  const auto x = input.data();
  std::vector<T> out(x.size());
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* xp = x.data() + p * H * W;
    T* op_ = out.data() + p * H * W;
    for (std::int64_t i = 0; i < H; ++i) {
      const auto [r0, r1] = bounds(i, H);
      for (std::int64_t j = 0; j < W; ++j) {
        const auto [c0, c1] = bounds(j, W);
        T acc = 0;
        for (std::int64_t a = r0; a < r1; ++a)
          for (std::int64_t b = c0; b < c1; ++b) acc += xp[a * W + b];
        op_[i * W + j] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
      }
    }
  }

  return record_op<T>(op, input.shape(), std::move(out), {input},
                      [=](std::span<const T> gout, std::span<const T>) {
                        T* gx = input.grad_target();
                        if (!gx) return;
                        for (std::int64_t p = 0; p < planes; ++p) {
                          const T* go = gout.data() + p * H * W;
                          T* gp = gx + p * H * W;
                          for (std::int64_t i = 0; i < H; ++i) {
                            const auto [r0, r1] = bounds(i, H);
                            for (std::int64_t j = 0; j < W; ++j) {
                              const auto [c0, c1] = bounds(j, W);
                              const T share = go[i * W + j] /
                                              static_cast<T>((r1 - r0) * (c1 - c0));
                              for (std::int64_t a = r0; a < r1; ++a)
                                for (std::int64_t b = c0; b < c1; ++b) gp[a * W + b] += share;
                            }
                          }
                        }
                      });
}

// ---------------------------------------------------------------------------
// linear / matmul

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  constexpr std::string_view op = "linear";
  require_rank(op, weight, 2, "weight");
  if (!x.defined() || x.rank() < 1) fail(op, "input must have rank >= 1");
  const std::int64_t in = weight.dim(1), out_f = weight.dim(0);
  if (x.shape().back() != in) {
    fail(op, "input last dim = " + std::to_string(x.shape().back()) +
                 " does not match weight in-features (dim 1) = " + std::to_string(in));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
    fail(op, "bias shape " + to_string(bias.shape()) + " must be [" +
                 std::to_string(out_f) + "]");
  }
  const std::int64_t M = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  const auto xv = x.data();
  const auto wv = weight.data();
  std::vector<T> out(static_cast<std::size_t>(M * out_f));
  for (std::int64_t m = 0; m < M; ++m) {
    const T* xr = xv.data() + m * in;
    for (std::int64_t o = 0; o < out_f; ++o) {
      const T* wr = wv.data() + o * in;
      T acc = bias.defined() ? bias.data()[o] : T(0);
      for (std::int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      out[m * out_f + o] = acc;
    }
  }
  return record_op<T>(op, std::move(out_shape), std::move(out), {x, weight, bias},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* gx = x.grad_target();
                        T* gw = weight.grad_target();
                        T* gb = bias.defined() ? bias.grad_target() : nullptr;
                        const auto xv2 = x.data();
                        const auto wv2 = weight.data();
                        for (std::int64_t m = 0; m < M; ++m) {
                          const T* xr = xv2.data() + m * in;
                          for (std::int64_t o = 0; o < out_f; ++o) {
                            const T go = g[m * out_f + o];
                            if (gx) {
                              T* gxr = gx + m * in;
                              const T* wr = wv2.data() + o * in;
                              for (std::int64_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
                            }
                            if (gw) {
                              T* gwr = gw + o * in;
                              for (std::int64_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
                            }
                            if (gb) gb[o] += go;
                          }
                        }
                      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  constexpr std::string_view op = "matmul";
  if (!a.defined() || !b.defined() || a.rank() < 2 || b.rank() != a.rank()) {
    fail(op, "operands must share a rank >= 2");
  }
  const std::size_t r = a.rank();
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (a.dim(i) != b.dim(i)) {
      fail(op, "batch dim " + std::to_string(i) + " differs: " +
                   std::to_string(a.dim(i)) + " vs " + std::to_string(b.dim(i)));
    }
  }
  const std::int64_t M = a.dim(r - 2), K = a.dim(r - 1), N = b.dim(r - 1);
  if (b.dim(r - 2) != K) {
    fail(op, "inner dims differ: " + std::to_string(K) + " vs " +
                 std::to_string(b.dim(r - 2)));
  }
  const std::int64_t batch = a.numel() / (M * K);
  Shape out_shape = a.shape();
  out_shape.back() = N;
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(static_cast<std::size_t>(batch * M * N), T(0));
  for (std::int64_t s = 0; s < batch; ++s) {
    const T* A = av.data() + s * M * K;
    const T* Bm = bv.data() + s * K * N;
    T* C = out.data() + s * M * N;
    for (std::int64_t m = 0; m < M; ++m)
      for (std::int64_t k = 0; k < K; ++k) {
        const T aval = A[m * K + k];
        for (std::int64_t n = 0; n < N; ++n) C[m * N + n] += aval * Bm[k * N + n];
      }
  }
  return record_op<T>(op, std::move(out_shape), std::move(out), {a, b},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* ga = a.grad_target();
                        T* gb = b.grad_target();
                        const auto av2 = a.data();
                        const auto bv2 = b.data();
                        for (std::int64_t s = 0; s < batch; ++s) {
                          const T* A = av2.data() + s * M * K;
                          const T* Bm = bv2.data() + s * K * N;
                          const T* G = g.data() + s * M * N;
                          for (std::int64_t m = 0; m < M; ++m)
                            for (std::int64_t k = 0; k < K; ++k) {
                              if (ga) {
                                T acc = 0;
                                for (std::int64_t n = 0; n < N; ++n) acc += G[m * N + n] * Bm[k * N + n];
                                ga[s * M * K + m * K + k] += acc;
                              }
                              if (gb) {
                                const T aval = A[m * K + k];
                                T* gbr = gb + s * K * N + k * N;
                                for (std::int64_t n = 0; n < N; ++n) gbr[n] += aval * G[m * N + n];
                              }
                            }
                        }
                      });
}

// ---------------------------------------------------------------------------
// softmax

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  constexpr std::string_view op = "softmax_lastdim";
  if (!x.defined() || x.rank() < 1) fail(op, "input must have rank >= 1");
  const std::int64_t n = x.shape().back();
  const std::int64_t rows = x.numel() / n;
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * n;
    T* yr = out.data() + r * n;
    T mx = xr[0];
    for (std::int64_t i = 1; i < n; ++i) mx = std::max(mx, xr[i]);
    if (std::isnan(mx)) mx = 0;  // let NaN propagate through exp
    T total = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      total += yr[i];
    }
    for (std::int64_t i = 0; i < n; ++i) yr[i] /= total;
  }
  return record_op<T>(op, x.shape(), std::move(out), {x},
                      [=](std::span<const T> g, std::span<const T> y) {
                        T* gx = x.grad_target();
                        if (!gx) return;
                        for (std::int64_t r = 0; r < rows; ++r) {
                          const T* gr = g.data() + r * n;
                          const T* yr = y.data() + r * n;
                          T dot = 0;
                          for (std::int64_t i = 0; i < n; ++i) dot += gr[i] * yr[i];
                          for (std::int64_t i = 0; i < n; ++i) gx[r * n + i] += yr[i] * (gr[i] - dot);
                        }
                      });
}

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return record_op<T>("add", a.shape(), std::move(out), {a, b},
                      [=](std::span<const T> g, std::span<const T>) {
                        for (T* gt : {a.grad_target(), b.grad_target()}) {
                          if (!gt) continue;
                          for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
                        }
                      });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return record_op<T>("sub", a.shape(), std::move(out), {a, b},
                      [=](std::span<const T> g, std::span<const T>) {
                        if (T* ga = a.grad_target())
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                        if (T* gb = b.grad_target())
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                      });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return record_op<T>("mul", a.shape(), std::move(out), {a, b},
                      [=](std::span<const T> g, std::span<const T>) {
                        const auto av2 = a.data();
                        const auto bv2 = b.data();
                        if (T* ga = a.grad_target())
                          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
                        if (T* gb = b.grad_target())
                          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
                      });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return record_op<T>("scale", x.shape(), std::move(out), {x},
                      [=](std::span<const T> g, std::span<const T>) {
                        if (T* gx = x.grad_target())
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
                      });
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& x, const Tensor<T>& v) {
  constexpr std::string_view op = "channel_scale";
  if (!x.defined() || x.rank() < 2) fail(op, "input must have rank >= 2");
  require_rank(op, v, 1, "scale vector");
  const std::int64_t B = x.dim(0), C = x.dim(1);
  if (v.dim(0) != C) {
    fail(op, "scale length " + std::to_string(v.dim(0)) +
                 " does not match channels (dim 1) = " + std::to_string(C));
  }
  const std::int64_t inner = x.numel() / (B * C);
  const auto xv = x.data();
  const auto vv = v.data();
  std::vector<T> out(xv.size());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const std::int64_t base = (b * C + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) out[base + i] = xv[base + i] * vv[c];
    }
  return record_op<T>(op, x.shape(), std::move(out), {x, v},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* gx = x.grad_target();
                        T* gv = v.grad_target();
                        const auto xv2 = x.data();
                        const auto vv2 = v.data();
                        for (std::int64_t b = 0; b < B; ++b)
                          for (std::int64_t c = 0; c < C; ++c) {
                            const std::int64_t base = (b * C + c) * inner;
                            T acc = 0;
                            for (std::int64_t i = 0; i < inner; ++i) {
                              if (gx) gx[base + i] += g[base + i] * vv2[c];
                              acc += g[base + i] * xv2[base + i];
                            }
                            if (gv) gv[c] += acc;
                          }
                      });
}

template <typename T>
Tensor<T> sample_scale(const Tensor<T>& x, std::span<const T> factors) {
  constexpr std::string_view op = "sample_scale";
  if (!x.defined() || x.rank() < 1) fail(op, "input must have rank >= 1");
  const std::int64_t B = x.dim(0);
  if (static_cast<std::int64_t>(factors.size()) != B) {
    fail(op, "expected " + std::to_string(B) + " factors, got " +
                 std::to_string(factors.size()));
  }
  const std::int64_t inner = x.numel() / B;
  std::vector<T> f(factors.begin(), factors.end());
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t i = 0; i < inner; ++i) out[b * inner + i] = xv[b * inner + i] * f[b];
  return record_op<T>(op, x.shape(), std::move(out), {x},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* gx = x.grad_target();
                        if (!gx) return;
                        for (std::int64_t b = 0; b < B; ++b)
                          for (std::int64_t i = 0; i < inner; ++i)
                            gx[b * inner + i] += g[b * inner + i] * f[b];
                      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = 0;
  for (T v : x.data()) acc += v;
  return record_op<T>("sum", {}, {acc}, {x},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* gx = x.grad_target();
                        if (!gx) return;
                        const auto n = static_cast<std::size_t>(x.numel());
                        for (std::size_t i = 0; i < n; ++i) gx[i] += g[0];
                      });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  constexpr std::string_view op = "global_avg_pool";
  require_rank(op, x, 4, "input");
  const std::int64_t B = x.dim(0), C = x.dim(1), N = x.dim(2) * x.dim(3);
  const auto xv = x.data();
  std::vector<T> out(static_cast<std::size_t>(B * C));
  for (std::int64_t i = 0; i < B * C; ++i) {
    T acc = 0;
    for (std::int64_t n = 0; n < N; ++n) acc += xv[i * N + n];
    out[i] = acc / static_cast<T>(N);
  }
  return record_op<T>(op, {B, C}, std::move(out), {x},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* gx = x.grad_target();
                        if (!gx) return;
                        for (std::int64_t i = 0; i < B * C; ++i) {
                          const T share = g[i] / static_cast<T>(N);
                          for (std::int64_t n = 0; n < N; ++n) gx[i * N + n] += share;
                        }
                      });
}

// ---------------------------------------------------------------------------
// layout

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    fail("reshape", "cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return record_op<T>("reshape", std::move(shape), std::move(out), {x},
                      [=](std::span<const T> g, std::span<const T>) {
                        if (T* gx = x.grad_target())
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                      });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const int> axes) {
  constexpr std::string_view op = "permute";
  const std::size_t r = x.rank();
  if (axes.size() != r) fail(op, "axis count does not match rank " + std::to_string(r));
  std::vector<bool> seen(r, false);
  for (int a : axes) {
    if (a < 0 || static_cast<std::size_t>(a) >= r || seen[a]) {
      fail(op, "axes are not a permutation of 0.." + std::to_string(r - 1));
    }
    seen[a] = true;
  }
  const Shape& in_shape = x.shape();
  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(r);
  std::vector<std::int64_t> src_strides(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[axes[i]];
    src_strides[i] = in_strides[axes[i]];
  }
  // offsets[j] = source offset of output element j
  const std::int64_t n = x.numel();
  std::vector<std::int64_t> offsets(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t src = 0;
  for (std::int64_t j = 0; j < n; ++j) {
    offsets[j] = src;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < out_shape[d]) {
        src += src_strides[d];
        break;
      }
      src -= src_strides[d] * (out_shape[d] - 1);
      idx[d] = 0;
    }
  }
  const auto xv = x.data();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (std::int64_t j = 0; j < n; ++j) out[j] = xv[offsets[j]];
  return record_op<T>(op, std::move(out_shape), std::move(out), {x},
                      [=, offsets = std::move(offsets)](std::span<const T> g, std::span<const T>) {
                        T* gx = x.grad_target();
                        if (!gx) return;
                        for (std::size_t j = 0; j < g.size(); ++j) gx[offsets[j]] += g[j];
                      });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length) {
  constexpr std::string_view op = "narrow";
  if (axis < 0 || static_cast<std::size_t>(axis) >= x.rank()) {
    fail(op, "axis " + std::to_string(axis) + " out of range for shape " + to_string(x.shape()));
  }
  const std::int64_t extent = x.dim(axis);
  if (start < 0 || length < 1 || start + length > extent) {
    fail(op, "slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                 ") out of range for dim " + std::to_string(axis) + " = " + std::to_string(extent));
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const auto xv = x.data();
  std::vector<T> out(static_cast<std::size_t>(outer * length * inner));
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + (o * extent + start) * inner, length * inner,
                out.begin() + o * length * inner);
  return record_op<T>(op, std::move(out_shape), std::move(out), {x},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* gx = x.grad_target();
                        if (!gx) return;
                        for (std::int64_t o = 0; o < outer; ++o) {
                          T* dst = gx + (o * extent + start) * inner;
                          const T* src = g.data() + o * length * inner;
                          for (std::int64_t i = 0; i < length * inner; ++i) dst[i] += src[i];
                        }
                      });
}

// ---------------------------------------------------------------------------
// activations

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::silu: return "silu";
  }
  return "?";
}

Activation activation_from_string(std::string_view name) {
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "silu") return Activation::silu;
  throw std::invalid_argument("unknown activation '" + std::string(name) +
                              "' (expected gelu, relu or silu)");
}

namespace {

template <typename T, typename F, typename D>
Tensor<T> pointwise(std::string_view op, const Tensor<T>& x, F f, D df) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return record_op<T>(op, x.shape(), std::move(out), {x},
                      [=](std::span<const T> g, std::span<const T>) {
                        T* gx = x.grad_target();
                        if (!gx) return;
                        const auto xv2 = x.data();
                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xv2[i]);
                      });
}

}  // namespace

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return pointwise<T>(
      "gelu", x, [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [=](T v) {
        return T(0.5) * (T(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
      });
}

template <typename T>
Tensor<T> gelu_tanh(const Tensor<T>& x) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = T(0.044715);
  return pointwise<T>(
      "gelu_tanh", x,
      [=](T v) { return T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v))); },
      [=](T v) {
        const T t = std::tanh(c * (v + a * v * v * v));
        return T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * c * (T(1) + T(3) * a * v * v);
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return pointwise<T>(
      "relu", x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return pointwise<T>(
      "silu", x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

template <typename T>
Tensor<T> activate(const Tensor<T>& x, Activation act) {
  switch (act) {
    case Activation::gelu: return gelu(x);
    case Activation::relu: return relu(x);
    case Activation::silu: return silu(x);
  }
  throw std::invalid_argument("unknown activation");
}

#define METAFORMER_INSTANTIATE_OPS(T)                                                     \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                            const Conv2dOptions&);                                        \
  template Tensor<T> avg_pool2d_excl(const Tensor<T>&, int);                              \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> scale(const Tensor<T>&, T);                                          \
  template Tensor<T> channel_scale(const Tensor<T>&, const Tensor<T>&);                   \
  template Tensor<T> sample_scale(const Tensor<T>&, std::span<const T>);                  \
  template Tensor<T> sum(const Tensor<T>&);                                               \
  template Tensor<T> mean(const Tensor<T>&);                                              \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                    \
  template Tensor<T> permute(const Tensor<T>&, std::span<const int>);                     \
  template Tensor<T> narrow(const Tensor<T>&, int, std::int64_t, std::int64_t);           \
  template Tensor<T> gelu(const Tensor<T>&);                                              \
  template Tensor<T> gelu_tanh(const Tensor<T>&);                                         \
  template Tensor<T> relu(const Tensor<T>&);                                              \
  template Tensor<T> silu(const Tensor<T>&);                                              \
  template Tensor<T> activate(const Tensor<T>&, Activation);

METAFORMER_INSTANTIATE_OPS(float)
METAFORMER_INSTANTIATE_OPS(double)

}  // namespace metaformer

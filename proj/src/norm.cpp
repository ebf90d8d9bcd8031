#include "metaformer/norm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace metaformer {

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::mln: return "mln";
    case NormKind::ln: return "ln";
    case NormKind::bn: return "bn";
    case NormKind::none: return "none";
  }
  return "?";
}

NormKind norm_kind_from_string(std::string_view name) {
  if (name == "mln") return NormKind::mln;
  if (name == "ln") return NormKind::ln;
  if (name == "bn") return NormKind::bn;
  if (name == "none") return NormKind::none;
  throw std::invalid_argument("unknown norm '" + std::string(name) +
                              "' (expected mln, ln, bn or none)");
}

template <typename T>
NormParams<T> NormParams<T>::make(NormKind kind, std::int64_t channels) {
  NormParams p;
  p.kind = kind;
  if (kind == NormKind::none) return p;
  p.weight = Tensor<T>::full({channels}, T(1));
  p.bias = Tensor<T>::zeros({channels});
  p.weight.set_requires_grad(true);
  p.bias.set_requires_grad(true);
  if (kind == NormKind::bn) {
    p.running_mean = Tensor<T>::zeros({channels});
    p.running_var = Tensor<T>::full({channels}, T(1));
  }
  return p;
}

template <typename T>
std::int64_t NormParams<T>::trainable_count() const {
  return kind == NormKind::none ? 0 : weight.numel() + bias.numel();
}

namespace {

template <typename T>
void check_affine(std::string_view op, const Tensor<T>& x, const Tensor<T>& gamma,
                  const Tensor<T>& beta) {
  if (!x.defined() || x.rank() != 4) {
    throw std::invalid_argument(std::string(op) + ": input must be [B,C,H,W]");
  }
  const auto C = x.dim(1);
  for (const auto* t : {&gamma, &beta}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != C) {
      throw std::invalid_argument(std::string(op) + ": affine parameters must be [" +
                                  std::to_string(C) + "]");
    }
  }
}

// Shared body of the three batch-statistics norms. `group` maps an element at
// (b, c, s) to the index of the reduction set it belongs to.
template <typename T, typename GroupFn>
Tensor<T> grouped_norm(std::string_view op, const Tensor<T>& x, const Tensor<T>& gamma,
                       const Tensor<T>& beta, double eps, std::int64_t groups,
                       GroupFn group, std::vector<double>* batch_mean = nullptr,
                       std::vector<double>* batch_var = nullptr) {
  const std::int64_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  const auto xv = x.data();

  auto for_each = [=](auto&& fn) {
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        for (std::int64_t s = 0; s < S; ++s) fn((b * C + c) * S + s, c, group(b, c, s));
  };

  std::vector<T> mu(static_cast<std::size_t>(groups), T(0));
  std::vector<std::int64_t> count(static_cast<std::size_t>(groups), 0);
  for_each([&](std::int64_t i, std::int64_t, std::int64_t g) {
    mu[g] += xv[i];
    ++count[g];
  });
  for (std::int64_t g = 0; g < groups; ++g) mu[g] /= static_cast<T>(count[g]);
  std::vector<T> var(static_cast<std::size_t>(groups), T(0));
  for_each([&](std::int64_t i, std::int64_t, std::int64_t g) {
    const T d = xv[i] - mu[g];
    var[g] += d * d;
  });
  std::vector<T> inv_std(static_cast<std::size_t>(groups));
  for (std::int64_t g = 0; g < groups; ++g) {
    var[g] /= static_cast<T>(count[g]);
    inv_std[g] = T(1) / std::sqrt(var[g] + static_cast<T>(eps));
  }
  if (batch_mean) batch_mean->assign(mu.begin(), mu.end());
  if (batch_var) batch_var->assign(var.begin(), var.end());

  const auto gv = gamma.data();
  const auto bv = beta.data();
  std::vector<T> xhat(xv.size());
  std::vector<T> out(xv.size());
  for_each([&](std::int64_t i, std::int64_t c, std::int64_t g) {
    xhat[i] = (xv[i] - mu[g]) * inv_std[g];
    out[i] = gv[c] * xhat[i] + bv[c];
  });

  return record_op<T>(
      op, x.shape(), std::move(out), {x, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std),
       count = std::move(count)](std::span<const T> gout, std::span<const T>) {
        T* gx = x.grad_target();
        T* ggamma = gamma.grad_target();
        T* gbeta = beta.grad_target();
        const auto gv2 = gamma.data();
        std::vector<T> m1(static_cast<std::size_t>(groups), T(0));
        std::vector<T> m2(static_cast<std::size_t>(groups), T(0));
        for_each([&](std::int64_t i, std::int64_t c, std::int64_t g) {
          if (ggamma) ggamma[c] += gout[i] * xhat[i];
          if (gbeta) gbeta[c] += gout[i];
          const T dxhat = gout[i] * gv2[c];
          m1[g] += dxhat;
          m2[g] += dxhat * xhat[i];
        });
        if (!gx) return;
        for (std::int64_t g = 0; g < groups; ++g) {
          m1[g] /= static_cast<T>(count[g]);
          m2[g] /= static_cast<T>(count[g]);
        }
        for_each([&](std::int64_t i, std::int64_t c, std::int64_t g) {
          const T dxhat = gout[i] * gv2[c];
          gx[i] += inv_std[g] * (dxhat - m1[g] - xhat[i] * m2[g]);
        });
      });
}

}  // namespace

template <typename T>
Tensor<T> mln(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
              double eps) {
  check_affine("mln", x, gamma, beta);
  return grouped_norm<T>("mln", x, gamma, beta, eps, x.dim(0),
                         [](std::int64_t b, std::int64_t, std::int64_t) { return b; });
}

template <typename T>
Tensor<T> layer_norm_channel(const Tensor<T>& x, const Tensor<T>& gamma,
                             const Tensor<T>& beta, double eps) {
  check_affine("layer_norm_channel", x, gamma, beta);
  const std::int64_t S = x.dim(2) * x.dim(3);
  return grouped_norm<T>("layer_norm_channel", x, gamma, beta, eps, x.dim(0) * S,
                         [S](std::int64_t b, std::int64_t, std::int64_t s) { return b * S + s; });
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, NormParams<T>& params, Mode mode) {
  check_affine("batch_norm", x, params.weight, params.bias);
  const std::int64_t B = x.dim(0), C = x.dim(1), S = x.dim(2) * x.dim(3);
  if (mode == Mode::train) {
    const std::int64_t n = B * S;
    if (n < 2) {
      throw std::invalid_argument(
          "batch_norm: train mode needs at least 2 values per channel, got B*H*W = " +
          std::to_string(n));
    }
    std::vector<double> mu, var;
    auto y = grouped_norm<T>(
        "batch_norm", x, params.weight, params.bias, params.eps, C,
        [](std::int64_t, std::int64_t c, std::int64_t) { return c; }, &mu, &var);
    auto rm = params.running_mean.mutable_data();
    auto rv = params.running_var.mutable_data();
    const double m = params.momentum;
    const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
    for (std::int64_t c = 0; c < C; ++c) {
      rm[c] = static_cast<T>((1.0 - m) * rm[c] + m * mu[c]);
      rv[c] = static_cast<T>((1.0 - m) * rv[c] + m * var[c] * unbias);
    }
    return y;
  }

  const auto xv = x.data();
  const auto gv = params.weight.data();
  const auto bv = params.bias.data();
  const auto rm = params.running_mean.data();
  const auto rv = params.running_var.data();
  std::vector<T> inv_std(static_cast<std::size_t>(C));
  for (std::int64_t c = 0; c < C; ++c) inv_std[c] = T(1) / std::sqrt(rv[c] + static_cast<T>(params.eps));
  std::vector<T> mean_c(rm.begin(), rm.end());
  std::vector<T> out(xv.size());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t s = 0; s < S; ++s) {
        const std::int64_t i = (b * C + c) * S + s;
        out[i] = gv[c] * (xv[i] - mean_c[c]) * inv_std[c] + bv[c];
      }
  const Tensor<T> gamma = params.weight, beta = params.bias;
  return record_op<T>(
      "batch_norm_eval", x.shape(), std::move(out), {x, gamma, beta},
      [=](std::span<const T> gout, std::span<const T>) {
        T* gx = x.grad_target();
        T* ggamma = gamma.grad_target();
        T* gbeta = beta.grad_target();
        const auto xv2 = x.data();
        const auto gv2 = gamma.data();
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c)
            for (std::int64_t s = 0; s < S; ++s) {
              const std::int64_t i = (b * C + c) * S + s;
              const T xhat = (xv2[i] - mean_c[c]) * inv_std[c];
              if (gx) gx[i] += gout[i] * gv2[c] * inv_std[c];
              if (ggamma) ggamma[c] += gout[i] * xhat;
              if (gbeta) gbeta[c] += gout[i];
            }
      });
}

template <typename T>
Tensor<T> apply_norm(const Tensor<T>& x, NormParams<T>& params, Mode mode) {
  switch (params.kind) {
    case NormKind::mln: return mln(x, params.weight, params.bias, params.eps);
    case NormKind::ln: return layer_norm_channel(x, params.weight, params.bias, params.eps);
    case NormKind::bn: return batch_norm(x, params, mode);
    case NormKind::none: return x;
  }
  throw std::invalid_argument("unknown norm kind");
}

#define METAFORMER_INSTANTIATE_NORM(T)                                                    \
  template struct NormParams<T>;                                                          \
  template Tensor<T> mln(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);   \
  template Tensor<T> layer_norm_channel(const Tensor<T>&, const Tensor<T>&,              \
                                        const Tensor<T>&, double);                        \
  template Tensor<T> batch_norm(const Tensor<T>&, NormParams<T>&, Mode);                  \
  template Tensor<T> apply_norm(const Tensor<T>&, NormParams<T>&, Mode);

METAFORMER_INSTANTIATE_NORM(float)
METAFORMER_INSTANTIATE_NORM(double)

}  // namespace metaformer

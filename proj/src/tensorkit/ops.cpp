#include "histonet/tensorkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "histonet/errors.hpp"

namespace histonet::tk::ops {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* arg) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + arg + " must have rank " +
                         std::to_string(rank) + ", got " + shape_string(t.shape()));
  }
}

void check_finite(const Tensor& t, const char* op) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in output");
    }
  }
}

// Copies a [C,H,W] array into a zero-initialized [C,H+2p,W+2p] buffer.
std::vector<double> padded_copy(const double* src, std::size_t c, std::size_t h, std::size_t w,
                                std::size_t pad) {
  const std::size_t hp = h + 2 * pad;
  const std::size_t wp = w + 2 * pad;
  std::vector<double> out(c * hp * wp, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const double* row = src + (ch * h + y) * w;
      std::copy(row, row + w, out.data() + (ch * hp + y + pad) * wp + pad);
    }
  }
  return out;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
#pragma omp simd reduction(+ : s)
  for (std::size_t i = 0; i < n; ++i) {
    s += a[i] * b[i];
  }
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += alpha * x[i];
  }
}

}  // namespace

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t pad) {
  require_rank(input, 3, "conv2d", "input");
  require_rank(kernel, 4, "conv2d", "kernel");
  require_rank(bias, 1, "conv2d", "bias");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) +
                         " input channels, input has " + std::to_string(cin));
  }
  if (bias.dim(0) != cout) {
    throw DimensionError("conv2d: bias length must equal output channels");
  }
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  if (kh > hp || kw > wp) {
    throw DimensionError("conv2d: kernel larger than padded input");
  }
  const std::size_t ho = hp - kh + 1, wo = wp - kw + 1;

  std::vector<double> src = pad == 0 ? std::vector<double>(input.values().begin(), input.values().end())
                                     : padded_copy(input.data(), cin, h, w, pad);
  // Outputs are accumulated over whole planes with the padded row stride wp;
  // the trailing wp - wo columns of each row are scratch. This keeps the
  // inner loops long and contiguous.
  const std::size_t plane = hp * wp;
  const std::size_t span_len = (ho - 1) * wp + wo;
  Tensor out(Shape{cout, ho, wo});
  {
    const double* k = kernel.data();
    std::vector<double> acc(ho * wp);
    for (std::size_t co = 0; co < cout; ++co) {
      std::fill(acc.begin(), acc.end(), bias[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* base = src.data() + ci * plane;
        const double* wk = k + (co * cin + ci) * kh * kw;
        for (std::size_t dy = 0; dy < kh; ++dy) {
          for (std::size_t dx = 0; dx < kw; ++dx) {
            axpy(wk[dy * kw + dx], base + dy * wp + dx, acc.data(), span_len);
          }
        }
      }
      for (std::size_t y = 0; y < ho; ++y) {
        std::copy_n(acc.data() + y * wp, wo, out.data() + (co * ho + y) * wo);
      }
    }
  }
  check_finite(out, "conv2d");

  if (Graph::any_requires_grad({&input, &kernel, &bias})) {
    g.record({input, kernel, bias}, out,
             [input = input, kernel = kernel, bias = bias, out, src = std::move(src), cin, h, w, cout, kh, kw, hp, wp, ho, wo, pad, plane, span_len]() mutable {
               const std::span<const double> gout = std::as_const(out).grad();
               if (bias.requires_grad()) {
                 auto gb = bias.grad();
                 for (std::size_t co = 0; co < cout; ++co) {
                   const double* go = gout.data() + co * ho * wo;
                   double s = 0.0;
                   for (std::size_t i = 0; i < ho * wo; ++i) s += go[i];
                   gb[co] += s;
                 }
               }
               const bool want_kernel = kernel.requires_grad();
               const bool want_input = input.requires_grad();
               if (!want_kernel && !want_input) return;
               // Output gradient re-laid on the wp stride with zeroed scratch
               // columns, so plane-wide dot/axpy pick up nothing extra.
               std::vector<double> gpad(cout * ho * wp, 0.0);
               for (std::size_t co = 0; co < cout; ++co) {
                 for (std::size_t y = 0; y < ho; ++y) {
                   std::copy_n(gout.data() + (co * ho + y) * wo, wo, gpad.data() + (co * ho + y) * wp);
                 }
               }
               if (want_kernel) {
                 auto gk = kernel.grad();
                 for (std::size_t co = 0; co < cout; ++co) {
                   const double* go = gpad.data() + co * ho * wp;
                   for (std::size_t ci = 0; ci < cin; ++ci) {
                     const double* base = src.data() + ci * plane;
                     double* gw = gk.data() + (co * cin + ci) * kh * kw;
                     for (std::size_t dy = 0; dy < kh; ++dy) {
                       for (std::size_t dx = 0; dx < kw; ++dx) {
                         gw[dy * kw + dx] += dot(go, base + dy * wp + dx, span_len);
                       }
                     }
                   }
                 }
               }
               if (want_input) {
                 std::vector<double> gsrc(cin * plane, 0.0);
                 const double* k = kernel.data();
                 for (std::size_t co = 0; co < cout; ++co) {
                   const double* go = gpad.data() + co * ho * wp;
                   for (std::size_t ci = 0; ci < cin; ++ci) {
                     double* base = gsrc.data() + ci * plane;
                     const double* wk = k + (co * cin + ci) * kh * kw;
                     for (std::size_t dy = 0; dy < kh; ++dy) {
                       for (std::size_t dx = 0; dx < kw; ++dx) {
                         axpy(wk[dy * kw + dx], go, base + dy * wp + dx, span_len);
                       }
                     }
                   }
                 }
                 auto gin = input.grad();
                 for (std::size_t ci = 0; ci < cin; ++ci) {
                   for (std::size_t y = 0; y < h; ++y) {
                     const double* row = gsrc.data() + (ci * hp + y + pad) * wp + pad;
                     double* dst = gin.data() + (ci * h + y) * w;
                     for (std::size_t x = 0; x < w; ++x) dst[x] += row[x];
                   }
                 }
               }
             });
  }
  return out;
}

Tensor pad2d(Graph& g, const Tensor& input, std::size_t pad) {
  require_rank(input, 3, "pad2d", "input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t hp = h + 2 * pad, wp = w + 2 * pad;
  Tensor out(Shape{c, hp, wp}, padded_copy(input.data(), c, h, w, pad));
  if (Graph::any_requires_grad({&input})) {
    g.record({input}, out, [input = input, out, c, h, w, hp, wp, pad]() mutable {
      const auto gout = std::as_const(out).grad();
      auto gin = input.grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          const double* row = gout.data() + (ch * hp + y + pad) * wp + pad;
          double* dst = gin.data() + (ch * h + y) * w;
          for (std::size_t x = 0; x < w; ++x) dst[x] += row[x];
        }
      }
    });
  }
  return out;
}

Tensor leaky_relu(Graph& g, const Tensor& x, double slope) {
  if (!(slope >= 0.0 && slope < 1.0)) {
    throw ConfigError("leaky_relu: slope must lie in [0,1)");
  }
  Tensor out(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  }
  if (Graph::any_requires_grad({&x})) {
    g.record({x}, out, [x = x, out, slope, n]() mutable {
      const auto gout = std::as_const(out).grad();
      auto gin = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        gin[i] += x[i] > 0.0 ? gout[i] : slope * gout[i];
      }
    });
  }
  return out;
}

Tensor softplus(Graph& g, const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    out[i] = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  }
  check_finite(out, "softplus");
  if (Graph::any_requires_grad({&x})) {
    g.record({x}, out, [x = x, out, n]() mutable {
      const auto gout = std::as_const(out).grad();
      auto gin = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        gin[i] += s * gout[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(Graph& g, const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    out[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  if (Graph::any_requires_grad({&x})) {
    g.record({x}, out, [x = x, out, n]() mutable {
      const auto gout = std::as_const(out).grad();
      auto gin = x.grad();
      for (std::size_t i = 0; i < n; ++i) {
        gin[i] += out[i] * (1.0 - out[i]) * gout[i];
      }
    });
  }
  return out;
}

Tensor max_pool2d(Graph& g, const Tensor& input, std::size_t k) {
  require_rank(input, 3, "max_pool2d", "input");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (k == 0 || h % k != 0 || w % k != 0) {
    throw DimensionError("max_pool2d: extents " + shape_string(input.shape()) +
                         " not divisible by " + std::to_string(k));
  }
  const std::size_t ho = h / k, wo = w / k;
  Tensor out(Shape{c, ho, wo});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (ch * h + oy * k) * w + ox * k;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = (ch * h + oy * k + dy) * w + ox * k + dx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (ch * ho + oy) * wo + ox;
        out[o] = input[best];
        argmax[o] = best;
      }
    }
  }
  if (Graph::any_requires_grad({&input})) {
    g.record({input}, out, [input = input, out, argmax = std::move(argmax)]() mutable {
      const auto gout = std::as_const(out).grad();
      auto gin = input.grad();
      for (std::size_t o = 0; o < argmax.size(); ++o) {
        gin[argmax[o]] += gout[o];
      }
    });
  }
  return out;
}

Tensor dense(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 1, "dense", "x");
  require_rank(weight, 2, "dense", "weight");
  require_rank(bias, 1, "dense", "bias");
  const std::size_t m = weight.dim(0), n = weight.dim(1);
  if (x.dim(0) != n || bias.dim(0) != m) {
    throw DimensionError("dense: weight " + shape_string(weight.shape()) + " incompatible with x " +
                         shape_string(x.shape()) + " and bias " + shape_string(bias.shape()));
  }
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    out[i] = bias[i] + dot(weight.data() + i * n, x.data(), n);
  }
  check_finite(out, "dense");
  if (Graph::any_requires_grad({&x, &weight, &bias})) {
    g.record({x, weight, bias}, out, [x = x, weight = weight, bias = bias, out, m, n]() mutable {
      const auto gout = std::as_const(out).grad();
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t i = 0; i < m; ++i) gb[i] += gout[i];
      }
      if (weight.requires_grad()) {
        auto gw = weight.grad();
        for (std::size_t i = 0; i < m; ++i) axpy(gout[i], x.data(), gw.data() + i * n, n);
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < m; ++i) axpy(gout[i], weight.data() + i * n, gx.data(), n);
      }
    });
  }
  return out;
}

Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "concat_channels", "a");
  require_rank(b, 3, "concat_channels", "b");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2)) {
    throw DimensionError("concat_channels: spatial mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor out(Shape{a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.values().begin(), a.values().end(), out.values().begin());
  std::copy(b.values().begin(), b.values().end(), out.values().begin() + a.size());
  if (Graph::any_requires_grad({&a, &b})) {
    g.record({a, b}, out, [a = a, b = b, out]() mutable {
      const auto gout = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += gout[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += gout[a.size() + i];
      }
    });
  }
  return out;
}

Tensor slice_channels(Graph& g, const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 3, "slice_channels", "x");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_channels: invalid channel range");
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  Tensor out(Shape{end - begin, x.dim(1), x.dim(2)});
  std::copy(x.values().begin() + begin * plane, x.values().begin() + end * plane,
            out.values().begin());
  if (Graph::any_requires_grad({&x})) {
    g.record({x}, out, [x = x, out, offset = begin * plane]() mutable {
      const auto gout = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gout.size(); ++i) gx[offset + i] += gout[i];
    });
  }
  return out;
}

Tensor concat(Graph& g, std::span<const Tensor> parts) {
  if (parts.empty()) {
    throw DimensionError("concat: no inputs");
  }
  std::size_t total = 0;
  bool needs_grad = false;
  for (const Tensor& p : parts) {
    require_rank(p, 1, "concat", "part");
    total += p.size();
    needs_grad = needs_grad || p.requires_grad();
  }
  Tensor out(Shape{total});
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.values().begin() + offset);
    offset += p.size();
  }
  if (needs_grad) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    g.record(inputs, out, [inputs, out]() mutable {
      const auto gout = std::as_const(out).grad();
      std::size_t off = 0;
      for (Tensor& p : inputs) {
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < p.size(); ++i) gp[i] += gout[off + i];
        }
        off += p.size();
      }
    });
  }
  return out;
}

Tensor dropout(Graph& g, const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0,1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) {
    return x;
  }
  const double scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : scale;
    out[i] = x[i] * mask[i];
  }
  if (Graph::any_requires_grad({&x})) {
    g.record({x}, out, [x = x, out, mask = std::move(mask)]() mutable {
      const auto gout = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += gout[i] * mask[i];
    });
  }
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  if (Graph::any_requires_grad({&a, &b})) {
    g.record({a, b}, out, [a = a, b = b, out]() mutable {
      const auto gout = std::as_const(out).grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gout[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gout[i];
      }
    });
  }
  return out;
}

Tensor flatten(Graph& g, const Tensor& x) {
  Tensor out = x.reshaped(Shape{x.size()});
  if (Graph::any_requires_grad({&x})) {
    g.record({x}, out, [x = x, out]() mutable {
      const auto gout = std::as_const(out).grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
    });
  }
  return out;
}

Tensor sum(Graph& g, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor out = Tensor::scalar(s);
  if (Graph::any_requires_grad({&x})) {
    g.record({x}, out, [x = x, out]() mutable {
      const double go = std::as_const(out).grad()[0];
      auto gx = x.grad();
      for (double& v : gx) v += go;
    });
  }
  return out;
}

Tensor weighted_sum(Graph& g, std::span<const Tensor> terms, std::span<const double> coeffs) {
  if (terms.size() != coeffs.size()) {
    throw DimensionError("weighted_sum: terms and coefficients differ in length");
  }
  double s = 0.0;
  bool needs_grad = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    s += coeffs[i] * terms[i].item();
    needs_grad = needs_grad || terms[i].requires_grad();
  }
  Tensor out = Tensor::scalar(s);
  if (needs_grad) {
    std::vector<Tensor> inputs(terms.begin(), terms.end());
    std::vector<double> c(coeffs.begin(), coeffs.end());
    g.record(inputs, out, [inputs, c, out]() mutable {
      const double go = std::as_const(out).grad()[0];
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (inputs[i].requires_grad()) inputs[i].grad()[0] += c[i] * go;
      }
    });
  }
  return out;
}

Tensor squared_error(Graph& g, const Tensor& x, const Tensor& target) {
  if (x.size() != target.size()) {
    throw DimensionError("squared_error: size mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - target[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s);
  if (Graph::any_requires_grad({&x})) {
    g.record({x}, out, [x = x, target = target, out]() mutable {
      const double go = std::as_const(out).grad()[0];
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * (x[i] - target[i]) * go;
    });
  }
  return out;
}

}  // namespace histonet::tk::ops

#include "fseg/nn_ops.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace fseg {

namespace {

void expect_rank4(const Tensor& t, const char* opname, const char* role) {
  if (t.rank() != 4) {
    throw std::invalid_argument(std::string(opname) + ": " + role + " must be rank 4, got " +
                                shape_str(t.shape()));
  }
}

// Copies one [H,W] plane into the interior of an [Hp,Wp] zero border.
inline void pad_plane(const double* src, double* dst, int h, int w, int p, int wp) {
  for (int y = 0; y < h; ++y) {
    std::memcpy(dst + (y + p) * wp + p, src + y * w, std::size_t(w) * sizeof(double));
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int padding) {
  expect_rank4(input, "conv2d", "input");
  expect_rank4(weight, "conv2d", "weight");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int f = weight.dim(0), wc = weight.dim(1), k = weight.dim(2), k2 = weight.dim(3);
  if (k != k2 || k % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel must be square with odd size, got " +
                                shape_str(weight.shape()));
  }
  if (wc != c) {
    throw std::invalid_argument("conv2d: weight expects " + std::to_string(wc) +
                                " input channels, input has " + std::to_string(c));
  }
  if (bias.rank() != 1 || bias.dim(0) != f) {
    throw std::invalid_argument("conv2d: bias must have shape [" + std::to_string(f) + "]");
  }
  if (padding < 0) throw std::invalid_argument("conv2d: negative padding");
  const int ho = h + 2 * padding - k + 1;
  const int wo = w + 2 * padding - k + 1;
  if (ho < 1 || wo < 1) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  const int hp = h + 2 * padding, wp = w + 2 * padding;

  const auto& in = input.data();
  const auto& wv = weight.data();
  const auto& bv = bias.data();
  std::vector<double> out(std::size_t(n) * f * ho * wo);
  std::vector<double> pad(std::size_t(c) * hp * wp, 0.0);

  for (int in_ = 0; in_ < n; ++in_) {
    for (int ic = 0; ic < c; ++ic) {
      pad_plane(&in[(std::size_t(in_) * c + ic) * h * w], &pad[std::size_t(ic) * hp * wp], h, w,
                padding, wp);
    }
    for (int of = 0; of < f; ++of) {
      double* o = &out[(std::size_t(in_) * f + of) * ho * wo];
      std::fill(o, o + std::size_t(ho) * wo, bv[std::size_t(of)]);
      for (int ic = 0; ic < c; ++ic) {
        const double* plane = &pad[std::size_t(ic) * hp * wp];
        const double* wrow = &wv[((std::size_t(of) * c + ic) * k) * k];
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double wgt = wrow[ky * k + kx];
            const double* src = plane + std::size_t(ky) * wp + kx;
            double* dst = o;
            for (int y = 0; y < ho; ++y, src += wp, dst += wo) {
              for (int x = 0; x < wo; ++x) dst[x] += wgt * src[x];
            }
          }
        }
      }
    }
  }

  auto backward = [=, inode = input.node(), wnode = weight.node(),
                   bnode = bias.node()](TensorNode& self) {
    const auto& g = self.grad;  // [N,F,Ho,Wo]
    if (bnode->requires_grad) {
      bnode->ensure_grad();
      for (int in_ = 0; in_ < n; ++in_) {
        for (int of = 0; of < f; ++of) {
          const double* gp = &g[(std::size_t(in_) * f + of) * ho * wo];
          double s = 0.0;
          for (int i = 0; i < ho * wo; ++i) s += gp[i];
          bnode->grad[std::size_t(of)] += s;
        }
      }
    }
    const bool need_in = inode->requires_grad;
    const bool need_w = wnode->requires_grad;
    if (!need_in && !need_w) return;
    if (need_w) wnode->ensure_grad();
    if (need_in) inode->ensure_grad();

    std::vector<double> pad(std::size_t(c) * hp * wp, 0.0);
    std::vector<double> dpad;
    if (need_in) dpad.resize(std::size_t(c) * hp * wp);
    for (int in_ = 0; in_ < n; ++in_) {
      if (need_w) {
        for (int ic = 0; ic < c; ++ic) {
          pad_plane(&inode->value[(std::size_t(in_) * c + ic) * h * w],
                    &pad[std::size_t(ic) * hp * wp], h, w, padding, wp);
        }
      }
      if (need_in) std::fill(dpad.begin(), dpad.end(), 0.0);
      for (int of = 0; of < f; ++of) {
        const double* gp = &g[(std::size_t(in_) * f + of) * ho * wo];
        for (int ic = 0; ic < c; ++ic) {
          const std::size_t wbase = (std::size_t(of) * c + ic) * k * k;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              if (need_w) {
                const double* src = &pad[std::size_t(ic) * hp * wp + std::size_t(ky) * wp + kx];
                const double* gr = gp;
                double s = 0.0;
                for (int y = 0; y < ho; ++y, src += wp, gr += wo) {
                  for (int x = 0; x < wo; ++x) s += gr[x] * src[x];
                }
                wnode->grad[wbase + std::size_t(ky) * k + kx] += s;
              }
              if (need_in) {
                const double wgt = wnode->value[wbase + std::size_t(ky) * k + kx];
                double* dst = &dpad[std::size_t(ic) * hp * wp + std::size_t(ky) * wp + kx];
                const double* gr = gp;
                for (int y = 0; y < ho; ++y, dst += wp, gr += wo) {
                  for (int x = 0; x < wo; ++x) dst[x] += wgt * gr[x];
                }
              }
            }
          }
        }
      }
      if (need_in) {
        for (int ic = 0; ic < c; ++ic) {
          double* ig = &inode->grad[(std::size_t(in_) * c + ic) * h * w];
          const double* dp = &dpad[std::size_t(ic) * hp * wp];
          for (int y = 0; y < h; ++y) {
            const double* row = dp + std::size_t(y + padding) * wp + padding;
            for (int x = 0; x < w; ++x) ig[std::size_t(y) * w + x] += row[x];
          }
        }
      }
    }
  };

  return make_op({n, f, ho, wo}, std::move(out), {input, weight, bias}, "conv2d",
                 std::move(backward));
}

Tensor maxpool2(const Tensor& input) {
  expect_rank4(input, "maxpool2", "input");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 || w % 2) {
    throw std::invalid_argument("maxpool2: spatial extents must be even, got " +
                                shape_str(input.shape()));
  }
  const int ho = h / 2, wo = w / 2;
  const auto& in = input.data();
  std::vector<double> out(std::size_t(n) * c * ho * wo);
  auto arg = std::make_shared<std::vector<std::int64_t>>(out.size());
  std::size_t oi = 0;
  for (int in_ = 0; in_ < n; ++in_) {
    for (int ic = 0; ic < c; ++ic) {
      const double* plane = &in[(std::size_t(in_) * c + ic) * h * w];
      const std::size_t base = (std::size_t(in_) * c + ic) * h * w;
      for (int y = 0; y < ho; ++y) {
        for (int x = 0; x < wo; ++x, ++oi) {
          std::size_t best = std::size_t(2 * y) * w + 2 * x;
          double bv = plane[best];
          const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
          for (std::size_t ci : cand) {
            if (plane[ci] > bv) {
              bv = plane[ci];
              best = ci;
            }
          }
          out[oi] = bv;
          (*arg)[oi] = std::int64_t(base + best);
        }
      }
    }
  }
  return make_op({n, c, ho, wo}, std::move(out), {input}, "maxpool2",
                 [an = input.node(), arg](TensorNode& self) {
                   an->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     an->grad[std::size_t((*arg)[i])] += self.grad[i];
                 });
}

Tensor upsample_nearest2(const Tensor& input) {
  expect_rank4(input, "upsample_nearest2", "input");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int ho = h * 2, wo = w * 2;
  const auto& in = input.data();
  std::vector<double> out(std::size_t(n) * c * ho * wo);
  for (std::size_t plane = 0; plane < std::size_t(n) * c; ++plane) {
    const double* src = &in[plane * h * w];
    double* dst = &out[plane * ho * wo];
    for (int y = 0; y < ho; ++y) {
      const double* srow = src + std::size_t(y / 2) * w;
      double* drow = dst + std::size_t(y) * wo;
      for (int x = 0; x < wo; ++x) drow[x] = srow[x / 2];
    }
  }
  return make_op({n, c, ho, wo}, std::move(out), {input}, "upsample_nearest2",
                 [an = input.node(), n, c, h, w, ho, wo](TensorNode& self) {
                   an->ensure_grad();
                   for (std::size_t plane = 0; plane < std::size_t(n) * c; ++plane) {
                     double* ig = &an->grad[plane * h * w];
                     const double* g = &self.grad[plane * ho * wo];
                     for (int y = 0; y < ho; ++y) {
                       double* irow = ig + std::size_t(y / 2) * w;
                       const double* grow = g + std::size_t(y) * wo;
                       for (int x = 0; x < wo; ++x) irow[x / 2] += grow[x];
                     }
                   }
                 });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  expect_rank4(a, "concat_channels", "first input");
  expect_rank4(b, "concat_channels", "second input");
  const int n = a.dim(0), ca = a.dim(1), h = a.dim(2), w = a.dim(3);
  const int cb = b.dim(1);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w) {
    throw std::invalid_argument("concat_channels: incompatible shapes " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
  const std::size_t plane = std::size_t(h) * w;
  std::vector<double> out(std::size_t(n) * (ca + cb) * plane);
  const auto& av = a.data();
  const auto& bv = b.data();
  for (int in_ = 0; in_ < n; ++in_) {
    double* dst = &out[std::size_t(in_) * (ca + cb) * plane];
    std::memcpy(dst, &av[std::size_t(in_) * ca * plane], ca * plane * sizeof(double));
    std::memcpy(dst + ca * plane, &bv[std::size_t(in_) * cb * plane], cb * plane * sizeof(double));
  }
  return make_op({n, ca + cb, h, w}, std::move(out), {a, b}, "concat_channels",
                 [an = a.node(), bn = b.node(), n, ca, cb, plane](TensorNode& self) {
                   for (int in_ = 0; in_ < n; ++in_) {
                     const double* g = &self.grad[std::size_t(in_) * (ca + cb) * plane];
                     if (an->requires_grad) {
                       an->ensure_grad();
                       double* ga = &an->grad[std::size_t(in_) * ca * plane];
                       for (std::size_t i = 0; i < ca * plane; ++i) ga[i] += g[i];
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       double* gb = &bn->grad[std::size_t(in_) * cb * plane];
                       for (std::size_t i = 0; i < cb * plane; ++i) gb[i] += g[ca * plane + i];
                     }
                   }
                 });
}

Tensor softmax_channels(const Tensor& a) {
  expect_rank4(a, "softmax_channels", "input");
  const int n = a.dim(0), r = a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t plane = std::size_t(h) * w;
  const auto& av = a.data();
  std::vector<double> out(av.size());
  for (int in_ = 0; in_ < n; ++in_) {
    const std::size_t base = std::size_t(in_) * r * plane;
    for (std::size_t px = 0; px < plane; ++px) {
      double mx = av[base + px];
      for (int ir = 1; ir < r; ++ir) {
        const double v = av[base + std::size_t(ir) * plane + px];
        if (v > mx) mx = v;
      }
      double z = 0.0;
      for (int ir = 0; ir < r; ++ir) {
        const double e = std::exp(av[base + std::size_t(ir) * plane + px] - mx);
        out[base + std::size_t(ir) * plane + px] = e;
        z += e;
      }
      const double inv = 1.0 / z;
      for (int ir = 0; ir < r; ++ir) out[base + std::size_t(ir) * plane + px] *= inv;
    }
  }
  return make_op(a.shape(), std::move(out), {a}, "softmax_channels",
                 [an = a.node(), n, r, plane](TensorNode& self) {
                   an->ensure_grad();
                   for (int in_ = 0; in_ < n; ++in_) {
                     const std::size_t base = std::size_t(in_) * r * plane;
                     for (std::size_t px = 0; px < plane; ++px) {
                       double dot = 0.0;
                       for (int ir = 0; ir < r; ++ir) {
                         const std::size_t i = base + std::size_t(ir) * plane + px;
                         dot += self.grad[i] * self.value[i];
                       }
                       for (int ir = 0; ir < r; ++ir) {
                         const std::size_t i = base + std::size_t(ir) * plane + px;
                         an->grad[i] += self.value[i] * (self.grad[i] - dot);
                       }
                     }
                   }
                 });
}

Tensor cross_entropy(const Tensor& p, const Tensor& q_onehot) {
  expect_rank4(p, "cross_entropy", "p");
  expect_rank4(q_onehot, "cross_entropy", "q");
  if (p.shape() != q_onehot.shape()) {
    throw std::invalid_argument("cross_entropy: shape mismatch " + shape_str(p.shape()) + " vs " +
                                shape_str(q_onehot.shape()));
  }
  constexpr double kFloor = 1e-12;
  const int n = p.dim(0), h = p.dim(2), w = p.dim(3);
  const double inv_pixels = 1.0 / (double(n) * h * w);
  const auto& pv = p.data();
  const auto& qv = q_onehot.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (qv[i] != 0.0) loss -= qv[i] * std::log(pv[i] < kFloor ? kFloor : pv[i]);
  }
  loss *= inv_pixels;
  return make_op({1}, {loss}, {p, q_onehot}, "cross_entropy",
                 [pn = p.node(), qn = q_onehot.node(), inv_pixels](TensorNode& self) {
                   const double g = self.grad[0] * inv_pixels;
                   if (pn->requires_grad) {
                     pn->ensure_grad();
                     for (std::size_t i = 0; i < pn->value.size(); ++i) {
                       if (qn->value[i] != 0.0) {
                         const double pc = pn->value[i] < kFloor ? kFloor : pn->value[i];
                         if (pn->value[i] >= kFloor) pn->grad[i] -= g * qn->value[i] / pc;
                       }
                     }
                   }
                   if (qn->requires_grad) {
                     qn->ensure_grad();
                     for (std::size_t i = 0; i < qn->value.size(); ++i) {
                       const double pc = pn->value[i] < kFloor ? kFloor : pn->value[i];
                       qn->grad[i] -= g * std::log(pc);
                     }
                   }
                 });
}

}  // namespace fseg

#include "fseg/fuzzy.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

namespace fseg {

namespace {

double stable_sigmoid(double t) {
  if (t >= 0.0) {
    const double z = std::exp(-t);
    return z / (1.0 + z);
  }
  return 1.0 / (1.0 + std::exp(t));
}

// Axis bookkeeping shared by the fuzzify variants: x is [D,H,W] or [N,D,H,W],
// parameter tensors [R,D,H,W] or [R,D,1,1].
struct FuzzyDims {
  int n, r, d, hw;       // batch, categories, channels, pixels per plane
  bool batched;          // x had a batch axis
  bool per_pixel;        // parameters indexed per pixel
  Shape out_shape;
};

FuzzyDims fuzzy_dims(const Tensor& x, const Tensor& param_probe) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 && xs.size() != 4) {
    throw std::invalid_argument("fuzzify expects [D,H,W] or [N,D,H,W] input, got " + shape_str(xs));
  }
  const Shape& ps = param_probe.shape();
  if (ps.size() != 4) {
    throw std::invalid_argument("membership parameters must be rank 4, got " + shape_str(ps));
  }

  FuzzyDims dims{};
  dims.batched = xs.size() == 4;
  dims.n = dims.batched ? xs[0] : 1;
  const int d = xs[dims.batched ? 1 : 0];
  const int h = xs[dims.batched ? 2 : 1];
  const int w = xs[dims.batched ? 3 : 2];
  dims.d = d;
  dims.hw = h * w;
  dims.r = ps[0];
  if (ps[1] != d) {
    throw std::invalid_argument("membership parameters cover " + std::to_string(ps[1]) +
                                " channels but the input has " + std::to_string(d));
  }
  if (ps[2] == h && ps[3] == w) {
    dims.per_pixel = true;
  } else if (ps[2] == 1 && ps[3] == 1) {
    dims.per_pixel = false;
  } else {
    throw std::invalid_argument("membership parameter plane " + shape_str(ps) +
                                " matches neither the input plane nor [1,1]");
  }
  dims.out_shape = dims.batched ? Shape{dims.n, dims.r, d, h, w} : Shape{dims.r, d, h, w};
  return dims;
}

// Splits a membership tensor into (outer batch, category axis, inner extent).
void category_axis(const Tensor& m, std::int64_t& outer, int& r, std::int64_t& inner) {
  const Shape& s = m.shape();
  if (s.size() == 4) {
    outer = 1;
    r = s[0];
    inner = std::int64_t(s[1]) * s[2] * s[3];
  } else if (s.size() == 5) {
    outer = s[0];
    r = s[1];
    inner = std::int64_t(s[2]) * s[3] * s[4];
  } else {
    throw std::invalid_argument("expected a rank 4 or 5 membership tensor, got " + shape_str(s));
  }
}

Tensor fuzzify_sigmoid(const Tensor& x, const Tensor& slope, const Tensor& center) {
  const FuzzyDims dims = fuzzy_dims(x, slope);
  if (slope.shape() != center.shape()) {
    throw std::invalid_argument("slope and center parameter shapes differ");
  }

  const auto& xv = x.data();
  const auto& av = slope.data();
  const auto& bv = center.data();
  std::vector<double> out(std::size_t(shape_numel(dims.out_shape)));
  const std::int64_t phw = dims.per_pixel ? dims.hw : 1;

  std::size_t oi = 0;
  for (int n = 0; n < dims.n; ++n) {
    for (int r = 0; r < dims.r; ++r) {
      for (int d = 0; d < dims.d; ++d) {
        const std::size_t xbase = std::size_t(n * dims.d + d) * std::size_t(dims.hw);
        const std::size_t pbase = std::size_t(r * dims.d + d) * std::size_t(phw);
        for (int i = 0; i < dims.hw; ++i, ++oi) {
          const std::size_t pi = pbase + std::size_t(dims.per_pixel ? i : 0);
          out[oi] = stable_sigmoid(av[pi] * (xv[xbase + std::size_t(i)] - bv[pi]));
        }
      }
    }
  }

  return make_op(dims.out_shape, std::move(out), {x, slope, center}, "fuzzify_sigmoid",
                 [xn = x.node(), an = slope.node(), bn = center.node(), dims](TensorNode& self) {
                   const bool need_x = xn->requires_grad;
                   const bool need_a = an->requires_grad;
                   const bool need_b = bn->requires_grad;
                   if (need_x) xn->ensure_grad();
                   if (need_a) an->ensure_grad();
                   if (need_b) bn->ensure_grad();
                   const std::int64_t phw = dims.per_pixel ? dims.hw : 1;
                   std::size_t oi = 0;
                   for (int n = 0; n < dims.n; ++n) {
                     for (int r = 0; r < dims.r; ++r) {
                       for (int d = 0; d < dims.d; ++d) {
                         const std::size_t xbase = std::size_t(n * dims.d + d) * std::size_t(dims.hw);
                         const std::size_t pbase = std::size_t(r * dims.d + d) * std::size_t(phw);
                         for (int i = 0; i < dims.hw; ++i, ++oi) {
                           const std::size_t xi = xbase + std::size_t(i);
                           const std::size_t pi = pbase + std::size_t(dims.per_pixel ? i : 0);
                           const double o = self.value[oi];
                           const double w = -self.grad[oi] * o * (1.0 - o);  // dL/dt
                           if (need_x) xn->grad[xi] += w * an->value[pi];
                           if (need_a) an->grad[pi] += w * (xn->value[xi] - bn->value[pi]);
                           if (need_b) bn->grad[pi] -= w * an->value[pi];
                         }
                       }
                     }
                   }
                 });
}

Tensor fuzzify_gaussian(const Tensor& x, const Tensor& center, const Tensor& width) {
  const FuzzyDims dims = fuzzy_dims(x, center);
  if (center.shape() != width.shape()) {
    throw std::invalid_argument("center and width parameter shapes differ");
  }
  for (double s : width.data()) {
    if (s <= 0.0) throw std::invalid_argument("Gaussian membership width must be positive");
  }

  const auto& xv = x.data();
  const auto& mv = center.data();
  const auto& sv = width.data();
  std::vector<double> out(std::size_t(shape_numel(dims.out_shape)));
  const std::int64_t phw = dims.per_pixel ? dims.hw : 1;

  std::size_t oi = 0;
  for (int n = 0; n < dims.n; ++n) {
    for (int r = 0; r < dims.r; ++r) {
      for (int d = 0; d < dims.d; ++d) {
        const std::size_t xbase = std::size_t(n * dims.d + d) * std::size_t(dims.hw);
        const std::size_t pbase = std::size_t(r * dims.d + d) * std::size_t(phw);
        for (int i = 0; i < dims.hw; ++i, ++oi) {
          const std::size_t pi = pbase + std::size_t(dims.per_pixel ? i : 0);
          const double t = xv[xbase + std::size_t(i)] - mv[pi];
          out[oi] = std::exp(-t * t / (2.0 * sv[pi]));
        }
      }
    }
  }

  return make_op(dims.out_shape, std::move(out), {x, center, width}, "fuzzify_gaussian",
                 [xn = x.node(), mn = center.node(), sn = width.node(), dims](TensorNode& self) {
                   const bool need_x = xn->requires_grad;
                   const bool need_m = mn->requires_grad;
                   const bool need_s = sn->requires_grad;
                   if (need_x) xn->ensure_grad();
                   if (need_m) mn->ensure_grad();
                   if (need_s) sn->ensure_grad();
                   const std::int64_t phw = dims.per_pixel ? dims.hw : 1;
                   std::size_t oi = 0;
                   for (int n = 0; n < dims.n; ++n) {
                     for (int r = 0; r < dims.r; ++r) {
                       for (int d = 0; d < dims.d; ++d) {
                         const std::size_t xbase = std::size_t(n * dims.d + d) * std::size_t(dims.hw);
                         const std::size_t pbase = std::size_t(r * dims.d + d) * std::size_t(phw);
                         for (int i = 0; i < dims.hw; ++i, ++oi) {
                           const std::size_t xi = xbase + std::size_t(i);
                           const std::size_t pi = pbase + std::size_t(dims.per_pixel ? i : 0);
                           const double t = xn->value[xi] - mn->value[pi];
                           const double s = sn->value[pi];
                           const double go = self.grad[oi] * self.value[oi];
                           if (need_x) xn->grad[xi] -= go * t / s;
                           if (need_m) mn->grad[pi] += go * t / s;
                           if (need_s) sn->grad[pi] += go * t * t / (2.0 * s * s);
                         }
                       }
                     }
                   }
                 });
}

}  // namespace

const char* membership_kind_name(MembershipKind kind) {
  return kind == MembershipKind::Sigmoid ? "sigmoid" : "gaussian";
}

MembershipKind membership_kind_from_string(const std::string& s) {
  if (s == "sigmoid") return MembershipKind::Sigmoid;
  if (s == "gaussian") return MembershipKind::Gaussian;
  throw std::invalid_argument("unknown membership kind '" + s + "' (expected sigmoid or gaussian)");
}

std::vector<Tensor> MembershipParams::trainable() const {
  if (kind == MembershipKind::Sigmoid) return {slope, center};
  return {center, width};
}

std::int64_t MembershipParams::param_count() const {
  std::int64_t n = 0;
  for (const Tensor& t : trainable()) n += t.numel();
  return n;
}

Tensor fuzzify(const Tensor& x, const MembershipParams& params) {
  if (params.kind == MembershipKind::Sigmoid) {
    return fuzzify_sigmoid(x, params.slope, params.center);
  }
  return fuzzify_gaussian(x, params.center, params.width);
}

Tensor normalize_memberships(const Tensor& m) {
  std::int64_t outer = 0, inner = 0;
  int r = 0;
  category_axis(m, outer, r, inner);

  constexpr double kEps = 1e-12;
  const auto& mv = m.data();
  std::vector<double> out(mv.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    const std::size_t base = std::size_t(o) * std::size_t(r) * std::size_t(inner);
    for (std::int64_t i = 0; i < inner; ++i) {
      double sum = 0.0;
      for (int k = 0; k < r; ++k) sum += mv[base + std::size_t(k) * std::size_t(inner) + std::size_t(i)];
      const double scale = 1.0 / std::max(sum, kEps);
      for (int k = 0; k < r; ++k) {
        const std::size_t idx = base + std::size_t(k) * std::size_t(inner) + std::size_t(i);
        out[idx] = mv[idx] * scale;
      }
    }
  }

  return make_op(m.shape(), std::move(out), {m}, "normalize_memberships",
                 [mn = m.node(), outer, r, inner](TensorNode& self) {
                   mn->ensure_grad();
                   for (std::int64_t o = 0; o < outer; ++o) {
                     const std::size_t base = std::size_t(o) * std::size_t(r) * std::size_t(inner);
                     for (std::int64_t i = 0; i < inner; ++i) {
                       double sum = 0.0, dot = 0.0;
                       for (int k = 0; k < r; ++k) {
                         const std::size_t idx = base + std::size_t(k) * std::size_t(inner) + std::size_t(i);
                         sum += mn->value[idx];
                         dot += self.grad[idx] * self.value[idx];
                       }
                       const double scale = 1.0 / std::max(sum, 1e-12);
                       for (int k = 0; k < r; ++k) {
                         const std::size_t idx = base + std::size_t(k) * std::size_t(inner) + std::size_t(i);
                         mn->grad[idx] += (self.grad[idx] - dot) * scale;
                       }
                     }
                   }
                 });
}

Tensor uncertainty(const Tensor& m) {
  const auto& mv = m.data();
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < mv.size(); ++i) {
    const double v = mv[i];
    out[i] = v < 0.5 ? 2.0 * v : (v > 0.5 ? 2.0 * (1.0 - v) : 1.0);
  }
  return make_op(m.shape(), std::move(out), {m}, "uncertainty",
                 [mn = m.node()](TensorNode& self) {
                   mn->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double v = mn->value[i];
                     // The peak at 0.5 keeps a zero subgradient.
                     if (v < 0.5) mn->grad[i] += 2.0 * self.grad[i];
                     else if (v > 0.5) mn->grad[i] -= 2.0 * self.grad[i];
                   }
                 });
}

Tensor overall_uncertainty(const Tensor& u) {
  std::int64_t outer = 0, inner = 0;
  int r = 0;
  category_axis(u, outer, r, inner);

  Shape out_shape = u.shape();
  out_shape.erase(out_shape.begin() + (u.shape().size() == 5 ? 1 : 0));

  const auto& uv = u.data();
  std::vector<double> out(std::size_t(outer * inner));
  auto argmin = std::make_shared<std::vector<int>>(out.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    const std::size_t ubase = std::size_t(o) * std::size_t(r) * std::size_t(inner);
    for (std::int64_t i = 0; i < inner; ++i) {
      double best = uv[ubase + std::size_t(i)];
      int best_r = 0;
      for (int k = 1; k < r; ++k) {
        const double v = uv[ubase + std::size_t(k) * std::size_t(inner) + std::size_t(i)];
        if (v < best) {
          best = v;
          best_r = k;
        }
      }
      const std::size_t oi = std::size_t(o) * std::size_t(inner) + std::size_t(i);
      out[oi] = best;
      (*argmin)[oi] = best_r;
    }
  }

  return make_op(std::move(out_shape), std::move(out), {u}, "overall_uncertainty",
                 [un = u.node(), argmin, outer, r, inner](TensorNode& self) {
                   un->ensure_grad();
                   for (std::int64_t o = 0; o < outer; ++o) {
                     const std::size_t ubase = std::size_t(o) * std::size_t(r) * std::size_t(inner);
                     for (std::int64_t i = 0; i < inner; ++i) {
                       const std::size_t oi = std::size_t(o) * std::size_t(inner) + std::size_t(i);
                       const int k = (*argmin)[oi];
                       un->grad[ubase + std::size_t(k) * std::size_t(inner) + std::size_t(i)] += self.grad[oi];
                     }
                   }
                 });
}

Tensor fuse(const Tensor& u, const Tensor& carrier) {
  if (u.shape() != carrier.shape()) {
    throw std::invalid_argument("fuse: uncertainty " + shape_str(u.shape()) + " vs carrier " +
                                shape_str(carrier.shape()));
  }
  const auto& uv = u.data();
  const auto& cv = carrier.data();
  std::vector<double> out(uv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - uv[i]) * cv[i];

  return make_op(u.shape(), std::move(out), {u, carrier}, "fuse",
                 [un = u.node(), cn = carrier.node()](TensorNode& self) {
                   const bool need_u = un->requires_grad;
                   const bool need_c = cn->requires_grad;
                   if (need_u) un->ensure_grad();
                   if (need_c) cn->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     if (need_u) un->grad[i] -= self.grad[i] * cn->value[i];
                     if (need_c) cn->grad[i] += self.grad[i] * (1.0 - un->value[i]);
                   }
                 });
}

Tensor fuzzy_block(const Tensor& x, const MembershipParams& params) {
  const Tensor m = normalize_memberships(fuzzify(x, params));
  return fuse(overall_uncertainty(uncertainty(m)), x);
}

CategoryStats compute_category_stats(const std::vector<MultiChannelImage>& images,
                                     const std::vector<LabelMap>& labels) {
  if (images.empty() || images.size() != labels.size()) {
    throw std::invalid_argument("compute_category_stats: image and label lists must align");
  }
  const int channels = int(images.front().channels.size());
  const int r = kNumClasses;

  std::vector<double> sum(std::size_t(r) * channels, 0.0);
  std::vector<double> sumsq(std::size_t(r) * channels, 0.0);
  std::vector<std::int64_t> count(std::size_t(r), 0);
  std::vector<double> gsum(std::size_t(channels), 0.0);
  std::vector<double> gsumsq(std::size_t(channels), 0.0);
  std::int64_t gcount = 0;

  for (std::size_t k = 0; k < images.size(); ++k) {
    const MultiChannelImage& img = images[k];
    const LabelMap& lab = labels[k];
    if (int(img.channels.size()) != channels || img.width != lab.width || img.height != lab.height) {
      throw std::invalid_argument("compute_category_stats: extents mismatch at record " + std::to_string(k));
    }
    for (std::size_t i = 0; i < lab.size(); ++i) {
      const int cls = lab.labels[i];
      ++count[std::size_t(cls)];
      ++gcount;
      for (int d = 0; d < channels; ++d) {
        const double v = img.channels[std::size_t(d)].values[i];
        sum[std::size_t(cls) * channels + d] += v;
        sumsq[std::size_t(cls) * channels + d] += v * v;
        gsum[std::size_t(d)] += v;
        gsumsq[std::size_t(d)] += v * v;
      }
    }
  }

  CategoryStats stats;
  stats.categories = r;
  stats.channels = channels;
  stats.mean.resize(std::size_t(r) * channels);
  stats.var.resize(std::size_t(r) * channels);
  for (int c = 0; c < r; ++c) {
    for (int d = 0; d < channels; ++d) {
      const std::size_t idx = std::size_t(c) * channels + d;
      if (count[std::size_t(c)] > 0) {
        const double m = sum[idx] / double(count[std::size_t(c)]);
        stats.mean[idx] = m;
        stats.var[idx] = std::max(sumsq[idx] / double(count[std::size_t(c)]) - m * m, 0.0);
      } else {
        const double m = gsum[std::size_t(d)] / double(gcount);
        stats.mean[idx] = m;
        stats.var[idx] = std::max(gsumsq[std::size_t(d)] / double(gcount) - m * m, 0.0);
        if (d == 0) {
          stats.fallback_note += "category " + std::to_string(c) +
                                 " absent from the fold; seeded from global statistics\n";
        }
      }
    }
  }
  return stats;
}

CategoryStats compute_channel_stats(const Tensor& activations, int categories) {
  const Shape& s = activations.shape();
  if (s.size() != 4) {
    throw std::invalid_argument("compute_channel_stats expects [N,D,H,W], got " + shape_str(s));
  }
  const int n = s[0], d = s[1];
  const std::int64_t plane = std::int64_t(s[2]) * s[3];
  const auto& v = activations.data();

  CategoryStats stats;
  stats.categories = categories;
  stats.channels = d;
  stats.mean.resize(std::size_t(categories) * d);
  stats.var.resize(std::size_t(categories) * d);
  for (int di = 0; di < d; ++di) {
    double sum = 0.0, sumsq = 0.0;
    for (int ni = 0; ni < n; ++ni) {
      const std::size_t base = std::size_t(ni * d + di) * std::size_t(plane);
      for (std::int64_t i = 0; i < plane; ++i) {
        const double x = v[base + std::size_t(i)];
        sum += x;
        sumsq += x * x;
      }
    }
    const double cnt = double(n) * double(plane);
    const double m = sum / cnt;
    const double var = std::max(sumsq / cnt - m * m, 0.0);
    // Feature channels have no category identity yet; every category row
    // starts from the same channel statistics.
    for (int c = 0; c < categories; ++c) {
      stats.mean[std::size_t(c) * d + di] = m;
      stats.var[std::size_t(c) * d + di] = var;
    }
  }
  return stats;
}

MembershipParams init_membership_params(const CategoryStats& stats, MembershipKind kind,
                                        int height, int width, bool per_pixel, Rng& rng) {
  const int r = stats.categories, d = stats.channels;
  const int ph = per_pixel ? height : 1;
  const int pw = per_pixel ? width : 1;
  const Shape shape{r, d, ph, pw};
  const std::size_t plane = std::size_t(ph) * std::size_t(pw);

  std::vector<double> center(std::size_t(r) * std::size_t(d) * plane);
  for (int c = 0; c < r; ++c) {
    for (int di = 0; di < d; ++di) {
      const double m = stats.mean_at(c, di);
      const std::size_t base = (std::size_t(c) * std::size_t(d) + std::size_t(di)) * plane;
      std::fill_n(center.begin() + std::ptrdiff_t(base), plane, m);
    }
  }

  MembershipParams params;
  params.kind = kind;
  params.center = Tensor(shape, std::move(center), true);
  if (kind == MembershipKind::Sigmoid) {
    std::vector<double> slope(std::size_t(r) * std::size_t(d) * plane);
    for (double& v : slope) v = rng.uniform(-1.0, 1.0);
    params.slope = Tensor(shape, std::move(slope), true);
  } else {
    std::vector<double> width_v(std::size_t(r) * std::size_t(d) * plane);
    for (int c = 0; c < r; ++c) {
      for (int di = 0; di < d; ++di) {
        const double v = std::max(stats.var_at(c, di), kVarFloor);
        const std::size_t base = (std::size_t(c) * std::size_t(d) + std::size_t(di)) * plane;
        std::fill_n(width_v.begin() + std::ptrdiff_t(base), plane, v);
      }
    }
    params.width = Tensor(shape, std::move(width_v), true);
  }
  return params;
}

}  // namespace fseg

#pragma once

#include <string>
#include <vector>

#include "fseg/image.hpp"
#include "fseg/rng.hpp"
#include "fseg/tensor.hpp"

namespace fseg {

enum class MembershipKind { Sigmoid, Gaussian };

MembershipKind membership_kind_from_string(const std::string& s);
const char* membership_kind_name(MembershipKind kind);

inline constexpr double kVarFloor = 1e-4;

// Trainable membership parameters for one fuzzification site. Tensors are
// [R,D,H,W] (independent per pixel) or [R,D,1,1] (shared across the plane).
//   Sigmoid:  o = 1 / (1 + exp(slope * (x - center)))
//   Gaussian: o = exp(-(x - center)^2 / (2 * width)),  width = sigma^2
// Only two of the three tensors are populated per kind; width stays above
// kVarFloor (the trainer re-clamps it after every update).
struct MembershipParams {
  MembershipKind kind = MembershipKind::Sigmoid;
  Tensor slope;   // Sigmoid only
  Tensor center;  // Sigmoid b, Gaussian mu
  Tensor width;   // Gaussian only

  std::vector<Tensor> trainable() const;
  std::int64_t param_count() const;
};

// Membership grades per category. x is [D,H,W] or batched [N,D,H,W]; the
// result prepends a category axis: [R,D,H,W] or [N,R,D,H,W].
Tensor fuzzify(const Tensor& x, const MembershipParams& params);

// Scales the category axis so memberships of each (channel, pixel) sum to 1.
Tensor normalize_memberships(const Tensor& m);

// Elementwise tent map: 2m below 0.5, 2(1-m) above, 1 at exactly 0.5.
Tensor uncertainty(const Tensor& m);

// Fuzzy AND: minimum over the category axis, [*,R,D,H,W] -> [*,D,H,W].
// Gradient is routed to the argmin entry; ties go to the lowest category.
Tensor overall_uncertainty(const Tensor& u);

// Attenuates the carrier where uncertainty is high: o = (1 - u) * carrier.
Tensor fuse(const Tensor& u, const Tensor& carrier);

// The composed block used by the network: fuzzify, normalize, uncertainty,
// fuzzy AND, then fusion with x itself as the carrier.
Tensor fuzzy_block(const Tensor& x, const MembershipParams& params);

// Per-category per-channel intensity statistics over a training fold.
// Categories absent from the fold fall back to the global statistics of the
// channel (recorded in `fallback_note`).
struct CategoryStats {
  int categories = 0;
  int channels = 0;
  std::vector<double> mean;  // [categories][channels]
  std::vector<double> var;
  std::string fallback_note;

  double mean_at(int r, int d) const { return mean[std::size_t(r) * channels + d]; }
  double var_at(int r, int d) const { return var[std::size_t(r) * channels + d]; }
};

CategoryStats compute_category_stats(const std::vector<MultiChannelImage>& images,
                                     const std::vector<LabelMap>& labels);

// Statistics of a feature activation tensor [N,D,H,W], per channel. Used to
// seed the feature-map fuzzy block from a warm-up forward pass, where no
// category labeling of channels exists.
CategoryStats compute_channel_stats(const Tensor& activations, int categories);

// Centers come from the statistics (mean per category/channel, broadcast),
// Gaussian widths from the variances (floored), Sigmoid slopes i.i.d.
// uniform on [-1,1]. per_pixel selects [R,D,H,W] vs [R,D,1,1] tensors.
MembershipParams init_membership_params(const CategoryStats& stats, MembershipKind kind,
                                        int height, int width, bool per_pixel, Rng& rng);

}  // namespace fseg

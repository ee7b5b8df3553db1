#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "fseg/fcn.hpp"
#include "fseg/image.hpp"

namespace fseg {

using Vec3 = std::array<double, 3>;

// The six anatomy context vectors, ordered pre-fat background, fat, mammary,
// muscle, retro-muscle background, tumor. Their pairwise Euclidean
// distances are graded by anatomical adjacency: neighbor layers far apart,
// skip-one pairs nearer, skip-two pairs nearest, and the tumor vector
// farthest from the mammary layer where tumors actually sit, so that a
// tumor label inside mammary tissue costs the least smoothing energy.
struct ContextLabelSet {
  std::array<Vec3, 6> labels;

  const Vec3& operator[](int i) const { return labels[std::size_t(i)]; }
  Vec3& operator[](int i) { return labels[std::size_t(i)]; }

  static ContextLabelSet defaults();
};

// Distance table of a label set: the three adjacency grades over layer
// pairs plus the five tumor distances.
struct ContextDistances {
  std::array<double, 4> d1;     // (L1,L2) (L2,L3) (L3,L4) (L4,L5)
  std::array<double, 3> d2;     // (L1,L3) (L2,L4) (L3,L5)
  std::array<double, 2> d3;     // (L1,L4) (L2,L5)
  std::array<double, 5> tumor;  // ||L6 - L1..L5||
};

ContextDistances context_distances(const ContextLabelSet& set);

// Throws std::runtime_error naming the first violated relation: every d1
// strictly above every d2, every d2 strictly above every d3, tumor-mammary
// strictly the largest tumor distance, tumor-fat matching tumor-muscle and
// both strictly above the tumor-background pair, the matches within 1.5.
void verify_context_labels(const ContextLabelSet& set);

// Target distance table for re-deriving vectors. The defaults are the
// grades realized by ContextLabelSet::defaults().
struct ContextTargets {
  double d1 = 40.0;
  double d2 = 30.0;
  double d3 = 23.0;
  double tumor_mammary = 40.0;
  double tumor_fat_muscle = 31.0;
  double tumor_background = 26.0;
};

// No-argument form returns the default vectors after verifying their
// distance relations. The target form searches for six fresh vectors
// realizing the requested grades by random-restart Gauss-Newton and throws
// if the grades are not strictly ordered or no restart lands within 1.5 of
// every target.
ContextLabelSet solve_context_labels();
ContextLabelSet solve_context_labels(const ContextTargets& targets, std::uint64_t seed = 1);

// Per-pixel context vector, row-major; every entry is one of the six
// vectors of the set used to build it.
using ContextFeatureMap = std::vector<Vec3>;

// Tissue classes map to their layer vector and tumor to L6. Background is
// split per column: pixels with no tissue above them take the pre-fat
// vector L1, pixels with no tissue below take L5, enclosed background takes
// the nearer of the two (ties upward), and an all-background column is L1.
ContextFeatureMap build_context_map(const LabelMap& labels, const ContextLabelSet& set);

struct CrfParams {
  double w1 = 5.0;  // appearance kernel weight
  double w2 = 3.0;  // smoothness kernel weight
  double w3 = 3.0;  // context kernel weight
  double sigma_alpha = 40.0;   // appearance position bandwidth, pixels
  double sigma_beta = 0.1;     // appearance channel bandwidth, on [0,1]
  double sigma_gamma = 3.0;    // smoothness position bandwidth, pixels
  double sigma_tau = 40.0;     // context position bandwidth, pixels
  double sigma_lambda = 20.0;  // context vector bandwidth
  int iterations = 10;

  void validate() const;
};

// Gibbs energy of a labeling: clamped negative-log unary plus the Potts
// pairwise sum over ordered pixel pairs under the three Gaussian kernels.
// Quadratic in the pixel count.
double energy(const LabelMap& labels, const UnaryField& unary, const MultiChannelImage& image,
              const ContextFeatureMap& ctx, const CrfParams& params);

// Parallel mean-field refinement of the unary marginals under the
// three-kernel Potts energy. Message passing runs through a separable
// grid approximation of the Gaussian convolutions. If change_trace is
// given it receives the max marginal change of each iteration; running
// past convergence is not an error.
UnaryField mean_field(const UnaryField& unary, const MultiChannelImage& image,
                      const ContextFeatureMap& ctx, const CrfParams& params,
                      std::vector<double>* change_trace = nullptr);

// The identical update evaluated by direct summation over all pixel pairs.
// Quadratic; guarded to 4096 pixels.
UnaryField brute_force_mean_field(const UnaryField& unary, const MultiChannelImage& image,
                                  const ContextFeatureMap& ctx, const CrfParams& params,
                                  std::vector<double>* change_trace = nullptr);

// One-shot Gaussian convolution in feature space at unit bandwidth:
// out_i = sum_j exp(-||f_i - f_j||^2 / 2) v_j, j running over all points
// including i. values is n x value_dim, features n x feature_dim
// (feature_dim <= 8), both row-major. Approximate; relative L2 error below
// 1e-2 against the exact sum.
std::vector<double> gaussian_filter_highdim(const std::vector<double>& values, int value_dim,
                                            const std::vector<double>& features, int feature_dim);

}  // namespace fseg

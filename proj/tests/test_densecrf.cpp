#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crf_instances.hpp"
#include "fseg/densecrf.hpp"
#include "fseg/rng.hpp"

using namespace fseg;
using testutil::posterior_instance;
using testutil::PosteriorInstance;

namespace {

double vec_dist(const Vec3& a, const Vec3& b) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) s += (a[std::size_t(c)] - b[std::size_t(c)]) * (a[std::size_t(c)] - b[std::size_t(c)]);
  return std::sqrt(s);
}

UnaryField random_unary(int w, int h, Rng& rng) {
  UnaryField u;
  u.width = w;
  u.height = h;
  const std::size_t n = std::size_t(w) * std::size_t(h);
  u.probs.resize(n * std::size_t(kNumClasses));
  for (std::size_t i = 0; i < n; ++i) {
    double p[kNumClasses];
    double s = 0.0;
    for (int l = 0; l < kNumClasses; ++l) {
      p[l] = rng.uniform(0.05, 1.0);
      s += p[l];
    }
    for (int l = 0; l < kNumClasses; ++l) u.probs[std::size_t(l) * n + i] = p[l] / s;
  }
  return u;
}

MultiChannelImage random_image(int w, int h, int channels, Rng& rng) {
  MultiChannelImage img;
  img.width = w;
  img.height = h;
  img.channels.assign(std::size_t(channels), Plane(w, h));
  for (auto& ch : img.channels) {
    for (auto& v : ch.values) v = rng.uniform(0.0, 1.0);
  }
  return img;
}

LabelMap argmax_of(const UnaryField& u) {
  const std::size_t n = std::size_t(u.width) * std::size_t(u.height);
  LabelMap lab(u.width, u.height);
  for (std::size_t i = 0; i < n; ++i) {
    int best = 0;
    double bp = u.probs[i];
    for (int l = 1; l < kNumClasses; ++l) {
      if (u.probs[std::size_t(l) * n + i] > bp) {
        bp = u.probs[std::size_t(l) * n + i];
        best = l;
      }
    }
    lab.labels[i] = std::uint8_t(best);
  }
  return lab;
}

// Exact feature-space Gaussian convolution, the oracle for the grid filter.
std::vector<double> exact_filter(const std::vector<double>& v, int vd,
                                 const std::vector<double>& f, int fd) {
  const std::size_t n = v.size() / std::size_t(vd);
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double d2 = 0.0;
      for (int d = 0; d < fd; ++d) {
        const double dd = f[i * std::size_t(fd) + std::size_t(d)] - f[j * std::size_t(fd) + std::size_t(d)];
        d2 += dd * dd;
      }
      const double w = std::exp(-0.5 * d2);
      for (int c = 0; c < vd; ++c) out[i * std::size_t(vd) + std::size_t(c)] += w * v[j * std::size_t(vd) + std::size_t(c)];
    }
  }
  return out;
}

double rel_l2(const std::vector<double>& got, const std::vector<double>& want) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    num += (got[i] - want[i]) * (got[i] - want[i]);
    den += want[i] * want[i];
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("default vectors realize the reference distance table as plain norms") {
  const ContextLabelSet set = solve_context_labels();
  const ContextDistances d = context_distances(set);

  // Independently recomputed two-decimal table of the six default vectors.
  const double want_d1[4] = {42.75, 40.02, 40.02, 42.48};
  const double want_d2[3] = {32.78, 30.00, 33.21};
  const double want_d3[2] = {23.58, 23.07};
  const double want_tumor[5] = {26.11, 31.27, 40.03, 31.27, 25.85};
  for (int k = 0; k < 4; ++k) CHECK(std::fabs(d.d1[std::size_t(k)] - want_d1[k]) < 0.01);
  for (int k = 0; k < 3; ++k) CHECK(std::fabs(d.d2[std::size_t(k)] - want_d2[k]) < 0.01);
  for (int k = 0; k < 2; ++k) CHECK(std::fabs(d.d3[std::size_t(k)] - want_d3[k]) < 0.01);
  for (int k = 0; k < 5; ++k) CHECK(std::fabs(d.tumor[std::size_t(k)] - want_tumor[k]) < 0.01);

  // The tumor-mammary pair hand-expanded from the raw vectors: the squared
  // norm 1602.25 misses the table value by two orders of magnitude, so the
  // table can only be read as Euclidean norms.
  const double sq = 30.0 * 30.0 + 26.5 * 26.5;
  CHECK(std::fabs(std::sqrt(sq) - 40.03) < 0.01);
  CHECK(std::fabs(sq - 40.03) > 100.0);
  CHECK(d.tumor[2] == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
}

TEST_CASE("distance table matches a second independent route over all pairs") {
  const ContextLabelSet set = ContextLabelSet::defaults();
  const ContextDistances d = context_distances(set);
  const int pairs_d1[4][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  const int pairs_d2[3][2] = {{0, 2}, {1, 3}, {2, 4}};
  const int pairs_d3[2][2] = {{0, 3}, {1, 4}};
  for (int k = 0; k < 4; ++k) {
    CHECK(d.d1[std::size_t(k)] ==
          doctest::Approx(vec_dist(set[pairs_d1[k][0]], set[pairs_d1[k][1]])).epsilon(1e-12));
  }
  for (int k = 0; k < 3; ++k) {
    CHECK(d.d2[std::size_t(k)] ==
          doctest::Approx(vec_dist(set[pairs_d2[k][0]], set[pairs_d2[k][1]])).epsilon(1e-12));
  }
  for (int k = 0; k < 2; ++k) {
    CHECK(d.d3[std::size_t(k)] ==
          doctest::Approx(vec_dist(set[pairs_d3[k][0]], set[pairs_d3[k][1]])).epsilon(1e-12));
  }
  for (int k = 0; k < 5; ++k) {
    CHECK(d.tumor[std::size_t(k)] == doctest::Approx(vec_dist(set[5], set[k])).epsilon(1e-12));
  }
}

TEST_CASE("default orderings are strict across all grade instances") {
  const ContextDistances d = context_distances(ContextLabelSet::defaults());
  for (double a : d.d1) {
    for (double b : d.d2) CHECK(a > b);
  }
  for (double b : d.d2) {
    for (double c : d.d3) CHECK(b > c);
  }
  CHECK(d.tumor[2] > d.tumor[1]);
  CHECK(d.tumor[2] > d.tumor[3]);
  CHECK(d.tumor[1] > d.tumor[0]);
  CHECK(d.tumor[1] > d.tumor[4]);
  CHECK(d.tumor[3] > d.tumor[0]);
  CHECK(d.tumor[3] > d.tumor[4]);
  CHECK(std::fabs(d.tumor[1] - d.tumor[3]) <= 1.5);
  CHECK(std::fabs(d.tumor[0] - d.tumor[4]) <= 1.5);
}

TEST_CASE("verification names the violated relation") {
  ContextLabelSet set = ContextLabelSet::defaults();
  set[5] = set[2];  // tumor on top of mammary: tumor-mammary distance collapses
  CHECK_THROWS_WITH_AS(verify_context_labels(set),
                       doctest::Contains("tumor-mammary"), std::runtime_error);

  set = ContextLabelSet::defaults();
  set[0] = {30.0, 30.0, 5.0};  // drags a neighbor distance below the skip-one grade
  CHECK_THROWS_AS(verify_context_labels(set), std::runtime_error);
}

TEST_CASE("custom feasible targets are realized within 1.5 of every entry") {
  ContextTargets t;  // 40 / 30 / 23 / 40 / 31 / 26
  const ContextLabelSet set = solve_context_labels(t, 1);
  const ContextDistances d = context_distances(set);
  for (double v : d.d1) CHECK(std::fabs(v - t.d1) <= 1.5);
  for (double v : d.d2) CHECK(std::fabs(v - t.d2) <= 1.5);
  for (double v : d.d3) CHECK(std::fabs(v - t.d3) <= 1.5);
  CHECK(std::fabs(d.tumor[2] - t.tumor_mammary) <= 1.5);
  CHECK(std::fabs(d.tumor[1] - t.tumor_fat_muscle) <= 1.5);
  CHECK(std::fabs(d.tumor[3] - t.tumor_fat_muscle) <= 1.5);
  CHECK(std::fabs(d.tumor[0] - t.tumor_background) <= 1.5);
  CHECK(std::fabs(d.tumor[4] - t.tumor_background) <= 1.5);
  CHECK_NOTHROW(verify_context_labels(set));
}

TEST_CASE("misordered targets are rejected with the violated constraint named") {
  ContextTargets t;
  t.d1 = 20.0;  // below d2
  CHECK_THROWS_WITH_AS(solve_context_labels(t, 1), doctest::Contains("neighbor grade"),
                       std::runtime_error);

  ContextTargets t2;
  t2.tumor_fat_muscle = 20.0;  // below tumor_background
  CHECK_THROWS_WITH_AS(solve_context_labels(t2, 1), doctest::Contains("tumor-fat/muscle"),
                       std::runtime_error);

  ContextTargets t3;
  t3.d3 = -1.0;
  CHECK_THROWS_AS(solve_context_labels(t3, 1), std::runtime_error);
}

TEST_CASE("all-background map assigns the pre-fat vector everywhere") {
  const ContextLabelSet set = ContextLabelSet::defaults();
  const LabelMap lab(4, 3, std::uint8_t(kClassBackground));
  const ContextFeatureMap ctx = build_context_map(lab, set);
  REQUIRE(ctx.size() == 12);
  for (const Vec3& v : ctx) CHECK(v == set[0]);
}

TEST_CASE("a full-depth column walks the five layer vectors in order") {
  const ContextLabelSet set = ContextLabelSet::defaults();
  LabelMap lab(1, 5, std::uint8_t(kClassBackground));
  lab.at(0, 1) = std::uint8_t(kClassFat);
  lab.at(0, 2) = std::uint8_t(kClassMammary);
  lab.at(0, 3) = std::uint8_t(kClassMuscle);
  const ContextFeatureMap ctx = build_context_map(lab, set);
  CHECK(ctx[0] == set[0]);
  CHECK(ctx[1] == set[1]);
  CHECK(ctx[2] == set[2]);
  CHECK(ctx[3] == set[3]);
  CHECK(ctx[4] == set[4]);
}

TEST_CASE("tumor pixels map to the tumor vector regardless of position") {
  const ContextLabelSet set = ContextLabelSet::defaults();
  LabelMap lab(3, 3, std::uint8_t(kClassBackground));
  lab.at(0, 0) = std::uint8_t(kClassTumor);
  lab.at(1, 1) = std::uint8_t(kClassTumor);
  lab.at(2, 2) = std::uint8_t(kClassTumor);
  const ContextFeatureMap ctx = build_context_map(lab, set);
  CHECK(ctx[0] == set[5]);
  CHECK(ctx[4] == set[5]);
  CHECK(ctx[8] == set[5]);
}

TEST_CASE("enclosed background splits toward the nearer tissue, ties upward") {
  const ContextLabelSet set = ContextLabelSet::defaults();
  LabelMap lab(1, 6, std::uint8_t(kClassBackground));
  lab.at(0, 1) = std::uint8_t(kClassFat);
  lab.at(0, 5) = std::uint8_t(kClassMuscle);
  const ContextFeatureMap ctx = build_context_map(lab, set);
  CHECK(ctx[0] == set[0]);  // above all tissue
  CHECK(ctx[2] == set[0]);  // 1 below fat, 3 above muscle
  CHECK(ctx[3] == set[0]);  // equidistant, tie upward
  CHECK(ctx[4] == set[4]);  // 3 below fat, 1 above muscle

  // every produced vector is one of the six
  for (const Vec3& v : ctx) {
    bool member = false;
    for (int k = 0; k < 6; ++k) member = member || v == set[k];
    CHECK(member);
  }
}

TEST_CASE("zero-weight energy is the summed clamped unary of the labeling") {
  Rng rng(11);
  const int w = 6, h = 5;
  const UnaryField u = random_unary(w, h, rng);
  const MultiChannelImage img = random_image(w, h, 1, rng);
  LabelMap lab(w, h);
  for (auto& l : lab.labels) l = std::uint8_t(rng.uniform_int(0, kNumClasses - 1));
  const ContextFeatureMap ctx = build_context_map(lab, ContextLabelSet::defaults());

  CrfParams p;
  p.w1 = p.w2 = p.w3 = 0.0;
  const std::size_t n = lab.size();
  double want = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    want -= std::log(std::max(u.probs[std::size_t(lab.labels[i]) * n + i], 1e-12));
  }
  CHECK(energy(lab, u, img, ctx, p) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("uniform labelings pay no pairwise energy") {
  Rng rng(12);
  const int w = 5, h = 4;
  const UnaryField u = random_unary(w, h, rng);
  const MultiChannelImage img = random_image(w, h, 3, rng);
  const LabelMap lab(w, h, std::uint8_t(kClassMammary));
  const ContextFeatureMap ctx = build_context_map(lab, ContextLabelSet::defaults());

  CrfParams p;  // default nonzero weights
  const std::size_t n = lab.size();
  double want = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    want -= std::log(std::max(u.probs[std::size_t(kClassMammary) * n + i], 1e-12));
  }
  CHECK(energy(lab, u, img, ctx, p) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("three-pixel energy matches a hand-summed evaluation") {
  // Pixels at (0,0), (1,0), (2,0); one channel; labels 0, 1, 0. Only the
  // label-0/label-1 pairs pay, each in both directions.
  UnaryField u;
  u.width = 3;
  u.height = 1;
  u.probs.assign(15, 0.0);
  const double pr[3][5] = {{0.5, 0.2, 0.1, 0.1, 0.1},
                           {0.1, 0.6, 0.1, 0.1, 0.1},
                           {0.3, 0.3, 0.2, 0.1, 0.1}};
  for (int i = 0; i < 3; ++i) {
    for (int l = 0; l < 5; ++l) u.probs[std::size_t(l) * 3 + std::size_t(i)] = pr[i][l];
  }
  MultiChannelImage img;
  img.width = 3;
  img.height = 1;
  img.channels.assign(1, Plane(3, 1));
  img.channels[0].values = {0.2, 0.5, 0.9};

  const ContextLabelSet set = ContextLabelSet::defaults();
  ContextFeatureMap ctx = {set[0], set[2], set[5]};

  LabelMap lab(3, 1);
  lab.labels = {0, 1, 0};

  CrfParams p;
  p.w1 = 2.0;
  p.w2 = 1.5;
  p.w3 = 0.5;
  p.sigma_alpha = 3.0;
  p.sigma_beta = 0.25;
  p.sigma_gamma = 1.5;
  p.sigma_tau = 4.0;
  p.sigma_lambda = 15.0;

  // Hand expansion. Pair (0,1): position gap 1, intensity gap 0.3, context
  // vectors L1 vs L3. Pair (1,2): position gap 1, intensity gap 0.4, L3 vs
  // L6. Pair (0,2) shares a label and pays nothing.
  auto k_pair = [&](double dx, double di, const Vec3& va, const Vec3& vb) {
    const double pos2 = dx * dx;
    double ctx2 = 0.0;
    for (int c = 0; c < 3; ++c) ctx2 += (va[std::size_t(c)] - vb[std::size_t(c)]) * (va[std::size_t(c)] - vb[std::size_t(c)]);
    return 2.0 * std::exp(-pos2 / (2.0 * 3.0 * 3.0) - di * di / (2.0 * 0.25 * 0.25)) +
           1.5 * std::exp(-pos2 / (2.0 * 1.5 * 1.5)) +
           0.5 * std::exp(-pos2 / (2.0 * 4.0 * 4.0) - ctx2 / (2.0 * 15.0 * 15.0));
  };
  const double unary_part = -std::log(0.5) - std::log(0.6) - std::log(0.3);
  const double pair_part =
      2.0 * k_pair(1.0, 0.3, set[0], set[2]) + 2.0 * k_pair(1.0, 0.4, set[2], set[5]);
  CHECK(energy(lab, u, img, ctx, p) == doctest::Approx(unary_part + pair_part).epsilon(1e-12));
}

TEST_CASE("zero weights leave the marginals untouched and recompute the argmax") {
  Rng rng(13);
  const UnaryField u = random_unary(7, 6, rng);
  const MultiChannelImage img = random_image(7, 6, 3, rng);
  const ContextFeatureMap ctx = build_context_map(argmax_of(u), ContextLabelSet::defaults());
  CrfParams p;
  p.w1 = p.w2 = p.w3 = 0.0;

  const UnaryField fast = mean_field(u, img, ctx, p);
  const UnaryField brute = brute_force_mean_field(u, img, ctx, p);
  for (std::size_t i = 0; i < u.probs.size(); ++i) {
    CHECK(fast.probs[i] == u.probs[i]);
    CHECK(brute.probs[i] == u.probs[i]);
  }
  const LabelMap want = argmax_of(u);
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(fast.argmax.labels[i] == want.labels[i]);
    CHECK(brute.argmax.labels[i] == want.labels[i]);
  }
}

TEST_CASE("uniform marginals under zero weights argmax to the lowest class") {
  UnaryField u;
  u.width = 2;
  u.height = 2;
  u.probs.assign(20, 0.2);
  MultiChannelImage img;
  img.width = 2;
  img.height = 2;
  img.channels.assign(1, Plane(2, 2, 0.5));
  const ContextFeatureMap ctx(4, ContextLabelSet::defaults()[0]);
  CrfParams p;
  p.w1 = p.w2 = p.w3 = 0.0;
  const UnaryField out = mean_field(u, img, ctx, p);
  for (std::size_t i = 0; i < 4; ++i) CHECK(int(out.argmax.labels[i]) == kClassBackground);
}

TEST_CASE("a single pixel is a fixed point of the brute-force update") {
  UnaryField u;
  u.width = 1;
  u.height = 1;
  u.probs = {0.4, 0.3, 0.1, 0.1, 0.1};
  MultiChannelImage img;
  img.width = 1;
  img.height = 1;
  img.channels.assign(1, Plane(1, 1, 0.7));
  const ContextFeatureMap ctx(1, ContextLabelSet::defaults()[2]);
  CrfParams p;  // default nonzero weights: no pairs exist, so no influence
  const UnaryField out = brute_force_mean_field(u, img, ctx, p);
  for (int l = 0; l < 5; ++l) {
    CHECK(out.probs[std::size_t(l)] == doctest::Approx(u.probs[std::size_t(l)]).epsilon(1e-12));
  }
  CHECK(int(out.argmax.labels[0]) == 0);
}

TEST_CASE("two-pixel smoothness-only update matches the hand iteration") {
  // Two pixels one apart, unary (0.8,0.2) and (0.6,0.4) over labels 0 and 1,
  // smoothness kernel only with unit weight and unit bandwidth.
  UnaryField u;
  u.width = 2;
  u.height = 1;
  u.probs.assign(10, 0.0);
  u.probs[0] = 0.8;  // class 0, pixel 0
  u.probs[1] = 0.6;  // class 0, pixel 1
  u.probs[2] = 0.2;  // class 1, pixel 0
  u.probs[3] = 0.4;  // class 1, pixel 1
  MultiChannelImage img;
  img.width = 2;
  img.height = 1;
  img.channels.assign(1, Plane(2, 1, 0.5));
  const ContextFeatureMap ctx(2, ContextLabelSet::defaults()[0]);
  CrfParams p;
  p.w1 = 0.0;
  p.w3 = 0.0;
  p.w2 = 1.0;
  p.sigma_gamma = 1.0;
  p.iterations = 1;

  // Hand iteration with the clamp replicated: Q starts as the softmax of
  // log-probabilities, absent classes held at the 1e-12 floor.
  const double k = std::exp(-0.5);
  double q[2][5], logit[2][5];
  for (int i = 0; i < 2; ++i) {
    double s = 0.0;
    for (int l = 0; l < 5; ++l) {
      const double pl = std::max(u.probs[std::size_t(l) * 2 + std::size_t(i)], 1e-12);
      q[i][l] = pl;
      s += pl;
    }
    for (int l = 0; l < 5; ++l) q[i][l] /= s;
  }
  for (int i = 0; i < 2; ++i) {
    const int j = 1 - i;
    for (int l = 0; l < 5; ++l) {
      logit[i][l] = std::log(std::max(u.probs[std::size_t(l) * 2 + std::size_t(i)], 1e-12)) +
                    k * q[j][l];
    }
  }
  double want[2][5];
  for (int i = 0; i < 2; ++i) {
    double s = 0.0;
    for (int l = 0; l < 5; ++l) {
      want[i][l] = std::exp(logit[i][l]);
      s += want[i][l];
    }
    for (int l = 0; l < 5; ++l) want[i][l] /= s;
  }

  const UnaryField out = brute_force_mean_field(u, img, ctx, p);
  for (int i = 0; i < 2; ++i) {
    for (int l = 0; l < 5; ++l) {
      CHECK(out.probs[std::size_t(l) * 2 + std::size_t(i)] ==
            doctest::Approx(want[i][l]).epsilon(1e-12));
    }
  }
  // The label-0 marginals sharpen toward their frozen one-iteration values.
  CHECK(out.probs[0] == doctest::Approx(0.81871).epsilon(1e-4));
  CHECK(out.probs[1] == doctest::Approx(0.68339).epsilon(1e-4));
  CHECK(out.probs[2] == doctest::Approx(0.18129).epsilon(1e-4));
  CHECK(out.probs[3] == doctest::Approx(0.31661).epsilon(1e-4));
}

TEST_CASE("a 3x3 instance matches an independently expanded update table") {
  const int w = 3, h = 3;
  const std::size_t n = 9;
  Rng rng(19);
  const UnaryField u = random_unary(w, h, rng);
  const MultiChannelImage img = random_image(w, h, 1, rng);
  const ContextLabelSet set = ContextLabelSet::defaults();
  const ContextFeatureMap ctx = build_context_map(argmax_of(u), set);

  CrfParams p;
  p.w1 = 0.8;
  p.w2 = 0.6;
  p.w3 = 0.4;
  p.sigma_alpha = 2.0;
  p.sigma_beta = 0.3;
  p.sigma_gamma = 1.2;
  p.sigma_tau = 2.5;
  p.sigma_lambda = 18.0;
  p.iterations = 3;

  // Full expansion with its own loops: raw kernels, synchronous update,
  // plain softmax. Shares no code with the implementation.
  std::vector<double> q(n * 5), u_neg(n * 5);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (int l = 0; l < 5; ++l) {
      const double pl = std::max(u.probs[std::size_t(l) * n + i], 1e-12);
      u_neg[i * 5 + std::size_t(l)] = std::log(pl);
      q[i * 5 + std::size_t(l)] = pl;
      s += pl;
    }
    for (int l = 0; l < 5; ++l) q[i * 5 + std::size_t(l)] /= s;
  }
  for (int it = 0; it < p.iterations; ++it) {
    std::vector<double> qn(n * 5);
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = double(int(i) % w), yi = double(int(i) / w);
      double sup[5] = {0, 0, 0, 0, 0};
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double xj = double(int(j) % w), yj = double(int(j) / w);
        const double pos2 = (xi - xj) * (xi - xj) + (yi - yj) * (yi - yj);
        const double di = img.channels[0].values[i] - img.channels[0].values[j];
        double ctx2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          ctx2 += (ctx[i][std::size_t(c)] - ctx[j][std::size_t(c)]) *
                  (ctx[i][std::size_t(c)] - ctx[j][std::size_t(c)]);
        }
        const double kij = 0.8 * std::exp(-pos2 / (2.0 * 2.0 * 2.0) - di * di / (2.0 * 0.3 * 0.3)) +
                           0.6 * std::exp(-pos2 / (2.0 * 1.2 * 1.2)) +
                           0.4 * std::exp(-pos2 / (2.0 * 2.5 * 2.5) - ctx2 / (2.0 * 18.0 * 18.0));
        for (int l = 0; l < 5; ++l) sup[l] += kij * q[j * 5 + std::size_t(l)];
      }
      double s = 0.0;
      for (int l = 0; l < 5; ++l) {
        qn[i * 5 + std::size_t(l)] = std::exp(u_neg[i * 5 + std::size_t(l)] + sup[l]);
        s += qn[i * 5 + std::size_t(l)];
      }
      for (int l = 0; l < 5; ++l) qn[i * 5 + std::size_t(l)] /= s;
    }
    q.swap(qn);
  }

  const UnaryField out = brute_force_mean_field(u, img, ctx, p);
  for (std::size_t i = 0; i < n; ++i) {
    for (int l = 0; l < 5; ++l) {
      CHECK(out.probs[std::size_t(l) * n + i] ==
            doctest::Approx(q[i * 5 + std::size_t(l)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("fast path tracks the brute force oracle") {
  const int w = 24, h = 24;
  for (int inst = 0; inst < 2; ++inst) {
    Rng rng(200 + inst);
    const UnaryField u = random_unary(w, h, rng);
    const MultiChannelImage img = random_image(w, h, 3, rng);
    const ContextFeatureMap ctx = build_context_map(argmax_of(u), ContextLabelSet::defaults());
    CrfParams p;
    p.w1 = 0.5;
    p.w2 = 0.3;
    p.w3 = 0.3;
    const UnaryField fast = mean_field(u, img, ctx, p);
    const UnaryField brute = brute_force_mean_field(u, img, ctx, p);
    double max_dq = 0.0;
    std::size_t agree = 0;
    for (std::size_t i = 0; i < fast.probs.size(); ++i) {
      max_dq = std::max(max_dq, std::fabs(fast.probs[i] - brute.probs[i]));
    }
    for (std::size_t i = 0; i < fast.argmax.size(); ++i) {
      agree += fast.argmax.labels[i] == brute.argmax.labels[i];
    }
    CHECK(max_dq < 1e-3);
    CHECK(agree == fast.argmax.size());
  }
}

TEST_CASE("dropping the context kernel reproduces the two-kernel solver") {
  // Posterior-like instance: iid unaries at full default weights put many
  // pixels on knife edges where mean field is bistable and any two exact
  // solvers could disagree, so the comparison is run on an instance whose
  // pixels all have decisive local evidence.
  const PosteriorInstance inst = posterior_instance(32, 3);
  const ContextLabelSet set = ContextLabelSet::defaults();
  const ContextFeatureMap ctx_a = build_context_map(inst.unary.argmax, set);
  const ContextFeatureMap ctx_b(inst.unary.probs.size() / kNumClasses, set[5]);

  CrfParams p;
  p.w3 = 0.0;
  const UnaryField fast = mean_field(inst.unary, inst.image, ctx_a, p);
  const UnaryField brute = brute_force_mean_field(inst.unary, inst.image, ctx_a, p);
  double max_dq = 0.0;
  for (std::size_t i = 0; i < fast.probs.size(); ++i) {
    max_dq = std::max(max_dq, std::fabs(fast.probs[i] - brute.probs[i]));
  }
  CHECK(max_dq < 1e-3);

  // with w3 = 0 the context map must have no influence at all
  const UnaryField fast_b = mean_field(inst.unary, inst.image, ctx_b, p);
  for (std::size_t i = 0; i < fast.probs.size(); ++i) CHECK(fast.probs[i] == fast_b.probs[i]);
}

TEST_CASE("marginals stay normalized after every iteration count") {
  const int w = 12, h = 10;
  Rng rng(37);
  const UnaryField u = random_unary(w, h, rng);
  const MultiChannelImage img = random_image(w, h, 1, rng);
  const ContextFeatureMap ctx = build_context_map(argmax_of(u), ContextLabelSet::defaults());
  const std::size_t n = std::size_t(w) * std::size_t(h);

  std::vector<double> trace5;
  for (int t = 1; t <= 5; ++t) {
    CrfParams p;
    p.iterations = t;
    std::vector<double> trace;
    const UnaryField out = mean_field(u, img, ctx, p, &trace);
    REQUIRE(trace.size() == std::size_t(t));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (int l = 0; l < 5; ++l) s += out.probs[std::size_t(l) * n + i];
      CHECK(std::fabs(s - 1.0) < 1e-9);
    }
    if (t == 5) trace5 = trace;
  }
  // shorter runs are exact prefixes of longer ones
  CrfParams p3;
  p3.iterations = 3;
  std::vector<double> trace3;
  mean_field(u, img, ctx, p3, &trace3);
  for (int t = 0; t < 3; ++t) CHECK(trace3[std::size_t(t)] == trace5[std::size_t(t)]);
}

TEST_CASE("defaults converge on a layered instance within ten iterations") {
  const int w = 32, h = 32;
  Rng rng(41);
  LabelMap lab(w, h);
  for (int y = 0; y < h; ++y) {
    const int cls = y < 5 ? kClassBackground
                  : y < 11 ? kClassFat
                  : y < 21 ? kClassMammary
                  : y < 27 ? kClassMuscle
                           : kClassBackground;
    for (int x = 0; x < w; ++x) lab.at(x, y) = std::uint8_t(cls);
  }
  const std::size_t n = std::size_t(w) * std::size_t(h);
  UnaryField u;
  u.width = w;
  u.height = h;
  u.probs.resize(n * 5);
  MultiChannelImage img;
  img.width = w;
  img.height = h;
  img.channels.assign(1, Plane(w, h));
  for (std::size_t i = 0; i < n; ++i) {
    const int true_l = lab.labels[i];
    double p[5];
    double s = 0.0;
    for (int l = 0; l < 5; ++l) {
      p[l] = (l == true_l ? 4.0 : 1.0) * rng.uniform(0.5, 1.5);
      s += p[l];
    }
    for (int l = 0; l < 5; ++l) u.probs[std::size_t(l) * n + i] = p[l] / s;
    img.channels[0].values[i] = 0.2 * true_l + rng.uniform(-0.05, 0.05);
  }
  const ContextFeatureMap ctx = build_context_map(lab, ContextLabelSet::defaults());

  CrfParams p;  // defaults, 10 iterations
  std::vector<double> trace;
  mean_field(u, img, ctx, p, &trace);
  REQUIRE(trace.size() == 10);
  CHECK(trace.back() < 1e-3);
}

TEST_CASE("mean field is deterministic") {
  const int w = 14, h = 9;
  Rng rng(43);
  const UnaryField u = random_unary(w, h, rng);
  const MultiChannelImage img = random_image(w, h, 3, rng);
  const ContextFeatureMap ctx = build_context_map(argmax_of(u), ContextLabelSet::defaults());
  CrfParams p;
  const UnaryField a = mean_field(u, img, ctx, p);
  const UnaryField b = mean_field(u, img, ctx, p);
  for (std::size_t i = 0; i < a.probs.size(); ++i) CHECK(a.probs[i] == b.probs[i]);
}

TEST_CASE("identical features couple every point to the full value sum") {
  Rng rng(7);
  const std::size_t n = 100;
  std::vector<double> f(n * 3, 2.5);
  std::vector<double> v(n * 2);
  for (auto& x : v) x = rng.uniform(0.0, 1.0);
  double s0 = 0.0, s1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s0 += v[i * 2];
    s1 += v[i * 2 + 1];
  }
  const std::vector<double> got = gaussian_filter_highdim(v, 2, f, 3);
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(std::fabs(got[i * 2] - s0) / s0 < 1e-2);
    CHECK(std::fabs(got[i * 2 + 1] - s1) / s1 < 1e-2);
  }
}

TEST_CASE("far-separated clusters do not leak into each other") {
  Rng rng(9);
  const std::size_t n = 40;
  std::vector<double> f(n * 2);
  std::vector<double> v(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    f[i * 2] = (i < n / 2 ? 0.0 : 50.0) + rng.uniform(-0.2, 0.2);
    f[i * 2 + 1] = rng.uniform(-0.2, 0.2);
    if (i < n / 2) v[i] = 1.0;
  }
  const std::vector<double> got = gaussian_filter_highdim(v, 1, f, 2);
  double within = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n / 2) {
      within = std::max(within, got[i]);
    } else {
      cross = std::max(cross, got[i]);
    }
  }
  CHECK(within > 1.0);
  CHECK(cross < 1e-6 * within);
}

TEST_CASE("the grid filter stays within 1% of the exact sum at N=1024") {
  for (int fd : {2, 5}) {
    Rng rng(42 + fd);
    const std::size_t n = 1024;
    std::vector<double> f(n * std::size_t(fd));
    std::vector<double> v(n * 3);
    for (auto& x : f) x = rng.uniform(0.0, 6.0);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    const std::vector<double> got = gaussian_filter_highdim(v, 3, f, fd);
    const std::vector<double> want = exact_filter(v, 3, f, fd);
    CHECK(rel_l2(got, want) < 1e-2);
  }
}

TEST_CASE("a lone point keeps its own value") {
  const std::vector<double> v = {3.0, -2.0};
  const std::vector<double> f = {1.3, 0.4};
  const std::vector<double> got = gaussian_filter_highdim(v, 2, f, 2);
  CHECK(std::fabs(got[0] - 3.0) < 0.03);
  CHECK(std::fabs(got[1] + 2.0) < 0.02);
}

TEST_CASE("filter guards reject bad dimensions") {
  const std::vector<double> v(10, 1.0);
  std::vector<double> f9(10 * 9, 0.0);
  CHECK_THROWS_AS(gaussian_filter_highdim(v, 1, f9, 9), std::invalid_argument);
  std::vector<double> f0;
  CHECK_THROWS_AS(gaussian_filter_highdim(v, 1, f0, 0), std::invalid_argument);
  std::vector<double> f_short(10, 0.0);  // needs 20 for fd=2
  CHECK_THROWS_AS(gaussian_filter_highdim(v, 1, f_short, 2), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_filter_highdim(v, 3, f_short, 1), std::invalid_argument);
}

TEST_CASE("parameter validation rejects out-of-range settings") {
  CrfParams p;
  CHECK_NOTHROW(p.validate());
  p.w2 = -0.1;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = CrfParams{};
  p.sigma_beta = 0.0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = CrfParams{};
  p.iterations = 0;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("the brute force path refuses oversized instances") {
  const int w = 65, h = 64;  // 4160 pixels
  Rng rng(47);
  const UnaryField u = random_unary(w, h, rng);
  const MultiChannelImage img = random_image(w, h, 1, rng);
  const ContextFeatureMap ctx(std::size_t(w) * std::size_t(h), ContextLabelSet::defaults()[0]);
  CrfParams p;
  CHECK_THROWS_AS(brute_force_mean_field(u, img, ctx, p), std::invalid_argument);
}

TEST_CASE("mismatched extents are rejected") {
  Rng rng(53);
  const UnaryField u = random_unary(4, 4, rng);
  const MultiChannelImage img = random_image(5, 4, 1, rng);
  const ContextFeatureMap ctx(16, ContextLabelSet::defaults()[0]);
  CrfParams p;
  CHECK_THROWS_AS(mean_field(u, img, ctx, p), std::invalid_argument);

  const MultiChannelImage img_ok = random_image(4, 4, 1, rng);
  const ContextFeatureMap ctx_short(15, ContextLabelSet::defaults()[0]);
  CHECK_THROWS_AS(mean_field(u, img_ok, ctx_short, p), std::invalid_argument);

  LabelMap lab(4, 3);
  const ContextFeatureMap ctx_ok(16, ContextLabelSet::defaults()[0]);
  CHECK_THROWS_AS(energy(lab, u, img_ok, ctx_ok, p), std::invalid_argument);
}

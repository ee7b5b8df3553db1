#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <vector>

#include "fseg/dataset.hpp"
#include "fseg/rng.hpp"
#include "testutil.hpp"

using namespace fseg;

namespace {

LabelMap map_from(int w, int h, const std::vector<int>& vals) {
  LabelMap m(w, h);
  for (std::size_t i = 0; i < vals.size(); ++i) m.labels[i] = std::uint8_t(vals[i]);
  return m;
}

}  // namespace

TEST_CASE("metrics match the overlapping-squares hand count") {
  // truth: 2x2 square at columns 0-1, pred: same square shifted right by
  // one column. Intersection 2, truth 4, pred 4, union 6.
  LabelMap truth = map_from(4, 2, {1, 1, 0, 0, 1, 1, 0, 0});
  LabelMap pred = map_from(4, 2, {0, 1, 1, 0, 0, 1, 1, 0});
  const ClassMetrics m = metrics(pred, truth, 1);
  REQUIRE(m.tpr.has_value());
  REQUIRE(m.fpr.has_value());
  CHECK(*m.tpr == 0.5);
  CHECK(*m.fpr == 0.5);
  CHECK(m.iou == 2.0 / 6.0);
}

TEST_CASE("metrics on exact and disjoint predictions") {
  LabelMap truth = map_from(3, 1, {1, 1, 0});
  const ClassMetrics exact = metrics(truth, truth, 1);
  CHECK(*exact.tpr == 1.0);
  CHECK(*exact.fpr == 0.0);
  CHECK(exact.iou == 1.0);

  LabelMap pred = map_from(3, 1, {0, 0, 1});
  const ClassMetrics disjoint = metrics(pred, truth, 1);
  CHECK(*disjoint.tpr == 0.0);
  CHECK(*disjoint.fpr == 0.5);
  CHECK(disjoint.iou == 0.0);

  // disjoint equal-size regions: FPR 1 by |A_r - A_m| / |A_m|
  LabelMap truth2 = map_from(4, 1, {1, 1, 0, 0});
  LabelMap pred2 = map_from(4, 1, {0, 0, 1, 1});
  const ClassMetrics dj = metrics(pred2, truth2, 1);
  CHECK(*dj.tpr == 0.0);
  CHECK(*dj.fpr == 1.0);
  CHECK(dj.iou == 0.0);
}

TEST_CASE("metrics empty-truth conventions") {
  LabelMap empty = map_from(2, 2, {0, 0, 0, 0});
  LabelMap some = map_from(2, 2, {1, 0, 0, 0});

  const ClassMetrics none = metrics(empty, empty, 1);
  CHECK_FALSE(none.tpr.has_value());
  CHECK_FALSE(none.fpr.has_value());
  CHECK(none.iou == 1.0);

  const ClassMetrics spurious = metrics(some, empty, 1);
  CHECK_FALSE(spurious.tpr.has_value());
  CHECK(spurious.iou == 0.0);

  CHECK_THROWS_AS(metrics(map_from(1, 1, {0}), empty, 1), std::invalid_argument);
}

TEST_CASE("iou equals tpr over one plus fpr on random mask pairs") {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    LabelMap pred(8, 8), truth(8, 8);
    bool any_truth = false;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      pred.labels[i] = std::uint8_t(rng.uniform() < 0.4);
      truth.labels[i] = std::uint8_t(rng.uniform() < 0.4);
      any_truth |= truth.labels[i] == 1;
    }
    if (!any_truth) truth.labels[0] = 1;
    const ClassMetrics m = metrics(pred, truth, 1);
    REQUIRE(m.tpr.has_value());
    CHECK(m.iou == doctest::Approx(*m.tpr / (1.0 + *m.fpr)).epsilon(1e-12));
  }
}

TEST_CASE("mean_iou matches a two-image hand count") {
  // image 1: truth classes {0,1}, pred flips one pixel of class 1 to 0.
  LabelMap t1 = map_from(2, 2, {0, 0, 1, 1});
  LabelMap p1 = map_from(2, 2, {0, 0, 0, 1});
  // image 2: truth classes {0,2}, pred predicts 2 everywhere.
  LabelMap t2 = map_from(2, 2, {0, 2, 2, 2});
  LabelMap p2 = map_from(2, 2, {2, 2, 2, 2});

  // global counts per class:
  //   class 0: inter 2 (img1), union 2+1(img1 miss) +1(img2 truth) = 4
  //   class 1: inter 1, union 2
  //   class 2: inter 3, union 4
  //   classes 3,4: empty in both -> 1 by convention
  const IouSummary s = mean_iou({p1, p2}, {t1, t2});
  CHECK(s.per_class[0] == 2.0 / 4.0);
  CHECK(s.per_class[1] == 1.0 / 2.0);
  CHECK(s.per_class[2] == 3.0 / 4.0);
  CHECK(s.per_class[3] == 1.0);
  CHECK(s.per_class[4] == 1.0);
  CHECK(s.mean == doctest::Approx((0.5 + 0.5 + 0.75 + 1.0 + 1.0) / 5.0).epsilon(1e-12));

  // aggregation is over global counts, so image order cannot matter
  const IouSummary rev = mean_iou({p2, p1}, {t2, t1});
  for (int c = 0; c < kNumClasses; ++c) CHECK(rev.per_class[std::size_t(c)] == s.per_class[std::size_t(c)]);

  const IouSummary perfect = mean_iou({t1, t2}, {t1, t2});
  CHECK(perfect.mean == 1.0);
}

TEST_CASE("phantom with zero jitter and noise is exact horizontal bands") {
  PhantomSpec spec;
  spec.jitter_amplitude = 0.0;
  spec.speckle = 0.0;
  spec.tumor_count = 0;
  const Phantom ph = generate_phantom(spec);

  // band tops at cumulative fractions of 64 rows: 9.6, 22.4, 41.6, 54.4
  for (int y = 0; y < 64; ++y) {
    const int want = y < 10   ? kClassBackground
                     : y < 23 ? kClassFat
                     : y < 42 ? kClassMammary
                     : y < 55 ? kClassMuscle
                              : kClassBackground;
    for (int x = 0; x < 64; ++x) {
      REQUIRE(ph.labels.at(x, y) == want);
    }
  }

  // zero speckle pins intensities to the per-band means; the two
  // background bands differ
  CHECK(ph.image.at(0, 0) == 25);
  CHECK(ph.image.at(5, 15) == 120);
  CHECK(ph.image.at(5, 30) == 175);
  CHECK(ph.image.at(5, 50) == 80);
  CHECK(ph.image.at(0, 60) == 30);
}

TEST_CASE("phantom tumors appear only inside the former mammary region") {
  PhantomSpec spec;
  spec.seed = 11;
  spec.tumor_count = 2;
  const Phantom with = generate_phantom(spec);

  // the band boundary draws precede the tumor draws, so a tumor-free spec
  // with the same seed reproduces the identical band geometry
  PhantomSpec bare = spec;
  bare.tumor_count = 0;
  const Phantom without = generate_phantom(bare);

  std::size_t tumor_pixels = 0;
  for (std::size_t i = 0; i < with.labels.size(); ++i) {
    if (with.labels.labels[i] == kClassTumor) {
      ++tumor_pixels;
      CHECK(without.labels.labels[i] == kClassMammary);
    } else {
      CHECK(with.labels.labels[i] == without.labels.labels[i]);
    }
  }
  CHECK(tumor_pixels > 0);
  CHECK(count_components(with.labels, kClassTumor) == 2);
  CHECK(count_components(without.labels, kClassTumor) == 0);
}

TEST_CASE("phantom determinism and per-class pixel statistics") {
  PhantomSpec spec;
  spec.seed = 77;
  const Phantom a = generate_phantom(spec);
  const Phantom b = generate_phantom(spec);
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.labels.labels == b.labels.labels);

  PhantomSpec other = spec;
  other.seed = 78;
  const Phantom c = generate_phantom(other);
  CHECK(a.image.pixels != c.image.pixels);

  // band areas: fraction * 4096 pixels, slack of one jittered row plus the
  // sinusoid's column average on either side of each boundary
  std::array<std::size_t, kNumClasses> count{};
  for (std::size_t i = 0; i < a.labels.size(); ++i) ++count[a.labels.labels[i]];
  const double slack = (spec.jitter_amplitude + 1.0) * 64 * 2;
  CHECK(double(count[kClassFat]) > 0.20 * 4096 - slack);
  CHECK(double(count[kClassFat]) < 0.20 * 4096 + slack);
  CHECK(double(count[kClassMuscle]) > 0.20 * 4096 - slack);
  CHECK(double(count[kClassMuscle]) < 0.20 * 4096 + slack);
  // tumor eats into mammary, so bound their union
  const double mam = double(count[kClassMammary] + count[kClassTumor]);
  CHECK(mam > 0.30 * 4096 - slack);
  CHECK(mam < 0.30 * 4096 + slack);
}

TEST_CASE("phantom spec validation") {
  PhantomSpec spec;
  spec.tumor_ry_frac = 0.2;  // 2*0.2*64 + jitter margin exceeds the 19.2-row band
  CHECK_THROWS_WITH_AS(generate_phantom(spec), doctest::Contains("mammary"),
                       std::invalid_argument);

  PhantomSpec bad = PhantomSpec{};
  bad.band_fractions[0] = 0.5;  // sums to 1.35
  CHECK_THROWS_WITH_AS(generate_phantom(bad), doctest::Contains("sum"), std::invalid_argument);

  PhantomSpec tiny = PhantomSpec{};
  tiny.width = 4;
  CHECK_THROWS_AS(generate_phantom(tiny), std::invalid_argument);

  PhantomSpec many = PhantomSpec{};
  many.tumor_count = 3;
  CHECK_THROWS_AS(generate_phantom(many), std::invalid_argument);
}

TEST_CASE("count_components on hand-built masks") {
  CHECK(count_components(map_from(3, 3, {0, 0, 0, 0, 0, 0, 0, 0, 0}), 1) == 0);
  CHECK(count_components(map_from(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0}), 1) == 1);
  // diagonal neighbors are separate under 4-connectivity
  CHECK(count_components(map_from(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), 1) == 3);
  // L-shape is one component, plus an isolated corner pixel
  CHECK(count_components(map_from(3, 3, {1, 0, 1, 1, 0, 0, 1, 1, 0}), 1) == 2);
  // full ring around a hole
  CHECK(count_components(map_from(3, 3, {1, 1, 1, 1, 0, 1, 1, 1, 1}), 1) == 1);
  CHECK(count_components(map_from(3, 3, {1, 1, 1, 1, 0, 1, 1, 1, 1}), 0) == 1);
}

TEST_CASE("kfold_split partitions deterministically") {
  const std::vector<int> tiny = kfold_split(10, 10, 5);
  std::set<int> seen(tiny.begin(), tiny.end());
  CHECK(seen.size() == 10);

  const std::vector<int> folds = kfold_split(325, 10, 5);
  std::array<int, 10> sizes{};
  for (int f : folds) {
    REQUIRE(f >= 0);
    REQUIRE(f < 10);
    ++sizes[std::size_t(f)];
  }
  int s32 = 0, s33 = 0;
  for (int s : sizes) {
    if (s == 32) ++s32;
    if (s == 33) ++s33;
  }
  CHECK(s32 == 5);
  CHECK(s33 == 5);

  CHECK(kfold_split(325, 10, 5) == folds);
  CHECK(kfold_split(325, 10, 6) != folds);
  CHECK_THROWS_AS(kfold_split(9, 10, 1), std::invalid_argument);
}

TEST_CASE("manifest round-trip resolves and validates paths") {
  testutil::TempDir dir("manifest");
  for (const char* name : {"a.png", "a_mask.png", "b.png", "b_mask.png"}) {
    std::ofstream(dir.str(name)) << "x";
  }
  std::vector<ManifestRecord> records = {
      {"a.png", "a_mask.png", "case_a"},
      {"b.png", "b_mask.png", "case_b"},
  };
  save_manifest(dir.str("set.csv"), records);

  const std::vector<ManifestRecord> loaded = load_manifest(dir.str("set.csv"));
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].case_id == "case_a");
  CHECK(loaded[1].image_path == dir.str("b.png"));
  CHECK(loaded[1].label_path == dir.str("b_mask.png"));

  // a record pointing at a missing file must fail the load
  records.push_back({"ghost.png", "a_mask.png", "case_c"});
  save_manifest(dir.str("bad.csv"), records);
  CHECK_THROWS_WITH_AS(load_manifest(dir.str("bad.csv")), doctest::Contains("ghost"),
                       std::runtime_error);

  std::ofstream(dir.str("hdr.csv")) << "image,label\nx,y\n";
  CHECK_THROWS_WITH_AS(load_manifest(dir.str("hdr.csv")), doctest::Contains("header"),
                       std::runtime_error);

  std::ofstream(dir.str("cols.csv")) << "image,label,case_id\nonly,two\n";
  CHECK_THROWS_AS(load_manifest(dir.str("cols.csv")), std::runtime_error);

  const std::vector<ManifestRecord> comma = {{"a,b.png", "m.png", "c"}};
  CHECK_THROWS_AS(save_manifest(dir.str("comma.csv"), comma), std::invalid_argument);

  CHECK_THROWS_AS(load_manifest(dir.str("missing_dir/none.csv")), std::runtime_error);
}

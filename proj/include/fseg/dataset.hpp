#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fseg/image.hpp"

namespace fseg {

// Layered synthetic scan with exact ground truth, standing in for clinical
// data. Bands run top to bottom: background (skin side), fat, mammary,
// muscle, background; tumors are darker ellipses inside the mammary band.
struct PhantomSpec {
  int width = 64;
  int height = 64;
  std::array<double, 5> band_fractions{0.15, 0.20, 0.30, 0.20, 0.15};
  std::array<double, 5> band_intensities{25.0, 120.0, 175.0, 80.0, 30.0};
  double tumor_intensity = 45.0;
  int tumor_count = 1;            // 0, 1, or 2
  double tumor_rx_frac = 0.12;    // ellipse semi-axes over width / height
  double tumor_ry_frac = 0.07;
  double jitter_amplitude = 1.5;  // band boundary wobble, rows
  double speckle = 0.08;          // multiplicative noise strength
  std::uint64_t seed = 1;
};

struct Phantom {
  GrayImage image;
  LabelMap labels;
};

// Deterministic per seed. Throws if the spec is malformed or the tumor
// ellipse cannot fit inside the mammary band.
Phantom generate_phantom(const PhantomSpec& spec);

// Region agreement for one class. tpr/fpr are absent when the truth mask
// is empty; iou uses the both-empty = 1 convention.
struct ClassMetrics {
  std::optional<double> tpr;
  std::optional<double> fpr;
  double iou = 0.0;
};

ClassMetrics metrics(const LabelMap& pred, const LabelMap& truth, int cls);

// Dataset-level per-class IoU from global intersection and union counts,
// plus the unweighted mean over the five classes.
struct IouSummary {
  std::array<double, kNumClasses> per_class{};
  double mean = 0.0;
};

IouSummary mean_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths);

// Number of 4-connected components of the given class.
int count_components(const LabelMap& map, int cls);

struct ManifestRecord {
  std::string image_path;
  std::string label_path;
  std::string case_id;
};

// CSV with header image,label,case_id. Relative paths are resolved against
// the directory containing the manifest; loading verifies the files exist.
std::vector<ManifestRecord> load_manifest(const std::string& csv_path);
void save_manifest(const std::string& csv_path, const std::vector<ManifestRecord>& records);

// Deterministic shuffled partition of n records into k near-equal folds;
// returns the fold id of each record.
std::vector<int> kfold_split(std::size_t n, int k, std::uint64_t seed);

}  // namespace fseg

#include "fseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fseg/rng.hpp"

namespace fseg {

namespace {

struct Boundary {
  double base = 0.0;
  double amplitude = 0.0;
  double cycles = 0.0;
  double phase = 0.0;

  double at(int x, int width) const {
    return base + amplitude * std::sin(6.28318530717958647692 * cycles * x / width + phase);
  }
};

void validate_spec(const PhantomSpec& spec) {
  if (spec.width < 8 || spec.height < 8) {
    throw std::invalid_argument("phantom extent must be at least 8x8");
  }
  double sum = 0.0;
  for (double f : spec.band_fractions) {
    if (f <= 0.0) throw std::invalid_argument("band fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("band fractions must sum to 1");
  }
  if (spec.tumor_count < 0 || spec.tumor_count > 2) {
    throw std::invalid_argument("tumor count must be 0, 1, or 2");
  }
  if (spec.tumor_rx_frac <= 0.0 || spec.tumor_ry_frac <= 0.0) {
    throw std::invalid_argument("tumor semi-axes must be positive");
  }
  if (spec.jitter_amplitude < 0.0 || spec.speckle < 0.0) {
    throw std::invalid_argument("jitter and speckle strengths must be non-negative");
  }
  if (spec.tumor_count > 0) {
    const double mammary_rows = spec.band_fractions[2] * spec.height;
    const double needed = 2.0 * spec.tumor_ry_frac * spec.height + 2.0 * spec.jitter_amplitude + 2.0;
    if (needed > mammary_rows) {
      throw std::invalid_argument("tumor ellipse does not fit inside the mammary band");
    }
  }
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);

  // Four jittered boundaries separate the five bands.
  std::array<Boundary, 4> bounds;
  double cum = 0.0;
  for (int b = 0; b < 4; ++b) {
    cum += spec.band_fractions[std::size_t(b)];
    bounds[std::size_t(b)].base = cum * spec.height;
    bounds[std::size_t(b)].amplitude = spec.jitter_amplitude * rng.uniform(0.6, 1.0);
    bounds[std::size_t(b)].cycles = rng.uniform(1.0, 2.5);
    bounds[std::size_t(b)].phase = rng.uniform(0.0, 6.28318530717958647692);
  }

  static constexpr std::array<int, 5> kBandClass = {
      kClassBackground, kClassFat, kClassMammary, kClassMuscle, kClassBackground};

  Phantom out;
  out.image = GrayImage(spec.width, spec.height);
  out.labels = LabelMap(spec.width, spec.height);
  for (int x = 0; x < spec.width; ++x) {
    double prev = 0.0;
    std::array<double, 4> edge;
    for (int b = 0; b < 4; ++b) {
      edge[std::size_t(b)] = std::max(bounds[std::size_t(b)].at(x, spec.width), prev + 1.0);
      prev = edge[std::size_t(b)];
    }
    for (int y = 0; y < spec.height; ++y) {
      int band = 4;
      for (int b = 0; b < 4; ++b) {
        if (y < edge[std::size_t(b)]) {
          band = b;
          break;
        }
      }
      out.labels.at(x, y) = std::uint8_t(kBandClass[std::size_t(band)]);
    }
  }

  // Tumors are clipped to the mammary band; centers sit mid-band so the
  // jitter cannot split one ellipse into two components. Two tumors go to
  // opposite thirds, which keeps them at least a few columns apart.
  for (int t = 0; t < spec.tumor_count; ++t) {
    const double rx = spec.tumor_rx_frac * spec.width * rng.uniform(0.7, 1.0);
    const double ry = spec.tumor_ry_frac * spec.height * rng.uniform(0.7, 1.0);
    double cx;
    if (spec.tumor_count == 1) {
      cx = rng.uniform(0.25, 0.75) * spec.width;
    } else {
      cx = (t == 0 ? rng.uniform(0.18, 0.34) : rng.uniform(0.66, 0.82)) * spec.width;
    }
    const int col = std::clamp(int(std::lround(cx)), 0, spec.width - 1);
    const double top = bounds[1].at(col, spec.width);
    const double bottom = bounds[2].at(col, spec.width);
    const double cy = 0.5 * (top + bottom);
    for (int y = 0; y < spec.height; ++y) {
      for (int x = 0; x < spec.width; ++x) {
        const double dx = (x - cx) / rx;
        const double dy = (y - cy) / ry;
        if (dx * dx + dy * dy <= 1.0 && out.labels.at(x, y) == kClassMammary) {
          out.labels.at(x, y) = kClassTumor;
        }
      }
    }
  }

  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const int cls = out.labels.at(x, y);
      double base = spec.tumor_intensity;
      if (cls != kClassTumor) {
        // Map the class back to its band; the two background bands differ
        // in brightness, so pick by position relative to the fat band top.
        if (cls == kClassBackground) {
          base = y < bounds[0].at(x, spec.width) ? spec.band_intensities[0]
                                                 : spec.band_intensities[4];
        } else if (cls == kClassFat) {
          base = spec.band_intensities[1];
        } else if (cls == kClassMammary) {
          base = spec.band_intensities[2];
        } else {
          base = spec.band_intensities[3];
        }
      }
      const double v = base * (1.0 + spec.speckle * rng.normal());
      out.image.at(x, y) = std::uint8_t(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

ClassMetrics metrics(const LabelMap& pred, const LabelMap& truth, int cls) {
  if (pred.width != truth.width || pred.height != truth.height) {
    throw std::invalid_argument("metrics requires matching extents");
  }
  std::size_t inter = 0, in_pred = 0, in_truth = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = pred.labels[i] == cls;
    const bool t = truth.labels[i] == cls;
    inter += p && t;
    in_pred += p;
    in_truth += t;
  }
  const std::size_t uni = in_pred + in_truth - inter;
  ClassMetrics m;
  m.iou = uni == 0 ? 1.0 : double(inter) / double(uni);
  if (in_truth > 0) {
    m.tpr = double(inter) / double(in_truth);
    m.fpr = double(in_pred - inter) / double(in_truth);
  }
  return m;
}

IouSummary mean_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& truths) {
  if (preds.empty() || preds.size() != truths.size()) {
    throw std::invalid_argument("mean_iou requires equally many predictions and truths");
  }
  std::array<std::size_t, kNumClasses> inter{}, uni{};
  for (std::size_t n = 0; n < preds.size(); ++n) {
    const LabelMap& pred = preds[n];
    const LabelMap& truth = truths[n];
    if (pred.width != truth.width || pred.height != truth.height) {
      throw std::invalid_argument("mean_iou requires matching extents");
    }
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const int p = pred.labels[i];
      const int t = truth.labels[i];
      if (p == t) {
        ++inter[std::size_t(p)];
        ++uni[std::size_t(p)];
      } else {
        ++uni[std::size_t(p)];
        ++uni[std::size_t(t)];
      }
    }
  }
  IouSummary s;
  for (int c = 0; c < kNumClasses; ++c) {
    s.per_class[std::size_t(c)] =
        uni[std::size_t(c)] == 0 ? 1.0 : double(inter[std::size_t(c)]) / double(uni[std::size_t(c)]);
    s.mean += s.per_class[std::size_t(c)];
  }
  s.mean /= kNumClasses;
  return s;
}

int count_components(const LabelMap& map, int cls) {
  std::vector<char> seen(map.size(), 0);
  std::vector<std::size_t> stack;
  int components = 0;
  for (std::size_t start = 0; start < map.size(); ++start) {
    if (seen[start] || map.labels[start] != cls) continue;
    ++components;
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const int x = int(i % std::size_t(map.width));
      const int y = int(i / std::size_t(map.width));
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || nx[k] >= map.width || ny[k] < 0 || ny[k] >= map.height) continue;
        const std::size_t j = std::size_t(ny[k]) * std::size_t(map.width) + std::size_t(nx[k]);
        if (!seen[j] && map.labels[j] == cls) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return components;
}

namespace {

void require_plain_field(const std::string& field) {
  if (field.find_first_of(",\r\n") != std::string::npos) {
    throw std::invalid_argument("manifest fields may not contain commas or line breaks");
  }
}

}  // namespace

std::vector<ManifestRecord> load_manifest(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open manifest: " + csv_path);
  const std::filesystem::path dir = std::filesystem::path(csv_path).parent_path();

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("manifest is empty: " + csv_path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "image,label,case_id") {
    throw std::runtime_error("manifest must start with header image,label,case_id");
  }

  std::vector<ManifestRecord> records;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos) {
      throw std::runtime_error("malformed manifest row: " + line);
    }
    ManifestRecord rec;
    rec.image_path = line.substr(0, c1);
    rec.label_path = line.substr(c1 + 1, c2 - c1 - 1);
    rec.case_id = line.substr(c2 + 1);
    for (std::string* path : {&rec.image_path, &rec.label_path}) {
      std::filesystem::path p(*path);
      if (p.is_relative()) p = dir / p;
      if (!std::filesystem::exists(p)) {
        throw std::runtime_error("manifest references missing file: " + p.string());
      }
      *path = p.string();
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void save_manifest(const std::string& csv_path, const std::vector<ManifestRecord>& records) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write manifest: " + csv_path);
  out << "image,label,case_id\n";
  for (const ManifestRecord& rec : records) {
    require_plain_field(rec.image_path);
    require_plain_field(rec.label_path);
    require_plain_field(rec.case_id);
    out << rec.image_path << ',' << rec.label_path << ',' << rec.case_id << '\n';
  }
  if (!out.flush()) throw std::runtime_error("failed writing manifest: " + csv_path);
}

std::vector<int> kfold_split(std::size_t n, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("fold count must be at least 1");
  if (n < std::size_t(k)) throw std::invalid_argument("need at least one record per fold");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<int> fold(n);
  for (std::size_t j = 0; j < n; ++j) fold[order[j]] = int(j % std::size_t(k));
  return fold;
}

}  // namespace fseg

#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fseg/rng.hpp"
#include "fseg/tensor.hpp"

namespace testutil {

// Central-difference gradient check. `loss_fn` rebuilds the graph from the
// current parameter values and returns a single-element tensor. For each
// checked component the relative error is
//   |fd - ad| / max(1, |fd|, |ad|)
// which behaves like a true relative error for large gradients and like an
// absolute error near zero, where division would blow up FD noise.
// `max_samples` < 0 checks every component; otherwise a seeded random
// subset of that size per parameter tensor.
struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

inline GradCheck finite_difference_check(const std::function<fseg::Tensor()>& loss_fn,
                                         std::vector<fseg::Tensor> params, double h = 1e-3,
                                         int max_samples = -1, std::uint64_t seed = 1234) {
  for (auto& p : params) p.zero_grad();
  fseg::Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  fseg::Rng rng(seed);
  GradCheck result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& data = params[pi].data();
    std::vector<std::size_t> idx;
    if (max_samples < 0 || std::size_t(max_samples) >= data.size()) {
      idx.resize(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) idx[i] = i;
    } else {
      for (int s = 0; s < max_samples; ++s) {
        idx.push_back(std::size_t(rng.next_u64() % data.size()));
      }
    }
    for (std::size_t i : idx) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss_fn().scalar();
      data[i] = saved - h;
      const double dn = loss_fn().scalar();
      data[i] = saved;
      const double fd = (up - dn) / (2.0 * h);
      const double ad = analytic[pi][i];
      const double scale = std::max({1.0, std::fabs(fd), std::fabs(ad)});
      const double rel = std::fabs(fd - ad) / scale;
      if (rel > result.max_rel_err) result.max_rel_err = rel;
      ++result.checked;
    }
  }
  return result;
}

// Unique scratch directory under the system temp root; removed on
// destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path_.string() : (path_ / rel).string();
  }

 private:
  std::filesystem::path path_;
};

}  // namespace testutil

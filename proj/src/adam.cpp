#include "fseg/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace fseg {

void AdamState::step(std::vector<Tensor>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(std::size_t(params[i].numel()), 0.0);
      v_[i].assign(std::size_t(params[i].numel()), 0.0);
    }
  }
  if (params.size() != m_.size()) {
    throw std::invalid_argument("adam step: parameter list size changed from " +
                                std::to_string(m_.size()) + " to " +
                                std::to_string(params.size()));
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) {
      throw std::runtime_error("adam step: parameter " + std::to_string(i) +
                               " has no gradient; run backward() first");
    }
    auto& theta = p.data();
    const auto& g = p.node()->grad;
    if (g.size() != m_[i].size()) {
      throw std::invalid_argument("adam step: parameter " + std::to_string(i) +
                                  " changed size");
    }
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      theta[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace fseg

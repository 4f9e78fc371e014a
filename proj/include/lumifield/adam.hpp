#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lumifield/autodiff.hpp"

namespace lumifield {

// Adam with bias correction. Parameters must be presented in the same order
// on every step; state is keyed by position.
template <typename S>
class AdamOptimizer {
 public:
  struct Config {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit AdamOptimizer(Config cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Mat<S>*>& params, const std::vector<Mat<S>>& grads, double lr) {
    if (params.size() != grads.size())
      throw std::invalid_argument("adam: parameter/gradient count mismatch");
    if (states_.empty()) {
      states_.resize(params.size());
      for (std::size_t i = 0; i < params.size(); ++i) {
        states_[i].m = Mat<S>::Zero(params[i]->rows(), params[i]->cols());
        states_[i].v = Mat<S>::Zero(params[i]->rows(), params[i]->cols());
      }
    }
    if (states_.size() != params.size())
      throw std::invalid_argument("adam: parameter list changed between steps");

    ++t_;
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, t_));
    const S c2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      State& st = states_[i];
      const Mat<S>& g = grads[i];
      st.m = b1 * st.m + (S(1) - b1) * g;
      st.v = (b2 * st.v.array() + (S(1) - b2) * g.array().square()).matrix();
      const auto mhat = st.m.array() / c1;
      const auto vhat = st.v.array() / c2;
      params[i]->array() -= static_cast<S>(lr) * mhat / (vhat.sqrt() + static_cast<S>(cfg_.eps));
    }
  }

  long step_count() const { return t_; }

 private:
  struct State {
    Mat<S> m, v;
  };
  Config cfg_;
  std::vector<State> states_;
  long t_ = 0;
};

}  // namespace lumifield

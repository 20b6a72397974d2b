#pragma once

#include <cmath>
#include <numbers>

#include "sconf/matrix.hpp"

namespace sconf {

// Full-batch Adam over a weight matrix. A zero gradient yields a bit-exact
// zero update (moments stay zero, so the step is lr * 0 / (0 + eps)).
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t rows, std::size_t cols, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : m_(rows, cols), v_(rows, cols), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Matrix& w, const Matrix& grad, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto& wd = w.data();
    auto& md = m_.data();
    auto& vd = v_.data();
    const auto& gd = grad.data();
    for (std::size_t i = 0; i < wd.size(); ++i) {
      md[i] = beta1_ * md[i] + (1.0 - beta1_) * gd[i];
      vd[i] = beta2_ * vd[i] + (1.0 - beta2_) * gd[i] * gd[i];
      double mhat = md[i] / bc1;
      double vhat = vd[i] / bc2;
      wd[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }

 private:
  Matrix m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Cosine decay from base_lr toward zero, evaluated at t = 0 .. total-1.
inline double cosine_lr(double base_lr, long t, long total) {
  return base_lr * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) /
                         static_cast<double>(total)));
}

}  // namespace sconf

#pragma once

#include <cmath>

#include "prism/core/graph.hpp"

namespace prism {

// AdamW: decoupled weight decay, bias-corrected moments.
template <class T>
class AdamW {
 public:
  AdamW(ParamStore<T>& store, double lr, double weight_decay, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : store_(store), lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(b1_, step_);
    const double bc2 = 1.0 - std::pow(b2_, step_);
    for (const auto& p : store_.all()) {
      if (!p->trainable) continue;
      if (p->adam_m.size() == 0) {
        p->adam_m = Mat<T>::Zero(p->value.rows(), p->value.cols());
        p->adam_v = Mat<T>::Zero(p->value.rows(), p->value.cols());
      }
      p->adam_m = T(b1_) * p->adam_m + T(1.0 - b1_) * p->grad;
      p->adam_v = (T(b2_) * p->adam_v.array() +
                   T(1.0 - b2_) * p->grad.array().square())
                      .matrix();
      auto mhat = p->adam_m.array() / T(bc1);
      auto vhat = p->adam_v.array() / T(bc2);
      p->value.array() -= T(lr_) * (mhat / (vhat.sqrt() + T(eps_)) +
                                    T(wd_) * p->value.array());
    }
  }

  void zero_grad() {
    for (const auto& p : store_.all()) p->zero_grad();
  }

 private:
  ParamStore<T>& store_;
  double lr_, wd_, b1_, b2_, eps_;
  long step_ = 0;
};

}  // namespace prism

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "textpolicy/tensor.hpp"

namespace textpolicy {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    slots_.reserve(params_.size());
    for (Parameter* p : params_) {
      slots_.push_back({Matrix::Zero(p->value.rows(), p->value.cols()),
                        Matrix::Zero(p->value.rows(), p->value.cols())});
    }
  }

  void step() {
    ++t_;
    float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
        throw DimensionError("adam: grad shape mismatch for " + p.name);
      }
      Slot& s = slots_[i];
      s.m = cfg_.beta1 * s.m + (1.0f - cfg_.beta1) * p.grad;
      s.v.array() = cfg_.beta2 * s.v.array() +
                    (1.0f - cfg_.beta2) * p.grad.array().square();
      p.value.array() -= cfg_.lr * (s.m.array() / bc1) /
                         ((s.v.array() / bc2).sqrt() + cfg_.eps);
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  int64_t steps() const { return t_; }

 private:
  struct Slot {
    Matrix m, v;
  };

  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace textpolicy

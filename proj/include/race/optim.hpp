#pragma once

#include <cstdint>
#include <vector>

#include "race/tensor.hpp"

namespace race {

struct AdamWConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    int warmup_steps = 100;  // linear warmup from 0, then constant lr
};

// Decoupled weight decay: the decay term uses the pre-update parameter value.
template <class S>
class AdamW {
  public:
    AdamW(std::vector<Tensor<S>*> params, AdamWConfig cfg);

    void step();
    void zero_grad();
    int64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

    const Array<S>& first_moment(size_t i) const { return m_[i]; }
    const Array<S>& second_moment(size_t i) const { return v_[i]; }

  private:
    std::vector<Tensor<S>*> params_;
    std::vector<Array<S>> m_, v_;
    AdamWConfig cfg_;
    int64_t t_ = 0;
};

using AdamWF = AdamW<float>;
using AdamWD = AdamW<double>;

}  // namespace race

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "race/tensor.hpp"

namespace race {

struct GradCheckGroup {
    std::string name;
    double max_rel_error = 0.0;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    bool all_passed = true;
    double worst = 0.0;
};

// Central finite differences at 64-bit precision, step 1e-5. loss_fn must
// rebuild the forward pass from the current parameter values on every call;
// analytic gradients are taken from a single backward pass before any
// perturbation. Relative error per element: |a-n| / max(|a|, |n|, 1e-3), the floor keeping
// finite-difference roundoff on near-zero gradients from dominating;
// a group's error is the max over its elements.
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::function<void()>& backward_fn,
                           std::vector<std::pair<std::string, Tensor<double>*>> groups,
                           double tolerance = 1e-4, double step = 1e-5);

}  // namespace race

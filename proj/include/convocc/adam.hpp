#pragma once

#include <cstdint>
#include <vector>

#include "convocc/tensor.hpp"

namespace convocc {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam. Moments are aligned one-to-one with the parameter
// list passed at init; the step counter increases by exactly 1 per step.
struct AdamState {
    AdamConfig cfg;
    int64_t t = 0;
    std::vector<DVec> m;
    std::vector<DVec> v;

    void init(const std::vector<Tensor>& params, const AdamConfig& config);
    bool initialized() const { return !m.empty(); }
};

// In-place update from each parameter's accumulated leaf gradient.
void adam_step(std::vector<Tensor>& params, AdamState& state);

// Explicit-gradient variant (grads[i] aligned with params[i]).
void adam_step(std::vector<Tensor>& params, const std::vector<const double*>& grads, AdamState& state);

}  // namespace convocc

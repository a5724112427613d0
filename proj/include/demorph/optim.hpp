#pragma once

#include <map>
#include <string>
#include <vector>

#include "demorph/tape.hpp"
#include "demorph/tensor.hpp"

namespace demorph {

struct NamedParam {
    std::string name;
    Tensor* tensor;
};
using ParamRefs = std::vector<NamedParam>;

// Bias-corrected Adam. Moments are keyed by parameter name so they survive
// checkpointing; step increases by exactly 1 per update call.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t step = 0;
    std::map<std::string, std::vector<double>> m, v;
};

// Applies one update to every param. Gradients are looked up via each
// tensor's grad_id; a missing buffer counts as zero gradient. Any non-finite
// gradient aborts the whole update before any parameter is touched.
void adam_step(const ParamRefs& params, const GradBuffers& grads, AdamState& state);

}  // namespace demorph

#include "demorph/optim.hpp"

#include <cmath>

namespace demorph {

namespace {

const std::vector<double>* grad_for(const NamedParam& p, const GradBuffers& grads) {
    if (p.tensor->grad_id < 0) return nullptr;
    auto id = static_cast<size_t>(p.tensor->grad_id);
    if (id >= grads.size() || grads[id].empty()) return nullptr;
    return &grads[id];
}

}  // namespace

void adam_step(const ParamRefs& params, const GradBuffers& grads, AdamState& state) {
    // Validate everything first so a bad gradient leaves params untouched.
    for (const auto& p : params) {
        const auto* g = grad_for(p, grads);
        if (!g) continue;
        if (static_cast<int64_t>(g->size()) != p.tensor->size())
            throw ShapeError("adam_step: gradient size mismatch for '" + p.name + "'");
        for (double v : *g)
            if (!std::isfinite(v))
                throw NumericError("adam_step: non-finite gradient for '" + p.name +
                                   "', update aborted");
    }

    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

    for (const auto& p : params) {
        auto n = p.tensor->data.size();
        auto& m = state.m[p.name];
        auto& v = state.v[p.name];
        if (m.size() != n) m.assign(n, 0.0);
        if (v.size() != n) v.assign(n, 0.0);
        const auto* g = grad_for(p, grads);
        for (size_t i = 0; i < n; ++i) {
            double gi = g ? (*g)[i] : 0.0;
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p.tensor->data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        ensure_finite(*p.tensor, "adam_step");
    }
}

}  // namespace demorph

#include "convocc/adam.hpp"

#include <cmath>

namespace convocc {

void AdamState::init(const std::vector<Tensor>& params, const AdamConfig& config) {
    cfg = config;
    t = 0;
    m.clear();
    v.clear();
    for (const Tensor& p : params) {
        m.emplace_back(static_cast<size_t>(p.size()), 0.0);
        v.emplace_back(static_cast<size_t>(p.size()), 0.0);
    }
}

void adam_step(std::vector<Tensor>& params, const std::vector<const double*>& grads, AdamState& state) {
    if (params.size() != state.m.size() || params.size() != grads.size())
        throw std::invalid_argument("adam_step: " + std::to_string(params.size()) + " params vs " +
                                    std::to_string(grads.size()) + " grads and " +
                                    std::to_string(state.m.size()) + " moment slots");
    state.t += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != static_cast<size_t>(p.size()))
            throw std::invalid_argument("adam_step: moment shape " + std::to_string(m.size()) +
                                        " != param size " + std::to_string(p.size()) + " at slot " +
                                        std::to_string(pi));
        const double* g = grads[pi];
        double* pv = p.data();
        for (size_t i = 0; i < m.size(); ++i) {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            double mhat = m[i] / corr1;
            double vhat = v[i] / corr2;
            pv[i] -= state.cfg.lr * mhat / (std::sqrt(vhat) + state.cfg.epsilon);
        }
    }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
    std::vector<const double*> grads;
    grads.reserve(params.size());
    for (Tensor& p : params) grads.push_back(p.grad().data());
    adam_step(params, grads, state);
}

}  // namespace convocc

#pragma once

// Adam with bias correction. State vectors are keyed by position in the
// ParamStore, which has stable insertion order.

#include <cmath>
#include <vector>

#include "agd/core/params.hpp"

namespace agd {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
class Adam {
public:
    Adam(ParamStore<T>& params, AdamConfig cfg = {}) : params_(&params), cfg_(cfg) {
        m_.resize(params.count());
        v_.resize(params.count());
        for (size_t i = 0; i < params.count(); ++i) {
            m_[i].assign(params.tensors()[i].size(), T(0));
            v_[i].assign(params.tensors()[i].size(), T(0));
        }
    }

    // One update from the gradients currently stored on the parameters.
    // Parameters whose grad was never touched this step are left unchanged
    // (their moments still decay toward zero is *not* applied — untouched
    // means untouched, matching lazily-allocated grads).
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (size_t i = 0; i < params_->count(); ++i) {
            auto& p = params_->tensors()[i];
            if (!p.has_grad()) continue;
            auto g = p.grad();
            auto vals = p.values();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < vals.size(); ++j) {
                const double gj = double(g[j]);
                m[j] = T(cfg_.beta1 * double(m[j]) + (1.0 - cfg_.beta1) * gj);
                v[j] = T(cfg_.beta2 * double(v[j]) + (1.0 - cfg_.beta2) * gj * gj);
                const double mhat = double(m[j]) / bc1;
                const double vhat = double(v[j]) / bc2;
                vals[j] = T(double(vals[j]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    long step_count() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }

private:
    ParamStore<T>* params_;
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace agd

#pragma once

// Training objective: a weighted L1 action term plus an epsilon-regularized
// KL term that pulls the averaged self-attention toward the mask
// distribution. Both reduce by mean over the batch, so the weights are
// batch-size free. The total is the weighted sum of the two parts.

#include <vector>

#include "agd/core/tensor.hpp"
#include "agd/types.hpp"

namespace agd {

struct LossConfig {
    double lambda_act = 1.0;
    double lambda_att = 0.0;
    double lambda_s = 0.5;
    double lambda_acc = 0.5;
    double kl_epsilon = 1e-6;
    int att_layer = 0;  // 1-based target layer; 0 means "last layer"

    void validate() const {
        if (lambda_act < 0 || lambda_att < 0 || lambda_s < 0 || lambda_acc < 0)
            throw ConfigError("loss weights must be nonnegative");
        if (kl_epsilon <= 0) throw ConfigError("kl_epsilon must be positive");
    }
    int resolve_layer(int model_layers) const {
        const int l = att_layer == 0 ? model_layers : att_layer;
        if (l < 1 || l > model_layers)
            throw ConfigError("att_layer " + std::to_string(att_layer) + " out of range [1," +
                              std::to_string(model_layers) + "]");
        return l;
    }
};

// Weighted L1 between raw predictions and targets, (B,2) each: per sample
// lambda_s*|steer err| + lambda_acc*|accel err|, then mean over the batch.
template <typename T>
Tensor<T> action_loss(const Tensor<T>& pred_raw, const Tensor<T>& target,
                      const LossConfig& cfg) {
    if (pred_raw.shape() != target.shape() || pred_raw.rank() != 2 || pred_raw.dim(1) != 2)
        throw ShapeError("action_loss: expected matching (B,2) tensors");
    Tensor<T> err = abs_(sub(pred_raw, target));
    Tensor<T> s = mean(slice(err, 1, 0, 1));
    Tensor<T> a = mean(slice(err, 1, 1, 1));
    return add(mul_scalar(s, T(cfg.lambda_s)), mul_scalar(a, T(cfg.lambda_acc)));
}

// sum_j M_j * log(eps + M_j / (Abar_j + eps)), mean over the batch.
// mask: (B,N) constant; abar: (B,N) differentiable. Zero-mass mask entries
// contribute exactly zero, in value and in gradient.
template <typename T>
Tensor<T> attention_loss(const Tensor<T>& mask, const Tensor<T>& abar, double eps) {
    if (mask.shape() != abar.shape() || mask.rank() != 2)
        throw ShapeError("attention_loss: expected matching (B,N) tensors");
    if (eps <= 0) throw ConfigError("attention_loss: eps must be positive");
    const int B = mask.dim(0);
    Tensor<T> ratio = div(mask, add_scalar(abar, T(eps)));
    Tensor<T> term = mul(mask, log_(add_scalar(ratio, T(eps))));
    return mul_scalar(sum(term), T(1.0 / double(B)));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& act, const Tensor<T>& att, const LossConfig& cfg) {
    return add(mul_scalar(act, T(cfg.lambda_act)), mul_scalar(att, T(cfg.lambda_att)));
}

}  // namespace agd

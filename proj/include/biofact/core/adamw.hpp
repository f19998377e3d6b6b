#pragma once

#include "biofact/core/parameter.hpp"

namespace biofact {

struct AdamWConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;

    /// Throws ConfigError unless 0 < beta < 1 and learning_rate > 0.
    void validate() const;
};

/// One AdamW update with decoupled weight decay and bias correction:
///   w <- w - lr * wd * w
///   w <- w - lr * m_hat / (sqrt(v_hat) + eps)
void adamw_step(const ParameterRefs& params, const AdamWConfig& cfg);

} // namespace biofact

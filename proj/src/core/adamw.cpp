#include "biofact/core/adamw.hpp"

#include <cmath>

namespace biofact {

void AdamWConfig::validate() const
{
    if (!(learning_rate > 0.0)) throw ConfigError("adamw: learning_rate must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("adamw: beta1 must lie in (0, 1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("adamw: beta2 must lie in (0, 1)");
    if (!(epsilon > 0.0)) throw ConfigError("adamw: epsilon must be > 0");
    if (weight_decay < 0.0) throw ConfigError("adamw: weight_decay must be >= 0");
}

void adamw_step(const ParameterRefs& params, const AdamWConfig& cfg)
{
    for (Parameter* p : params) {
        ++p->step_count;
        const double t = static_cast<double>(p->step_count);
        const double correction1 = 1.0 - std::pow(cfg.beta1, t);
        const double correction2 = 1.0 - std::pow(cfg.beta2, t);

        if (cfg.weight_decay != 0.0) p->value *= 1.0 - cfg.learning_rate * cfg.weight_decay;
        p->m = cfg.beta1 * p->m + (1.0 - cfg.beta1) * p->grad;
        p->v = cfg.beta2 * p->v + (1.0 - cfg.beta2) * p->grad.cwiseAbs2();
        const auto m_hat = p->m.array() / correction1;
        const auto v_hat = p->v.array() / correction2;
        p->value.array() -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        ensure_finite(p->value, "adamw_step");
    }
}

} // namespace biofact

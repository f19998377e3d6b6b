#pragma once

#include <vector>

#include "biofact/core/matrix.hpp"

namespace biofact::survival {

struct CoxResult {
    double loss = 0.0; // negative log partial likelihood averaged over events
    Vector grad;       // d loss / d risks
};

/// Breslow-tied Cox negative log partial likelihood. The risk set at time t
/// is {j : time_j >= t}; every event at t shares that set's denominator.
/// Throws InputError on non-positive times or mismatched lengths and
/// UndefinedError when there are no events.
CoxResult cox_nll(const Vector& risks, const Vector& times, const std::vector<bool>& events);

} // namespace biofact::survival

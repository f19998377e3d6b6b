#pragma once

#include <functional>
#include <string>
#include <vector>

#include "biofact/core/parameter.hpp"

namespace biofact {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    Eigen::Index worst_index = -1;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    double max_rel_error() const;
    bool passed() const { return max_rel_error() < tolerance; }
    std::string summary() const;
};

/// Compares the gradients already stored in each parameter's .grad against
/// central differences (f(w+h) - f(w-h)) / 2h of `loss`, coordinate by
/// coordinate. Relative error is |a - n| / max(|a|, |n|, 1e-8).
/// `loss` must be deterministic and must not touch .grad.
GradCheckReport finite_difference_check(const std::function<double()>& loss, const std::vector<NamedParameter>& params,
                                        double h = 1e-5, double tol = 1e-4);

/// Same check for a free input tensor with a known analytic gradient.
GradCheckEntry finite_difference_check_input(const std::function<double(const Matrix&)>& loss, const Matrix& at,
                                             const Matrix& analytic, double h = 1e-5, std::string name = "input");

} // namespace biofact

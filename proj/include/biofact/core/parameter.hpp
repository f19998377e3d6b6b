#pragma once

#include <string>
#include <vector>

#include "biofact/core/matrix.hpp"

namespace biofact {

/// Trainable tensor with its gradient and AdamW moment estimates.
struct Parameter {
    Matrix value;
    Matrix grad;
    Matrix m;
    Matrix v;
    long step_count = 0;

    Parameter() = default;
    explicit Parameter(Matrix init)
        : value(std::move(init)),
          grad(Matrix::Zero(value.rows(), value.cols())),
          m(Matrix::Zero(value.rows(), value.cols())),
          v(Matrix::Zero(value.rows(), value.cols()))
    {
    }

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }
    Eigen::Index size() const { return value.size(); }

    void zero_grad() { grad.setZero(); }

    /// Drops gradient and optimizer state; keeps the value.
    void reset_state()
    {
        grad.setZero();
        m.setZero();
        v.setZero();
        step_count = 0;
    }
};

using ParameterRefs = std::vector<Parameter*>;

inline void zero_grads(const ParameterRefs& params)
{
    for (Parameter* p : params) p->zero_grad();
}

struct NamedParameter {
    std::string name;
    Parameter* param;
};

} // namespace biofact

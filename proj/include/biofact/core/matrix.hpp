#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <string>

#include "biofact/core/errors.hpp"

namespace biofact {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

template <typename Derived>
std::string shape_string(const Eigen::EigenBase<Derived>& m)
{
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m)
{
    return m.derived().array().isFinite().all();
}

/// Throws NumericError naming `where` if `m` holds a NaN or Inf.
template <typename Derived>
void ensure_finite(const Eigen::DenseBase<Derived>& m, const char* where)
{
    if (!all_finite(m)) throw NumericError(std::string("non-finite value in ") + where);
}

/// Shape-checked matrix product.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> matmul(const Eigen::MatrixBase<DerivedA>& a,
                                          const Eigen::MatrixBase<DerivedB>& b)
{
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: cannot multiply " + shape_string(a) + " by " + shape_string(b));
    }
    MatrixX<typename DerivedA::Scalar> out = a * b;
    ensure_finite(out, "matmul");
    return out;
}

/// Numerically stable softmax of a vector (max-subtracted).
template <typename Derived>
VectorX<typename Derived::Scalar> softmax_row(const Eigen::MatrixBase<Derived>& v)
{
    using Scalar = typename Derived::Scalar;
    if (v.size() == 0) throw std::domain_error("softmax_row: empty vector");
    if (!all_finite(v)) throw std::domain_error("softmax_row: non-finite input");
    const Scalar peak = v.maxCoeff();
    VectorX<Scalar> e(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) e[i] = std::exp(v.derived().coeff(i) - peak);
    return e / e.sum();
}

/// Row-wise softmax of a matrix, each row handled as in softmax_row.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m)
{
    MatrixX<typename Derived::Scalar> out(m.rows(), m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r) out.row(r) = softmax_row(m.row(r).transpose()).transpose();
    return out;
}

/// Backward of row-wise softmax: given probabilities p and dL/dp, returns dL/dlogits.
template <typename DerivedP, typename DerivedG>
MatrixX<typename DerivedP::Scalar> softmax_rows_backward(const Eigen::MatrixBase<DerivedP>& p,
                                                         const Eigen::MatrixBase<DerivedG>& dp)
{
    MatrixX<typename DerivedP::Scalar> out = p.cwiseProduct(dp);
    const VectorX<typename DerivedP::Scalar> dot = out.rowwise().sum();
    out -= (p.array().colwise() * dot.array()).matrix();
    return out;
}

} // namespace biofact

#include "biofact/core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace biofact {

namespace {

double relative_error(double analytic, double numeric)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

} // namespace

double GradCheckReport::max_rel_error() const
{
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
    return worst;
}

std::string GradCheckReport::summary() const
{
    std::ostringstream os;
    for (const auto& e : entries) os << e.name << "=" << e.max_rel_error << " ";
    return os.str();
}

GradCheckReport finite_difference_check(const std::function<double()>& loss, const std::vector<NamedParameter>& params,
                                        double h, double tol)
{
    GradCheckReport report;
    report.tolerance = tol;
    for (const auto& [name, p] : params) {
        GradCheckEntry entry{name, 0.0, -1};
        double* data = p->value.data();
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = loss();
            data[i] = saved - h;
            const double down = loss();
            data[i] = saved;
            const double err = relative_error(p->grad.data()[i], (up - down) / (2.0 * h));
            if (err > entry.max_rel_error) {
                entry.max_rel_error = err;
                entry.worst_index = i;
            }
        }
        report.entries.push_back(entry);
    }
    return report;
}

GradCheckEntry finite_difference_check_input(const std::function<double(const Matrix&)>& loss, const Matrix& at,
                                             const Matrix& analytic, double h, std::string name)
{
    GradCheckEntry entry{std::move(name), 0.0, -1};
    Matrix x = at;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double saved = x.data()[i];
        x.data()[i] = saved + h;
        const double up = loss(x);
        x.data()[i] = saved - h;
        const double down = loss(x);
        x.data()[i] = saved;
        const double err = relative_error(analytic.data()[i], (up - down) / (2.0 * h));
        if (err > entry.max_rel_error) {
            entry.max_rel_error = err;
            entry.worst_index = i;
        }
    }
    return entry;
}

} // namespace biofact

#include "biofact/survival/cox.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace biofact::survival {

CoxResult cox_nll(const Vector& risks, const Vector& times, const std::vector<bool>& events)
{
    const auto n = static_cast<std::size_t>(risks.size());
    if (static_cast<std::size_t>(times.size()) != n || events.size() != n)
        throw InputError("cox_nll: risks, times and events must have equal length");
    for (Eigen::Index i = 0; i < times.size(); ++i)
        if (!(times[i] > 0.0)) throw InputError("cox_nll: times must be > 0");
    const auto n_events = std::count(events.begin(), events.end(), true);
    if (n_events == 0) throw UndefinedError("cox_nll: partial likelihood is undefined without events");
    ensure_finite(risks, "cox_nll risks");

    // Descending time; ties keep index order so the result does not depend on input order.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] > times[b]; });

    const double shift = risks.maxCoeff();
    Vector expr(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) expr[i] = std::exp(risks[i] - shift);

    CoxResult out;
    out.grad = Vector::Zero(static_cast<Eigen::Index>(n));
    // Per tied-time block (visited from latest to earliest): risk-set sum S and
    // the running sum of d_t / S_t, which every subject in the block inherits.
    double risk_sum = 0.0;
    double hazard_acc = 0.0;
    double loglik = 0.0;
    std::vector<double> acc_at(n, 0.0);
    std::size_t i = 0;
    std::vector<std::pair<std::size_t, std::size_t>> blocks;
    while (i < n) {
        std::size_t j = i;
        while (j < n && times[order[j]] == times[order[i]]) ++j;
        blocks.emplace_back(i, j);
        i = j;
    }
    // Risk sums need every subject with time >= t, so accumulate from the latest block.
    std::vector<double> block_sum(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t k = blocks[b].first; k < blocks[b].second; ++k) risk_sum += expr[order[k]];
        block_sum[b] = risk_sum;
    }
    // Hazard contributions accumulate forward in time, i.e. from the earliest block.
    for (std::size_t b = blocks.size(); b-- > 0;) {
        const auto [lo, hi] = blocks[b];
        int deaths = 0;
        for (std::size_t k = lo; k < hi; ++k)
            if (events[order[k]]) {
                ++deaths;
                loglik += risks[order[k]] - shift;
            }
        if (deaths > 0) {
            loglik -= deaths * std::log(block_sum[b]);
            hazard_acc += deaths / block_sum[b];
        }
        for (std::size_t k = lo; k < hi; ++k) acc_at[order[k]] = hazard_acc;
    }
    const double inv_e = 1.0 / static_cast<double>(n_events);
    out.loss = -loglik * inv_e;
    for (std::size_t k = 0; k < n; ++k)
        out.grad[static_cast<Eigen::Index>(k)] = -inv_e * ((events[k] ? 1.0 : 0.0) - expr[k] * acc_at[k]);
    return out;
}

} // namespace biofact::survival

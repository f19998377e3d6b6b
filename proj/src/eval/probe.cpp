#include "biofact/eval/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

#include "biofact/core/errors.hpp"
#include "biofact/core/rng.hpp"
#include "biofact/eval/metrics.hpp"

namespace biofact::eval {

using nlohmann::json;

namespace {

constexpr int kProbeIterations = 300;
constexpr double kProbeStep = 0.5;
constexpr double kProbeL2 = 1e-4;

// Logistic regression weights [d+1] (last entry is the intercept).
Vector fit_logistic(const Matrix& x, const std::vector<bool>& y)
{
    const Eigen::Index n = x.rows(), d = x.cols();
    Vector w = Vector::Zero(d);
    double b = 0.0;
    Vector t(n);
    for (Eigen::Index i = 0; i < n; ++i) t[i] = y[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    for (int it = 0; it < kProbeIterations; ++it) {
        const Vector z = (x * w).array() + b;
        const Vector p = (1.0 / (1.0 + (-z.array()).exp())).matrix();
        const Vector r = p - t;
        const Vector gw = x.transpose() * r / static_cast<double>(n) + kProbeL2 * w;
        const double gb = r.mean();
        w -= kProbeStep * gw;
        b -= kProbeStep * gb;
    }
    Vector out(d + 1);
    out.head(d) = w;
    out[d] = b;
    return out;
}

} // namespace

void EvalConfig::validate() const
{
    if (horizons_months.empty()) throw ConfigError("eval: at least one horizon is required");
    for (double h : horizons_months)
        if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("eval: horizons must be positive");
    if (n_folds < 2) throw ConfigError("eval: n_folds must be >= 2");
    if (permutations < 1) throw ConfigError("eval: permutations must be >= 1");
}

json to_json(const EvalConfig& c)
{
    return json{{"horizons_months", c.horizons_months},
                {"n_folds", c.n_folds},
                {"permutations", c.permutations},
                {"seed", c.seed}};
}

EvalConfig eval_config_from_json(const json& j)
{
    if (!j.is_object()) throw ConfigError("eval config must be an object");
    EvalConfig c;
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "horizons_months") c.horizons_months = value.get<std::vector<double>>();
            else if (key == "n_folds") c.n_folds = value.get<int>();
            else if (key == "permutations") c.permutations = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else throw ConfigError("eval: unknown key '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("eval." + key + ": " + e.what());
        }
    }
    return c;
}

std::vector<int> stratified_folds(const std::vector<int>& labels, int n_folds, std::uint64_t seed)
{
    if (n_folds < 2) throw ConfigError("stratified_folds: n_folds must be >= 2");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    if (by_class.size() < 2) throw InputError("linear probe: need at least two classes");
    for (const auto& [label, members] : by_class)
        if (members.size() < static_cast<std::size_t>(n_folds))
            throw InputError("linear probe: class " + std::to_string(label) + " has " +
                             std::to_string(members.size()) + " members, fewer than " + std::to_string(n_folds) +
                             " folds");
    Rng rng(derive_seed(seed, "folds"));
    std::vector<int> folds(labels.size(), -1);
    std::size_t slot = 0;
    for (auto& [label, members] : by_class) {
        rng.shuffle(members);
        for (std::size_t i : members) folds[i] = static_cast<int>(slot++ % static_cast<std::size_t>(n_folds));
    }
    return folds;
}

ProbeResult linear_probe(const Matrix& embeddings, const std::vector<int>& labels, const EvalConfig& cfg)
{
    if (static_cast<std::size_t>(embeddings.rows()) != labels.size())
        throw InputError("linear_probe: " + std::to_string(embeddings.rows()) + " embeddings but " +
                         std::to_string(labels.size()) + " labels");
    ProbeResult res;
    res.folds = stratified_folds(labels, cfg.n_folds, cfg.seed);
    std::vector<int> classes = labels;
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    // One model for binary labels; one-vs-rest otherwise.
    const std::vector<int> targets = classes.size() == 2 ? std::vector<int>{classes[1]} : classes;

    const Eigen::Index d = embeddings.cols();
    for (int f = 0; f < cfg.n_folds; ++f) {
        std::vector<Eigen::Index> tr, va;
        for (std::size_t i = 0; i < labels.size(); ++i)
            (res.folds[i] == f ? va : tr).push_back(static_cast<Eigen::Index>(i));
        Matrix xtr(static_cast<Eigen::Index>(tr.size()), d), xva(static_cast<Eigen::Index>(va.size()), d);
        for (std::size_t k = 0; k < tr.size(); ++k) xtr.row(static_cast<Eigen::Index>(k)) = embeddings.row(tr[k]);
        for (std::size_t k = 0; k < va.size(); ++k) xva.row(static_cast<Eigen::Index>(k)) = embeddings.row(va[k]);
        const Vector mean = xtr.colwise().mean().transpose();
        Vector sd = ((xtr.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
        for (Eigen::Index c = 0; c < d; ++c)
            if (!(sd[c] > 1e-12)) sd[c] = 1.0;
        const Matrix ztr = (xtr.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
        const Matrix zva = (xva.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();

        double auc_sum = 0.0;
        for (int target : targets) {
            std::vector<bool> ytr(tr.size()), yva(va.size());
            for (std::size_t k = 0; k < tr.size(); ++k) ytr[k] = labels[static_cast<std::size_t>(tr[k])] == target;
            for (std::size_t k = 0; k < va.size(); ++k) yva[k] = labels[static_cast<std::size_t>(va[k])] == target;
            const Vector w = fit_logistic(ztr, ytr);
            const Vector scores = (zva * w.head(d)).array() + w[d];
            auc_sum += binary_auc(scores, yva);
        }
        res.fold_aucs.push_back(auc_sum / static_cast<double>(targets.size()));
    }
    double total = 0.0;
    for (double a : res.fold_aucs) total += a;
    res.macro_auc = total / static_cast<double>(res.fold_aucs.size());
    return res;
}

double sign_flip_p_value(const std::vector<double>& diffs, int permutations, std::uint64_t seed, bool* exact)
{
    const std::size_t k = diffs.size();
    if (k == 0) throw InputError("sign_flip_p_value: no differences");
    double observed = 0.0;
    for (double x : diffs) observed += x;
    const double direction = observed < 0.0 ? -1.0 : 1.0;
    const double target = direction * observed;
    const double slack = 1e-12 * (1.0 + std::abs(observed));

    auto count_pattern = [&](std::uint64_t bits) {
        double s = 0.0;
        for (std::size_t f = 0; f < k; ++f) s += ((bits >> f) & 1u) ? -diffs[f] : diffs[f];
        return direction * s >= target - slack ? 1.0 : 0.0;
    };

    const bool enumerate = k < 63 && (std::uint64_t{1} << k) <= static_cast<std::uint64_t>(permutations);
    if (exact) *exact = enumerate;
    if (enumerate) {
        const std::uint64_t total = std::uint64_t{1} << k;
        double hits = 0.0;
        for (std::uint64_t bits = 0; bits < total; ++bits) hits += count_pattern(bits);
        return hits / static_cast<double>(total);
    }
    Rng rng(derive_seed(seed, "sign-flip"));
    double hits = 1.0; // the observed pattern itself
    for (int p = 0; p < permutations; ++p) {
        double s = 0.0;
        for (std::size_t f = 0; f < k; ++f) s += rng.uniform() < 0.5 ? -diffs[f] : diffs[f];
        hits += direction * s >= target - slack ? 1.0 : 0.0;
    }
    return hits / static_cast<double>(permutations + 1);
}

SpecializationResult probe_specialization_test(const Matrix& liver_embs, const Matrix& tumor_embs,
                                               const std::vector<int>& labels, const EvalConfig& cfg)
{
    if (liver_embs.rows() != tumor_embs.rows())
        throw InputError("probe_specialization_test: pathway embedding sets differ in size");
    SpecializationResult r;
    r.liver = linear_probe(liver_embs, labels, cfg);
    r.tumor = linear_probe(tumor_embs, labels, cfg);
    r.auc_liver = r.liver.macro_auc;
    r.auc_tumor = r.tumor.macro_auc;
    r.delta = r.auc_liver - r.auc_tumor;
    std::vector<double> diffs(r.liver.fold_aucs.size());
    for (std::size_t f = 0; f < diffs.size(); ++f) diffs[f] = r.liver.fold_aucs[f] - r.tumor.fold_aucs[f];
    r.p_value = sign_flip_p_value(diffs, cfg.permutations, cfg.seed, &r.exact);
    return r;
}

} // namespace biofact::eval

// SPDX-License-Identifier: Apache-2.0

#include "harmprobe/direction_fit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "harmprobe/error.hpp"
#include "harmprobe/vector_ops.hpp"

namespace harmprobe {

using nlohmann::json;

namespace {

constexpr double kDegenerateNorm = 1e-12;
constexpr double kCosineClamp = 1e-7;

void require_same_dim(const ActivationSet& a, const ActivationSet& b) {
    if (a.dim() != b.dim()) {
        throw Error(ErrorCode::shape_mismatch, "dimension mismatch: " + std::to_string(a.dim()) + " vs " +
                                                   std::to_string(b.dim()));
    }
}

void require_rows(const ActivationSet& s, std::size_t n, const char* what) {
    if (s.rows() < n) {
        throw Error(ErrorCode::invalid_argument,
                    std::string(what) + " needs at least " + std::to_string(n) + " rows");
    }
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Direction make_direction(std::vector<double> w, Strategy strategy, const ActivationSet& meta_from) {
    Direction d;
    d.w = std::move(w);
    d.strategy = strategy;
    d.score_kind = score_kind_for(strategy);
    d.protocol = meta_from.meta().protocol;
    d.layer = meta_from.meta().layer;
    d.model_id = meta_from.meta().model_id;
    return d;
}

/// Row data promoted to double once, so every objective/gradient evaluation
/// inside the optimizer loop is a pass over contiguous memory. For angular
/// scoring the rows are stored l2-normalized.
class SurrogateProblem {
public:
    SurrogateProblem(const ActivationSet& pos, const ActivationSet& neg, ScoreKind kind)
        : kind_(kind), dim_(pos.dim()), n_pos_(pos.rows()), n_neg_(neg.rows()) {
        require_same_dim(pos, neg);
        if (n_pos_ == 0 || n_neg_ == 0) {
            throw Error(ErrorCode::invalid_argument, "surrogate needs at least one row per class");
        }
        load(pos, pos_);
        load(neg, neg_);
    }

    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }

    double objective(std::span<const double> w) const {
        const auto sp = scores(pos_, n_pos_, w);
        const auto sn = scores(neg_, n_neg_, w);
        double acc = 0.0;
        for (double a : sp) {
            for (double b : sn) acc += sigmoid(a - b);
        }
        return acc / (static_cast<double>(n_pos_) * static_cast<double>(n_neg_));
    }

    std::vector<double> gradient(std::span<const double> w) const {
        const auto sp = scores(pos_, n_pos_, w);
        const auto sn = scores(neg_, n_neg_, w);
        // Pair weights sigma'(s_i - s_j) collapsed onto rows.
        std::vector<double> a(n_pos_, 0.0), b(n_neg_, 0.0);
        for (std::size_t i = 0; i < n_pos_; ++i) {
            for (std::size_t j = 0; j < n_neg_; ++j) {
                const double s = sigmoid(sp[i] - sn[j]);
                const double g = s * (1.0 - s);
                a[i] += g;
                b[j] += g;
            }
        }
        const double inv_pairs = 1.0 / (static_cast<double>(n_pos_) * static_cast<double>(n_neg_));
        std::vector<double> grad(dim_, 0.0);
        accumulate(pos_, n_pos_, w, a, +inv_pairs, grad);
        accumulate(neg_, n_neg_, w, b, -inv_pairs, grad);
        return grad;
    }

private:
    void load(const ActivationSet& s, std::vector<double>& dst) {
        dst.assign(s.data().begin(), s.data().end());
        if (kind_ != ScoreKind::angular) return;
        for (std::size_t r = 0; r < s.rows(); ++r) {
            std::span<double> row(dst.data() + r * dim_, dim_);
            const double n = norm(std::span<const double>(row));
            if (n == 0.0) throw Error(ErrorCode::degenerate, "zero-norm row under angular scoring");
            for (double& x : row) x /= n;
        }
    }

    [[nodiscard]] std::span<const double> row(const std::vector<double>& m, std::size_t r) const {
        return {m.data() + r * dim_, dim_};
    }

    double clamped_cosine(std::span<const double> x, std::span<const double> w) const {
        return std::clamp(dot(x, w), -1.0 + kCosineClamp, 1.0 - kCosineClamp);
    }

    std::vector<double> scores(const std::vector<double>& m, std::size_t n, std::span<const double> w) const {
        std::vector<double> out(n);
        for (std::size_t r = 0; r < n; ++r) {
            out[r] = kind_ == ScoreKind::projection ? dot(row(m, r), w) : std::acos(clamped_cosine(row(m, r), w));
        }
        return out;
    }

    // grad += sign_scale * sum_r weight_r * d s_r / d w
    void accumulate(const std::vector<double>& m, std::size_t n, std::span<const double> w,
                    const std::vector<double>& weight, double sign_scale, std::vector<double>& grad) const {
        for (std::size_t r = 0; r < n; ++r) {
            double coef = sign_scale * weight[r];
            auto x = row(m, r);
            if (kind_ == ScoreKind::angular) {
                // d/dw arccos(x.w) = -x / sqrt(1 - c^2), evaluated at the clamped cosine.
                const double c = clamped_cosine(x, w);
                coef *= -1.0 / std::sqrt(1.0 - c * c);
            }
            for (std::size_t k = 0; k < dim_; ++k) grad[k] += coef * x[k];
        }
    }

    ScoreKind kind_;
    std::size_t dim_;
    std::size_t n_pos_;
    std::size_t n_neg_;
    std::vector<double> pos_;
    std::vector<double> neg_;
};

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void project_off(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
    for (const auto& u : basis) {
        const double c = dot(v, u);
        for (std::size_t k = 0; k < v.size(); ++k) v[k] -= c * u[k];
    }
}

Direction ascend(const SurrogateProblem& problem, const Direction& warm_start, Strategy strategy,
                 const SoftAucOptions& opts) {
    if (warm_start.dim() != problem.dim()) {
        throw Error(ErrorCode::shape_mismatch, "warm start has dimension " + std::to_string(warm_start.dim()) +
                                                   ", data has " + std::to_string(problem.dim()));
    }
    for (const auto& u : opts.orthogonal_to) {
        if (u.size() != problem.dim()) throw Error(ErrorCode::shape_mismatch, "constraint dimension mismatch");
    }

    std::vector<double> w = warm_start.w;
    project_off(w, opts.orthogonal_to);
    if (normalize(w) < kDegenerateNorm) {
        throw Error(ErrorCode::degenerate, "warm start vanishes after constraint projection");
    }

    OptTrace trace;
    double current = problem.objective(w);
    trace.objective_at_warm_start = current;
    std::vector<double> best = w;
    double best_objective = current;

    int small_steps = 0;
    for (int step = 0; step < opts.max_steps; ++step) {
        auto grad = problem.gradient(w);
        if (!all_finite(grad)) {
            trace.nan_reverted = true;
            break;
        }
        const double radial = dot(grad, w);
        for (std::size_t k = 0; k < grad.size(); ++k) grad[k] -= radial * w[k];
        project_off(grad, opts.orthogonal_to);
        trace.final_grad_norm = norm(grad);

        small_steps = trace.final_grad_norm < opts.grad_tol ? small_steps + 1 : 0;
        if (small_steps >= opts.patience) break;

        std::vector<double> next = w;
        for (std::size_t k = 0; k < next.size(); ++k) next[k] += opts.step * grad[k];
        project_off(next, opts.orthogonal_to);
        const double len = normalize(next);
        const double value = all_finite(next) && len > 0.0 ? problem.objective(next)
                                                           : std::numeric_limits<double>::quiet_NaN();
        if (!std::isfinite(value)) {
            trace.nan_reverted = true;
            break;
        }
        w = std::move(next);
        ++trace.steps_taken;
        if (value > best_objective) {
            best_objective = value;
            best = w;
        }
    }

    trace.objective_at_return = best_objective;
    Direction out = warm_start;
    out.w = std::move(best);
    out.strategy = strategy;
    out.score_kind = score_kind_for(strategy);
    out.fit_meta.optimizer_trace = trace;
    out.fit_meta.eigengap_degenerate = false;
    return out;
}

}  // namespace

// --- names -----------------------------------------------------------------

std::string_view to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::mean_diff: return "mean_diff";
        case Strategy::soft_auc: return "soft_auc";
        case Strategy::pc1: return "pc1";
        case Strategy::theta_normative: return "theta_normative";
        case Strategy::theta_twoclass: return "theta_twoclass";
        case Strategy::random: return "random";
    }
    return "mean_diff";
}

std::string_view to_string(ScoreKind k) noexcept {
    return k == ScoreKind::projection ? "projection" : "angular";
}

Strategy parse_strategy(std::string_view text) {
    for (auto s : {Strategy::mean_diff, Strategy::soft_auc, Strategy::pc1, Strategy::theta_normative,
                   Strategy::theta_twoclass, Strategy::random}) {
        if (to_string(s) == text) return s;
    }
    throw Error(ErrorCode::invalid_argument, "unknown strategy '" + std::string(text) + "'");
}

// --- vector_ops ------------------------------------------------------------

std::vector<double> mean_row(const ActivationSet& set) {
    if (set.rows() == 0) throw Error(ErrorCode::invalid_argument, "mean of an empty set");
    std::vector<double> mu(set.dim(), 0.0);
    for (std::size_t r = 0; r < set.rows(); ++r) {
        auto x = set.row(r);
        for (std::size_t k = 0; k < mu.size(); ++k) mu[k] += x[k];
    }
    for (double& v : mu) v /= static_cast<double>(set.rows());
    return mu;
}

std::vector<double> mean_difference(const ActivationSet& pos, const ActivationSet& neg) {
    require_same_dim(pos, neg);
    auto mp = mean_row(pos);
    const auto mn = mean_row(neg);
    for (std::size_t k = 0; k < mp.size(); ++k) mp[k] -= mn[k];
    return mp;
}

// --- strategies ------------------------------------------------------------

Direction fit_mean_diff(const ActivationSet& pos, const ActivationSet& neg) {
    require_rows(pos, 1, "mean difference (harmful)");
    require_rows(neg, 1, "mean difference (benign)");
    auto w = mean_difference(pos, neg);
    if (normalize(w) < kDegenerateNorm) {
        throw Error(ErrorCode::degenerate, "degenerate separation: class means coincide");
    }
    auto d = make_direction(std::move(w), Strategy::mean_diff, pos);
    d.fit_meta.n_pos = pos.rows();
    d.fit_meta.n_neg = neg.rows();
    return d;
}

double soft_auc_objective(std::span<const double> w, const ActivationSet& pos, const ActivationSet& neg,
                          ScoreKind kind) {
    if (w.size() != pos.dim()) throw Error(ErrorCode::shape_mismatch, "direction/data dimension mismatch");
    return SurrogateProblem(pos, neg, kind).objective(w);
}

std::vector<double> soft_auc_gradient(std::span<const double> w, const ActivationSet& pos,
                                      const ActivationSet& neg, ScoreKind kind) {
    if (w.size() != pos.dim()) throw Error(ErrorCode::shape_mismatch, "direction/data dimension mismatch");
    return SurrogateProblem(pos, neg, kind).gradient(w);
}

Direction fit_soft_auc(const ActivationSet& pos, const ActivationSet& neg, const Direction& warm_start,
                       const SoftAucOptions& opts) {
    if (warm_start.score_kind != ScoreKind::projection) {
        throw Error(ErrorCode::invalid_argument, "soft-AUC warm start must be a projection direction");
    }
    SurrogateProblem problem(pos, neg, ScoreKind::projection);
    auto d = ascend(problem, warm_start, Strategy::soft_auc, opts);
    d.fit_meta.n_pos = pos.rows();
    d.fit_meta.n_neg = neg.rows();
    return d;
}

Direction fit_pc1(const ActivationSet& neg) {
    require_rows(neg, 2, "PC1");
    const auto n = static_cast<Eigen::Index>(neg.rows());
    const auto dim = static_cast<Eigen::Index>(neg.dim());
    const auto mu = mean_row(neg);

    Eigen::MatrixXd centered(n, dim);
    double scale = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        auto x = neg.row(static_cast<std::size_t>(r));
        for (Eigen::Index k = 0; k < dim; ++k) {
            centered(r, k) = static_cast<double>(x[static_cast<std::size_t>(k)]) - mu[static_cast<std::size_t>(k)];
            scale = std::max(scale, std::abs(static_cast<double>(x[static_cast<std::size_t>(k)])));
        }
    }

    // Leading eigenpair of the covariance. When n < D the n x n Gram matrix has
    // the same nonzero spectrum and is much cheaper; its eigenvector u maps to
    // the covariance eigenvector X^T u.
    Eigen::VectorXd leading;
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    if (n < dim) {
        const Eigen::MatrixXd gram = centered * centered.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
        const auto& ev = solver.eigenvalues();
        lambda1 = ev(n - 1);
        lambda2 = n >= 2 ? ev(n - 2) : 0.0;
        leading = centered.transpose() * solver.eigenvectors().col(n - 1);
    } else {
        const Eigen::MatrixXd cov = centered.transpose() * centered;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
        const auto& ev = solver.eigenvalues();
        lambda1 = ev(dim - 1);
        lambda2 = dim >= 2 ? ev(dim - 2) : 0.0;
        leading = solver.eigenvectors().col(dim - 1);
    }
    if (lambda1 <= 1e-20 * std::max(1.0, scale * scale) || leading.norm() == 0.0) {
        throw Error(ErrorCode::degenerate, "degenerate variance: benign rows are identical");
    }
    leading.normalize();

    Eigen::Index pivot = 0;
    leading.cwiseAbs().maxCoeff(&pivot);
    if (leading(pivot) < 0.0) leading = -leading;

    auto d = make_direction(std::vector<double>(leading.data(), leading.data() + dim), Strategy::pc1, neg);
    d.fit_meta.n_neg = neg.rows();
    d.fit_meta.eigengap_degenerate = (lambda1 - lambda2) <= 1e-9 * lambda1;
    return d;
}

Direction fit_theta_normative(const ActivationSet& neg) {
    require_rows(neg, 1, "theta-normative");
    auto w = mean_row(neg);
    if (normalize(w) < kDegenerateNorm) {
        throw Error(ErrorCode::degenerate, "zero-norm benign centroid");
    }
    auto d = make_direction(std::move(w), Strategy::theta_normative, neg);
    d.fit_meta.n_neg = neg.rows();
    return d;
}

Direction fit_theta_twoclass(const ActivationSet& pos, const ActivationSet& neg, const SoftAucOptions& opts) {
    const auto warm = fit_theta_normative(neg);
    SurrogateProblem problem(pos, neg, ScoreKind::angular);
    auto d = ascend(problem, warm, Strategy::theta_twoclass, opts);
    d.fit_meta.n_pos = pos.rows();
    d.fit_meta.n_neg = neg.rows();
    return d;
}

Direction random_direction(std::size_t dim, std::uint64_t seed) {
    if (dim == 0) throw Error(ErrorCode::invalid_dimension, "invalid dimension: random direction needs dim >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<double> w(dim);
    do {
        for (double& v : w) v = normal(rng);
    } while (normalize(w) == 0.0);
    Direction d;
    d.w = std::move(w);
    d.strategy = Strategy::random;
    d.score_kind = ScoreKind::projection;
    d.fit_meta.seed = seed;
    return d;
}

Direction fit_strategy(Strategy strategy, const ActivationSet& pos, const ActivationSet& neg, std::uint64_t seed,
                       const SoftAucOptions& opts) {
    switch (strategy) {
        case Strategy::mean_diff: return fit_mean_diff(pos, neg);
        case Strategy::soft_auc: return fit_soft_auc(pos, neg, fit_mean_diff(pos, neg), opts);
        case Strategy::pc1: return fit_pc1(neg);
        case Strategy::theta_normative: return fit_theta_normative(neg);
        case Strategy::theta_twoclass: return fit_theta_twoclass(pos, neg, opts);
        case Strategy::random: {
            auto d = random_direction(neg.dim(), seed);
            d.protocol = neg.meta().protocol;
            d.layer = neg.meta().layer;
            d.model_id = neg.meta().model_id;
            return d;
        }
    }
    throw Error(ErrorCode::invalid_argument, "unknown strategy");
}

// --- serialization ---------------------------------------------------------

json Direction::to_json() const {
    json meta = {{"n_pos", fit_meta.n_pos}, {"n_neg", fit_meta.n_neg}, {"seed", fit_meta.seed}};
    if (fit_meta.optimizer_trace) {
        const auto& t = *fit_meta.optimizer_trace;
        meta["optimizer_trace"] = {{"steps_taken", t.steps_taken},
                                   {"objective_at_warm_start", t.objective_at_warm_start},
                                   {"objective_at_return", t.objective_at_return},
                                   {"final_grad_norm", t.final_grad_norm},
                                   {"nan_reverted", t.nan_reverted}};
    }
    if (strategy == Strategy::pc1) meta["eigengap_degenerate"] = fit_meta.eigengap_degenerate;
    return {{"strategy", to_string(strategy)},
            {"score_kind", to_string(score_kind)},
            {"protocol", protocol.str()},
            {"layer", layer},
            {"model_id", model_id},
            {"dim", w.size()},
            {"seed", fit_meta.seed},
            {"fit_meta", std::move(meta)},
            {"w", w}};
}

Direction Direction::from_json(const json& doc) {
    Direction d;
    try {
        d.strategy = parse_strategy(doc.at("strategy").get<std::string>());
        const auto kind = doc.at("score_kind").get<std::string>();
        if (kind != "projection" && kind != "angular") {
            throw Error(ErrorCode::malformed_header, "unknown score_kind '" + kind + "'");
        }
        d.score_kind = kind == "projection" ? ScoreKind::projection : ScoreKind::angular;
        if (d.score_kind != score_kind_for(d.strategy)) {
            throw Error(ErrorCode::malformed_header, "score_kind does not match strategy");
        }
        d.protocol = ProtocolId::parse(doc.at("protocol").get<std::string>());
        d.layer = doc.at("layer").get<std::uint32_t>();
        d.model_id = doc.value("model_id", std::string{});
        d.w = doc.at("w").get<std::vector<double>>();
        if (doc.contains("dim") && doc.at("dim").get<std::size_t>() != d.w.size()) {
            throw Error(ErrorCode::length_mismatch, "direction 'dim' disagrees with length of 'w'");
        }
        const auto& meta = doc.at("fit_meta");
        d.fit_meta.n_pos = meta.value("n_pos", std::size_t{0});
        d.fit_meta.n_neg = meta.value("n_neg", std::size_t{0});
        d.fit_meta.seed = meta.value("seed", doc.value("seed", std::uint64_t{0}));
        d.fit_meta.eigengap_degenerate = meta.value("eigengap_degenerate", false);
        if (auto it = meta.find("optimizer_trace"); it != meta.end()) {
            OptTrace t;
            t.steps_taken = it->at("steps_taken").get<int>();
            t.objective_at_warm_start = it->at("objective_at_warm_start").get<double>();
            t.objective_at_return = it->at("objective_at_return").get<double>();
            t.final_grad_norm = it->at("final_grad_norm").get<double>();
            t.nan_reverted = it->at("nan_reverted").get<bool>();
            d.fit_meta.optimizer_trace = t;
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::malformed_header, std::string("malformed direction JSON: ") + e.what());
    }
    if (d.w.empty()) throw Error(ErrorCode::invalid_dimension, "direction has dimension 0");
    if (std::abs(norm(d.w) - 1.0) > 1e-6) throw Error(ErrorCode::invalid_argument, "direction is not unit norm");
    return d;
}

void save_direction(const Direction& d, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for writing");
    out << d.to_json().dump(2) << '\n';
}

Direction load_direction(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::missing_cache, "cannot open direction '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::malformed_header, std::string("direction file is not valid JSON: ") + e.what());
    }
    return Direction::from_json(doc);
}

}  // namespace harmprobe

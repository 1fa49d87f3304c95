// SPDX-License-Identifier: Apache-2.0

#include "harmprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include "harmprobe/error.hpp"
#include "harmprobe/vector_ops.hpp"

namespace harmprobe {

namespace {

void require_both_classes(const ScoreSet& s) {
    if (s.labels.size() != s.scores.size()) {
        throw Error(ErrorCode::length_mismatch, "scores and labels differ in length");
    }
    if (s.count(Label::harmful) == 0 || s.count(Label::benign) == 0) {
        throw Error(ErrorCode::invalid_argument, "single-class input: both harmful and benign rows are required");
    }
}

// Indices sorted by descending score.
std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

// Percentile by linear interpolation between order statistics.
double percentile(std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::size_t ScoreSet::count(Label label) const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

ScoreSet ScoreSet::filter(const std::function<bool(Label, const std::string&)>& keep) const {
    ScoreSet out;
    out.sign_corrected = sign_corrected;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const std::string& src = i < sources.size() ? sources[i] : std::string{};
        if (!keep(labels[i], src)) continue;
        out.scores.push_back(scores[i]);
        out.labels.push_back(labels[i]);
        out.sources.push_back(src);
    }
    return out;
}

ScoreSet score(const ActivationSet& set, const Direction& d) {
    if (d.dim() != set.dim()) {
        throw Error(ErrorCode::shape_mismatch, "direction has dimension " + std::to_string(d.dim()) +
                                                   ", activations have " + std::to_string(set.dim()));
    }
    ScoreSet out;
    out.labels = set.labels();
    out.sources = set.sources();
    out.scores.reserve(set.rows());
    const std::span<const double> w(d.w);
    const double w_norm = norm(w);
    for (std::size_t r = 0; r < set.rows(); ++r) {
        const auto x = set.row(r);
        const double proj = dot(x, w);
        if (d.score_kind == ScoreKind::projection) {
            out.scores.push_back(proj);
            continue;
        }
        const double x_norm = norm(x);
        if (x_norm == 0.0) throw Error(ErrorCode::degenerate, "zero-norm row under angular scoring");
        out.scores.push_back(std::acos(std::clamp(proj / (x_norm * w_norm), -1.0, 1.0)));
    }
    return out;
}

double auroc(const ScoreSet& s) {
    require_both_classes(s);
    const auto order = descending_order(s.scores);
    const std::uint64_t total_neg = s.count(Label::benign);
    // Walk tie groups from the top; pairs are counted in half-units so the
    // final ratio is an exact integer quotient.
    std::uint64_t neg_above = 0;
    std::uint64_t half_units = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::uint64_t pos_here = 0, neg_here = 0;
        std::size_t j = i;
        for (; j < order.size() && s.scores[order[j]] == s.scores[order[i]]; ++j) {
            (s.labels[order[j]] == Label::harmful ? pos_here : neg_here) += 1;
        }
        i = j;
        neg_above += neg_here;
        // Harmful rows here beat every benign row in later (lower) groups.
        half_units += pos_here * neg_here;                 // ties
        half_units += 2 * pos_here * (total_neg - neg_above);
    }
    const double n_pairs = static_cast<double>(s.count(Label::harmful)) * static_cast<double>(s.count(Label::benign));
    return static_cast<double>(half_units) / (2.0 * n_pairs);
}

ScoreSet sign_correct(ScoreSet s, double reference_auroc) {
    if (reference_auroc < 0.5) {
        for (double& v : s.scores) v = -v;
        s.sign_corrected = true;
    }
    return s;
}

double tpr_at_fpr(const ScoreSet& s, double fpr_target) {
    require_both_classes(s);
    if (!(fpr_target > 0.0 && fpr_target < 1.0)) {
        throw Error(ErrorCode::invalid_argument, "fpr_target must lie in (0, 1)");
    }
    const double n_pos = static_cast<double>(s.count(Label::harmful));
    const double n_neg = static_cast<double>(s.count(Label::benign));
    const auto order = descending_order(s.scores);

    struct Vertex {
        double fpr, tpr;
    };
    std::vector<Vertex> roc{{0.0, 0.0}};
    std::uint64_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        for (; j < order.size() && s.scores[order[j]] == s.scores[order[i]]; ++j) {
            (s.labels[order[j]] == Label::harmful ? tp : fp) += 1;
        }
        i = j;
        roc.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos});
    }
    roc.push_back({1.0, 1.0});

    // FPR is non-decreasing along the curve. Take the upper envelope at an
    // exact hit, otherwise interpolate between the last vertex below and the
    // first vertex above the target.
    double exact = -1.0;
    for (const auto& v : roc) {
        if (v.fpr == fpr_target) exact = std::max(exact, v.tpr);
    }
    if (exact >= 0.0) return exact;

    const Vertex* left = &roc.front();
    const Vertex* right = &roc.back();
    for (const auto& v : roc) {
        if (v.fpr < fpr_target) left = &v;
    }
    for (auto it = roc.rbegin(); it != roc.rend(); ++it) {
        if (it->fpr > fpr_target) right = &*it;
    }
    const double t = (fpr_target - left->fpr) / (right->fpr - left->fpr);
    return left->tpr + t * (right->tpr - left->tpr);
}

Interval bootstrap_ci(const ScoreSet& s, CiMetric metric, const BootstrapOptions& opts) {
    require_both_classes(s);
    if (opts.n_resamples < 1) throw Error(ErrorCode::invalid_argument, "n_resamples must be >= 1");
    if (!(opts.level > 0.0 && opts.level < 1.0)) throw Error(ErrorCode::invalid_argument, "level must lie in (0, 1)");

    std::map<std::string, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < s.size(); ++i) strata[i < s.sources.size() ? s.sources[i] : ""].push_back(i);

    constexpr int kMaxRedraws = 100;
    std::vector<double> values(static_cast<std::size_t>(opts.n_resamples));
    ScoreSet resample;
    resample.scores.resize(s.size());
    resample.labels.resize(s.size());

    for (int r = 0; r < opts.n_resamples; ++r) {
        bool ok = false;
        for (int attempt = 0; attempt < kMaxRedraws && !ok; ++attempt) {
            std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                              static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(attempt)};
            std::mt19937_64 rng(seq);
            std::size_t k = 0;
            for (const auto& [name, rows] : strata) {
                std::uniform_int_distribution<std::size_t> pick(0, rows.size() - 1);
                for (std::size_t n = 0; n < rows.size(); ++n, ++k) {
                    const std::size_t src = rows[pick(rng)];
                    resample.scores[k] = s.scores[src];
                    resample.labels[k] = s.labels[src];
                }
            }
            ok = resample.count(Label::harmful) > 0 && resample.count(Label::benign) > 0;
        }
        if (!ok) {
            throw Error(ErrorCode::degenerate, "bootstrap resample lost a class after repeated redraws");
        }
        values[static_cast<std::size_t>(r)] = metric == CiMetric::auroc_effective
                                                  ? effective_auroc(auroc(resample))
                                                  : tpr_at_fpr(resample, opts.fpr_target);
    }

    std::sort(values.begin(), values.end());
    const double alpha = 1.0 - opts.level;
    return {percentile(values, alpha / 2.0), percentile(values, 1.0 - alpha / 2.0)};
}

RocSummary summarize(const ScoreSet& s, const BootstrapOptions& opts) {
    RocSummary out;
    out.auroc_raw = auroc(s);
    out.auroc_effective = effective_auroc(out.auroc_raw);
    out.tpr_at_fpr = tpr_at_fpr(s, opts.fpr_target);
    out.fpr_target = opts.fpr_target;
    out.n_resamples = opts.n_resamples;
    out.level = opts.level;
    out.seed = opts.seed;
    out.n_pos = s.count(Label::harmful);
    out.n_neg = s.count(Label::benign);
    if (opts.n_resamples > 0) {
        out.ci_auroc = bootstrap_ci(s, CiMetric::auroc_effective, opts);
        out.ci_tpr = bootstrap_ci(s, CiMetric::tpr_at_fpr, opts);
    } else {
        out.ci_auroc = {out.auroc_effective, out.auroc_effective};
        out.ci_tpr = {out.tpr_at_fpr, out.tpr_at_fpr};
    }
    return out;
}

nlohmann::json RocSummary::to_json() const {
    return {{"auroc_raw", auroc_raw},
            {"auroc_effective", auroc_effective},
            {"tpr_at_fpr", tpr_at_fpr},
            {"fpr_target", fpr_target},
            {"ci_auroc", {ci_auroc.lo, ci_auroc.hi}},
            {"ci_tpr", {ci_tpr.lo, ci_tpr.hi}},
            {"n_resamples", n_resamples},
            {"level", level},
            {"seed", seed},
            {"n_pos", n_pos},
            {"n_neg", n_neg}};
}

void write_scores_csv(const ScoreSet& s, std::ostream& out) {
    out << "score,label,source\n";
    char buf[64];
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", s.scores[i]);
        out << buf << ',' << to_string(s.labels[i]) << ',' << (i < s.sources.size() ? s.sources[i] : "") << '\n';
    }
}

}  // namespace harmprobe

// SPDX-License-Identifier: Apache-2.0

#include "harmprobe/geometry_lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <ostream>

#include "harmprobe/error.hpp"
#include "harmprobe/synthetic_oracle.hpp"
#include "harmprobe/vector_ops.hpp"

namespace harmprobe::geometry {

using nlohmann::json;

double unsigned_angle(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::shape_mismatch, "dimension mismatch: " + std::to_string(a.size()) + " vs " +
                                                   std::to_string(b.size()));
    }
    const double c = std::clamp(std::abs(dot(a, b)), 0.0, 1.0);
    return std::acos(c) * 180.0 / std::numbers::pi;
}

ActivationSet project_out(const ActivationSet& set, std::span<const double> w) {
    if (w.size() != set.dim()) {
        throw Error(ErrorCode::shape_mismatch, "direction has dimension " + std::to_string(w.size()) +
                                                   ", activations have " + std::to_string(set.dim()));
    }
    ActivationSet out = set;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto x = out.row(r);
        const double c = dot(std::span<const float>(x), w);
        for (std::size_t k = 0; k < x.size(); ++k) {
            x[k] = static_cast<float>(static_cast<double>(x[k]) - c * w[k]);
        }
    }
    return out;
}

double mean_diff_norm_ratio(const ActivationSet& before_pos, const ActivationSet& before_neg,
                            const ActivationSet& after_pos, const ActivationSet& after_neg) {
    if (before_pos.dim() != after_pos.dim() || before_neg.dim() != after_neg.dim()) {
        throw Error(ErrorCode::shape_mismatch, "before/after dimensions disagree");
    }
    const double before = norm(mean_difference(before_pos, before_neg));
    if (before == 0.0) throw Error(ErrorCode::degenerate, "zero denominator: class means coincide before projection");
    return norm(mean_difference(after_pos, after_neg)) / before;
}

// --- angles ----------------------------------------------------------------

AngleReport angle_report(const std::vector<ModelDirections>& models) {
    AngleReport report;
    // Keyed by first appearance so aggregate rows follow input order.
    std::vector<std::pair<std::string, std::string>> order;
    std::map<std::pair<std::string, std::string>, std::vector<double>> by_pair;
    for (const auto& m : models) {
        for (std::size_t i = 0; i < m.directions.size(); ++i) {
            for (std::size_t j = i + 1; j < m.directions.size(); ++j) {
                const auto& a = m.directions[i];
                const auto& b = m.directions[j];
                const double deg = unsigned_angle(a.w, b.w);
                report.pairs.push_back({m.model_id, a.name, b.name, deg});
                auto key = std::make_pair(a.name, b.name);
                if (!by_pair.contains(key)) order.push_back(key);
                by_pair[key].push_back(deg);
            }
        }
    }
    for (const auto& key : order) {
        const auto& v = by_pair[key];
        AngleAggregate agg;
        agg.a = key.first;
        agg.b = key.second;
        agg.n = v.size();
        double sum = 0.0;
        for (double x : v) sum += x;
        agg.mean = sum / static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - agg.mean) * (x - agg.mean);
        agg.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
        agg.min = *std::min_element(v.begin(), v.end());
        agg.max = *std::max_element(v.begin(), v.end());
        report.aggregate.push_back(agg);
    }
    return report;
}

json AngleReport::to_json() const {
    json p = json::array();
    for (const auto& x : pairs) p.push_back({{"model_id", x.model_id}, {"a", x.a}, {"b", x.b}, {"degrees", x.degrees}});
    json a = json::array();
    for (const auto& x : aggregate) {
        a.push_back({{"a", x.a}, {"b", x.b}, {"n", x.n}, {"mean", x.mean}, {"std", x.std}, {"min", x.min}, {"max", x.max}});
    }
    return {{"pairs", std::move(p)}, {"aggregate", std::move(a)}};
}

void AngleReport::write_csv(std::ostream& out) const {
    out << "pair_a,pair_b,n,mean,std,min,max\n";
    char buf[256];
    for (const auto& x : aggregate) {
        std::snprintf(buf, sizeof buf, "%s,%s,%zu,%.4f,%.4f,%.4f,%.4f\n", x.a.c_str(), x.b.c_str(), x.n, x.mean, x.std,
                      x.min, x.max);
        out << buf;
    }
}

// --- projection and refit --------------------------------------------------

namespace {

Splits project_all(const Splits& s, std::span<const double> w) {
    return {project_out(s.fit, w), project_out(s.val, w), project_out(s.eval, w)};
}

RefitReport run_refit(const Splits& target, const std::vector<double>& removed, std::string removed_name,
                      const RefitOptions& opts) {
    const auto pos = target.fit.with_label(Label::harmful);
    const auto neg = target.fit.with_label(Label::benign);

    const auto md = fit_mean_diff(pos, neg);
    const auto opt = fit_soft_auc(pos, neg, md, opts.soft_auc);

    const auto projected = project_all(target, removed);
    const auto ppos = projected.fit.with_label(Label::harmful);
    const auto pneg = projected.fit.with_label(Label::benign);

    RefitReport report;
    report.model_id = target.fit.meta().model_id;
    report.protocol = target.fit.meta().protocol.str();
    report.removed = std::move(removed_name);
    report.norm_ratio = mean_diff_norm_ratio(pos, neg, ppos, pneg);

    // The refit starts from the projected mean difference unless projection
    // has reduced it to rounding residue, in which case it starts from a
    // seeded random direction in the orthogonal complement.
    Direction warm = md;
    warm.w = mean_difference(ppos, pneg);
    if (report.norm_ratio < 1e-3 || normalize(warm.w) < 1e-12) {
        warm.w = synth::random_orthogonal(removed, opts.seed);
    }
    SoftAucOptions refit_opts = opts.soft_auc;
    refit_opts.orthogonal_to.push_back(removed);
    const auto refit = fit_soft_auc(ppos, pneg, warm, refit_opts);
    report.refit_direction = refit.w;

    auto summarize_on = [&](const ActivationSet& eval, const Direction& d) { return summarize(score(eval, d), opts.bootstrap); };
    report.conditions.push_back({"baseline_mean_diff", summarize_on(target.eval, md)});
    report.conditions.push_back({"baseline_soft_auc", summarize_on(target.eval, opt)});
    report.conditions.push_back({"original_on_projected", summarize_on(projected.eval, md)});
    report.conditions.push_back({"refit_soft_auc", summarize_on(projected.eval, refit)});

    report.baseline_auroc = report.conditions[0].summary.auroc_raw;
    report.projected_auroc = report.conditions[2].summary.auroc_raw;
    report.refit_auroc = report.conditions[3].summary.auroc_raw;
    report.angle_baseline_vs_refit = unsigned_angle(opt.w, refit.w);
    return report;
}

}  // namespace

RefitReport self_projection_experiment(const Splits& splits, const RefitOptions& opts) {
    const auto md = fit_mean_diff(splits.fit.with_label(Label::harmful), splits.fit.with_label(Label::benign));
    return run_refit(splits, md.w, "self:mean_diff", opts);
}

std::vector<RefitReport> cross_projection_experiment(const Direction& to_remove, const std::vector<Splits>& targets,
                                                     const RefitOptions& opts) {
    std::vector<RefitReport> out;
    out.reserve(targets.size());
    const std::string name = std::string(to_string(to_remove.strategy)) + "@" + to_remove.protocol.str();
    for (const auto& t : targets) {
        if (t.fit.dim() != to_remove.dim()) {
            throw Error(ErrorCode::shape_mismatch, "removed direction and target activations differ in dimension");
        }
        out.push_back(run_refit(t, to_remove.w, name, opts));
    }
    return out;
}

json RefitReport::to_json() const {
    json conds = json::array();
    for (const auto& c : conditions) conds.push_back({{"condition", c.condition}, {"summary", c.summary.to_json()}});
    return {{"model_id", model_id},
            {"protocol", protocol},
            {"removed", removed},
            {"baseline_auroc", baseline_auroc},
            {"projected_auroc", projected_auroc},
            {"refit_auroc", refit_auroc},
            {"norm_ratio", norm_ratio},
            {"angle_baseline_vs_refit", angle_baseline_vs_refit},
            {"conditions", std::move(conds)}};
}

void RefitReport::write_csv_header(std::ostream& out) {
    out << "model,protocol,condition,auroc,auroc_lo,auroc_hi,tpr,tpr_lo,tpr_hi\n";
}

void RefitReport::write_csv_rows(std::ostream& out) const {
    char buf[512];
    for (const auto& c : conditions) {
        const auto& s = c.summary;
        std::snprintf(buf, sizeof buf, "%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", model_id.c_str(), protocol.c_str(),
                      c.condition.c_str(), s.auroc_effective, s.ci_auroc.lo, s.ci_auroc.hi, s.tpr_at_fpr, s.ci_tpr.lo,
                      s.ci_tpr.hi);
        out << buf;
    }
}

}  // namespace harmprobe::geometry

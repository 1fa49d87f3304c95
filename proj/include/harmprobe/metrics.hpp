// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmprobe/activation_store.hpp"
#include "harmprobe/direction_fit.hpp"

namespace harmprobe {

/// Per-prompt scores aligned with labels and source tags. Larger scores are
/// taken to mean "more harmful".
struct ScoreSet {
    std::vector<double> scores;
    std::vector<Label> labels;
    std::vector<std::string> sources;
    bool sign_corrected = false;

    [[nodiscard]] std::size_t size() const noexcept { return scores.size(); }
    [[nodiscard]] std::size_t count(Label label) const noexcept;

    /// Rows for which keep(label, source) is true.
    [[nodiscard]] ScoreSet filter(const std::function<bool(Label, const std::string&)>& keep) const;
};

/// Projection: s = x.w. Angular: s = arccos(clamp(x_hat . w_hat)) in radians.
ScoreSet score(const ActivationSet& set, const Direction& d);

/// Mann-Whitney AUROC: fraction of (harmful, benign) pairs with
/// s_harmful > s_benign, ties counted one half.
double auroc(const ScoreSet& s);

inline double effective_auroc(double raw) noexcept { return raw < 0.5 ? 1.0 - raw : raw; }

/// Negates the scores when reference_auroc < 0.5.
ScoreSet sign_correct(ScoreSet s, double reference_auroc);

/// TPR at the given FPR on the empirical ROC. Thresholds are the distinct
/// scores in descending order (a threshold admits every score >= it), the
/// curve is anchored at (0,0) and (1,1), and TPR is interpolated linearly
/// between the vertices flanking the target. If vertices sit exactly on the
/// target the largest TPR among them is returned.
double tpr_at_fpr(const ScoreSet& s, double fpr_target = 0.01);

enum class CiMetric { auroc_effective, tpr_at_fpr };

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
    bool operator==(const Interval&) const = default;
};

struct BootstrapOptions {
    int n_resamples = 1000;
    double level = 0.95;
    std::uint64_t seed = 42;
    double fpr_target = 0.01;  // used by CiMetric::tpr_at_fpr
};

/// Percentile interval from resampling rows with replacement within each
/// source stratum (stratum sizes preserved). Resample r draws from a
/// generator seeded by (seed, r), so the result does not depend on
/// evaluation order.
Interval bootstrap_ci(const ScoreSet& s, CiMetric metric, const BootstrapOptions& opts = {});

struct RocSummary {
    double auroc_raw = 0.5;
    double auroc_effective = 0.5;
    double tpr_at_fpr = 0.0;
    double fpr_target = 0.01;
    Interval ci_auroc;
    Interval ci_tpr;
    int n_resamples = 0;
    double level = 0.95;
    std::uint64_t seed = 0;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Point metrics plus bootstrap intervals. n_resamples == 0 skips the
/// bootstrap and leaves degenerate intervals at the point estimates.
RocSummary summarize(const ScoreSet& s, const BootstrapOptions& opts = {});

/// CSV with header "score,label,source".
void write_scores_csv(const ScoreSet& s, std::ostream& out);

}  // namespace harmprobe

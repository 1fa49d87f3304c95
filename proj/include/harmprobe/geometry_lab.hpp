// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "harmprobe/activation_store.hpp"
#include "harmprobe/direction_fit.hpp"
#include "harmprobe/metrics.hpp"

namespace harmprobe::geometry {

/// arccos(|a.b|) in degrees, in [0, 90]. Symmetric and sign-blind.
double unsigned_angle(std::span<const double> a, std::span<const double> b);

/// x' = x - (x.w) w for every row, computed in double and stored as f32.
ActivationSet project_out(const ActivationSet& set, std::span<const double> w);

/// ||mean(after_pos) - mean(after_neg)|| / ||mean(before_pos) - mean(before_neg)||.
double mean_diff_norm_ratio(const ActivationSet& before_pos, const ActivationSet& before_neg,
                            const ActivationSet& after_pos, const ActivationSet& after_neg);

// --- pairwise angles -------------------------------------------------------

struct NamedDirection {
    std::string name;  // e.g. "mean_diff", "pc1_benign"
    std::vector<double> w;
};

struct ModelDirections {
    std::string model_id;
    std::vector<NamedDirection> directions;
};

struct AnglePair {
    std::string model_id;
    std::string a;
    std::string b;
    double degrees = 0.0;
};

struct AngleAggregate {
    std::string a;
    std::string b;
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation, 0 when n == 1
    double min = 0.0;
    double max = 0.0;
};

struct AngleReport {
    std::vector<AnglePair> pairs;
    std::vector<AngleAggregate> aggregate;

    [[nodiscard]] nlohmann::json to_json() const;
    /// Columns: pair_a,pair_b,n,mean,std,min,max
    void write_csv(std::ostream& out) const;
};

/// All unordered pairs of directions within each model, aggregated per pair
/// of names across models.
AngleReport angle_report(const std::vector<ModelDirections>& models);

// --- projection and refit --------------------------------------------------

struct Splits {
    ActivationSet fit;
    ActivationSet val;
    ActivationSet eval;
};

struct RefitOptions {
    SoftAucOptions soft_auc;
    BootstrapOptions bootstrap{.n_resamples = 0};
    std::uint64_t seed = 42;  // warm start for the refit when the projected mean difference vanishes
};

struct RefitCondition {
    std::string condition;  // baseline_mean_diff, baseline_soft_auc, original_on_projected, refit_soft_auc
    RocSummary summary;
};

struct RefitReport {
    std::string model_id;
    std::string protocol;
    std::string removed;  // what was projected out

    double baseline_auroc = 0.5;   // target mean-difference direction, unprojected eval
    double projected_auroc = 0.5;  // same direction on projected eval
    double refit_auroc = 0.5;      // soft-AUC refit on projected fit, projected eval
    double norm_ratio = 0.0;       // mean-difference norm after / before, on fit
    double angle_baseline_vs_refit = 0.0;  // baseline soft-AUC vs refit soft-AUC, degrees

    std::vector<RefitCondition> conditions;
    std::vector<double> refit_direction;

    [[nodiscard]] nlohmann::json to_json() const;
    /// Columns: model,protocol,condition,auroc,auroc_lo,auroc_hi,tpr,tpr_lo,tpr_hi
    void write_csv_rows(std::ostream& out) const;
    static void write_csv_header(std::ostream& out);
};

/// Fit the mean difference on fit, project it out of all three splits and
/// refit soft-AUC on the projected fit split.
RefitReport self_projection_experiment(const Splits& splits, const RefitOptions& opts = {});

/// Project a given direction out of each target's splits and refit soft-AUC
/// there. One report per target, in input order.
std::vector<RefitReport> cross_projection_experiment(const Direction& to_remove, const std::vector<Splits>& targets,
                                                     const RefitOptions& opts = {});

}  // namespace harmprobe::geometry

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "harmprobe/activation_store.hpp"

namespace harmprobe {

enum class Strategy { mean_diff, soft_auc, pc1, theta_normative, theta_twoclass, random };
enum class ScoreKind { projection, angular };

std::string_view to_string(Strategy s) noexcept;
std::string_view to_string(ScoreKind k) noexcept;
Strategy parse_strategy(std::string_view text);

/// Angular strategies score by arccos of the cosine to w; the rest by signed projection.
constexpr ScoreKind score_kind_for(Strategy s) noexcept {
    return (s == Strategy::theta_normative || s == Strategy::theta_twoclass) ? ScoreKind::angular
                                                                             : ScoreKind::projection;
}

/// Supervised strategies produce correctly signed scores by construction and
/// are never sign-corrected.
constexpr bool is_supervised(Strategy s) noexcept {
    return s == Strategy::mean_diff || s == Strategy::soft_auc || s == Strategy::theta_twoclass;
}

struct OptTrace {
    int steps_taken = 0;
    double objective_at_warm_start = 0.0;
    double objective_at_return = 0.0;
    double final_grad_norm = 0.0;
    bool nan_reverted = false;
};

struct FitMeta {
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    std::uint64_t seed = 0;
    std::optional<OptTrace> optimizer_trace;
    // PC1 only: leading two covariance eigenvalues agree to 1e-9 (relative).
    bool eigengap_degenerate = false;
};

struct Direction {
    std::vector<double> w;  // unit norm
    Strategy strategy = Strategy::mean_diff;
    ScoreKind score_kind = ScoreKind::projection;
    ProtocolId protocol;
    std::uint32_t layer = 0;
    std::string model_id;
    FitMeta fit_meta;

    [[nodiscard]] std::size_t dim() const noexcept { return w.size(); }

    [[nodiscard]] nlohmann::json to_json() const;
    static Direction from_json(const nlohmann::json& doc);
};

void save_direction(const Direction& d, const std::filesystem::path& path);
Direction load_direction(const std::filesystem::path& path);

struct SoftAucOptions {
    double step = 0.05;
    int max_steps = 300;
    double grad_tol = 1e-5;
    int patience = 20;
    // Unit vectors the iterate is kept orthogonal to; gradient and iterate are
    // re-projected after every update. Used by the projection-and-refit experiments.
    std::vector<std::vector<double>> orthogonal_to;
};

/// Unit (mu_pos - mu_neg). Throws ErrorCode::degenerate when the class means
/// are closer than 1e-12.
Direction fit_mean_diff(const ActivationSet& pos, const ActivationSet& neg);

/// Pairwise logistic surrogate of AUROC, mean over all (pos, neg) pairs of
/// sigmoid(s_pos - s_neg). Projection scores are w.x; angular scores are
/// arccos(x_hat . w) with the cosine clamped 1e-7 away from +-1. w is used
/// as given (not renormalized).
double soft_auc_objective(std::span<const double> w, const ActivationSet& pos, const ActivationSet& neg,
                          ScoreKind kind);

/// Euclidean gradient of soft_auc_objective with respect to w.
std::vector<double> soft_auc_gradient(std::span<const double> w, const ActivationSet& pos,
                                      const ActivationSet& neg, ScoreKind kind);

/// Riemannian gradient ascent of the surrogate on the unit sphere, started at
/// warm_start. Returns the best iterate seen; the trace records the rest.
Direction fit_soft_auc(const ActivationSet& pos, const ActivationSet& neg, const Direction& warm_start,
                       const SoftAucOptions& opts = {});

/// Leading principal component of neg. The sign is fixed by making the
/// largest-magnitude component positive.
Direction fit_pc1(const ActivationSet& neg);

/// Normalized centroid of neg; scored by angular deviation.
Direction fit_theta_normative(const ActivationSet& neg);

/// Surrogate ascent on angular scores, warm-started from fit_theta_normative(neg).
Direction fit_theta_twoclass(const ActivationSet& pos, const ActivationSet& neg,
                             const SoftAucOptions& opts = {});

/// Normalized standard-normal draw; identical for identical (dim, seed).
Direction random_direction(std::size_t dim, std::uint64_t seed = 42);

/// Dispatches on strategy. pos is ignored by the zero-shot strategies and
/// seed is used only by Strategy::random. Protocol, layer and model id are
/// copied from neg's metadata.
Direction fit_strategy(Strategy strategy, const ActivationSet& pos, const ActivationSet& neg,
                       std::uint64_t seed = 42, const SoftAucOptions& opts = {});

}  // namespace harmprobe

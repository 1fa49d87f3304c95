// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmprobe/activation_store.hpp"

namespace harmprobe::synth {

/// Identifier of the sampling algorithm recorded in generated cache headers.
/// Reproducibility is promised per (algorithm, seed) only.
inline constexpr const char* kGeneratorId = "mt19937_64+std::normal_distribution";

struct Nuisance {
    std::vector<double> axis;  // unit, orthogonal to the planted axis
    double std = 0.0;
};

/// Two isotropic Gaussian classes whose means differ by delta along a planted
/// unit axis: harmful ~ offset + delta * planted + sigma * g, benign ~ offset + sigma * g.
struct PlantedSpec {
    std::size_t dim = 16;
    std::size_t n_pos = 100;
    std::size_t n_neg = 100;
    double delta = 3.0;
    double sigma = 1.0;
    std::vector<double> planted;  // empty: e_0
    std::optional<Nuisance> nuisance;
    // Shared class-mean offset. Angular strategies need a benign centroid away
    // from the origin; empty means zero.
    std::vector<double> offset;
    // Optional second planted signal added to the harmful mean.
    std::vector<double> second_axis;
    double second_delta = 0.0;
    std::uint64_t seed = 42;
    std::string source_pos = "synthetic";
    std::string source_neg = "synthetic";
    std::string model_id;  // empty: "synthetic:<seed>"

    void validate() const;
    [[nodiscard]] nlohmann::json to_json() const;
};

struct Generated {
    ActivationSet set;  // harmful rows first, then benign
    std::vector<double> planted;
};

Generated generate(const PlantedSpec& spec);

/// Standard normal CDF and quantile, double precision.
double normal_cdf(double x);
double normal_quantile(double p);

/// AUROC of the planted-axis projection: Phi(delta / (sigma * sqrt 2)).
double analytic_auroc(double delta, double sigma);

/// TPR of the planted-axis projection at the given FPR: Phi(delta / sigma - z_{1 - fpr}).
double analytic_tpr_at_fpr(double delta, double sigma, double fpr);

/// Uniformly random unit vector.
std::vector<double> random_unit(std::size_t dim, std::uint64_t seed);

/// Unit vector orthogonal to `axis`, drawn uniformly from its complement.
std::vector<double> random_orthogonal(const std::vector<double>& axis, std::uint64_t seed);

/// Unit vector at `degrees` from `axis`, rotated within the plane spanned by
/// `axis` and a random orthogonal direction.
std::vector<double> rotate_away(const std::vector<double>& axis, double degrees, std::uint64_t seed);

/// A synthetic "model": fit/val/eval caches for one protocol over several
/// layers, all sharing one planted axis.
struct SynthModelSpec {
    std::string model_id = "synthetic";
    Variant variant = Variant::synthetic;
    ProtocolId protocol;
    std::size_t dim = 32;
    std::size_t layers = 1;
    std::size_t n_fit = 100;  // per class
    std::size_t n_val = 50;
    std::size_t n_eval = 500;
    double delta = 3.0;
    double sigma = 1.0;
    // When set, layer l (0-based) uses delta * (l + 1) / layers.
    bool ramp = false;
    std::vector<double> planted;  // empty: random_unit(dim, planted_seed)
    std::uint64_t planted_seed = 7;
    double offset_norm = 4.0;  // benign centroid distance from the origin
    std::uint64_t seed = 42;
    std::string source_pos = "synthetic-harmful";
    std::string source_neg = "synthetic-benign";

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Generates every (layer, split) set of a synthetic model in memory.
/// Index [layer][split] with split order fit, val, eval.
std::vector<std::vector<ActivationSet>> generate_model(const SynthModelSpec& spec);

/// Writes generate_model() output under `root` using the cache layout, plus
/// a sidecar `<root>/synth.json` with the spec and planted axis. Returns the
/// planted axis.
std::vector<double> write_model(const SynthModelSpec& spec, const std::filesystem::path& root);

}  // namespace harmprobe::synth

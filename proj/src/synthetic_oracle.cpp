// SPDX-License-Identifier: Apache-2.0

#include "harmprobe/synthetic_oracle.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <boost/math/distributions/normal.hpp>

#include "harmprobe/error.hpp"
#include "harmprobe/vector_ops.hpp"

namespace harmprobe::synth {

namespace {

void require_unit(const std::vector<double>& v, std::size_t dim, const char* what) {
    if (v.size() != dim) throw Error(ErrorCode::invalid_argument, std::string(what) + " has the wrong dimension");
    if (std::abs(norm(v) - 1.0) > 1e-6) throw Error(ErrorCode::invalid_argument, std::string(what) + " is not unit norm");
}

std::vector<double> basis_vector(std::size_t dim, std::size_t k) {
    std::vector<double> e(dim, 0.0);
    e[k] = 1.0;
    return e;
}

}  // namespace

void PlantedSpec::validate() const {
    if (dim == 0) throw Error(ErrorCode::invalid_dimension, "invalid dimension: dim must be >= 1");
    if (!(delta >= 0.0) || !std::isfinite(delta)) throw Error(ErrorCode::invalid_argument, "delta must be >= 0");
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::invalid_argument, "sigma must be > 0");
    if (!planted.empty()) require_unit(planted, dim, "planted axis");
    const auto axis = planted.empty() ? basis_vector(dim, 0) : planted;
    if (nuisance) {
        require_unit(nuisance->axis, dim, "nuisance axis");
        if (std::abs(dot(nuisance->axis, axis)) > 1e-6) {
            throw Error(ErrorCode::invalid_argument, "nuisance axis is not orthogonal to the planted axis");
        }
        if (!(nuisance->std >= 0.0)) throw Error(ErrorCode::invalid_argument, "nuisance std must be >= 0");
    }
    if (!offset.empty() && offset.size() != dim) throw Error(ErrorCode::invalid_argument, "offset has the wrong dimension");
    if (!second_axis.empty()) require_unit(second_axis, dim, "second axis");
}

nlohmann::json PlantedSpec::to_json() const {
    nlohmann::json j = {{"dim", dim},       {"n_pos", n_pos}, {"n_neg", n_neg},
                        {"delta", delta},   {"sigma", sigma}, {"seed", seed},
                        {"generator", kGeneratorId}};
    if (nuisance) j["nuisance"] = {{"axis", nuisance->axis}, {"std", nuisance->std}};
    if (!offset.empty()) j["offset"] = offset;
    if (!second_axis.empty()) j["second"] = {{"axis", second_axis}, {"delta", second_delta}};
    return j;
}

Generated generate(const PlantedSpec& spec) {
    spec.validate();
    const std::size_t dim = spec.dim;
    auto planted = spec.planted.empty() ? basis_vector(dim, 0) : spec.planted;

    CacheMeta meta;
    meta.model_id = spec.model_id.empty() ? "synthetic:" + std::to_string(spec.seed) : spec.model_id;
    meta.variant = Variant::synthetic;
    meta.extra = {{"generator", kGeneratorId}};
    ActivationSet set(meta, dim);

    std::mt19937_64 rng(spec.seed);
    // Nuisance draws use their own stream so turning nuisance on or off leaves
    // the isotropic noise untouched.
    std::seed_seq nuisance_seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32), 1u};
    std::mt19937_64 nuisance_rng(nuisance_seq);
    // One distribution per engine: normal_distribution caches its second draw.
    std::normal_distribution<double> normal;
    std::normal_distribution<double> nuisance_normal;

    std::vector<double> row(dim);
    std::vector<float> stored(dim);
    auto emit = [&](Label label, const std::string& source) {
        const bool harmful = label == Label::harmful;
        for (std::size_t k = 0; k < dim; ++k) {
            double v = spec.sigma * normal(rng);
            if (!spec.offset.empty()) v += spec.offset[k];
            if (harmful) {
                v += spec.delta * planted[k];
                if (!spec.second_axis.empty()) v += spec.second_delta * spec.second_axis[k];
            }
            row[k] = v;
        }
        if (spec.nuisance) {
            const double g = spec.nuisance->std * nuisance_normal(nuisance_rng);
            for (std::size_t k = 0; k < dim; ++k) row[k] += g * spec.nuisance->axis[k];
        }
        for (std::size_t k = 0; k < dim; ++k) stored[k] = static_cast<float>(row[k]);
        set.append(stored, label, source);
    };
    for (std::size_t i = 0; i < spec.n_pos; ++i) emit(Label::harmful, spec.source_pos);
    for (std::size_t i = 0; i < spec.n_neg; ++i) emit(Label::benign, spec.source_neg);
    return {std::move(set), std::move(planted)};
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::invalid_argument, "quantile level must lie in (0, 1)");
    return boost::math::quantile(boost::math::normal_distribution<double>{}, p);
}

double analytic_auroc(double delta, double sigma) {
    if (!(sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "sigma must be > 0");
    return normal_cdf(delta / (sigma * std::numbers::sqrt2));
}

double analytic_tpr_at_fpr(double delta, double sigma, double fpr) {
    if (!(sigma > 0.0)) throw Error(ErrorCode::invalid_argument, "sigma must be > 0");
    return normal_cdf(delta / sigma - normal_quantile(1.0 - fpr));
}

std::vector<double> random_unit(std::size_t dim, std::uint64_t seed) {
    if (dim == 0) throw Error(ErrorCode::invalid_dimension, "invalid dimension: dim must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    std::vector<double> v(dim);
    do {
        for (double& x : v) x = normal(rng);
    } while (normalize(v) == 0.0);
    return v;
}

std::vector<double> random_orthogonal(const std::vector<double>& axis, std::uint64_t seed) {
    if (axis.size() < 2) throw Error(ErrorCode::invalid_dimension, "need dim >= 2 for an orthogonal direction");
    for (std::uint64_t attempt = 0;; ++attempt) {
        auto v = random_unit(axis.size(), seed + attempt);
        const double c = dot(v, axis);
        for (std::size_t k = 0; k < v.size(); ++k) v[k] -= c * axis[k];
        if (normalize(v) > 1e-6) {
            // Second pass removes the rounding residue of the first.
            const double r = dot(v, axis);
            for (std::size_t k = 0; k < v.size(); ++k) v[k] -= r * axis[k];
            normalize(v);
            return v;
        }
    }
}

std::vector<double> rotate_away(const std::vector<double>& axis, double degrees, std::uint64_t seed) {
    const auto ortho = random_orthogonal(axis, seed);
    const double t = degrees * std::numbers::pi / 180.0;
    std::vector<double> v(axis.size());
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::cos(t) * axis[k] + std::sin(t) * ortho[k];
    normalize(v);
    return v;
}

// --- whole synthetic models ------------------------------------------------

namespace {

std::vector<double> model_planted(const SynthModelSpec& spec) {
    return spec.planted.empty() ? random_unit(spec.dim, spec.planted_seed) : spec.planted;
}

std::vector<double> model_offset(const SynthModelSpec& spec, const std::vector<double>& planted) {
    if (spec.offset_norm == 0.0 || spec.dim < 2) return {};
    auto offset = random_orthogonal(planted, spec.planted_seed + 1000003);
    for (double& v : offset) v *= spec.offset_norm;
    return offset;
}

}  // namespace

nlohmann::json SynthModelSpec::to_json() const {
    return {{"model_id", model_id},
            {"variant", to_string(variant)},
            {"protocol", protocol.str()},
            {"dim", dim},
            {"layers", layers},
            {"n_fit", n_fit},
            {"n_val", n_val},
            {"n_eval", n_eval},
            {"delta", delta},
            {"sigma", sigma},
            {"ramp", ramp},
            {"planted_seed", planted_seed},
            {"offset_norm", offset_norm},
            {"seed", seed},
            {"generator", kGeneratorId}};
}

std::vector<std::vector<ActivationSet>> generate_model(const SynthModelSpec& spec) {
    if (spec.layers == 0) throw Error(ErrorCode::invalid_argument, "synthetic model needs at least one layer");
    const auto planted = model_planted(spec);
    const auto offset = model_offset(spec, planted);

    std::vector<std::vector<ActivationSet>> out(spec.layers);
    const std::size_t counts[3] = {spec.n_fit, spec.n_val, spec.n_eval};
    const Split splits[3] = {Split::fit, Split::val, Split::eval};
    for (std::size_t layer = 0; layer < spec.layers; ++layer) {
        for (int s = 0; s < 3; ++s) {
            PlantedSpec p;
            p.dim = spec.dim;
            p.n_pos = counts[s];
            p.n_neg = counts[s];
            p.delta = spec.ramp ? spec.delta * static_cast<double>(layer + 1) / static_cast<double>(spec.layers)
                                : spec.delta;
            p.sigma = spec.sigma;
            p.planted = planted;
            p.offset = offset;
            std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                              static_cast<std::uint32_t>(layer), static_cast<std::uint32_t>(s)};
            std::uint32_t words[2];
            seq.generate(words, words + 2);
            p.seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
            p.source_pos = spec.source_pos;
            p.source_neg = spec.source_neg;
            p.model_id = spec.model_id;
            auto set = generate(p).set;
            auto& meta = set.meta();
            meta.variant = spec.variant;
            meta.protocol = spec.protocol;
            meta.layer = static_cast<std::uint32_t>(layer);
            meta.split = splits[s];
            out[layer].push_back(std::move(set));
        }
    }
    return out;
}

std::vector<double> write_model(const SynthModelSpec& spec, const std::filesystem::path& root) {
    const auto sets = generate_model(spec);
    for (const auto& layer : sets) {
        for (const auto& set : layer) {
            write_cache(set, cache_path(root, set.meta().protocol, set.meta().layer, set.meta().split));
        }
    }
    auto planted = model_planted(spec);
    auto sidecar = spec.to_json();
    sidecar["planted"] = planted;
    std::ofstream out(root / "synth.json");
    if (!out) throw Error(ErrorCode::io, "cannot write synth.json under '" + root.string() + "'");
    out << sidecar.dump(2) << '\n';
    return planted;
}

}  // namespace harmprobe::synth

// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "harmprobe/activation_store.hpp"
#include "harmprobe/direction_fit.hpp"
#include "harmprobe/geometry_lab.hpp"
#include "harmprobe/metrics.hpp"

namespace harmprobe::runner {

struct ModelEntry {
    std::string model_id;
    Variant variant = Variant::base;
    std::filesystem::path cache_root;
};

struct LayerPolicy {
    bool fixed = false;  // false: validation argmax
    std::uint32_t layer = 0;
};

struct TransferConfig {
    // Model ids in matrix order. The first one supplies the layer (its
    // validation-selected layer unless layer_policy is fixed).
    std::vector<std::string> models;
    ProtocolId protocol;
    Strategy strategy = Strategy::mean_diff;
};

struct SampleEfficiencyConfig {
    std::vector<std::size_t> ns{10, 25, 50, 75, 100};
    int n_subsamples = 5;
    ProtocolId protocol;
};

struct ExperimentConfig {
    std::vector<ModelEntry> models;
    std::vector<ProtocolId> protocols{ProtocolId{}};
    std::vector<Strategy> strategies{Strategy::mean_diff, Strategy::soft_auc,        Strategy::pc1,
                                     Strategy::theta_normative, Strategy::theta_twoclass, Strategy::random};
    double fpr_target = 0.01;
    BootstrapOptions bootstrap{};
    LayerPolicy layer_policy;
    std::uint64_t seed = 42;
    SoftAucOptions soft_auc;
    bool layer_profiles = true;
    bool ood = true;
    std::optional<TransferConfig> transfer;
    std::optional<SampleEfficiencyConfig> sample_efficiency;

    static ExperimentConfig from_json(const nlohmann::json& doc);
    [[nodiscard]] nlohmann::json to_json() const;
    /// SHA-256 of the canonical (sorted-key, compact) JSON form, hex encoded.
    [[nodiscard]] std::string hash() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

// --- layer selection -------------------------------------------------------

struct LayerData {
    std::uint32_t layer = 0;
    ActivationSet fit;
    ActivationSet val;
};

struct LayerScore {
    std::uint32_t layer = 0;
    std::optional<double> auroc;  // empty when the fit was degenerate
};

struct LayerSelection {
    std::uint32_t layer = 0;
    double val_auroc = 0.0;
    std::vector<LayerScore> profile;
};

/// Mean difference fitted on fit and scored on val at every layer; the
/// layer with the highest validation AUROC wins, ties to the lowest index.
LayerSelection select_layer(const std::vector<LayerData>& layers);

/// Loads fit/val caches for every layer under root/protocol and selects.
LayerSelection select_layer(const std::filesystem::path& root, const ProtocolId& protocol);

// --- detection grid --------------------------------------------------------

struct Cell {
    std::string model_id;
    std::string protocol;
    std::uint32_t layer = 0;
    Strategy strategy = Strategy::mean_diff;
    std::optional<RocSummary> summary;
    bool sign_corrected = false;
    std::string error;  // set when the cell failed
    std::optional<Direction> direction;
    ScoreSet scores;  // eval scores after any sign correction
};

struct StrategyProfile {
    std::string model_id;
    std::string protocol;
    Strategy strategy = Strategy::mean_diff;
    std::vector<LayerScore> profile;  // effective AUROC on eval, fitted per layer
};

struct SelectionRecord {
    std::string model_id;
    std::string protocol;
    LayerSelection selection;
};

struct TransferCell {
    std::string source;
    std::string target;
    double auroc_raw = 0.5;
    double auroc_effective = 0.5;
    double tpr = 0.0;
};

struct TransferMatrix {
    std::string protocol;
    std::uint32_t layer = 0;
    std::vector<std::string> models;
    std::vector<TransferCell> cells;  // row-major, source outer

    [[nodiscard]] const TransferCell& at(std::size_t source, std::size_t target) const {
        return cells[source * models.size() + target];
    }
};

struct OodCell {
    std::string harm_source;
    std::string benign_source;
    std::optional<double> auroc_effective;  // empty: cell absent
    std::optional<double> tpr;
};

struct OodTable {
    std::string model_id;
    std::string protocol;
    Strategy strategy = Strategy::mean_diff;
    std::vector<OodCell> cells;
};

struct EfficiencyPoint {
    std::size_t n = 0;
    Strategy strategy = Strategy::mean_diff;
    double auroc_mean = 0.0;
    double auroc_std = 0.0;
    double tpr_mean = 0.0;
    double tpr_std = 0.0;
    std::vector<double> aurocs;  // per subsample
    std::vector<double> tprs;
};

struct EfficiencyCurve {
    std::string model_id;
    std::string protocol;
    std::uint32_t layer = 0;
    std::vector<EfficiencyPoint> points;
    std::string error;
};

struct ExperimentReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<SelectionRecord> selections;
    std::vector<Cell> cells;
    std::vector<StrategyProfile> profiles;
    std::vector<TransferMatrix> transfer;
    std::vector<OodTable> ood;
    std::vector<EfficiencyCurve> sample_efficiency;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Effective AUROC and TPR for every (harm source, benign source) pair.
/// Axes default to the sources present among harmful and benign rows; a
/// cell without rows of both classes is marked absent.
OodTable ood_breakdown(const ScoreSet& scores, double fpr_target = 0.01,
                       std::vector<std::string> harm_sources = {}, std::vector<std::string> benign_sources = {});

/// k x k matrix: source direction i applied to target eval set j. Raw AUROC
/// is reported without sign correction.
TransferMatrix cross_variant_transfer(const std::vector<Direction>& directions,
                                      const std::vector<ActivationSet>& target_evals, double fpr_target = 0.01);

struct SampleEfficiencyOptions {
    std::vector<std::size_t> ns{10, 25, 50, 75, 100};
    int n_subsamples = 5;
    std::uint64_t seed = 42;
    double fpr_target = 0.01;
    SoftAucOptions soft_auc;
};

/// For each n, draws n rows per class from fit without replacement,
/// n_subsamples times, fits mean difference and soft-AUC and evaluates on eval.
std::vector<EfficiencyPoint> sample_efficiency(const ActivationSet& fit, const ActivationSet& eval,
                                               const SampleEfficiencyOptions& opts);

/// Runs the configured grid. Per-cell failures are recorded, not thrown;
/// missing caches for a whole (model, protocol) are recorded on every cell of it.
ExperimentReport run_detection_suite(const ExperimentConfig& config);

/// Writes report.json, CSV tables, fitted directions and run_meta.json
/// (the only file carrying wall-clock time) into out_dir.
void write_report(const ExperimentReport& report, const std::filesystem::path& out_dir);

// Section serializers shared by write_report and the CLI.
nlohmann::json to_json(const TransferMatrix& t);
nlohmann::json to_json(const OodTable& t);
nlohmann::json to_json(const EfficiencyCurve& c);
nlohmann::json to_json(const LayerSelection& s);
void write_transfer_csv(const std::vector<TransferMatrix>& matrices, std::ostream& out);
void write_ood_csv(const std::vector<OodTable>& tables, std::ostream& out);
void write_efficiency_csv(const std::vector<EfficiencyCurve>& curves, std::ostream& out);
void write_profile_csv(const LayerSelection& s, std::ostream& out);

}  // namespace harmprobe::runner

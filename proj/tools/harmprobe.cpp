// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Exit codes: 0 success, 2 usage or configuration
// error, 3 missing or unreadable cache, 4 degenerate data, 1 anything else.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "harmprobe/activation_store.hpp"
#include "harmprobe/direction_fit.hpp"
#include "harmprobe/error.hpp"
#include "harmprobe/experiment_runner.hpp"
#include "harmprobe/geometry_lab.hpp"
#include "harmprobe/metrics.hpp"
#include "harmprobe/synthetic_oracle.hpp"

namespace fs = std::filesystem;
using namespace harmprobe;
using nlohmann::json;

namespace {

struct Globals {
    std::uint64_t seed = 42;
    double fpr = 0.01;
    int bootstrap_n = 1000;
    std::string format = "json";
};

int exit_code(ErrorCode code) {
    switch (code) {
        case ErrorCode::config:
        case ErrorCode::invalid_argument:
        case ErrorCode::shape_mismatch:
            return 2;
        case ErrorCode::missing_cache:
        case ErrorCode::io:
        case ErrorCode::bad_magic:
        case ErrorCode::unsupported_version:
        case ErrorCode::malformed_header:
        case ErrorCode::invalid_dimension:
        case ErrorCode::unknown_dtype:
        case ErrorCode::length_mismatch:
            return 3;
        case ErrorCode::degenerate:
        case ErrorCode::non_finite:
            return 4;
    }
    return 1;
}

// Writes to `path`, or to stdout when path is empty or "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (path.empty() || path == "-") return;
        if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
        file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
        if (!*file_) throw Error(ErrorCode::io, "cannot open " + path + " for writing");
    }
    std::ostream& stream() { return file_ ? *file_ : std::cout; }

private:
    std::unique_ptr<std::ofstream> file_;
};

void emit_json(const json& j, const std::string& path) { Output(path).stream() << j.dump(2) << '\n'; }

ActivationSet read_existing(const std::string& path) {
    if (!fs::exists(path)) throw Error(ErrorCode::missing_cache, "missing cache: " + path);
    return read_cache(path);
}

Direction load_existing_direction(const std::string& path) {
    if (!fs::exists(path)) throw Error(ErrorCode::io, "missing direction file: " + path);
    return load_direction(path);
}

BootstrapOptions bootstrap(const Globals& g) {
    BootstrapOptions b;
    b.n_resamples = g.bootstrap_n;
    b.seed = g.seed;
    b.fpr_target = g.fpr;
    return b;
}

void write_summary_csv(const RocSummary& s, std::ostream& out) {
    out << "auroc_raw,auroc_effective,auroc_lo,auroc_hi,tpr,tpr_lo,tpr_hi,fpr_target,n_pos,n_neg\n";
    out << s.auroc_raw << ',' << s.auroc_effective << ',' << s.ci_auroc.lo << ',' << s.ci_auroc.hi << ','
        << s.tpr_at_fpr << ',' << s.ci_tpr.lo << ',' << s.ci_tpr.hi << ',' << s.fpr_target << ',' << s.n_pos << ','
        << s.n_neg << '\n';
}

geometry::Splits load_splits(const std::string& fit, const std::string& val, const std::string& eval) {
    return {read_existing(fit), read_existing(val), read_existing(eval)};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"harmprobe: linear harmfulness directions on cached activations"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
    app.add_option("--fpr", g.fpr, "False-positive-rate target")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    app.add_option("--bootstrap-n", g.bootstrap_n, "Bootstrap resamples (0 disables)")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    app.add_option("--format", g.format, "Output format")->capture_default_str()->check(CLI::IsMember({"json", "csv"}));
    CLI::Option* seed_opt = app.get_option("--seed");
    CLI::Option* fpr_opt = app.get_option("--fpr");
    CLI::Option* boot_opt = app.get_option("--bootstrap-n");

    std::string out, cache, direction_path, strategy_name = "mean_diff";
    int max_steps = 300;

    auto* fit = app.add_subcommand("fit", "Fit a direction on a fit-split cache");
    fit->add_option("--strategy", strategy_name, "mean_diff|soft_auc|pc1|theta_normative|theta_twoclass|random")
        ->capture_default_str();
    fit->add_option("--cache", cache, "Fit-split ACTV1 cache")->required();
    fit->add_option("--out", out, "Direction JSON (stdout if omitted)");
    fit->add_option("--max-steps", max_steps, "Surrogate ascent step cap")->capture_default_str();

    auto* score_cmd = app.add_subcommand("score", "Score a cache with a direction");
    score_cmd->add_option("--direction", direction_path)->required();
    score_cmd->add_option("--cache", cache)->required();
    score_cmd->add_option("--out", out, "Scores CSV (stdout if omitted)");

    auto* eval = app.add_subcommand("eval", "AUROC, TPR and bootstrap intervals on an eval cache");
    eval->add_option("--direction", direction_path)->required();
    eval->add_option("--cache", cache)->required();
    eval->add_option("--out", out);

    std::string root, protocol_name = "mp/raw";
    auto* layers = app.add_subcommand("layers", "Validation-based layer selection over a cache root");
    layers->add_option("--root", root, "Model cache root")->required();
    layers->add_option("--protocol", protocol_name)->capture_default_str();
    layers->add_option("--out", out);

    auto* geometry_cmd = app.add_subcommand("geometry", "Direction angles and projection experiments");
    geometry_cmd->require_subcommand(1);
    std::vector<std::string> direction_paths;
    auto* angles = geometry_cmd->add_subcommand("angles", "Pairwise unsigned angles between directions");
    angles->add_option("--direction", direction_paths, "Direction JSON files, grouped by model_id")->required();
    angles->add_option("--out", out);

    auto* project = geometry_cmd->add_subcommand("project", "Project a direction out of a cache");
    project->add_option("--direction", direction_path)->required();
    project->add_option("--cache", cache)->required();
    project->add_option("--out", out, "Projected ACTV1 cache")->required();

    std::string fit_path, val_path, eval_path, remove_path;
    auto* refit = geometry_cmd->add_subcommand("refit", "Project out and refit soft-AUC");
    refit->add_option("--fit", fit_path)->required();
    refit->add_option("--val", val_path)->required();
    refit->add_option("--eval", eval_path)->required();
    refit->add_option("--remove", remove_path, "Direction to remove (default: the target's own mean difference)");
    refit->add_option("--out", out);

    std::vector<std::string> targets;
    auto* transfer = app.add_subcommand("transfer", "Source directions applied to target eval caches");
    transfer->add_option("--direction", direction_paths, "One direction per model, in matrix order")->required();
    transfer->add_option("--target", targets, "One eval cache per model, same order")->required();
    transfer->add_option("--out", out);

    auto* ood = app.add_subcommand("ood", "Per source-pair breakdown on an eval cache");
    ood->add_option("--direction", direction_path)->required();
    ood->add_option("--cache", cache)->required();
    ood->add_option("--out", out);

    std::vector<std::size_t> ns{10, 25, 50, 75, 100};
    int subsamples = 5;
    auto* eff = app.add_subcommand("sample-eff", "Sample-efficiency curve for mean difference and soft-AUC");
    eff->add_option("--fit", fit_path)->required();
    eff->add_option("--eval", eval_path)->required();
    eff->add_option("--n", ns, "Per-class sample sizes")->capture_default_str();
    eff->add_option("--subsamples", subsamples)->capture_default_str();
    eff->add_option("--out", out);

    synth::SynthModelSpec synth_spec;
    std::string variant_name = "synthetic";
    auto* synth_cmd = app.add_subcommand("synth", "Write a planted-signal synthetic model cache");
    synth_cmd->add_option("--out", out, "Cache root")->required();
    synth_cmd->add_option("--model-id", synth_spec.model_id)->capture_default_str();
    synth_cmd->add_option("--variant", variant_name)->capture_default_str();
    synth_cmd->add_option("--protocol", protocol_name)->capture_default_str();
    synth_cmd->add_option("--dim", synth_spec.dim)->capture_default_str();
    synth_cmd->add_option("--layers", synth_spec.layers)->capture_default_str();
    synth_cmd->add_option("--n-fit", synth_spec.n_fit, "Rows per class")->capture_default_str();
    synth_cmd->add_option("--n-val", synth_spec.n_val)->capture_default_str();
    synth_cmd->add_option("--n-eval", synth_spec.n_eval)->capture_default_str();
    synth_cmd->add_option("--delta", synth_spec.delta)->capture_default_str();
    synth_cmd->add_option("--sigma", synth_spec.sigma)->capture_default_str();
    synth_cmd->add_flag("--ramp", synth_spec.ramp, "Separation grows linearly with depth");
    synth_cmd->add_option("--planted-seed", synth_spec.planted_seed)->capture_default_str();
    synth_cmd->add_option("--offset-norm", synth_spec.offset_norm)->capture_default_str();

    std::string config_path;
    auto* run = app.add_subcommand("run", "Run an experiment configuration into a report directory");
    run->add_option("--config", config_path)->required();
    run->add_option("--out", out, "Report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const bool csv = g.format == "csv";
    try {
        if (*fit) {
            const auto set = read_existing(cache);
            SoftAucOptions opts;
            opts.max_steps = max_steps;
            const auto d = fit_strategy(parse_strategy(strategy_name), set.with_label(Label::harmful),
                                        set.with_label(Label::benign), g.seed, opts);
            emit_json(d.to_json(), out);
        } else if (*score_cmd) {
            const auto s = score(read_existing(cache), load_existing_direction(direction_path));
            Output o(out);
            write_scores_csv(s, o.stream());
        } else if (*eval) {
            const auto s = summarize(score(read_existing(cache), load_existing_direction(direction_path)), bootstrap(g));
            if (csv) {
                Output o(out);
                write_summary_csv(s, o.stream());
            } else {
                emit_json(s.to_json(), out);
            }
        } else if (*layers) {
            const auto sel = runner::select_layer(root, ProtocolId::parse(protocol_name));
            if (csv) {
                Output o(out);
                runner::write_profile_csv(sel, o.stream());
            } else {
                emit_json(runner::to_json(sel), out);
            }
        } else if (*angles) {
            std::map<std::string, geometry::ModelDirections> grouped;
            std::vector<std::string> order;
            for (const auto& p : direction_paths) {
                const auto d = load_existing_direction(p);
                auto [it, inserted] = grouped.try_emplace(d.model_id);
                if (inserted) {
                    it->second.model_id = d.model_id;
                    order.push_back(d.model_id);
                }
                it->second.directions.push_back({std::string(to_string(d.strategy)), d.w});
            }
            std::vector<geometry::ModelDirections> models;
            for (const auto& id : order) models.push_back(grouped.at(id));
            const auto report = geometry::angle_report(models);
            if (csv) {
                Output o(out);
                report.write_csv(o.stream());
            } else {
                emit_json(report.to_json(), out);
            }
        } else if (*project) {
            const auto d = load_existing_direction(direction_path);
            write_cache(geometry::project_out(read_existing(cache), d.w), out);
        } else if (*refit) {
            const auto splits = load_splits(fit_path, val_path, eval_path);
            geometry::RefitOptions opts;
            opts.seed = g.seed;
            opts.bootstrap = bootstrap(g);
            const auto report = remove_path.empty()
                                    ? geometry::self_projection_experiment(splits, opts)
                                    : geometry::cross_projection_experiment(load_existing_direction(remove_path),
                                                                            {splits}, opts)[0];
            if (csv) {
                Output o(out);
                geometry::RefitReport::write_csv_header(o.stream());
                report.write_csv_rows(o.stream());
            } else {
                emit_json(report.to_json(), out);
            }
        } else if (*transfer) {
            if (direction_paths.size() != targets.size()) {
                throw Error(ErrorCode::invalid_argument, "transfer needs one --target per --direction");
            }
            std::vector<Direction> dirs;
            std::vector<ActivationSet> evals;
            for (const auto& p : direction_paths) dirs.push_back(load_existing_direction(p));
            for (const auto& p : targets) evals.push_back(read_existing(p));
            const auto m = runner::cross_variant_transfer(dirs, evals, g.fpr);
            if (csv) {
                Output o(out);
                runner::write_transfer_csv({m}, o.stream());
            } else {
                emit_json(runner::to_json(m), out);
            }
        } else if (*ood) {
            const auto d = load_existing_direction(direction_path);
            auto table = runner::ood_breakdown(score(read_existing(cache), d), g.fpr);
            table.model_id = d.model_id;
            table.protocol = d.protocol.str();
            table.strategy = d.strategy;
            if (csv) {
                Output o(out);
                runner::write_ood_csv({table}, o.stream());
            } else {
                emit_json(runner::to_json(table), out);
            }
        } else if (*eff) {
            const auto fit_set = read_existing(fit_path);
            runner::SampleEfficiencyOptions opts;
            opts.ns = ns;
            opts.n_subsamples = subsamples;
            opts.seed = g.seed;
            opts.fpr_target = g.fpr;
            runner::EfficiencyCurve curve;
            curve.model_id = fit_set.meta().model_id;
            curve.protocol = fit_set.meta().protocol.str();
            curve.layer = fit_set.meta().layer;
            curve.points = runner::sample_efficiency(fit_set, read_existing(eval_path), opts);
            if (csv) {
                Output o(out);
                runner::write_efficiency_csv({curve}, o.stream());
            } else {
                emit_json(runner::to_json(curve), out);
            }
        } else if (*synth_cmd) {
            synth_spec.seed = g.seed;
            synth_spec.variant = parse_variant(variant_name);
            synth_spec.protocol = ProtocolId::parse(protocol_name);
            synth::write_model(synth_spec, out);
        } else if (*run) {
            auto config = runner::load_config(config_path);
            // Flags given explicitly override the configuration file.
            if (seed_opt->count() > 0) config.seed = config.bootstrap.seed = g.seed;
            if (fpr_opt->count() > 0) config.fpr_target = g.fpr;
            if (boot_opt->count() > 0) config.bootstrap.n_resamples = g.bootstrap_n;
            runner::write_report(runner::run_detection_suite(config), out);
        }
    } catch (const Error& e) {
        std::cerr << "harmprobe: " << to_string(e.code()) << ": " << e.what() << '\n';
        return exit_code(e.code());
    } catch (const json::exception& e) {
        std::cerr << "harmprobe: parse error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "harmprobe: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

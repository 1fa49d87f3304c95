// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "harmprobe/error.hpp"
#include "harmprobe/experiment_runner.hpp"

namespace harmprobe::runner {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json profile_json(const std::vector<LayerScore>& profile) {
    json out = json::array();
    for (const auto& p : profile) out.push_back({{"layer", p.layer}, {"auroc", optional_number(p.auroc)}});
    return out;
}

std::string file_stem(const std::string& model, const std::string& protocol, Strategy s) {
    std::string out = model + "__" + protocol + "__" + std::string(to_string(s));
    for (char& c : out) {
        if (c == '/' || c == ':' || c == ' ' || c == '\\') c = '-';
    }
    return out;
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + path.string() + "'");
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string("NA"); }

}  // namespace

json to_json(const TransferMatrix& t) {
    json cells = json::array();
    for (const auto& c : t.cells) {
        cells.push_back({{"source", c.source},
                         {"target", c.target},
                         {"auroc_raw", c.auroc_raw},
                         {"auroc_effective", c.auroc_effective},
                         {"tpr", c.tpr}});
    }
    return {{"protocol", t.protocol}, {"layer", t.layer}, {"models", t.models}, {"cells", std::move(cells)}};
}

json to_json(const OodTable& t) {
    json cells = json::array();
    for (const auto& c : t.cells) {
        cells.push_back({{"harm_source", c.harm_source},
                         {"benign_source", c.benign_source},
                         {"auroc_effective", optional_number(c.auroc_effective)},
                         {"tpr", optional_number(c.tpr)}});
    }
    return {{"model_id", t.model_id}, {"protocol", t.protocol}, {"strategy", to_string(t.strategy)}, {"cells", std::move(cells)}};
}

json to_json(const EfficiencyCurve& c) {
    json pts = json::array();
    for (const auto& p : c.points) {
        pts.push_back({{"n", p.n},
                       {"strategy", to_string(p.strategy)},
                       {"auroc_mean", p.auroc_mean},
                       {"auroc_std", p.auroc_std},
                       {"tpr_mean", p.tpr_mean},
                       {"tpr_std", p.tpr_std},
                       {"aurocs", p.aurocs},
                       {"tprs", p.tprs}});
    }
    json j = {{"model_id", c.model_id}, {"protocol", c.protocol}, {"layer", c.layer}, {"points", std::move(pts)}};
    if (!c.error.empty()) j["error"] = c.error;
    return j;
}

json to_json(const LayerSelection& s) {
    return {{"selected_layer", s.layer}, {"val_auroc", s.val_auroc}, {"profile", profile_json(s.profile)}};
}

void write_transfer_csv(const std::vector<TransferMatrix>& matrices, std::ostream& out) {
    out << "protocol,layer,source,target,auroc_raw,auroc_effective,tpr\n";
    for (const auto& t : matrices) {
        for (const auto& c : t.cells) {
            out << t.protocol << ',' << t.layer << ',' << c.source << ',' << c.target << ',' << fmt(c.auroc_raw) << ','
                << fmt(c.auroc_effective) << ',' << fmt(c.tpr) << '\n';
        }
    }
}

void write_ood_csv(const std::vector<OodTable>& tables, std::ostream& out) {
    out << "model,protocol,strategy,harm_source,benign_source,auroc_effective,tpr\n";
    for (const auto& t : tables) {
        for (const auto& c : t.cells) {
            out << t.model_id << ',' << t.protocol << ',' << to_string(t.strategy) << ',' << c.harm_source << ','
                << c.benign_source << ',' << fmt(c.auroc_effective) << ',' << fmt(c.tpr) << '\n';
        }
    }
}

void write_efficiency_csv(const std::vector<EfficiencyCurve>& curves, std::ostream& out) {
    out << "model,protocol,layer,strategy,n,auroc_mean,auroc_std,tpr_mean,tpr_std\n";
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            out << c.model_id << ',' << c.protocol << ',' << c.layer << ',' << to_string(p.strategy) << ',' << p.n << ','
                << fmt(p.auroc_mean) << ',' << fmt(p.auroc_std) << ',' << fmt(p.tpr_mean) << ',' << fmt(p.tpr_std) << '\n';
        }
    }
}

void write_profile_csv(const LayerSelection& s, std::ostream& out) {
    out << "layer,auroc\n";
    for (const auto& p : s.profile) out << p.layer << ',' << fmt(p.auroc) << '\n';
}

json ExperimentReport::to_json() const {
    json sel = json::array();
    for (const auto& s : selections) {
        sel.push_back({{"model_id", s.model_id},
                       {"protocol", s.protocol},
                       {"selected_layer", s.selection.layer},
                       {"val_auroc", s.selection.val_auroc},
                       {"profile", profile_json(s.selection.profile)}});
    }

    json cells_json = json::array();
    for (const auto& c : cells) {
        json j = {{"model_id", c.model_id},
                  {"protocol", c.protocol},
                  {"layer", c.layer},
                  {"strategy", to_string(c.strategy)},
                  {"status", c.summary ? "ok" : "error"}};
        if (c.summary) {
            j["summary"] = c.summary->to_json();
            j["sign_corrected"] = c.sign_corrected;
            j["direction_file"] = "directions/" + file_stem(c.model_id, c.protocol, c.strategy) + ".json";
        } else {
            j["error"] = c.error;
        }
        cells_json.push_back(std::move(j));
    }

    json profiles_json = json::array();
    for (const auto& p : profiles) {
        profiles_json.push_back({{"model_id", p.model_id},
                                 {"protocol", p.protocol},
                                 {"strategy", to_string(p.strategy)},
                                 {"profile", profile_json(p.profile)}});
    }

    json transfer_json = json::array();
    for (const auto& t : transfer) transfer_json.push_back(harmprobe::runner::to_json(t));
    json ood_json = json::array();
    for (const auto& t : ood) ood_json.push_back(harmprobe::runner::to_json(t));
    json eff_json = json::array();
    for (const auto& c : sample_efficiency) eff_json.push_back(harmprobe::runner::to_json(c));

    return {{"provenance", {{"config_hash", config_hash}, {"seed", seed}}},
            {"layer_selection", std::move(sel)},
            {"cells", std::move(cells_json)},
            {"layer_profiles", std::move(profiles_json)},
            {"transfer", std::move(transfer_json)},
            {"ood", std::move(ood_json)},
            {"sample_efficiency", std::move(eff_json)}};
}

void write_report(const ExperimentReport& report, const fs::path& out_dir) {
    fs::create_directories(out_dir / "directions");
    fs::create_directories(out_dir / "scores");

    open_out(out_dir / "report.json") << report.to_json().dump(2) << '\n';

    {
        auto out = open_out(out_dir / "summary.csv");
        out << "model,protocol,layer,strategy,status,auroc_raw,auroc_effective,auroc_lo,auroc_hi,tpr,tpr_lo,tpr_hi,"
               "sign_corrected,error\n";
        for (const auto& c : report.cells) {
            out << c.model_id << ',' << c.protocol << ',' << c.layer << ',' << to_string(c.strategy) << ',';
            if (c.summary) {
                const auto& s = *c.summary;
                out << "ok," << fmt(s.auroc_raw) << ',' << fmt(s.auroc_effective) << ',' << fmt(s.ci_auroc.lo) << ','
                    << fmt(s.ci_auroc.hi) << ',' << fmt(s.tpr_at_fpr) << ',' << fmt(s.ci_tpr.lo) << ','
                    << fmt(s.ci_tpr.hi) << ',' << (c.sign_corrected ? "true" : "false") << ",\n";
            } else {
                std::string err = c.error;
                for (char& ch : err) {
                    if (ch == ',' || ch == '\n') ch = ';';
                }
                out << "error,,,,,,,,," << err << '\n';
            }
        }
    }

    for (const auto& c : report.cells) {
        if (!c.direction) continue;
        const auto stem = file_stem(c.model_id, c.protocol, c.strategy);
        save_direction(*c.direction, out_dir / "directions" / (stem + ".json"));
        auto out = open_out(out_dir / "scores" / (stem + ".csv"));
        write_scores_csv(c.scores, out);
    }

    {
        auto out = open_out(out_dir / "layer_profiles.csv");
        out << "model,protocol,kind,strategy,layer,auroc\n";
        for (const auto& s : report.selections) {
            for (const auto& p : s.selection.profile) {
                out << s.model_id << ',' << s.protocol << ",validation,mean_diff," << p.layer << ',' << fmt(p.auroc) << '\n';
            }
        }
        for (const auto& prof : report.profiles) {
            for (const auto& p : prof.profile) {
                out << prof.model_id << ',' << prof.protocol << ",eval," << to_string(prof.strategy) << ',' << p.layer
                    << ',' << fmt(p.auroc) << '\n';
            }
        }
    }

    if (!report.transfer.empty()) {
        auto out = open_out(out_dir / "transfer.csv");
        write_transfer_csv(report.transfer, out);
    }
    if (!report.ood.empty()) {
        auto out = open_out(out_dir / "ood.csv");
        write_ood_csv(report.ood, out);
    }
    if (!report.sample_efficiency.empty()) {
        auto out = open_out(out_dir / "sample_efficiency.csv");
        write_efficiency_csv(report.sample_efficiency, out);
    }

    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    open_out(out_dir / "run_meta.json") << json{{"config_hash", report.config_hash}, {"seed", report.seed}, {"finished_at", stamp}}.dump(2)
                                        << '\n';
}

}  // namespace harmprobe::runner

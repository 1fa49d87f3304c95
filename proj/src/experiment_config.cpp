// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <fstream>

#include <openssl/evp.h>

#include "harmprobe/error.hpp"
#include "harmprobe/experiment_runner.hpp"

namespace harmprobe::runner {

using nlohmann::json;

namespace {

SoftAucOptions parse_soft_auc(const json& j) {
    SoftAucOptions o;
    o.step = j.value("step", o.step);
    o.max_steps = j.value("max_steps", o.max_steps);
    o.grad_tol = j.value("grad_tol", o.grad_tol);
    o.patience = j.value("patience", o.patience);
    return o;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    ExperimentConfig c;
    try {
        for (const auto& m : doc.at("models")) {
            ModelEntry e;
            e.model_id = m.at("model_id").get<std::string>();
            e.variant = parse_variant(m.value("variant", std::string("base")));
            e.cache_root = m.at("cache_root").get<std::string>();
            c.models.push_back(std::move(e));
        }
        if (auto it = doc.find("protocols"); it != doc.end()) {
            c.protocols.clear();
            for (const auto& p : *it) c.protocols.push_back(ProtocolId::parse(p.get<std::string>()));
        }
        if (auto it = doc.find("strategies"); it != doc.end()) {
            c.strategies.clear();
            for (const auto& s : *it) c.strategies.push_back(parse_strategy(s.get<std::string>()));
        }
        c.fpr_target = doc.value("fpr_target", c.fpr_target);
        c.seed = doc.value("seed", c.seed);
        c.bootstrap.seed = c.seed;
        if (auto it = doc.find("bootstrap"); it != doc.end()) {
            c.bootstrap.n_resamples = it->value("n_resamples", c.bootstrap.n_resamples);
            c.bootstrap.level = it->value("level", c.bootstrap.level);
            c.bootstrap.seed = it->value("seed", c.bootstrap.seed);
        }
        c.bootstrap.fpr_target = c.fpr_target;
        if (auto it = doc.find("layer_policy"); it != doc.end()) {
            if (it->is_string()) {
                if (it->get<std::string>() != "validation_argmax") {
                    throw Error(ErrorCode::config, "layer_policy must be \"validation_argmax\" or {\"fixed\": n}");
                }
            } else {
                c.layer_policy.fixed = true;
                c.layer_policy.layer = it->at("fixed").get<std::uint32_t>();
            }
        }
        if (auto it = doc.find("soft_auc"); it != doc.end()) c.soft_auc = parse_soft_auc(*it);
        c.layer_profiles = doc.value("layer_profiles", c.layer_profiles);
        c.ood = doc.value("ood", c.ood);
        if (auto it = doc.find("transfer"); it != doc.end() && !it->is_null()) {
            TransferConfig t;
            t.models = it->at("models").get<std::vector<std::string>>();
            t.protocol = ProtocolId::parse(it->value("protocol", std::string("mp/raw")));
            t.strategy = parse_strategy(it->value("strategy", std::string("mean_diff")));
            c.transfer = std::move(t);
        }
        if (auto it = doc.find("sample_efficiency"); it != doc.end() && !it->is_null()) {
            SampleEfficiencyConfig s;
            s.ns = it->value("ns", s.ns);
            s.n_subsamples = it->value("n_subsamples", s.n_subsamples);
            s.protocol = ProtocolId::parse(it->value("protocol", std::string("mp/raw")));
            c.sample_efficiency = std::move(s);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::config, std::string("malformed experiment config: ") + e.what());
    } catch (const Error& e) {
        throw Error(ErrorCode::config, e.what());
    }

    if (c.models.empty()) throw Error(ErrorCode::config, "config lists no models");
    if (c.protocols.empty()) throw Error(ErrorCode::config, "config lists no protocols");
    if (c.strategies.empty()) throw Error(ErrorCode::config, "config lists no strategies");
    if (!(c.fpr_target > 0.0 && c.fpr_target < 1.0)) throw Error(ErrorCode::config, "fpr_target must lie in (0, 1)");
    if (c.bootstrap.n_resamples < 0) throw Error(ErrorCode::config, "bootstrap.n_resamples must be >= 0");
    if (c.transfer) {
        for (const auto& id : c.transfer->models) {
            const bool known = std::any_of(c.models.begin(), c.models.end(), [&](const auto& m) { return m.model_id == id; });
            if (!known) throw Error(ErrorCode::config, "transfer references unknown model '" + id + "'");
        }
    }
    return c;
}

json ExperimentConfig::to_json() const {
    json models_json = json::array();
    for (const auto& m : models) {
        models_json.push_back({{"model_id", m.model_id}, {"variant", to_string(m.variant)}, {"cache_root", m.cache_root.string()}});
    }
    json protocols_json = json::array();
    for (const auto& p : protocols) protocols_json.push_back(p.str());
    json strategies_json = json::array();
    for (auto s : strategies) strategies_json.push_back(to_string(s));

    json j = {{"models", std::move(models_json)},
              {"protocols", std::move(protocols_json)},
              {"strategies", std::move(strategies_json)},
              {"fpr_target", fpr_target},
              {"bootstrap", {{"n_resamples", bootstrap.n_resamples}, {"level", bootstrap.level}, {"seed", bootstrap.seed}}},
              {"seed", seed},
              {"soft_auc",
               {{"step", soft_auc.step},
                {"max_steps", soft_auc.max_steps},
                {"grad_tol", soft_auc.grad_tol},
                {"patience", soft_auc.patience}}},
              {"layer_profiles", layer_profiles},
              {"ood", ood}};
    j["layer_policy"] = layer_policy.fixed ? json{{"fixed", layer_policy.layer}} : json("validation_argmax");
    if (transfer) {
        j["transfer"] = {{"models", transfer->models},
                         {"protocol", transfer->protocol.str()},
                         {"strategy", to_string(transfer->strategy)}};
    }
    if (sample_efficiency) {
        j["sample_efficiency"] = {{"ns", sample_efficiency->ns},
                                  {"n_subsamples", sample_efficiency->n_subsamples},
                                  {"protocol", sample_efficiency->protocol.str()}};
    }
    return j;
}

std::string ExperimentConfig::hash() const {
    const std::string canonical = to_json().dump();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(canonical.data(), canonical.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error(ErrorCode::io, "SHA-256 digest failed");
    }
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::config, "cannot open config '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
    }
    auto config = ExperimentConfig::from_json(doc);
    // Relative cache roots are taken relative to the config file.
    for (auto& m : config.models) {
        if (m.cache_root.is_relative()) m.cache_root = (path.parent_path() / m.cache_root).lexically_normal();
    }
    return config;
}

}  // namespace harmprobe::runner

// SPDX-License-Identifier: Apache-2.0

#include "harmprobe/experiment_runner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "harmprobe/error.hpp"

namespace harmprobe::runner {

namespace {

struct Moments {
    double mean = 0.0;
    double std = 0.0;
};

std::string describe(const Error& e) { return std::string(to_string(e.code())) + ": " + e.what(); }

Moments moments(const std::vector<double>& v) {
    Moments m;
    if (v.empty()) return m;
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    if (v.size() > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - m.mean) * (x - m.mean);
        m.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
    }
    return m;
}

std::optional<double> val_auroc(const LayerData& d) {
    try {
        const auto w = fit_mean_diff(d.fit.with_label(Label::harmful), d.fit.with_label(Label::benign));
        return auroc(score(d.val, w));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::degenerate || e.code() == ErrorCode::invalid_argument) return std::nullopt;
        throw;
    }
}

/// All caches for one (model, protocol), loaded once.
struct ModelProtocolData {
    std::vector<std::uint32_t> layers;
    std::map<std::uint32_t, LayerData> fit_val;
    std::map<std::uint32_t, ActivationSet> eval;
};

ModelProtocolData load_model_protocol(const ModelEntry& model, const ProtocolId& protocol) {
    ModelProtocolData d;
    d.layers = list_layers(model.cache_root, protocol);
    if (d.layers.empty()) {
        throw Error(ErrorCode::missing_cache, "no caches for " + model.model_id + " under " +
                                                  (model.cache_root / protocol.str()).string());
    }
    for (auto layer : d.layers) {
        LayerData ld;
        ld.layer = layer;
        ld.fit = read_cache(cache_path(model.cache_root, protocol, layer, Split::fit));
        ld.val = read_cache(cache_path(model.cache_root, protocol, layer, Split::val));
        d.fit_val.emplace(layer, std::move(ld));
    }
    return d;
}

const ActivationSet& eval_at(ModelProtocolData& d, const ModelEntry& model, const ProtocolId& protocol,
                             std::uint32_t layer) {
    auto it = d.eval.find(layer);
    if (it == d.eval.end()) {
        it = d.eval.emplace(layer, read_cache(cache_path(model.cache_root, protocol, layer, Split::eval))).first;
    }
    return it->second;
}

LayerSelection choose_layer(const ModelProtocolData& d, const LayerPolicy& policy) {
    std::vector<LayerData> layers;
    for (const auto& [layer, ld] : d.fit_val) layers.push_back(ld);
    auto sel = select_layer(layers);
    if (policy.fixed) {
        if (!d.fit_val.contains(policy.layer)) {
            throw Error(ErrorCode::missing_cache, "fixed layer " + std::to_string(policy.layer) + " has no caches");
        }
        sel.layer = policy.layer;
        for (const auto& p : sel.profile) {
            if (p.layer == policy.layer) sel.val_auroc = p.auroc.value_or(0.5);
        }
    }
    return sel;
}

}  // namespace

// --- layer selection -------------------------------------------------------

LayerSelection select_layer(const std::vector<LayerData>& layers) {
    if (layers.empty()) throw Error(ErrorCode::invalid_argument, "layer selection needs at least one layer");
    std::vector<const LayerData*> ordered;
    for (const auto& l : layers) ordered.push_back(&l);
    std::sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) { return a->layer < b->layer; });

    LayerSelection sel;
    bool found = false;
    for (const auto* l : ordered) {
        const auto a = val_auroc(*l);
        sel.profile.push_back({l->layer, a});
        if (a && (!found || *a > sel.val_auroc)) {
            sel.layer = l->layer;
            sel.val_auroc = *a;
            found = true;
        }
    }
    if (!found) throw Error(ErrorCode::degenerate, "all layers degenerate: no layer admits a mean-difference fit");
    return sel;
}

LayerSelection select_layer(const std::filesystem::path& root, const ProtocolId& protocol) {
    ModelEntry m{"", Variant::base, root};
    const auto d = load_model_protocol(m, protocol);
    return choose_layer(d, LayerPolicy{});
}

// --- tables ----------------------------------------------------------------

OodTable ood_breakdown(const ScoreSet& scores, double fpr_target, std::vector<std::string> harm_sources,
                       std::vector<std::string> benign_sources) {
    auto collect = [&](Label label) {
        std::set<std::string> out;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores.labels[i] == label) out.insert(scores.sources[i]);
        }
        return std::vector<std::string>(out.begin(), out.end());
    };
    if (harm_sources.empty()) harm_sources = collect(Label::harmful);
    if (benign_sources.empty()) benign_sources = collect(Label::benign);

    OodTable table;
    for (const auto& hs : harm_sources) {
        for (const auto& bs : benign_sources) {
            OodCell cell{hs, bs, std::nullopt, std::nullopt};
            const auto sub = scores.filter([&](Label l, const std::string& src) {
                return (l == Label::harmful && src == hs) || (l == Label::benign && src == bs);
            });
            if (sub.count(Label::harmful) > 0 && sub.count(Label::benign) > 0) {
                cell.auroc_effective = effective_auroc(auroc(sub));
                cell.tpr = tpr_at_fpr(sub, fpr_target);
            }
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

TransferMatrix cross_variant_transfer(const std::vector<Direction>& directions,
                                      const std::vector<ActivationSet>& target_evals, double fpr_target) {
    if (directions.size() != target_evals.size()) {
        throw Error(ErrorCode::invalid_argument, "transfer needs one target eval set per source direction");
    }
    TransferMatrix m;
    if (directions.empty()) return m;
    m.protocol = directions.front().protocol.str();
    m.layer = directions.front().layer;
    for (std::size_t i = 0; i < directions.size(); ++i) {
        m.models.push_back(target_evals[i].meta().model_id.empty() ? directions[i].model_id
                                                                   : target_evals[i].meta().model_id);
    }
    for (std::size_t s = 0; s < directions.size(); ++s) {
        for (std::size_t t = 0; t < target_evals.size(); ++t) {
            if (directions[s].dim() != target_evals[t].dim()) {
                throw Error(ErrorCode::shape_mismatch, "transfer source and target differ in dimension");
            }
            const auto sc = score(target_evals[t], directions[s]);
            TransferCell c;
            c.source = m.models[s];
            c.target = m.models[t];
            c.auroc_raw = auroc(sc);
            c.auroc_effective = effective_auroc(c.auroc_raw);
            c.tpr = tpr_at_fpr(sc, fpr_target);
            m.cells.push_back(std::move(c));
        }
    }
    return m;
}

std::vector<EfficiencyPoint> sample_efficiency(const ActivationSet& fit, const ActivationSet& eval,
                                               const SampleEfficiencyOptions& opts) {
    const auto pos = fit.with_label(Label::harmful);
    const auto neg = fit.with_label(Label::benign);
    if (opts.n_subsamples < 1) throw Error(ErrorCode::invalid_argument, "n_subsamples must be >= 1");

    std::vector<EfficiencyPoint> out;
    for (std::size_t n : opts.ns) {
        if (n == 0 || n > pos.rows() || n > neg.rows()) {
            throw Error(ErrorCode::invalid_argument, "sample size " + std::to_string(n) + " exceeds the fit set (" +
                                                         std::to_string(std::min(pos.rows(), neg.rows())) +
                                                         " per class)");
        }
        EfficiencyPoint md;
        md.n = n;
        EfficiencyPoint opt;
        opt.n = n;
        opt.strategy = Strategy::soft_auc;
        for (int k = 0; k < opts.n_subsamples; ++k) {
            std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                              static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(k)};
            std::mt19937_64 rng(seq);
            auto draw = [&](const ActivationSet& s) {
                std::vector<std::size_t> idx(s.rows());
                std::iota(idx.begin(), idx.end(), std::size_t{0});
                std::shuffle(idx.begin(), idx.end(), rng);
                idx.resize(n);
                std::sort(idx.begin(), idx.end());
                return s.select(idx);
            };
            const auto p = draw(pos);
            const auto q = draw(neg);
            const auto w_md = fit_mean_diff(p, q);
            const auto w_opt = fit_soft_auc(p, q, w_md, opts.soft_auc);
            for (auto* pt : {&md, &opt}) {
                const auto sc = score(eval, pt == &md ? w_md : w_opt);
                pt->aurocs.push_back(effective_auroc(auroc(sc)));
                pt->tprs.push_back(tpr_at_fpr(sc, opts.fpr_target));
            }
        }
        for (auto* pt : {&md, &opt}) {
            const auto a = moments(pt->aurocs);
            const auto t = moments(pt->tprs);
            pt->auroc_mean = a.mean;
            pt->auroc_std = a.std;
            pt->tpr_mean = t.mean;
            pt->tpr_std = t.std;
        }
        out.push_back(std::move(md));
        out.push_back(std::move(opt));
    }
    return out;
}

// --- grid ------------------------------------------------------------------

ExperimentReport run_detection_suite(const ExperimentConfig& config) {
    ExperimentReport report;
    report.config_hash = config.hash();
    report.seed = config.seed;

    BootstrapOptions boot = config.bootstrap;
    boot.fpr_target = config.fpr_target;

    std::map<std::pair<std::string, std::string>, std::uint32_t> selected;

    for (const auto& model : config.models) {
        for (const auto& protocol : config.protocols) {
            const std::string proto = protocol.str();
            auto fail_all = [&](const std::string& why) {
                for (auto strategy : config.strategies) {
                    Cell c;
                    c.model_id = model.model_id;
                    c.protocol = proto;
                    c.strategy = strategy;
                    c.error = why;
                    report.cells.push_back(std::move(c));
                }
            };

            ModelProtocolData data;
            LayerSelection sel;
            try {
                data = load_model_protocol(model, protocol);
                sel = choose_layer(data, config.layer_policy);
                eval_at(data, model, protocol, sel.layer);
            } catch (const Error& e) {
                fail_all(describe(e));
                continue;
            }
            selected[{model.model_id, proto}] = sel.layer;
            report.selections.push_back({model.model_id, proto, sel});

            const auto& fit = data.fit_val.at(sel.layer).fit;
            const auto& eval = data.eval.at(sel.layer);
            const auto pos = fit.with_label(Label::harmful);
            const auto neg = fit.with_label(Label::benign);

            for (auto strategy : config.strategies) {
                Cell c;
                c.model_id = model.model_id;
                c.protocol = proto;
                c.layer = sel.layer;
                c.strategy = strategy;
                try {
                    auto d = fit_strategy(strategy, pos, neg, config.seed, config.soft_auc);
                    d.model_id = model.model_id;
                    auto sc = score(eval, d);
                    if (!is_supervised(strategy)) sc = sign_correct(std::move(sc), auroc(sc));
                    c.sign_corrected = sc.sign_corrected;
                    c.summary = summarize(sc, boot);
                    c.scores = std::move(sc);
                    c.direction = std::move(d);
                } catch (const Error& e) {
                    c.error = describe(e);
                }
                report.cells.push_back(std::move(c));
            }

            if (config.layer_profiles) {
                for (auto strategy : config.strategies) {
                    if (!is_supervised(strategy)) continue;
                    StrategyProfile prof{model.model_id, proto, strategy, {}};
                    for (auto layer : data.layers) {
                        LayerScore ls{layer, std::nullopt};
                        try {
                            const auto& lf = data.fit_val.at(layer).fit;
                            const auto d = fit_strategy(strategy, lf.with_label(Label::harmful),
                                                        lf.with_label(Label::benign), config.seed, config.soft_auc);
                            ls.auroc = effective_auroc(auroc(score(eval_at(data, model, protocol, layer), d)));
                        } catch (const Error&) {
                        }
                        prof.profile.push_back(ls);
                    }
                    report.profiles.push_back(std::move(prof));
                }
            }

            if (config.ood) {
                for (const auto& c : report.cells) {
                    if (c.model_id != model.model_id || c.protocol != proto || !c.summary) continue;
                    auto table = ood_breakdown(c.scores, config.fpr_target);
                    table.model_id = c.model_id;
                    table.protocol = c.protocol;
                    table.strategy = c.strategy;
                    report.ood.push_back(std::move(table));
                }
            }

            if (config.sample_efficiency && config.sample_efficiency->protocol == protocol) {
                SampleEfficiencyOptions so;
                so.ns = config.sample_efficiency->ns;
                so.n_subsamples = config.sample_efficiency->n_subsamples;
                so.seed = config.seed;
                so.fpr_target = config.fpr_target;
                so.soft_auc = config.soft_auc;
                EfficiencyCurve curve{model.model_id, proto, sel.layer, {}, {}};
                try {
                    curve.points = sample_efficiency(fit, eval, so);
                } catch (const Error& e) {
                    curve.error = describe(e);
                }
                report.sample_efficiency.push_back(std::move(curve));
            }
        }
    }

    if (config.transfer && !config.transfer->models.empty()) {
        const auto& tc = *config.transfer;
        const std::string proto = tc.protocol.str();
        auto find_model = [&](const std::string& id) -> const ModelEntry& {
            return *std::find_if(config.models.begin(), config.models.end(), [&](const auto& m) { return m.model_id == id; });
        };
        std::uint32_t layer = config.layer_policy.layer;
        if (!config.layer_policy.fixed) {
            auto it = selected.find({tc.models.front(), proto});
            layer = it != selected.end() ? it->second : select_layer(find_model(tc.models.front()).cache_root, tc.protocol).layer;
        }
        std::vector<Direction> dirs;
        std::vector<ActivationSet> evals;
        for (const auto& id : tc.models) {
            const auto& m = find_model(id);
            const auto fit = read_cache(cache_path(m.cache_root, tc.protocol, layer, Split::fit));
            auto eval = read_cache(cache_path(m.cache_root, tc.protocol, layer, Split::eval));
            eval.meta().model_id = id;
            auto d = fit_strategy(tc.strategy, fit.with_label(Label::harmful), fit.with_label(Label::benign), config.seed,
                                  config.soft_auc);
            d.model_id = id;
            dirs.push_back(std::move(d));
            evals.push_back(std::move(eval));
        }
        report.transfer.push_back(cross_variant_transfer(dirs, evals, config.fpr_target));
    }
    return report;
}

}  // namespace harmprobe::runner

#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "greenscore/annotate.hpp"
#include "greenscore/common.hpp"
#include "greenscore/filter.hpp"
#include "greenscore/ingest.hpp"
#include "greenscore/irt.hpp"

namespace greenscore {

// One planted high-similarity link between two synthetic pages.
struct PlantedEdge {
    std::size_t page_a = 0;
    std::size_t page_b = 1;
    std::size_t n_shared = 3;  // near-duplicate ads per page; pairs = n_shared^2
};

// Defaults sit near the information ceiling of a 15-item bounded-slope
// design on purpose: with |lambda| < 1 each binary channel carries at most
// ~0.21 nats about theta, so score recovery needs strong discriminations,
// centered difficulties, informative missingness, and a slightly wider true
// score spread than the fitting prior.
struct SimConfig {
    std::size_t n_ads = 2000;
    std::size_t n_keyword_items = 9;   // includes the two anchor-like items
    std::size_t n_missable_items = 6;  // llm-like items with a missingness stage
    double lambda_min = 0.92;          // |lambda| range for non-anchor items
    double lambda_max = 0.995;
    double anchor_lambda = 0.99;       // +/- for the planted anchors
    double difficulty_range = 0.15;    // beta ~ U[-r, r]
    double missing_strength = 1.0;     // scales |lambda_m|; 0 disables informativeness
    bool missingness_disabled = false; // no missing cells at all when set
    double miss_difficulty_min = 0.1;  // beta_m ~ U[min,max]: baseline missing rates ~35-48%
    double miss_difficulty_max = 0.5;
    std::map<std::size_t, double> lambda_miss_overrides;  // missable slot -> fixed lambda_m
    double theta_mean = 0.0;
    double theta_sd = 1.35;
    std::size_t n_pages = 20;
    std::vector<PlantedEdge> planted_edges = {{0, 1, 3}, {2, 3, 3}};
    double planted_theta = 3.0;    // latent score for planted near-duplicate ads
    std::size_t embedding_dim = 32;
    double duplicate_noise = 0.05;  // keeps planted cosines > 0.8 for dim 32 up to ~0.07
    std::uint64_t seed = 0;         // mandatory
    bool seed_set = false;

    void validate() const {
        if (!seed_set) throw std::runtime_error("sim config requires an explicit seed");
        if (n_ads < 1 || n_keyword_items + n_missable_items < 2 || n_pages < 1 ||
            embedding_dim < 1)
            throw std::runtime_error("sim config counts must be >= 1");
        if (n_keyword_items < 2) throw std::runtime_error("need >= 2 keyword items for anchors");
    }
};

inline SimConfig sim_config_from_json(const nlohmann::json& j) {
    SimConfig c;
    if (j.contains("n_ads")) c.n_ads = j.at("n_ads").get<std::size_t>();
    if (j.contains("n_keyword_items")) c.n_keyword_items = j.at("n_keyword_items").get<std::size_t>();
    if (j.contains("n_missable_items")) c.n_missable_items = j.at("n_missable_items").get<std::size_t>();
    if (j.contains("lambda_min")) c.lambda_min = j.at("lambda_min").get<double>();
    if (j.contains("lambda_max")) c.lambda_max = j.at("lambda_max").get<double>();
    if (j.contains("anchor_lambda")) c.anchor_lambda = j.at("anchor_lambda").get<double>();
    if (j.contains("difficulty_range")) c.difficulty_range = j.at("difficulty_range").get<double>();
    if (j.contains("missing_strength")) c.missing_strength = j.at("missing_strength").get<double>();
    if (j.contains("missingness_disabled")) c.missingness_disabled = j.at("missingness_disabled").get<bool>();
    if (j.contains("n_pages")) c.n_pages = j.at("n_pages").get<std::size_t>();
    if (j.contains("planted_theta")) c.planted_theta = j.at("planted_theta").get<double>();
    if (j.contains("embedding_dim")) c.embedding_dim = j.at("embedding_dim").get<std::size_t>();
    if (j.contains("duplicate_noise")) c.duplicate_noise = j.at("duplicate_noise").get<double>();
    if (j.contains("planted_edges")) {
        c.planted_edges.clear();
        for (const auto& e : j.at("planted_edges"))
            c.planted_edges.push_back({e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>(),
                                       e.at(2).get<std::size_t>()});
    }
    if (j.contains("lambda_miss_overrides"))
        for (const auto& [k, v] : j.at("lambda_miss_overrides").items())
            c.lambda_miss_overrides[std::stoul(k)] = v.get<double>();
    if (j.contains("seed")) {
        c.seed = j.at("seed").get<std::uint64_t>();
        c.seed_set = true;
    }
    c.validate();
    return c;
}

// The generating parameters, kept alongside the data for recovery checks.
struct SimTruth {
    std::vector<std::string> ads;     // ordered ad ids, matrix order
    std::vector<double> theta;        // per ad, planted ads included
    std::vector<double> lambda;       // per item
    std::vector<double> beta;         // per item
    std::vector<double> lambda_miss;  // per missable slot
    std::vector<double> beta_miss;    // per missable slot
    std::vector<std::string> item_keys;
    std::vector<std::size_t> missable_items;  // slot -> item index
    std::vector<PlantedEdge> planted_edges;
    std::vector<std::string> planted_ads;
    std::uint64_t seed = 0;
};

struct SyntheticDataset {
    SimTruth truth;
    IndicatorMatrix matrix;
    AdCorpus corpus;
    std::map<std::string, std::vector<double>> embeddings;
    EntityRegistry registry;
    std::vector<ReplayCache::Entry> replay;  // scripted llm responses realizing the cells
};

namespace sim_detail {

// Keys drawn from the shipped lexicon so synthetic texts flow through the
// real filter stage; the first two are the sign anchors.
inline std::vector<std::string> keyword_keys(std::size_t n) {
    static const std::vector<std::string> pool = {
        "natural_gas",   "fossil_fuel", "climate",        "coal",
        "carbon_capture", "greenhouse", "global_warming", "extinction",
        "sustainable",   "recycle",     "carbon_removal", "icecap_melt_flood"};
    if (n > pool.size())
        throw std::runtime_error("at most " + std::to_string(pool.size()) + " keyword items supported");
    return {pool.begin(), pool.begin() + static_cast<long>(n)};
}

// Canonical phrase that trips exactly one lexicon key.
inline std::string key_phrase(const std::string& key) {
    if (key == "natural_gas") return "natural gas";
    if (key == "fossil_fuel") return "fossil fuel";
    if (key == "climate") return "climate";
    if (key == "coal") return "coal";
    if (key == "carbon_capture") return "carbon capture";
    if (key == "greenhouse") return "greenhouse";
    if (key == "global_warming") return "global warming";
    if (key == "extinction") return "extinction";
    if (key == "sustainable") return "sustainable";
    if (key == "recycle") return "recycle";
    if (key == "carbon_removal") return "carbon removal";
    if (key == "icecap_melt_flood") return "icecap melt";
    throw std::runtime_error("no phrase for key " + key);
}

inline std::string zero_pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

} // namespace sim_detail

// One cell from the two-stage likelihood: missingness first when the item
// is missable, outcome only where observed. Uses the same sigmoid and
// parameterization the fitting model evaluates.
inline Cell draw_cell(Rng& rng, double theta, double lambda, double beta, bool missable,
                      double lambda_miss = 0.0, double beta_miss = 0.0,
                      bool missingness_disabled = false) {
    if (missable && !missingness_disabled) {
        const double pm = sigmoid(lambda_miss * theta - beta_miss);
        if (rng.uniform() < pm) return Cell::Missing;
    }
    const double pr = sigmoid(lambda * theta - beta);
    return rng.uniform() < pr ? Cell::One : Cell::Zero;
}

// Draw a synthetic corpus from the exact two-stage likelihood: missingness
// first for missable items, outcome only where observed. Texts realize the
// keyword cells against the shipped lexicon; replayable responses realize
// the llm cells.
inline SyntheticDataset generate(const SimConfig& config) {
    config.validate();
    Rng rng(derive_seed(config.seed, "simulate"));

    SyntheticDataset ds;
    SimTruth& truth = ds.truth;
    truth.seed = config.seed;
    truth.planted_edges = config.planted_edges;

    const std::size_t n_kw = config.n_keyword_items;
    const std::size_t n_llm = config.n_missable_items;
    const std::size_t J = n_kw + n_llm;

    truth.item_keys = sim_detail::keyword_keys(n_kw);
    for (std::size_t k = 0; k < n_llm; ++k)
        truth.item_keys.push_back("llm_model_" + sim_detail::zero_pad(k, 2));

    // item parameters; items 0/1 are the +/- anchors
    for (std::size_t j = 0; j < J; ++j) {
        double lam;
        if (j == 0)
            lam = config.anchor_lambda;
        else if (j == 1)
            lam = -config.anchor_lambda;
        else {
            const double mag = config.lambda_min +
                               (config.lambda_max - config.lambda_min) * rng.uniform();
            lam = rng.uniform() < 0.5 ? mag : -mag;
        }
        truth.lambda.push_back(lam);
        truth.beta.push_back(config.difficulty_range * (2.0 * rng.uniform() - 1.0));
    }
    for (std::size_t s = 0; s < n_llm; ++s) {
        double lam_m;
        const auto ov = config.lambda_miss_overrides.find(s);
        if (ov != config.lambda_miss_overrides.end()) {
            lam_m = ov->second;
        } else {
            const double mag = 0.7 + 0.25 * rng.uniform();
            lam_m = (rng.uniform() < 0.5 ? mag : -mag) * config.missing_strength;
        }
        truth.lambda_miss.push_back(lam_m);
        truth.beta_miss.push_back(config.miss_difficulty_min +
                                  (config.miss_difficulty_max - config.miss_difficulty_min) *
                                      rng.uniform());
        truth.missable_items.push_back(n_kw + s);
    }

    // ads: n_ads background draws plus planted near-duplicates
    struct PendingAd {
        std::string ad_id;
        std::size_t page = 0;
        double theta = 0.0;
        std::optional<std::size_t> planted_edge;  // index into planted_edges
        bool planted_side_a = false;
    };
    std::vector<PendingAd> pending;
    for (std::size_t i = 0; i < config.n_ads; ++i) {
        PendingAd a;
        a.ad_id = "ad" + sim_detail::zero_pad(i, 6);
        a.page = i % config.n_pages;
        a.theta = config.theta_mean + config.theta_sd * rng.normal();
        pending.push_back(std::move(a));
    }
    std::size_t planted_counter = 0;
    for (std::size_t e = 0; e < config.planted_edges.size(); ++e) {
        const auto& edge = config.planted_edges[e];
        if (edge.page_a >= config.n_pages || edge.page_b >= config.n_pages ||
            edge.page_a == edge.page_b)
            throw std::runtime_error("planted edge references invalid pages");
        for (int side = 0; side < 2; ++side) {
            for (std::size_t k = 0; k < edge.n_shared; ++k) {
                PendingAd a;
                a.ad_id = "dup" + sim_detail::zero_pad(planted_counter++, 4);
                a.page = side == 0 ? edge.page_a : edge.page_b;
                a.theta = config.planted_theta + 0.05 * rng.normal();
                a.planted_edge = e;
                a.planted_side_a = side == 0;
                pending.push_back(std::move(a));
                truth.planted_ads.push_back(pending.back().ad_id);
            }
        }
    }

    // cells from the irt likelihood: missingness drawn first
    std::vector<KeywordVector> kw_vectors;
    std::vector<AnnotationColumn> llm_columns(n_llm);
    for (std::size_t s = 0; s < n_llm; ++s) llm_columns[s].item_key = truth.item_keys[n_kw + s];

    std::vector<ReplayCache::Entry> replay_entries;

    for (const auto& ad : pending) {
        truth.theta.push_back(ad.theta);
        KeywordVector kv;
        kv.ad_id = ad.ad_id;
        std::string text = "synthetic statement " + ad.ad_id;
        for (std::size_t j = 0; j < n_kw; ++j) {
            const Cell y = draw_cell(rng, ad.theta, truth.lambda[j], truth.beta[j], false);
            kv.bits[truth.item_keys[j]] = y == Cell::One ? 1 : 0;
            if (y == Cell::One) text += ", " + sim_detail::key_phrase(truth.item_keys[j]);
        }
        kw_vectors.push_back(kv);

        for (std::size_t s = 0; s < n_llm; ++s) {
            const std::size_t j = n_kw + s;
            const Cell cell =
                draw_cell(rng, ad.theta, truth.lambda[j], truth.beta[j], true, truth.lambda_miss[s],
                          truth.beta_miss[s], config.missingness_disabled);
            llm_columns[s].values[ad.ad_id] = cell;

            ReplayCache::Entry entry;
            entry.item_key = llm_columns[s].item_key;
            entry.ad_id = ad.ad_id;
            // prompt hash filled after the ad record (and page name) exists
            entry.raw_response = cell == Cell::One ? "yes"
                                 : cell == Cell::Zero ? "no"
                                                      : "The classification is unclear.";
            replay_entries.push_back(std::move(entry));
        }

        AdRecord rec;
        rec.ad_id = ad.ad_id;
        rec.page_id = "page" + sim_detail::zero_pad(ad.page, 3);
        rec.page_name = "Synthetic Page " + sim_detail::zero_pad(ad.page, 3);
        rec.funder = "Funder " + sim_detail::zero_pad(ad.page % 7, 2);
        rec.text = text;
        rec.language = "en";
        std::vector<ImpressionCell> cells;
        const std::size_t n_groups = 2 + rng.uniform_int(2);
        std::vector<double> w(n_groups);
        double wsum = 0.0;
        for (auto& x : w) {
            x = 0.05 + rng.uniform();
            wsum += x;
        }
        for (std::size_t g = 0; g < n_groups; ++g)
            cells.push_back({"C" + sim_detail::zero_pad((ad.page + g) % 5, 2), w[g] / wsum});
        rec.impressions["country"] = std::move(cells);
        ds.corpus.ads.push_back(std::move(rec));
    }
    ds.corpus.impressions_are_counts = false;
    ds.corpus.input_lines = ds.corpus.ads.size();

    // replay prompt hashes need the final page names
    {
        std::map<std::string, const AdRecord*> by_id;
        for (const auto& a : ds.corpus.ads) by_id[a.ad_id] = &a;
        for (auto& e : replay_entries) {
            const AdRecord* a = by_id.at(e.ad_id);
            e.prompt_hash = prompt_hash(build_prompt(a->text, a->page_name));
        }
    }

    // embeddings: shared noisy base per planted edge, independent vectors
    // elsewhere
    std::vector<std::vector<double>> edge_base(config.planted_edges.size());
    for (auto& base : edge_base) {
        base.resize(config.embedding_dim);
        double norm = 0.0;
        for (auto& x : base) {
            x = rng.normal();
            norm += x * x;
        }
        norm = std::sqrt(norm);
        for (auto& x : base) x /= norm;
    }
    for (const auto& ad : pending) {
        std::vector<double> v(config.embedding_dim);
        if (ad.planted_edge) {
            const auto& base = edge_base[*ad.planted_edge];
            for (std::size_t k = 0; k < v.size(); ++k)
                v[k] = base[k] + config.duplicate_noise * rng.normal();
        } else {
            for (auto& x : v) x = rng.normal();
        }
        ds.embeddings[ad.ad_id] = std::move(v);
    }

    // seed registry: page_a of every planted edge is a known fossil actor
    {
        std::set<std::size_t> seeds;
        for (const auto& e : config.planted_edges) seeds.insert(e.page_a);
        for (std::size_t pg : seeds)
            ds.registry.entries.push_back({"page" + sim_detail::zero_pad(pg, 3),
                                           "Synthetic Page " + sim_detail::zero_pad(pg, 3),
                                           EntityType::OilCompany});
    }

    std::map<std::string, ItemSource> sources;
    for (std::size_t s = 0; s < n_llm; ++s) sources[llm_columns[s].item_key] = ItemSource::Llm;
    ds.matrix = assemble_matrix(kw_vectors, llm_columns, sources);

    // reorder truth.theta to the matrix's lexicographic ad order
    {
        std::map<std::string, double> theta_by_ad;
        for (std::size_t i = 0; i < pending.size(); ++i) theta_by_ad[pending[i].ad_id] = truth.theta[i];
        truth.theta.clear();
        for (const auto& id : ds.matrix.ads) truth.theta.push_back(theta_by_ad.at(id));
        truth.ads = ds.matrix.ads;
    }
    // and truth item order to the matrix's item order
    {
        std::map<std::string, std::size_t> old_index;
        for (std::size_t j = 0; j < truth.item_keys.size(); ++j) old_index[truth.item_keys[j]] = j;
        std::vector<double> lam, bet, lam_m, bet_m;
        std::vector<std::string> keys;
        std::vector<std::size_t> missable;
        std::map<std::size_t, std::size_t> old_slot;  // old item -> slot
        for (std::size_t s = 0; s < truth.missable_items.size(); ++s)
            old_slot[truth.missable_items[s]] = s;
        for (std::size_t j = 0; j < ds.matrix.items.size(); ++j) {
            const std::size_t oj = old_index.at(ds.matrix.items[j].key);
            keys.push_back(ds.matrix.items[j].key);
            lam.push_back(truth.lambda[oj]);
            bet.push_back(truth.beta[oj]);
            if (ds.matrix.items[j].can_be_missing) {
                const std::size_t os = old_slot.at(oj);
                missable.push_back(j);
                lam_m.push_back(truth.lambda_miss[os]);
                bet_m.push_back(truth.beta_miss[os]);
            }
        }
        truth.item_keys = std::move(keys);
        truth.lambda = std::move(lam);
        truth.beta = std::move(bet);
        truth.lambda_miss = std::move(lam_m);
        truth.beta_miss = std::move(bet_m);
        truth.missable_items = std::move(missable);
    }

    ds.replay = std::move(replay_entries);
    return ds;
}

// ---------------------------------------------------------------------------
// Recovery report

struct RecoveryReport {
    double theta_correlation = 0.0;
    double lambda_sign_agreement = 0.0;  // fraction of items
    double theta_coverage_90 = 0.0;      // fraction of ads with truth inside [q05, q95]
    std::size_t n_ads = 0;
    std::size_t n_items = 0;
};

// Works from score and item summaries so it can run off fit output files;
// scores must be ordered as truth.theta is (lexicographic ad order), item
// summaries are matched to the truth by key so a fit with extra items (a
// wider lexicon, say) still reports cleanly.
inline RecoveryReport recovery_report(const SimTruth& truth,
                                      const std::vector<ScoreSummary>& scores,
                                      const std::vector<ItemSummary>& items) {
    if (truth.theta.size() != scores.size())
        throw std::runtime_error("recovery_report: ad count mismatch");

    RecoveryReport r;
    r.n_ads = truth.theta.size();
    r.n_items = truth.lambda.size();

    std::vector<double> est;
    est.reserve(r.n_ads);
    std::size_t covered = 0;
    for (std::size_t i = 0; i < r.n_ads; ++i) {
        est.push_back(scores[i].mean);
        if (truth.theta[i] >= scores[i].q05 && truth.theta[i] <= scores[i].q95) ++covered;
    }
    r.theta_correlation = pearson_corr(est, truth.theta);
    r.theta_coverage_90 = static_cast<double>(covered) / static_cast<double>(r.n_ads);

    std::map<std::string, double> fitted;
    for (const auto& it : items)
        if (it.stage == ItemStage::Outcome) fitted[it.key] = it.mean;
    std::size_t agree = 0;
    for (std::size_t j = 0; j < r.n_items; ++j) {
        const auto it = fitted.find(truth.item_keys[j]);
        if (it == fitted.end())
            throw std::runtime_error("recovery_report: no fitted summary for item '" +
                                     truth.item_keys[j] + "'");
        if ((it->second >= 0.0) == (truth.lambda[j] >= 0.0)) ++agree;
    }
    r.lambda_sign_agreement = static_cast<double>(agree) / static_cast<double>(r.n_items);
    return r;
}

inline RecoveryReport recovery_report(const SimTruth& truth, const IrtPosterior& posterior) {
    return recovery_report(truth, posterior.scores, posterior.items);
}

// ---------------------------------------------------------------------------
// Truth / report serialization

inline nlohmann::json truth_to_json(const SimTruth& t) {
    return nlohmann::json{{"ads", t.ads},
                          {"theta", t.theta},
                          {"lambda", t.lambda},
                          {"beta", t.beta},
                          {"lambda_miss", t.lambda_miss},
                          {"beta_miss", t.beta_miss},
                          {"item_keys", t.item_keys},
                          {"missable_items", t.missable_items},
                          {"planted_ads", t.planted_ads},
                          {"seed", t.seed}};
}

inline SimTruth truth_from_json(const nlohmann::json& j) {
    SimTruth t;
    if (j.contains("ads")) t.ads = j.at("ads").get<std::vector<std::string>>();
    t.theta = j.at("theta").get<std::vector<double>>();
    t.lambda = j.at("lambda").get<std::vector<double>>();
    t.beta = j.at("beta").get<std::vector<double>>();
    t.lambda_miss = j.at("lambda_miss").get<std::vector<double>>();
    t.beta_miss = j.at("beta_miss").get<std::vector<double>>();
    t.item_keys = j.at("item_keys").get<std::vector<std::string>>();
    t.missable_items = j.at("missable_items").get<std::vector<std::size_t>>();
    t.planted_ads = j.at("planted_ads").get<std::vector<std::string>>();
    t.seed = j.at("seed").get<std::uint64_t>();
    return t;
}

inline nlohmann::json recovery_to_json(const RecoveryReport& r) {
    return nlohmann::json{{"theta_correlation", r.theta_correlation},
                          {"lambda_sign_agreement", r.lambda_sign_agreement},
                          {"theta_coverage_90", r.theta_coverage_90},
                          {"n_ads", r.n_ads},
                          {"n_items", r.n_items}};
}

} // namespace greenscore

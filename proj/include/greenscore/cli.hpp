#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "greenscore/aggregate.hpp"
#include "greenscore/annotate.hpp"
#include "greenscore/common.hpp"
#include "greenscore/filter.hpp"
#include "greenscore/ingest.hpp"
#include "greenscore/irt.hpp"
#include "greenscore/network.hpp"
#include "greenscore/simulate.hpp"
#include "greenscore/stats.hpp"

namespace greenscore::cli {

constexpr const char* kToolVersion = "0.1.0";
constexpr const char* kSeedRule = "stage_seed = splitmix64(seed ^ fnv1a64(stage_name))";

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small file helpers

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return in;
}

inline std::ofstream open_output(const fs::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

inline std::string digest_file(const fs::path& path) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(read_file(path))));
    return buf;
}

inline std::string timestamp_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

// RunManifest: written to the output directory before any other output,
// then refreshed with the finish timestamp.
class Manifest {
public:
    Manifest(const std::string& subcommand, const fs::path& out_dir) : out_dir_(out_dir) {
        fs::create_directories(out_dir);
        j_["subcommand"] = subcommand;
        j_["tool_version"] = kToolVersion;
        j_["seed_derivation"] = kSeedRule;
        j_["started_at"] = timestamp_now();
        j_["inputs"] = nlohmann::json::object();
    }

    void set_config(const nlohmann::json& resolved) { j_["config"] = resolved; }
    void set_seed(std::uint64_t seed) { j_["seed"] = seed; }

    void add_input(const std::string& name, const fs::path& path) {
        if (path.empty()) return;
        j_["inputs"][name] = {{"path", path.string()}, {"digest", digest_file(path)}};
    }

    void write() const {
        auto out = open_output(out_dir_ / "manifest.json");
        out << j_.dump(2) << '\n';
    }

    void finish() {
        j_["finished_at"] = timestamp_now();
        write();
    }

private:
    fs::path out_dir_;
    nlohmann::json j_;
};

inline LexiconSet load_lexicons(const std::string& path, const nlohmann::json& fallback) {
    if (path.empty()) return compile_lexicon(fallback);
    auto in = open_input(path);
    return load_lexicon_file(in);
}

// ---------------------------------------------------------------------------
// Stage cores. Each writes only inside out_dir; manifests are handled by
// the subcommand wrappers (one manifest per run, including pipeline runs).

struct FilterArgs {
    std::string ads;
    std::string lexicon;
    std::string electoral;
    std::string out;
    bool skip_electoral = false;
};

inline void run_filter_stage(const FilterArgs& a) {
    fs::create_directories(a.out);
    const LexiconSet broad = load_lexicons(a.lexicon, default_lexicon_config());
    const LexiconSet exclusion = load_lexicons(a.electoral, default_electoral_config());

    auto in = open_input(a.ads);
    AdCorpus corpus = parse_ads(in);

    AdCorpus kept;
    kept.impressions_are_counts = corpus.impressions_are_counts;
    std::size_t n_climate = 0, n_excluded = 0;
    for (const auto& ad : corpus.ads) {
        if (!climate_filter(ad, broad)) continue;
        ++n_climate;
        if (!a.skip_electoral && electoral_filter(ad, exclusion)) {
            ++n_excluded;
            continue;
        }
        kept.ads.push_back(ad);
    }

    {
        auto out = open_output(fs::path(a.out) / "filtered_ads.jsonl");
        write_ads(out, kept);
    }
    {
        std::vector<KeywordVector> vectors;
        for (const auto& ad : kept.ads)
            vectors.push_back(match_keywords(ad.ad_id, ad.text, broad.resolve(ad.language)));
        auto out = open_output(fs::path(a.out) / "keyword_bits.tsv");
        if (!vectors.empty()) {
            const IndicatorMatrix m = assemble_matrix(vectors, {});
            write_matrix(out, m);
        } else {
            out << "ad_id\n";
        }
    }
    {
        const KeywordCountTable counts = keyword_count_table(kept.ads, broad);
        auto out = open_output(fs::path(a.out) / "keyword_counts.tsv");
        write_keyword_counts(out, counts);
    }
    {
        auto out = open_output(fs::path(a.out) / "filter_log.tsv");
        out << "kind\tdetail\n";
        out << "input_lines\t" << corpus.input_lines << '\n';
        out << "parsed_ads\t" << corpus.ads.size() << '\n';
        out << "climate_relevant\t" << n_climate << '\n';
        out << "electoral_excluded\t" << n_excluded << '\n';
        out << "kept\t" << kept.ads.size() << '\n';
        for (const auto& e : corpus.errors) out << "line_error\t" << e.line << ": " << e.message << '\n';
        for (const auto& w : broad.fallback_warnings()) out << "warning\t" << w << '\n';
    }
}

struct AnnotateArgs {
    std::string ads;
    std::string keywords;
    std::string replay;
    std::string stance;
    std::vector<std::string> items;
    std::string out;
    std::uint64_t seed = 0;
};

inline void run_annotate_stage(const AnnotateArgs& a) {
    fs::create_directories(a.out);
    auto ads_in = open_input(a.ads);
    const AdCorpus corpus = parse_ads(ads_in);

    ReplayCache cache;
    std::vector<std::string> items = a.items;
    if (!a.replay.empty()) {
        auto in = open_input(a.replay);
        cache.load(in);
        if (items.empty()) {
            // infer the item set from the replay file
            auto again = open_input(a.replay);
            std::set<std::string> keys;
            std::string line;
            while (std::getline(again, line)) {
                if (trim(line).empty()) continue;
                keys.insert(nlohmann::json::parse(line).at("item_key").get<std::string>());
            }
            items.assign(keys.begin(), keys.end());
        }
    }
    if (items.empty()) throw std::runtime_error("no annotation items: pass --items or a replay file");

    std::vector<KeywordVector> kw_vectors;
    {
        auto in = open_input(a.keywords);
        const IndicatorMatrix bits = read_matrix(in);
        for (std::size_t i = 0; i < bits.ads.size(); ++i) {
            KeywordVector v;
            v.ad_id = bits.ads[i];
            for (std::size_t j = 0; j < bits.items.size(); ++j)
                v.bits[bits.items[j].key] = bits.at(i, j) == Cell::One ? 1 : 0;
            kw_vectors.push_back(std::move(v));
        }
    }

    std::vector<std::string> warnings;
    auto sink = open_output(fs::path(a.out) / "replay_appended.jsonl");
    AnnotateOptions opts;
    opts.cache_sink = &sink;
    opts.warnings = &warnings;

    std::vector<AnnotationColumn> columns;
    std::map<std::string, ItemSource> sources;
    for (const auto& item : items) {
        columns.push_back(
            annotate_corpus(corpus.ads, nullptr, item, derive_seed(a.seed, item), cache, opts));
        sources[item] = ItemSource::Llm;
    }
    if (!a.stance.empty()) {
        auto in = open_input(a.stance);
        auto col = load_stance_column(in, "stance_debate");
        sources[col.item_key] = ItemSource::Stance;
        columns.push_back(std::move(col));
    }

    const IndicatorMatrix m = assemble_matrix(kw_vectors, columns, sources);
    {
        auto out = open_output(fs::path(a.out) / "matrix.tsv");
        write_matrix(out, m);
    }
    {
        auto out = open_output(fs::path(a.out) / "annotate_log.tsv");
        out << "kind\tdetail\n";
        for (const auto& w : warnings) out << "warning\t" << w << '\n';
    }
}

struct FitArgs {
    std::string matrix;
    std::string config;
    std::string out;
    int draws = -1;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string mode = "map";
};

inline IrtConfig resolve_irt_config(const FitArgs& a) {
    IrtConfig config;
    if (!a.config.empty()) {
        auto in = open_input(a.config);
        nlohmann::json j;
        in >> j;
        config = irt_config_from_json(j.contains("irt") ? j.at("irt") : j);
    }
    if (a.draws > 0) config.draws = a.draws;
    if (a.seed_set) config.seed = a.seed;
    config.validate();
    return config;
}

inline void run_fit_stage(const FitArgs& a) {
    fs::create_directories(a.out);
    const IrtConfig config = resolve_irt_config(a);

    auto in = open_input(a.matrix);
    const IndicatorMatrix m = read_matrix(in);

    IrtPosterior post;
    if (a.mode == "map") {
        const FitResult fit = fit_map(m, config);
        post = laplace_draws(fit, m, config);
    } else if (a.mode == "mcmc") {
        post = mcmc_validate(m, config);
    } else {
        throw std::runtime_error("unknown fit mode '" + a.mode + "' (expected map or mcmc)");
    }

    {
        auto out = open_output(fs::path(a.out) / "scores.tsv");
        write_scores(out, post);
    }
    {
        auto out = open_output(fs::path(a.out) / "items.tsv");
        write_item_summaries(out, post);
    }
    {
        auto out = open_output(fs::path(a.out) / "diagnostics.json");
        write_diagnostics(out, post.diagnostics);
    }
}

struct ScoreArgs {
    std::string fit;
    std::string ads;
    std::string by = "country";
    std::string out;
};

inline void run_score_stage(const ScoreArgs& a) {
    fs::create_directories(a.out);
    auto ads_in = open_input(a.ads);
    const AdCorpus corpus = parse_ads(ads_in);

    auto scores_in = open_input(fs::path(a.fit) / "scores.tsv");
    const auto means = read_score_means(scores_in);
    auto class_in = open_input(fs::path(a.fit) / "scores.tsv");
    const auto classes = read_score_classifications(class_in);

    {
        const auto groups = weighted_group_scores(means, corpus.ads, a.by);
        auto out = open_output(fs::path(a.out) / "group_scores.tsv");
        write_group_scores(out, a.by, groups);
    }
    {
        const auto shares = classification_shares(classes, corpus.ads, a.by);
        auto out = open_output(fs::path(a.out) / "classification_shares.tsv");
        write_classification_shares(out, a.by, shares);
    }
}

struct NetworkArgs {
    std::string ads;
    std::string embeddings;
    std::string fit;
    std::string registry;
    std::string out;
    std::size_t min_pairs = 5;
    double min_cos = 0.8;
    std::string pair_rule = "pairs";
};

inline void run_network_stage(const NetworkArgs& a) {
    fs::create_directories(a.out);
    auto ads_in = open_input(a.ads);
    const AdCorpus corpus = parse_ads(ads_in);
    auto emb_in = open_input(a.embeddings);
    const EmbeddingStore embeddings = read_embeddings(emb_in);
    auto scores_in = open_input(fs::path(a.fit) / "scores.tsv");
    const auto scores = read_score_means(scores_in);
    auto reg_in = open_input(a.registry);
    const EntityRegistry registry = parse_registry(reg_in);

    LinkOptions opts;
    opts.min_pairs = a.min_pairs;
    opts.min_cos = a.min_cos;
    if (a.pair_rule == "pairs")
        opts.rule = PairRule::Pairs;
    else if (a.pair_rule == "per-page-ads")
        opts.rule = PairRule::PerPageAds;
    else
        throw std::runtime_error("unknown pair rule '" + a.pair_rule + "'");

    const PageGraph full = build_links(corpus.ads, embeddings, scores, opts);
    const PageGraph filtered = seed_filter(full, registry);

    {
        auto out = open_output(fs::path(a.out) / "edges_all.tsv");
        write_edge_table(out, full);
    }
    {
        auto out = open_output(fs::path(a.out) / "edges.tsv");
        write_edge_table(out, filtered);
    }
    {
        auto out = open_output(fs::path(a.out) / "nodes.tsv");
        write_node_table(out, filtered);
    }
    {
        auto out = open_output(fs::path(a.out) / "graph.dot");
        write_dot(out, filtered);
    }
    {
        auto out = open_output(fs::path(a.out) / "differences.tsv");
        write_differences(out, score_differences(filtered));
    }
}

struct RegressArgs {
    std::string data;
    std::string outcome;
    std::string terms;
    std::string out;
    bool no_intercept = false;
    bool robust_se = false;
    std::string margin;       // "var:moderator"
    std::string margin_grid;  // "lo,hi,steps"
};

inline void run_regress_stage(const RegressArgs& a) {
    fs::create_directories(a.out);
    auto in = open_input(a.data);
    const CovariateTable table = parse_covariates(in);
    const ModelSpec spec = parse_model_spec(a.outcome, a.terms, !a.no_intercept);
    const DesignMatrix d = design_matrix(table, spec);
    const OlsFit fit = ols(d, spec.intercept, a.robust_se);
    {
        auto out = open_output(fs::path(a.out) / "regression.tsv");
        write_ols_table(out, fit, d.dropped_rows);
    }
    if (!a.margin.empty()) {
        const auto colon = a.margin.find(':');
        if (colon == std::string::npos)
            throw std::runtime_error("--margin expects var:moderator");
        const std::string var = a.margin.substr(0, colon);
        const std::string mod = a.margin.substr(colon + 1);
        double lo = 0.0, hi = 1.0;
        std::size_t steps = 11;
        if (!a.margin_grid.empty()) {
            const auto parts = split(a.margin_grid, ',');
            if (parts.size() != 3) throw std::runtime_error("--grid expects lo,hi,steps");
            if (!parse_double(parts[0], lo) || !parse_double(parts[1], hi))
                throw std::runtime_error("--grid bounds must be numeric");
            steps = static_cast<std::size_t>(std::stoul(parts[2]));
        }
        std::vector<double> grid;
        for (std::size_t k = 0; k < steps; ++k)
            grid.push_back(steps > 1 ? lo + (hi - lo) * static_cast<double>(k) /
                                                static_cast<double>(steps - 1)
                                     : lo);
        const auto pts = marginal_effect(fit, spec, var, mod, grid);
        auto out = open_output(fs::path(a.out) / "margins.tsv");
        write_marginal_effects(out, pts);
    }
}

struct SimulateArgs {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

inline void run_simulate_stage(const SimulateArgs& a) {
    fs::create_directories(a.out);
    SimConfig config;
    if (!a.config.empty()) {
        auto in = open_input(a.config);
        nlohmann::json j;
        in >> j;
        if (a.seed_set && !j.contains("seed")) j["seed"] = a.seed;
        config = sim_config_from_json(j);
    }
    if (a.seed_set) {
        config.seed = a.seed;
        config.seed_set = true;
    }
    config.validate();

    const SyntheticDataset ds = generate(config);
    {
        auto out = open_output(fs::path(a.out) / "ads.jsonl");
        write_ads(out, ds.corpus);
    }
    {
        auto out = open_output(fs::path(a.out) / "matrix.tsv");
        write_matrix(out, ds.matrix);
    }
    {
        auto out = open_output(fs::path(a.out) / "embeddings.txt");
        write_embeddings(out, ds.embeddings);
    }
    {
        auto out = open_output(fs::path(a.out) / "registry.tsv");
        write_registry(out, ds.registry);
    }
    {
        auto out = open_output(fs::path(a.out) / "replay.jsonl");
        for (const auto& e : ds.replay) {
            nlohmann::json j{{"item_key", e.item_key},
                             {"ad_id", e.ad_id},
                             {"prompt_hash", e.prompt_hash},
                             {"raw_response", e.raw_response}};
            out << j.dump() << '\n';
        }
    }
    {
        auto out = open_output(fs::path(a.out) / "truth.json");
        out << truth_to_json(ds.truth).dump(2) << '\n';
    }
}

struct RecoveryArgs {
    std::string truth;
    std::string fit;
    std::string out;
};

inline void run_recovery_stage(const RecoveryArgs& a) {
    fs::create_directories(a.out);
    nlohmann::json tj;
    {
        auto in = open_input(a.truth);
        in >> tj;
    }
    const SimTruth truth = truth_from_json(tj);

    std::vector<ScoreSummary> scores;
    {
        auto in = open_input(fs::path(a.fit) / "scores.tsv");
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            if (header) {
                header = false;
                continue;
            }
            const auto f = split(line, '\t');
            if (f.size() < 4) throw std::runtime_error("bad score row: " + line);
            ScoreSummary s;
            s.ad_id = f[0];
            if (!parse_double(f[1], s.mean) || !parse_double(f[2], s.q05) ||
                !parse_double(f[3], s.q95))
                throw std::runtime_error("bad score row: " + line);
            scores.push_back(std::move(s));
        }
    }
    std::vector<ItemSummary> items;
    {
        auto in = open_input(fs::path(a.fit) / "items.tsv");
        std::string line;
        bool header = true;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            if (header) {
                header = false;
                continue;
            }
            const auto f = split(line, '\t');
            if (f.size() < 5) throw std::runtime_error("bad item row: " + line);
            ItemSummary s;
            s.key = f[0];
            s.stage = f[1] == "outcome" ? ItemStage::Outcome : ItemStage::Missingness;
            if (!parse_double(f[2], s.mean) || !parse_double(f[3], s.q05) ||
                !parse_double(f[4], s.q95))
                throw std::runtime_error("bad item row: " + line);
            items.push_back(std::move(s));
        }
    }

    // align to the fitted subset: a pipeline fit covers only the ads that
    // survived filtering
    SimTruth aligned = truth;
    if (!truth.ads.empty() && truth.ads.size() != scores.size()) {
        std::map<std::string, double> theta_by_ad;
        for (std::size_t i = 0; i < truth.ads.size(); ++i) theta_by_ad[truth.ads[i]] = truth.theta[i];
        aligned.ads.clear();
        aligned.theta.clear();
        for (const auto& s : scores) {
            const auto it = theta_by_ad.find(s.ad_id);
            if (it == theta_by_ad.end())
                throw std::runtime_error("scored ad " + s.ad_id + " is absent from the truth file");
            aligned.ads.push_back(s.ad_id);
            aligned.theta.push_back(it->second);
        }
    }

    const RecoveryReport report = recovery_report(aligned, scores, items);
    auto out = open_output(fs::path(a.out) / "recovery.json");
    out << recovery_to_json(report).dump(2) << '\n';
}

struct PipelineArgs {
    std::string ads;
    std::string replay;
    std::string embeddings;
    std::string registry;
    std::string stance;
    std::string lexicon;
    std::string electoral;
    std::string config;
    std::string by = "country";
    std::string out;
    std::uint64_t seed = 0;
    std::size_t min_pairs = 5;
    double min_cos = 0.8;
};

inline void run_pipeline_stage(const PipelineArgs& a) {
    const fs::path out(a.out);
    fs::create_directories(out);

    FilterArgs f;
    f.ads = a.ads;
    f.lexicon = a.lexicon;
    f.electoral = a.electoral;
    f.out = (out / "filter").string();
    run_filter_stage(f);

    AnnotateArgs ann;
    ann.ads = (out / "filter" / "filtered_ads.jsonl").string();
    ann.keywords = (out / "filter" / "keyword_bits.tsv").string();
    ann.replay = a.replay;
    ann.stance = a.stance;
    ann.seed = derive_seed(a.seed, "annotate");
    ann.out = (out / "annotate").string();
    run_annotate_stage(ann);

    FitArgs fit;
    fit.matrix = (out / "annotate" / "matrix.tsv").string();
    fit.config = a.config;
    fit.seed = derive_seed(a.seed, "fit");
    fit.seed_set = true;
    fit.out = (out / "fit").string();
    run_fit_stage(fit);

    ScoreArgs sc;
    sc.fit = fit.out;
    sc.ads = ann.ads;
    sc.by = a.by;
    sc.out = (out / "score").string();
    run_score_stage(sc);

    NetworkArgs net;
    net.ads = ann.ads;
    net.embeddings = a.embeddings;
    net.fit = fit.out;
    net.registry = a.registry;
    net.min_pairs = a.min_pairs;
    net.min_cos = a.min_cos;
    net.out = (out / "network").string();
    run_network_stage(net);
}

// ---------------------------------------------------------------------------
// Entry point

inline int run(int argc, const char* const* argv) {
    CLI::App app{"greenscore: greenwashing measurement pipeline"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    int threads = 1;
    app.add_option("--threads", threads, "parallelism cap (default 1)");

    FilterArgs fa;
    auto* c_filter = app.add_subcommand("filter", "climate filter, electoral exclusion, keyword bits");
    c_filter->add_option("--ads", fa.ads, "ad file, one record per line")->required();
    c_filter->add_option("--lexicon", fa.lexicon, "lexicon config (default: shipped table)");
    c_filter->add_option("--electoral", fa.electoral, "electoral exclusion config");
    c_filter->add_option("--out", fa.out, "output directory")->required();
    c_filter->add_flag("--skip-electoral", fa.skip_electoral, "keep electoral ads");

    AnnotateArgs aa;
    auto* c_annotate = app.add_subcommand("annotate", "replay-backed llm columns and matrix assembly");
    c_annotate->add_option("--ads", aa.ads, "filtered ad file")->required();
    c_annotate->add_option("--keywords", aa.keywords, "keyword bits from the filter stage")->required();
    c_annotate->add_option("--replay", aa.replay, "replay cache file");
    c_annotate->add_option("--stance", aa.stance, "precomputed stance column (ad_id<TAB>value)");
    c_annotate->add_option("--items", aa.items, "annotation item keys")->delimiter(',');
    c_annotate->add_option("--seed", aa.seed, "annotation seed");
    c_annotate->add_option("--out", aa.out, "output directory")->required();

    FitArgs fta;
    auto* c_fit = app.add_subcommand("fit", "fit the measurement model");
    c_fit->add_option("--matrix", fta.matrix, "indicator matrix file")->required();
    c_fit->add_option("--config", fta.config, "model config file");
    c_fit->add_option("--out", fta.out, "output directory")->required();
    c_fit->add_option("--draws", fta.draws, "posterior draw count");
    c_fit->add_option("--seed", fta.seed, "seed")->each([&](const std::string&) { fta.seed_set = true; });
    c_fit->add_option("--mode", fta.mode, "map or mcmc");

    ScoreArgs sca;
    auto* c_score = app.add_subcommand("score", "impression-weighted group scores");
    c_score->add_option("--fit", sca.fit, "fit output directory")->required();
    c_score->add_option("--ads", sca.ads, "ad file with impressions")->required();
    c_score->add_option("--by", sca.by, "breakdown dimension (country|region|age|...)");
    c_score->add_option("--out", sca.out, "output directory")->required();

    NetworkArgs na;
    auto* c_network = app.add_subcommand("network", "page similarity network");
    c_network->add_option("--ads", na.ads, "ad file")->required();
    c_network->add_option("--embeddings", na.embeddings, "embedding file")->required();
    c_network->add_option("--fit", na.fit, "fit output directory")->required();
    c_network->add_option("--registry", na.registry, "entity registry file")->required();
    c_network->add_option("--min-pairs", na.min_pairs, "qualifying pair threshold (default 5)");
    c_network->add_option("--min-cos", na.min_cos, "cosine threshold (default 0.8)");
    c_network->add_option("--pair-rule", na.pair_rule, "pairs or per-page-ads");
    c_network->add_option("--out", na.out, "output directory")->required();

    RegressArgs ra;
    auto* c_regress = app.add_subcommand("regress", "least squares with squares and interactions");
    c_regress->add_option("--data", ra.data, "covariate table")->required();
    c_regress->add_option("--outcome", ra.outcome, "outcome column")->required();
    c_regress->add_option("--terms", ra.terms, "term spec, e.g. \"a + b^2 + a:b\"")->required();
    c_regress->add_flag("--no-intercept", ra.no_intercept, "suppress the intercept");
    c_regress->add_flag("--robust", ra.robust_se, "HC1 sandwich standard errors (default classical)");
    c_regress->add_option("--margin", ra.margin, "marginal effect var:moderator");
    c_regress->add_option("--grid", ra.margin_grid, "moderator grid lo,hi,steps");
    c_regress->add_option("--out", ra.out, "output directory")->required();

    SimulateArgs sa;
    auto* c_simulate = app.add_subcommand("simulate", "synthetic corpus with known truth");
    c_simulate->add_option("--config", sa.config, "sim config file");
    c_simulate->add_option("--seed", sa.seed, "seed")->each([&](const std::string&) { sa.seed_set = true; });
    c_simulate->add_option("--out", sa.out, "output directory")->required();

    RecoveryArgs rca;
    auto* c_recovery = app.add_subcommand("recovery", "compare a fit against simulation truth");
    c_recovery->add_option("--truth", rca.truth, "truth file from simulate")->required();
    c_recovery->add_option("--fit", rca.fit, "fit output directory")->required();
    c_recovery->add_option("--out", rca.out, "output directory")->required();

    PipelineArgs pa;
    auto* c_pipeline = app.add_subcommand("pipeline", "filter -> annotate -> fit -> score -> network");
    c_pipeline->add_option("--ads", pa.ads, "ad file")->required();
    c_pipeline->add_option("--replay", pa.replay, "replay cache file")->required();
    c_pipeline->add_option("--embeddings", pa.embeddings, "embedding file")->required();
    c_pipeline->add_option("--registry", pa.registry, "entity registry file")->required();
    c_pipeline->add_option("--stance", pa.stance, "precomputed stance column");
    c_pipeline->add_option("--lexicon", pa.lexicon, "lexicon config");
    c_pipeline->add_option("--electoral", pa.electoral, "electoral exclusion config");
    c_pipeline->add_option("--config", pa.config, "model config file");
    c_pipeline->add_option("--by", pa.by, "aggregation dimension");
    c_pipeline->add_option("--seed", pa.seed, "root seed");
    c_pipeline->add_option("--min-pairs", pa.min_pairs, "network pair threshold");
    c_pipeline->add_option("--min-cos", pa.min_cos, "network cosine threshold");
    c_pipeline->add_option("--out", pa.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    global_thread_cap() = std::max(1, threads);

    try {
        if (c_filter->parsed()) {
            Manifest man("filter", fa.out);
            man.set_seed(0);
            man.add_input("ads", fa.ads);
            if (!fa.lexicon.empty()) man.add_input("lexicon", fa.lexicon);
            if (!fa.electoral.empty()) man.add_input("electoral", fa.electoral);
            man.set_config(nlohmann::json{{"skip_electoral", fa.skip_electoral}});
            man.write();
            run_filter_stage(fa);
            man.finish();
        } else if (c_annotate->parsed()) {
            Manifest man("annotate", aa.out);
            man.set_seed(aa.seed);
            man.add_input("ads", aa.ads);
            man.add_input("keywords", aa.keywords);
            if (!aa.replay.empty()) man.add_input("replay", aa.replay);
            if (!aa.stance.empty()) man.add_input("stance", aa.stance);
            man.set_config(nlohmann::json{{"items", aa.items}});
            man.write();
            run_annotate_stage(aa);
            man.finish();
        } else if (c_fit->parsed()) {
            Manifest man("fit", fta.out);
            const IrtConfig cfg = resolve_irt_config(fta);
            man.set_seed(cfg.seed);
            man.add_input("matrix", fta.matrix);
            if (!fta.config.empty()) man.add_input("config", fta.config);
            man.set_config(nlohmann::json{{"mode", fta.mode}, {"draws", cfg.draws}, {"tol", cfg.tol}});
            man.write();
            run_fit_stage(fta);
            man.finish();
        } else if (c_score->parsed()) {
            Manifest man("score", sca.out);
            man.set_seed(0);
            man.add_input("ads", sca.ads);
            man.add_input("scores", fs::path(sca.fit) / "scores.tsv");
            man.set_config(nlohmann::json{{"by", sca.by}});
            man.write();
            run_score_stage(sca);
            man.finish();
        } else if (c_network->parsed()) {
            Manifest man("network", na.out);
            man.set_seed(0);
            man.add_input("ads", na.ads);
            man.add_input("embeddings", na.embeddings);
            man.add_input("scores", fs::path(na.fit) / "scores.tsv");
            man.add_input("registry", na.registry);
            man.set_config(nlohmann::json{
                {"min_pairs", na.min_pairs}, {"min_cos", na.min_cos}, {"pair_rule", na.pair_rule}});
            man.write();
            run_network_stage(na);
            man.finish();
        } else if (c_regress->parsed()) {
            Manifest man("regress", ra.out);
            man.set_seed(0);
            man.add_input("data", ra.data);
            man.set_config(nlohmann::json{{"outcome", ra.outcome},
                                          {"terms", ra.terms},
                                          {"intercept", !ra.no_intercept},
                                          {"robust_se", ra.robust_se},
                                          {"margin", ra.margin}});
            man.write();
            run_regress_stage(ra);
            man.finish();
        } else if (c_simulate->parsed()) {
            Manifest man("simulate", sa.out);
            man.set_seed(sa.seed);
            if (!sa.config.empty()) man.add_input("config", sa.config);
            man.set_config(nlohmann::json::object());
            man.write();
            run_simulate_stage(sa);
            man.finish();
        } else if (c_recovery->parsed()) {
            Manifest man("recovery", rca.out);
            man.set_seed(0);
            man.add_input("truth", rca.truth);
            man.add_input("scores", fs::path(rca.fit) / "scores.tsv");
            man.set_config(nlohmann::json::object());
            man.write();
            run_recovery_stage(rca);
            man.finish();
        } else if (c_pipeline->parsed()) {
            Manifest man("pipeline", pa.out);
            man.set_seed(pa.seed);
            man.add_input("ads", pa.ads);
            man.add_input("replay", pa.replay);
            man.add_input("embeddings", pa.embeddings);
            man.add_input("registry", pa.registry);
            if (!pa.stance.empty()) man.add_input("stance", pa.stance);
            if (!pa.config.empty()) man.add_input("config", pa.config);
            man.set_config(nlohmann::json{{"by", pa.by},
                                          {"min_pairs", pa.min_pairs},
                                          {"min_cos", pa.min_cos},
                                          {"threads", threads}});
            man.write();
            run_pipeline_stage(pa);
            man.finish();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.push_back("greenscore");
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace greenscore::cli

// Acceptance suite: every release criterion runs here at its stated
// tolerance and prints one PASS/FAIL line. Exit status is nonzero when any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "greenscore/aggregate.hpp"
#include "greenscore/cli.hpp"
#include "greenscore/filter.hpp"
#include "greenscore/irt.hpp"
#include "greenscore/network.hpp"
#include "greenscore/simulate.hpp"
#include "greenscore/stats.hpp"
#include "oracles.hpp"

using namespace greenscore;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    std::string name;
    double time_limit_s;
    std::function<bool(std::string&)> run;
};

bool approx_rel(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

std::string read_all(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------

bool irt_gradient_check(std::string& detail) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto inst = oracles::random_instance(seed, 50, 10);
        const auto analytic = grad_log_posterior(inst.params, inst.matrix, inst.config);
        const std::size_t n_miss = inst.params.u_miss.size();
        auto f = [&](const std::vector<double>& x) {
            return log_posterior(
                IrtParams::unpack(x, inst.matrix.n_ads(), inst.matrix.n_items(), n_miss),
                inst.matrix, inst.config);
        };
        const auto fd = oracles::finite_difference(f, inst.params.pack(), 1e-5);
        for (std::size_t k = 0; k < fd.size(); ++k)
            worst = std::max(worst, oracles::rel_err(analytic[k], fd[k]));
    }
    detail = "max relative error " + format_double(worst);
    return worst < 1e-5;
}

bool likelihood_oracle(std::string& detail) {
    double worst = 0.0;
    // deterministic fixture with a missing cell
    IndicatorMatrix fixed;
    fixed.ads = {"a", "b"};
    fixed.items = {{"k", ItemSource::Keyword, false}, {"m", ItemSource::Llm, true}};
    fixed.cells = {{Cell::One, Cell::Missing}, {Cell::Zero, Cell::One}};
    IrtConfig cfg;
    cfg.anchors = {{"k", {3.0, 1.5}}};
    IrtParams q;
    q.theta = {0.3, -0.7};
    q.u = {0.4, -0.2};
    q.beta = {0.1, 0.6};
    q.u_miss = {-0.5};
    q.beta_miss = {0.9};
    {
        const double got = log_posterior(q, fixed, cfg);
        const double want = oracles::naive_log_posterior(q, fixed, cfg);
        worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
    }
    for (std::uint64_t seed = 100; seed < 130; ++seed) {
        auto inst = oracles::random_instance(seed);
        const double got = log_posterior(inst.params, inst.matrix, inst.config);
        const double want = oracles::naive_log_posterior(inst.params, inst.matrix, inst.config);
        worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
    }
    detail = "max relative deviation " + format_double(worst);
    return worst <= 1e-12;
}

bool parameter_recovery(std::string& detail) {
    double corr_min = 1.0, sign_min = 1.0;
    std::size_t cov_hits = 0, cov_total = 0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SimConfig sim;  // defaults: N=2000, J=15
        sim.seed = seed;
        sim.seed_set = true;
        const SyntheticDataset ds = generate(sim);
        IrtConfig config;
        config.seed = seed;
        config.draws = 4000;
        config.theta_prior_sd = sim.theta_sd;  // well-specified recovery study
        const IrtPosterior post = laplace_draws(fit_map(ds.matrix, config), ds.matrix, config);
        const RecoveryReport rep = recovery_report(ds.truth, post);
        corr_min = std::min(corr_min, rep.theta_correlation);
        sign_min = std::min(sign_min, rep.lambda_sign_agreement);
        cov_hits += static_cast<std::size_t>(rep.theta_coverage_90 * rep.n_ads + 0.5);
        cov_total += rep.n_ads;
    }
    const double coverage = static_cast<double>(cov_hits) / static_cast<double>(cov_total);
    detail = "min corr " + format_double(corr_min) + ", min sign agreement " +
             format_double(sign_min) + ", pooled coverage " + format_double(coverage);
    return corr_min >= 0.9 && sign_min >= 0.9 && coverage >= 0.85 && coverage <= 0.95;
}

bool anchor_behavior(std::string& detail) {
    double worst_pos = 1.0, worst_neg = -1.0;
    int rotations = 0;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SimConfig sim;
        sim.seed = seed;
        sim.seed_set = true;
        sim.n_ads = 300;
        sim.planted_edges.clear();
        const SyntheticDataset ds = generate(sim);
        IrtConfig config;
        config.seed = seed;
        config.draws = 400;
        const IrtPosterior post = laplace_draws(fit_map(ds.matrix, config), ds.matrix, config);

        for (const auto& item : post.items) {
            if (item.stage != ItemStage::Outcome) continue;
            if (item.key == "natural_gas") worst_pos = std::min(worst_pos, item.mean);
            if (item.key == "fossil_fuel") worst_neg = std::max(worst_neg, item.mean);
        }
        std::vector<double> est;
        for (const auto& s : post.scores) est.push_back(s.mean);
        if (pearson_corr(est, ds.truth.theta) > 0.0) ++rotations;
    }
    detail = "worst positive anchor " + format_double(worst_pos) + ", worst negative anchor " +
             format_double(worst_neg) + ", rotation recovered " + std::to_string(rotations) +
             "/20";
    return worst_pos > 0.9 && worst_neg < -0.9 && rotations == 20;
}

bool missingness_informative(std::string& detail) {
    SimConfig sim;
    sim.seed = 47;
    sim.seed_set = true;
    sim.lambda_miss_overrides[0] = -0.6;
    const SyntheticDataset ds = generate(sim);
    IrtConfig config;
    config.seed = 47;
    config.draws = 2000;
    config.theta_prior_sd = sim.theta_sd;
    const IrtPosterior post = laplace_draws(fit_map(ds.matrix, config), ds.matrix, config);

    const std::string key = ds.truth.item_keys[ds.truth.missable_items[0]];
    for (const auto& item : post.items) {
        if (item.stage != ItemStage::Missingness || item.key != key) continue;
        detail = "fitted missingness discrimination " + format_double(item.mean) + " [" +
                 format_double(item.q05) + ", " + format_double(item.q95) + "]";
        return item.mean < 0.0 && item.q95 < 0.0;
    }
    detail = "missingness item not found";
    return false;
}

bool mcmc_cross_check(std::string& detail) {
    SimConfig sim;
    sim.seed = 53;
    sim.seed_set = true;
    sim.n_ads = 100;
    sim.planted_edges.clear();
    const SyntheticDataset ds = generate(sim);
    IrtConfig config;
    config.seed = 53;
    config.draws = 2000;
    config.mcmc_burnin = 4000;
    config.mcmc_thin = 10;
    const IrtPosterior lap = laplace_draws(fit_map(ds.matrix, config), ds.matrix, config);
    const IrtPosterior mc = mcmc_validate(ds.matrix, config);

    std::size_t close = 0;
    for (std::size_t i = 0; i < lap.scores.size(); ++i) {
        const double sd = std::max(mc.scores[i].sd, 1e-9);
        close += std::abs(lap.scores[i].mean - mc.scores[i].mean) < 0.2 * sd;
    }
    detail = std::to_string(close) + "/" + std::to_string(lap.scores.size()) +
             " ads within 0.2 posterior sd";
    return close * 10 >= lap.scores.size() * 9;
}

bool classification_rule(std::string& detail) {
    auto s = [](double mean, double q05, double q95) {
        ScoreSummary x;
        x.ad_id = "t";
        x.mean = mean;
        x.q05 = q05;
        x.q95 = q95;
        return x;
    };
    struct Row {
        ScoreSummary summary;
        Classification want;
    };
    const std::vector<Row> table = {
        {s(7.05, 3.06, 10.9), Classification::Greenwashing},
        {s(0.0, -1.0, 1.0), Classification::Unclassified},
        {s(-2.0, -3.0, -0.5), Classification::NonGreenwashing},
        {s(1.0, 0.0, 2.0), Classification::Unclassified},  // interval touching zero
        {s(-1.0, -2.0, 0.0), Classification::Unclassified},
        {s(0.4, 1e-12, 1.0), Classification::Greenwashing},
        {s(-0.4, -1.0, -1e-12), Classification::NonGreenwashing},
    };
    for (const auto& row : table) {
        if (classify(row.summary) != row.want) {
            detail = "rule table mismatch at mean " + format_double(row.summary.mean);
            return false;
        }
    }
    detail = std::to_string(table.size()) + " rule rows exact";
    return true;
}

bool network_oracle(std::string& detail) {
    // random 50-ad fixtures against exhaustive enumeration
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
        Rng rng(seed);
        std::vector<AdRecord> ads;
        EmbeddingStore embeddings;
        std::map<std::string, double> scores;
        std::vector<std::vector<double>> bases(3, std::vector<double>(8));
        for (auto& b : bases) {
            double norm = 0.0;
            for (auto& x : b) {
                x = rng.normal();
                norm += x * x;
            }
            for (auto& x : b) x /= std::sqrt(norm);
        }
        for (int i = 0; i < 50; ++i) {
            AdRecord a;
            a.ad_id = "ad" + std::to_string(i);
            a.page_id = "pg" + std::to_string(i % 6);
            a.text = "t";
            ads.push_back(a);
            std::vector<double> v(8);
            if (rng.uniform() < 0.5) {
                const auto& b = bases[rng.uniform_int(3)];
                for (int k = 0; k < 8; ++k) v[k] = b[k] + 0.12 * rng.normal();
            } else {
                for (auto& x : v) x = rng.normal();
            }
            embeddings[a.ad_id] = v;
            scores[a.ad_id] = 2.0 * rng.normal();
        }
        LinkOptions opts;
        opts.min_pairs = 2;
        const PageGraph g = build_links(ads, embeddings, scores, opts);
        const auto naive = oracles::naive_build_links(ads, embeddings, scores, 2, 0.8);
        if (g.edges.size() != naive.size()) {
            detail = "edge count mismatch on fixture " + std::to_string(seed);
            return false;
        }
        for (std::size_t e = 0; e < naive.size(); ++e) {
            if (g.edges[e].page_a != naive[e].page_a || g.edges[e].page_b != naive[e].page_b ||
                g.edges[e].qualifying_pair_count != naive[e].count ||
                !approx_rel(g.edges[e].mean_cosine, naive[e].mean_cosine, 1e-12)) {
                detail = "edge mismatch on fixture " + std::to_string(seed);
                return false;
            }
        }
    }

    // planted networks recovered with zero false edges at the generating thresholds
    for (std::uint64_t seed = 11; seed <= 13; ++seed) {
        SimConfig sim;
        sim.seed = seed;
        sim.seed_set = true;
        sim.n_ads = 400;
        const SyntheticDataset ds = generate(sim);
        std::map<std::string, double> truth_scores;
        for (std::size_t i = 0; i < ds.matrix.n_ads(); ++i)
            truth_scores[ds.matrix.ads[i]] = ds.truth.theta[i];
        const PageGraph g = build_links(ds.corpus.ads, ds.embeddings, truth_scores);  // 5 / 0.8
        if (g.edges.size() != ds.truth.planted_edges.size()) {
            detail = "planted recovery found " + std::to_string(g.edges.size()) + " edges, want " +
                     std::to_string(ds.truth.planted_edges.size());
            return false;
        }
    }
    detail = "6 oracle fixtures exact, 3 planted networks recovered clean";
    return true;
}

bool ols_oracle(std::string& detail) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        std::vector<std::vector<double>> x;
        std::vector<double> y;
        for (int i = 0; i < 20; ++i) {
            x.push_back({1.0, 2.0 * rng.normal(), 2.0 * rng.normal()});
            y.push_back(rng.normal() + 0.5 * x.back()[1] - 1.2 * x.back()[2]);
        }
        const OlsFit fit = ols(x, y, {"(Intercept)", "x1", "x2"});
        const auto want = oracles::normal_equation_ols(x, y);
        for (std::size_t k = 0; k < 3; ++k)
            worst = std::max(worst, std::abs(fit.coefficients[k] - want[k]));
    }
    if (worst >= 1e-10) {
        detail = "normal-equation deviation " + format_double(worst);
        return false;
    }

    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (double xv : {0.0, 1.0, 2.0, 3.0, 4.0}) {
        x.push_back({1.0, xv});
        y.push_back(2.0 * xv + 1.0);
    }
    const OlsFit exact = ols(x, y, {"(Intercept)", "x"});
    if (exact.r_squared != 1.0) {
        detail = "exact fit returned R2 " + format_double(exact.r_squared);
        return false;
    }

    OlsFit fit;
    fit.column_names = {"(Intercept)", "transition", "republican", "transition:republican"};
    fit.coefficients = {-5.069, 0.674, -3.671, -0.683};
    fit.coef_cov.assign(4, std::vector<double>(4, 0.0));
    const ModelSpec spec = parse_model_spec("y", "transition + republican + transition:republican");
    const auto pts = marginal_effect(fit, spec, "transition", "republican", {0.0, 1.0});
    if (!approx_rel(pts[0].effect, 0.674, 1e-12) || !approx_rel(pts[1].effect, -0.009, 1e-9)) {
        detail = "marginal effects " + format_double(pts[0].effect) + ", " +
                 format_double(pts[1].effect);
        return false;
    }
    detail = "coefficients within " + format_double(worst) + " of the normal equations";
    return true;
}

bool filter_counts(std::string& detail) {
    const LexiconSet set = compile_lexicon(default_lexicon_config());
    auto mk = [](const std::string& id, const std::string& text) {
        AdRecord a;
        a.ad_id = id;
        a.page_id = "p";
        a.text = text;
        return a;
    };
    // hand-tallied corpus: coal 2, climate 2, icecap conjunction 2,
    // natural_gas 1, charcoal excluded, any = 6
    const std::vector<AdRecord> corpus = {
        mk("a0", "clean coal now"),
        mk("a1", "coal and climate testimony"),
        mk("a2", "charcoal grills on sale"),
        mk("a3", "the icecaps are melting"),
        mk("a4", "icecap flood warnings issued"),
        mk("a5", "icecaps are pretty"),
        mk("a6", "natural gas heats homes"),
        mk("a7", "climate research grants"),
        mk("a8", "nothing to declare"),
        mk("a9", "votes and ballots"),
    };
    const KeywordCountTable t1 = keyword_count_table(corpus, set);
    const KeywordCountTable t2 =
        keyword_count_table(corpus, compile_lexicon(default_lexicon_config()));

    std::ostringstream o1, o2;
    write_keyword_counts(o1, t1);
    write_keyword_counts(o2, t2);
    if (o1.str() != o2.str()) {
        detail = "non-deterministic keyword counts";
        return false;
    }
    const bool ok = t1.count_of("coal") == 2 && t1.count_of("climate") == 2 &&
                    t1.count_of("icecap_melt_flood") == 2 && t1.count_of("natural_gas") == 1 &&
                    t1.count_of("fossil_fuel") == 0 && t1.any_keywords == 6;
    detail = "coal " + std::to_string(t1.count_of("coal")) + ", icecap conjunction " +
             std::to_string(t1.count_of("icecap_melt_flood")) + ", any " +
             std::to_string(t1.any_keywords);
    return ok;
}

bool aggregation_identities(std::string& detail) {
    Rng rng(4242);
    for (int seed = 0; seed < 100; ++seed) {
        std::vector<AdRecord> ads;
        std::map<std::string, double> scores;
        const std::size_t n = 3 + rng.uniform_int(10);
        for (std::size_t i = 0; i < n; ++i) {
            AdRecord a;
            a.ad_id = "a" + std::to_string(i);
            a.page_id = "p";
            a.text = "t";
            std::vector<ImpressionCell> cells;
            const std::size_t g = 1 + rng.uniform_int(3);
            for (std::size_t k = 0; k < g; ++k)
                cells.push_back({"G" + std::to_string(rng.uniform_int(4)), 0.1 + rng.uniform()});
            a.impressions["country"] = cells;
            ads.push_back(a);
            scores[a.ad_id] = 4.0 * rng.uniform() - 2.0;
        }
        const auto base = weighted_group_scores(scores, ads, "country");
        if (base.empty()) continue;

        const double c = 0.5 + 2.0 * rng.uniform();
        auto scaled = scores;
        for (auto& [k, v] : scaled) v *= c;
        const auto gs_scaled = weighted_group_scores(scaled, ads, "country");
        for (std::size_t g = 0; g < base.size(); ++g)
            if (!approx_rel(gs_scaled[g].weighted_mean, c * base[g].weighted_mean, 1e-9)) {
                detail = "scale equivariance violated at seed " + std::to_string(seed);
                return false;
            }

        const std::string target = base[rng.uniform_int(base.size())].group_key;
        auto ads_w = ads;
        for (auto& a : ads_w)
            for (auto& cell : a.impressions["country"])
                if (cell.group_key == target) cell.value *= 2.5;
        const auto gs_w = weighted_group_scores(scores, ads_w, "country");
        for (const auto& gw : gs_w) {
            if (gw.group_key != target) continue;
            for (const auto& gb : base)
                if (gb.group_key == target &&
                    !approx_rel(gw.weighted_mean, gb.weighted_mean, 1e-9)) {
                    detail = "weight invariance violated at seed " + std::to_string(seed);
                    return false;
                }
        }

        if (base.size() >= 2) {
            auto ads_m = ads;
            const std::string ga = base[0].group_key, gb = base[1].group_key;
            for (auto& a : ads_m)
                for (auto& cell : a.impressions["country"])
                    if (cell.group_key == gb) cell.group_key = ga;
            const auto merged = weighted_group_scores(scores, ads_m, "country");
            const double want = (base[0].weighted_mean * base[0].total_weight +
                                 base[1].weighted_mean * base[1].total_weight) /
                                (base[0].total_weight + base[1].total_weight);
            for (const auto& g : merged)
                if (g.group_key == ga && !approx_rel(g.weighted_mean, want, 1e-9)) {
                    detail = "partition consistency violated at seed " + std::to_string(seed);
                    return false;
                }
        }
    }
    detail = "3 identities over 100 seeded fixtures";
    return true;
}

bool pipeline_determinism(std::string& detail) {
    const fs::path root = fs::temp_directory_path() / "greenscore_acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto sim = (root / "sim").string();
    {
        std::ofstream cfg(root / "sim.json");
        cfg << R"({"n_ads": 300, "seed": 21})";
    }
    if (cli::run({"simulate", "--config", (root / "sim.json").string(), "--out", sim}) != 0) {
        detail = "simulate failed";
        return false;
    }
    auto run_pipe = [&](const std::string& out, const char* threads) {
        return cli::run({"--threads", threads, "pipeline", "--ads", sim + "/ads.jsonl", "--replay",
                         sim + "/replay.jsonl", "--embeddings", sim + "/embeddings.txt",
                         "--registry", sim + "/registry.tsv", "--out", out, "--seed", "9"});
    };
    if (run_pipe((root / "p1").string(), "1") != 0 || run_pipe((root / "p2").string(), "1") != 0) {
        detail = "pipeline run failed";
        return false;
    }
    for (const auto& entry : fs::recursive_directory_iterator(root / "p1")) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), root / "p1");
        if (rel.string() == "manifest.json") continue;
        if (read_all(entry.path()) != read_all(root / "p2" / rel)) {
            detail = "rerun differs at " + rel.string();
            return false;
        }
    }

    if (run_pipe((root / "p4").string(), "4") != 0) {
        detail = "threaded pipeline failed";
        return false;
    }
    // per-score comparison at the documented tolerance
    std::ifstream s1(root / "p1" / "fit" / "scores.tsv"), s4(root / "p4" / "fit" / "scores.tsv");
    std::string l1, l4;
    std::getline(s1, l1), std::getline(s4, l4);
    std::size_t rows = 0;
    while (std::getline(s1, l1) && std::getline(s4, l4)) {
        const auto f1 = split(l1, '\t'), f4 = split(l4, '\t');
        for (int c : {1, 2, 3}) {
            double v1, v4;
            if (!parse_double(f1[c], v1) || !parse_double(f4[c], v4) || std::abs(v1 - v4) > 1e-8) {
                detail = "threaded scores differ at row " + std::to_string(rows);
                return false;
            }
        }
        ++rows;
    }
    fs::remove_all(root);
    detail = "byte-identical rerun, " + std::to_string(rows) + " scores match across thread counts";
    return true;
}

} // namespace

int main() {
    std::vector<Criterion> criteria = {
        {"irt gradient check (20 instances, rel err < 1e-5)", 10.0, irt_gradient_check},
        {"likelihood oracle (naive loop, 1e-12)", 1.0, likelihood_oracle},
        {"parameter recovery (N=2000, J=15, 10 seeds)", 300.0, parameter_recovery},
        {"anchor behavior (|lambda| > 0.9, rotation 20/20)", 120.0, anchor_behavior},
        {"missingness informativeness (true -0.6, interval < 0)", 120.0, missingness_informative},
        {"mcmc cross-check (100 ads, 0.2 posterior sd)", 180.0, mcmc_cross_check},
        {"classification rule table", 1.0, classification_rule},
        {"network oracle (exhaustive + planted)", 10.0, network_oracle},
        {"ols oracle (normal equations, margins)", 1.0, ols_oracle},
        {"filter determinism and counts", 1.0, filter_counts},
        {"aggregation identities (100 seeds)", 5.0, aggregation_identities},
        {"end-to-end determinism (pipeline, threads)", 180.0, pipeline_determinism},
    };

    int failures = 0;
    for (auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        std::string detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = elapsed <= c.time_limit_s;
        if (!in_time) detail += " (over time limit)";
        const bool pass = ok && in_time;
        failures += !pass;
        std::printf("%s  %-55s  %6.2fs  %s\n", pass ? "PASS" : "FAIL", c.name.c_str(), elapsed,
                    detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}

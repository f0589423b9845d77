#pragma once

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "greenscore/common.hpp"
#include "greenscore/ingest.hpp"

namespace greenscore {

using EmbeddingStore = std::map<std::string, std::vector<double>>;

// One line per ad: ad_id then d whitespace-separated decimals.
inline EmbeddingStore read_embeddings(std::istream& in) {
    EmbeddingStore store;
    std::string line;
    std::size_t lineno = 0;
    std::size_t dim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        std::istringstream ss(line);
        std::string id;
        ss >> id;
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        if (v.empty())
            throw std::runtime_error("embedding line " + std::to_string(lineno) + " has no values");
        if (dim == 0) dim = v.size();
        if (v.size() != dim)
            throw std::runtime_error("embedding line " + std::to_string(lineno) + " has dimension " +
                                     std::to_string(v.size()) + ", expected " + std::to_string(dim));
        double norm = 0.0;
        for (double e : v) norm += e * e;
        if (norm == 0.0)
            throw std::runtime_error("zero embedding vector for ad " + id);
        store[id] = std::move(v);
    }
    return store;
}

inline void write_embeddings(std::ostream& out, const EmbeddingStore& store) {
    for (const auto& [id, v] : store) {
        out << id;
        for (double x : v) out << ' ' << format_double(x);
        out << '\n';
    }
}

inline double cosine(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw std::runtime_error("cosine: dimension mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw std::runtime_error("cosine: zero vector");
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

// mean + 1 sample standard deviation (n-1 denominator)
inline double high_score_threshold(const std::vector<double>& scores) {
    if (scores.size() < 2) throw std::runtime_error("high_score_threshold needs >= 2 scores");
    return mean_of(scores) + sample_sd(scores);
}

struct PageNode {
    std::string page_id;
    std::string name;
    std::string funder;  // modal funder among the page's ads
    double mean_score = 0.0;
    bool is_seed = false;
    std::size_t n_ads = 0;
};

struct PageEdge {
    std::string page_a;  // canonical: page_a < page_b
    std::string page_b;
    std::size_t qualifying_pair_count = 0;
    double mean_cosine = 0.0;
};

struct PageGraph {
    std::vector<PageNode> nodes;
    std::vector<PageEdge> edges;

    const PageNode& node(const std::string& page_id) const {
        for (const auto& n : nodes)
            if (n.page_id == page_id) return n;
        throw std::runtime_error("no node for page " + page_id);
    }
};

enum class PairRule { Pairs, PerPageAds };

struct LinkOptions {
    std::size_t min_pairs = 5;
    double min_cos = 0.8;
    PairRule rule = PairRule::Pairs;
};

// Pages are linked when enough cross-page pairs of high-scoring ads are
// near-duplicates: both ads at or above mean + 1 sd, cosine >= min_cos.
// Node mean_score averages over ALL the page's scored ads. Exact pair
// enumeration with pre-normalized vectors.
inline PageGraph build_links(const std::vector<AdRecord>& ads, const EmbeddingStore& embeddings,
                             const std::map<std::string, double>& scores,
                             const LinkOptions& opts = {}) {
    std::string missing;
    for (const auto& ad : ads) {
        if (!scores.count(ad.ad_id) || !embeddings.count(ad.ad_id)) {
            if (!missing.empty()) missing += ", ";
            missing += ad.ad_id;
        }
    }
    if (!missing.empty())
        throw std::runtime_error("scores or embeddings missing for ads: " + missing);

    std::vector<double> all_scores;
    all_scores.reserve(ads.size());
    for (const auto& ad : ads) all_scores.push_back(scores.at(ad.ad_id));
    const double threshold = high_score_threshold(all_scores);

    // page bookkeeping over all scored ads
    struct PageAcc {
        std::string name;
        std::map<std::string, std::size_t> funders;
        double score_sum = 0.0;
        std::size_t n = 0;
        std::vector<std::size_t> high_ads;  // indices into `high`
    };
    std::map<std::string, PageAcc> pages;

    struct HighAd {
        const AdRecord* ad;
        std::vector<double> unit;  // normalized embedding
    };
    std::vector<HighAd> high;

    for (const auto& ad : ads) {
        PageAcc& acc = pages[ad.page_id];
        if (acc.name.empty() && !ad.page_name.empty()) acc.name = ad.page_name;
        if (!ad.funder.empty()) acc.funders[ad.funder] += 1;
        acc.score_sum += scores.at(ad.ad_id);
        acc.n += 1;
        if (scores.at(ad.ad_id) >= threshold) {
            HighAd h;
            h.ad = &ad;
            h.unit = embeddings.at(ad.ad_id);
            double norm = 0.0;
            for (double x : h.unit) norm += x * x;
            norm = std::sqrt(norm);
            for (double& x : h.unit) x /= norm;
            acc.high_ads.push_back(high.size());
            high.push_back(std::move(h));
        }
    }

    PageGraph g;
    for (const auto& [pid, acc] : pages) {
        PageNode n;
        n.page_id = pid;
        n.name = acc.name.empty() ? pid : acc.name;
        n.mean_score = acc.score_sum / static_cast<double>(acc.n);
        n.n_ads = acc.n;
        std::size_t best = 0;
        for (const auto& [funder, cnt] : acc.funders)
            if (cnt > best) {
                best = cnt;
                n.funder = funder;
            }
        g.nodes.push_back(std::move(n));
    }

    // cross-page pair enumeration among high-scoring ads
    std::vector<std::string> page_ids;
    for (const auto& [pid, acc] : pages) page_ids.push_back(pid);
    for (std::size_t a = 0; a < page_ids.size(); ++a) {
        const auto& ha = pages.at(page_ids[a]).high_ads;
        if (ha.empty()) continue;
        for (std::size_t b = a + 1; b < page_ids.size(); ++b) {
            const auto& hb = pages.at(page_ids[b]).high_ads;
            if (hb.empty()) continue;
            std::size_t count = 0;
            double cos_sum = 0.0;
            std::set<std::size_t> qual_a, qual_b;
            for (std::size_t ia : ha) {
                for (std::size_t ib : hb) {
                    double dot = 0.0;
                    const auto& u = high[ia].unit;
                    const auto& v = high[ib].unit;
                    for (std::size_t k = 0; k < u.size(); ++k) dot += u[k] * v[k];
                    if (dot >= opts.min_cos) {
                        ++count;
                        cos_sum += dot;
                        qual_a.insert(ia);
                        qual_b.insert(ib);
                    }
                }
            }
            bool linked;
            if (opts.rule == PairRule::Pairs)
                linked = count >= opts.min_pairs;
            else
                linked = std::min(qual_a.size(), qual_b.size()) >= opts.min_pairs;
            if (linked) {
                PageEdge e;
                e.page_a = page_ids[a];
                e.page_b = page_ids[b];
                e.qualifying_pair_count = count;
                e.mean_cosine = cos_sum / static_cast<double>(count);
                g.edges.push_back(std::move(e));
            }
        }
    }
    return g;
}

// Keep edges with at least one registry endpoint and nodes incident to a
// kept edge; marks is_seed from the registry first.
inline PageGraph seed_filter(const PageGraph& graph, const EntityRegistry& registry) {
    PageGraph out;
    std::set<std::string> seeds;
    for (const auto& e : registry.entries) seeds.insert(e.page_id);

    std::set<std::string> kept_pages;
    for (const auto& e : graph.edges) {
        if (seeds.count(e.page_a) || seeds.count(e.page_b)) {
            out.edges.push_back(e);
            kept_pages.insert(e.page_a);
            kept_pages.insert(e.page_b);
        }
    }
    for (const auto& n : graph.nodes) {
        if (!kept_pages.count(n.page_id)) continue;
        PageNode kept = n;
        kept.is_seed = seeds.count(n.page_id) > 0;
        out.nodes.push_back(std::move(kept));
    }
    return out;
}

struct ScoreDifferenceRow {
    std::string seed_page;    // name of the pre-identified page
    std::string linked_page;  // name of the connected page
    std::string linked_funder;
    double difference = 0.0;  // linked mean minus seed mean
};

// Ranked so a high positive difference marks a seed whose own ads average
// much less greenwashing than the linked page's.
inline std::vector<ScoreDifferenceRow> score_differences(const PageGraph& graph) {
    std::vector<ScoreDifferenceRow> rows;
    for (const auto& e : graph.edges) {
        const PageNode& a = graph.node(e.page_a);
        const PageNode& b = graph.node(e.page_b);
        if (a.is_seed)
            rows.push_back({a.name, b.name, b.funder, b.mean_score - a.mean_score});
        if (b.is_seed)
            rows.push_back({b.name, a.name, a.funder, a.mean_score - b.mean_score});
    }
    std::sort(rows.begin(), rows.end(), [](const ScoreDifferenceRow& x, const ScoreDifferenceRow& y) {
        if (x.difference != y.difference) return x.difference > y.difference;
        if (x.seed_page != y.seed_page) return x.seed_page < y.seed_page;
        return x.linked_page < y.linked_page;
    });
    return rows;
}

// ---------------------------------------------------------------------------
// Exports

inline std::string dot_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

inline void write_dot(std::ostream& out, const PageGraph& g) {
    out << "graph page_similarity {\n";
    for (const auto& n : g.nodes)
        out << "  \"" << dot_escape(n.page_id) << "\" [label=\"" << dot_escape(n.name)
            << "\", mean_score=" << format_double(n.mean_score)
            << ", is_seed=" << (n.is_seed ? "true" : "false") << "];\n";
    for (const auto& e : g.edges) {
        const double diff = g.node(e.page_b).mean_score - g.node(e.page_a).mean_score;
        out << "  \"" << dot_escape(e.page_a) << "\" -- \"" << dot_escape(e.page_b)
            << "\" [count=" << e.qualifying_pair_count
            << ", mean_cosine=" << format_double(e.mean_cosine)
            << ", difference=" << format_double(diff) << "];\n";
    }
    out << "}\n";
}

inline void write_edge_table(std::ostream& out, const PageGraph& g) {
    out << "page_a\tpage_b\tqualifying_pair_count\tmean_cosine\tscore_difference\n";
    for (const auto& e : g.edges) {
        const double diff = g.node(e.page_b).mean_score - g.node(e.page_a).mean_score;
        out << e.page_a << '\t' << e.page_b << '\t' << e.qualifying_pair_count << '\t'
            << format_double(e.mean_cosine) << '\t' << format_double(diff) << '\n';
    }
}

inline void write_node_table(std::ostream& out, const PageGraph& g) {
    out << "page_id\tname\tfunder\tmean_score\tis_seed\tn_ads\n";
    for (const auto& n : g.nodes)
        out << n.page_id << '\t' << n.name << '\t' << n.funder << '\t'
            << format_double(n.mean_score) << '\t' << (n.is_seed ? 1 : 0) << '\t' << n.n_ads << '\n';
}

inline void write_differences(std::ostream& out, const std::vector<ScoreDifferenceRow>& rows) {
    out << "seed_page\tlinked_page\tlinked_funder\tdifference\n";
    for (const auto& r : rows)
        out << r.seed_page << '\t' << r.linked_page << '\t' << r.linked_funder << '\t'
            << format_double(r.difference) << '\n';
}

} // namespace greenscore

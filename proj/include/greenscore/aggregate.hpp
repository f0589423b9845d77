#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "greenscore/common.hpp"
#include "greenscore/ingest.hpp"
#include "greenscore/irt.hpp"

namespace greenscore {

struct GroupScore {
    std::string group_key;
    double weighted_mean = 0.0;
    double total_weight = 0.0;
    std::size_t n_ads = 0;
};

// Impression-weighted mean score per group of one breakdown dimension.
// Weights are the stored impression values: counts when the corpus carries
// counts, shares otherwise (shares without totals are a documented
// approximation). Zero-weight groups are omitted.
inline std::vector<GroupScore> weighted_group_scores(const std::map<std::string, double>& scores,
                                                     const std::vector<AdRecord>& ads,
                                                     const std::string& dimension) {
    struct Acc {
        double wsum = 0.0;
        double swsum = 0.0;
        std::size_t n = 0;
    };
    std::map<std::string, Acc> acc;
    for (const auto& ad : ads) {
        const auto dim = ad.impressions.find(dimension);
        if (dim == ad.impressions.end()) continue;
        const auto sc = scores.find(ad.ad_id);
        if (sc == scores.end())
            throw std::runtime_error("ad " + ad.ad_id + " has impressions in dimension '" +
                                     dimension + "' but no score");
        for (const auto& cell : dim->second) {
            if (cell.value <= 0.0) continue;
            Acc& a = acc[cell.group_key];
            a.wsum += cell.value;
            a.swsum += cell.value * sc->second;
            a.n += 1;
        }
    }
    std::vector<GroupScore> out;
    for (const auto& [key, a] : acc) {
        if (a.wsum <= 0.0) continue;
        out.push_back({key, a.swsum / a.wsum, a.wsum, a.n});
    }
    return out;
}

struct ClassificationShare {
    std::string group_key;
    double greenwashing = 0.0;
    double non_greenwashing = 0.0;
    double unclassified = 0.0;
    double total_weight = 0.0;
    std::size_t n_ads = 0;
};

// Impression-weighted share of each classification per group; shares sum
// to 1 within 1e-9 for every emitted group.
inline std::vector<ClassificationShare> classification_shares(
    const std::map<std::string, Classification>& classifications, const std::vector<AdRecord>& ads,
    const std::string& dimension) {
    struct Acc {
        double w_green = 0.0, w_non = 0.0, w_un = 0.0;
        std::size_t n = 0;
    };
    std::map<std::string, Acc> acc;
    for (const auto& ad : ads) {
        const auto dim = ad.impressions.find(dimension);
        if (dim == ad.impressions.end()) continue;
        const auto cl = classifications.find(ad.ad_id);
        if (cl == classifications.end())
            throw std::runtime_error("ad " + ad.ad_id + " has impressions in dimension '" +
                                     dimension + "' but no classification");
        for (const auto& cell : dim->second) {
            if (cell.value <= 0.0) continue;
            Acc& a = acc[cell.group_key];
            switch (cl->second) {
                case Classification::Greenwashing: a.w_green += cell.value; break;
                case Classification::NonGreenwashing: a.w_non += cell.value; break;
                default: a.w_un += cell.value; break;
            }
            a.n += 1;
        }
    }
    std::vector<ClassificationShare> out;
    for (const auto& [key, a] : acc) {
        const double total = a.w_green + a.w_non + a.w_un;
        if (total <= 0.0) continue;
        out.push_back({key, a.w_green / total, a.w_non / total, a.w_un / total, total, a.n});
    }
    return out;
}

inline void write_group_scores(std::ostream& out, const std::string& dimension,
                               const std::vector<GroupScore>& groups) {
    out << "dimension\tgroup_key\tweighted_mean\ttotal_weight\tn_ads\n";
    for (const auto& g : groups)
        out << dimension << '\t' << g.group_key << '\t' << format_double(g.weighted_mean) << '\t'
            << format_double(g.total_weight) << '\t' << g.n_ads << '\n';
}

inline void write_classification_shares(std::ostream& out, const std::string& dimension,
                                        const std::vector<ClassificationShare>& shares) {
    out << "dimension\tgroup_key\tgreenwashing\tnon_greenwashing\tunclassified\ttotal_weight\tn_ads\n";
    for (const auto& s : shares)
        out << dimension << '\t' << s.group_key << '\t' << format_double(s.greenwashing) << '\t'
            << format_double(s.non_greenwashing) << '\t' << format_double(s.unclassified) << '\t'
            << format_double(s.total_weight) << '\t' << s.n_ads << '\n';
}

} // namespace greenscore

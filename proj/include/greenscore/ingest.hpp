#pragma once

#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "greenscore/common.hpp"

namespace greenscore {

// One impression bucket inside a breakdown dimension (country, region, age).
struct ImpressionCell {
    std::string group_key;
    double value = 0.0;

    bool operator==(const ImpressionCell&) const = default;
};

// Simple calendar date; only ordering and round-tripping are needed.
struct Date {
    int year = 0;
    int month = 0;
    int day = 0;

    bool valid() const { return year != 0; }
    auto operator<=>(const Date&) const = default;

    static Date parse(std::string_view s) {
        Date d;
        const auto parts = split(s, '-');
        if (parts.size() != 3) throw std::runtime_error("invalid date '" + std::string(s) + "'");
        double y, m, dd;
        if (!parse_double(parts[0], y) || !parse_double(parts[1], m) || !parse_double(parts[2], dd))
            throw std::runtime_error("invalid date '" + std::string(s) + "'");
        d.year = static_cast<int>(y);
        d.month = static_cast<int>(m);
        d.day = static_cast<int>(dd);
        if (d.month < 1 || d.month > 12 || d.day < 1 || d.day > 31)
            throw std::runtime_error("invalid date '" + std::string(s) + "'");
        return d;
    }

    std::string str() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
        return buf;
    }
};

struct AdRecord {
    std::string ad_id;
    std::string page_id;
    std::string page_name;
    std::string funder;
    std::string text;          // may be empty, never absent
    std::string language = "en";
    std::optional<Date> start_date;
    std::optional<Date> end_date;
    // breakdown dimension -> buckets; dimensions are independent of each other
    std::map<std::string, std::vector<ImpressionCell>> impressions;

    bool operator==(const AdRecord&) const = default;
};

struct ParseIssue {
    std::size_t line = 0;  // 1-based input line
    std::string message;
};

struct AdCorpus {
    std::vector<AdRecord> ads;
    bool impressions_are_counts = false;  // per-file flag; shares otherwise
    std::vector<ParseIssue> errors;
    std::size_t input_lines = 0;
};

// Maps source field names to AdRecord fields. Identity by default.
struct AdSchema {
    std::map<std::string, std::string> field_map;

    std::string source_name(const std::string& canonical) const {
        for (const auto& [src, dst] : field_map)
            if (dst == canonical) return src;
        return canonical;
    }
};

namespace detail {

inline void validate_impressions(const AdRecord& ad, bool are_counts) {
    for (const auto& [dim, cells] : ad.impressions) {
        double total = 0.0;
        for (const auto& c : cells) {
            if (c.value < 0.0)
                throw std::runtime_error("negative impression value in dimension '" + dim + "'");
            total += c.value;
        }
        if (!are_counts && total > 1.0 + 1e-9)
            throw std::runtime_error("impression shares sum to " + format_double(total) +
                                     " > 1 in dimension '" + dim + "'");
    }
}

} // namespace detail

// Parse one line-delimited record stream of ads. Malformed lines land in the
// error report; duplicate ad_id is a hard error.
inline AdCorpus parse_ads(std::istream& in, const AdSchema& schema = {}) {
    AdCorpus corpus;
    std::set<std::string> seen_ids;
    std::string line;
    std::size_t lineno = 0;

    const std::string f_ad_id = schema.source_name("ad_id");
    const std::string f_page_id = schema.source_name("page_id");
    const std::string f_page_name = schema.source_name("page_name");
    const std::string f_funder = schema.source_name("funder");
    const std::string f_text = schema.source_name("text");
    const std::string f_language = schema.source_name("language");
    const std::string f_start = schema.source_name("start_date");
    const std::string f_end = schema.source_name("end_date");
    const std::string f_impressions = schema.source_name("impressions");
    const std::string f_counts_flag = schema.source_name("impressions_are_counts");

    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        ++corpus.input_lines;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            corpus.errors.push_back({lineno, std::string("unparseable line: ") + e.what()});
            continue;
        }
        try {
            if (j.contains(f_counts_flag)) corpus.impressions_are_counts = j.at(f_counts_flag).get<bool>();

            AdRecord ad;
            if (!j.contains(f_ad_id) || !j.at(f_ad_id).is_string() || j.at(f_ad_id).get<std::string>().empty())
                throw std::runtime_error("missing mandatory field '" + f_ad_id + "'");
            if (!j.contains(f_page_id)) throw std::runtime_error("missing mandatory field '" + f_page_id + "'");
            if (!j.contains(f_text)) throw std::runtime_error("missing mandatory field '" + f_text + "'");
            ad.ad_id = j.at(f_ad_id).get<std::string>();
            ad.page_id = j.at(f_page_id).get<std::string>();
            ad.text = j.at(f_text).get<std::string>();
            if (j.contains(f_page_name)) ad.page_name = j.at(f_page_name).get<std::string>();
            if (j.contains(f_funder)) ad.funder = j.at(f_funder).get<std::string>();
            if (j.contains(f_language)) ad.language = j.at(f_language).get<std::string>();
            if (j.contains(f_start)) ad.start_date = Date::parse(j.at(f_start).get<std::string>());
            if (j.contains(f_end)) ad.end_date = Date::parse(j.at(f_end).get<std::string>());
            if (ad.start_date && ad.end_date && *ad.end_date < *ad.start_date)
                throw std::runtime_error("end_date precedes start_date");
            if (j.contains(f_impressions)) {
                for (const auto& [dim, arr] : j.at(f_impressions).items()) {
                    std::vector<ImpressionCell> cells;
                    for (const auto& e : arr) {
                        ImpressionCell c;
                        c.group_key = e.at("group_key").get<std::string>();
                        c.value = e.at("value").get<double>();
                        cells.push_back(std::move(c));
                    }
                    ad.impressions[dim] = std::move(cells);
                }
            }
            detail::validate_impressions(ad, corpus.impressions_are_counts);

            // duplicate id is a corpus-level invariant violation, not a line error
            if (!seen_ids.insert(ad.ad_id).second)
                throw std::runtime_error("duplicate ad_id " + ad.ad_id);
            corpus.ads.push_back(std::move(ad));
        } catch (const std::exception& e) {
            const std::string msg = e.what();
            if (msg.rfind("duplicate ad_id", 0) == 0) throw;  // hard error
            corpus.errors.push_back({lineno, msg});
        }
    }
    return corpus;
}

inline nlohmann::json ad_to_json(const AdRecord& ad) {
    nlohmann::json j;
    j["ad_id"] = ad.ad_id;
    j["page_id"] = ad.page_id;
    if (!ad.page_name.empty()) j["page_name"] = ad.page_name;
    if (!ad.funder.empty()) j["funder"] = ad.funder;
    j["text"] = ad.text;
    j["language"] = ad.language;
    if (ad.start_date) j["start_date"] = ad.start_date->str();
    if (ad.end_date) j["end_date"] = ad.end_date->str();
    if (!ad.impressions.empty()) {
        nlohmann::json imp = nlohmann::json::object();
        for (const auto& [dim, cells] : ad.impressions) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& c : cells) arr.push_back({{"group_key", c.group_key}, {"value", c.value}});
            imp[dim] = std::move(arr);
        }
        j["impressions"] = std::move(imp);
    }
    return j;
}

inline void write_ads(std::ostream& out, const AdCorpus& corpus) {
    bool flagged = false;
    for (const auto& ad : corpus.ads) {
        nlohmann::json j = ad_to_json(ad);
        if (!flagged) {
            j["impressions_are_counts"] = corpus.impressions_are_counts;
            flagged = true;
        }
        out << j.dump() << '\n';
    }
}

// ---------------------------------------------------------------------------
// Entity registry

enum class EntityType { OilCompany, Subsidiary, ThinkTank, TradeAssociation, InterestGroup, Other };

inline const char* entity_type_name(EntityType t) {
    switch (t) {
        case EntityType::OilCompany: return "oil_company";
        case EntityType::Subsidiary: return "subsidiary";
        case EntityType::ThinkTank: return "think_tank";
        case EntityType::TradeAssociation: return "trade_association";
        case EntityType::InterestGroup: return "interest_group";
        default: return "other";
    }
}

inline EntityType entity_type_from(std::string_view s) {
    if (s == "oil_company") return EntityType::OilCompany;
    if (s == "subsidiary") return EntityType::Subsidiary;
    if (s == "think_tank") return EntityType::ThinkTank;
    if (s == "trade_association") return EntityType::TradeAssociation;
    if (s == "interest_group") return EntityType::InterestGroup;
    if (s == "other") return EntityType::Other;
    throw std::runtime_error("unknown entity_type '" + std::string(s) + "'");
}

struct EntityEntry {
    std::string page_id;
    std::string entity_name;
    EntityType entity_type = EntityType::Other;
};

struct EntityRegistry {
    std::vector<EntityEntry> entries;

    bool contains(const std::string& page_id) const {
        for (const auto& e : entries)
            if (e.page_id == page_id) return true;
        return false;
    }
};

namespace detail {

// Delimiter inference: tab wins if the header contains one.
inline char infer_delim(const std::string& header) {
    return header.find('\t') != std::string::npos ? '\t' : ',';
}

} // namespace detail

// Delimited table with header page_id, entity_name, entity_type.
inline EntityRegistry parse_registry(std::istream& in) {
    EntityRegistry reg;
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("registry stream is empty");
    const char delim = detail::infer_delim(header);
    const auto cols = split(trim(header), delim);
    auto col_of = [&](std::string_view name) {
        for (std::size_t i = 0; i < cols.size(); ++i)
            if (trim(cols[i]) == name) return i;
        throw std::runtime_error("registry header missing column '" + std::string(name) + "'");
    };
    const std::size_t c_id = col_of("page_id");
    const std::size_t c_name = col_of("entity_name");
    const std::size_t c_type = col_of("entity_type");

    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split(line, delim);
        if (fields.size() <= std::max({c_id, c_name, c_type}))
            throw std::runtime_error("registry row " + std::to_string(lineno) + " has too few fields");
        EntityEntry e;
        e.page_id = trim(fields[c_id]);
        e.entity_name = trim(fields[c_name]);
        try {
            e.entity_type = entity_type_from(trim(fields[c_type]));
        } catch (const std::exception& ex) {
            throw std::runtime_error(std::string(ex.what()) + " at registry row " + std::to_string(lineno));
        }
        if (!seen.insert(e.page_id).second)
            throw std::runtime_error("duplicate page_id " + e.page_id + " at registry row " +
                                     std::to_string(lineno));
        reg.entries.push_back(std::move(e));
    }
    return reg;
}

inline void write_registry(std::ostream& out, const EntityRegistry& reg) {
    out << "page_id\tentity_name\tentity_type\n";
    for (const auto& e : reg.entries)
        out << e.page_id << '\t' << e.entity_name << '\t' << entity_type_name(e.entity_type) << '\n';
}

// ---------------------------------------------------------------------------
// Covariate table

struct CovariateTable {
    std::vector<std::string> columns;               // numeric column names
    std::vector<std::string> unit_ids;              // row index
    std::vector<std::vector<std::optional<double>>> rows;  // rows x columns

    std::size_t col_index(const std::string& name) const {
        for (std::size_t i = 0; i < columns.size(); ++i)
            if (columns[i] == name) return i;
        throw std::runtime_error("unknown covariate column '" + name + "'");
    }
};

// Delimited table with a unit_id column plus numeric columns. "" and "NA"
// mark missing cells.
inline CovariateTable parse_covariates(std::istream& in,
                                       const std::vector<std::string>& expected_columns = {}) {
    CovariateTable t;
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("covariate stream is empty");
    const char delim = detail::infer_delim(header);
    auto cols = split(trim(header), delim);
    for (auto& c : cols) c = trim(c);
    if (cols.empty() || cols[0] != "unit_id")
        throw std::runtime_error("covariate header must start with unit_id");
    t.columns.assign(cols.begin() + 1, cols.end());
    for (const auto& want : expected_columns) {
        bool found = false;
        for (const auto& have : t.columns)
            if (have == want) found = true;
        if (!found) throw std::runtime_error("covariate header missing expected column '" + want + "'");
    }

    std::set<std::string> seen;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto fields = split(line, delim);
        if (fields.size() != cols.size())
            throw std::runtime_error("covariate row " + std::to_string(lineno) + " has " +
                                     std::to_string(fields.size()) + " fields, expected " +
                                     std::to_string(cols.size()));
        const std::string id = trim(fields[0]);
        if (!seen.insert(id).second)
            throw std::runtime_error("duplicate unit_id " + id + " at row " + std::to_string(lineno));
        std::vector<std::optional<double>> row;
        row.reserve(t.columns.size());
        for (std::size_t i = 1; i < fields.size(); ++i) {
            const std::string cell = trim(fields[i]);
            if (cell.empty() || cell == "NA") {
                row.push_back(std::nullopt);
                continue;
            }
            double v;
            if (!parse_double(cell, v))
                throw std::runtime_error("non-numeric cell '" + cell + "' at (row " +
                                         std::to_string(lineno) + ", col " + t.columns[i - 1] + ")");
            row.push_back(v);
        }
        t.unit_ids.push_back(id);
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_covariates(std::ostream& out, const CovariateTable& t) {
    out << "unit_id";
    for (const auto& c : t.columns) out << '\t' << c;
    out << '\n';
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        out << t.unit_ids[r];
        for (const auto& cell : t.rows[r]) out << '\t' << (cell ? format_double(*cell) : "NA");
        out << '\n';
    }
}

} // namespace greenscore

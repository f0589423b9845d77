#pragma once

#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "greenscore/common.hpp"
#include "greenscore/filter.hpp"
#include "greenscore/ingest.hpp"

namespace greenscore {

// ---------------------------------------------------------------------------
// Prompt assembly. The ad text and page name share the classification slot,
// page name after the underscore separator. Byte-stable across runs.

inline std::string build_prompt(const std::string& ad_text, const std::string& page_name) {
    std::string out;
    out.reserve(ad_text.size() + page_name.size() + 900);
    out += "Advertisement Text: [\"";
    out += ad_text;
    out += "_____";
    out += page_name;
    out += "\"] : You are a human bot evaluating a number of advertisements on webpages. "
           "You are given the text of the advertisement and name of the website after _____.\n"
           "\n"
           "Based on this information, your task is to answer the following question:\n"
           "\n"
           "Greenwashing is the act of making false or misleading statements about the climate "
           "impact of a product or practice. It can be a way for companies to maintain or "
           "increase their greenhouse gas emissions. Is this ad engaged in greenwashing?\n"
           "\n"
           "Your must choose exactly one of the following predefined answers: yes, no\n"
           "\n"
           "You will only respond with the answer. Do not repeat these instructions or include "
           "the word 'Answer:' before giving your answer. Do not give any explanations or notes.";
    return out;
}

// ---------------------------------------------------------------------------
// Response coding. Leading standalone yes/no decides the value; a later
// opposite token demotes the response to Missing, as does anything else.

namespace detail {

inline std::vector<std::string> response_words(const std::string& raw) {
    std::string s = ascii_lower(raw);
    // strip any 'answer:' prefixes the model echoed despite instructions
    for (;;) {
        std::size_t i = 0;
        while (i < s.size() && (std::isspace(static_cast<unsigned char>(s[i])) ||
                                std::ispunct(static_cast<unsigned char>(s[i]))))
            ++i;
        if (s.compare(i, 7, "answer:") == 0)
            s.erase(0, i + 7);
        else if (s.compare(i, 6, "answer") == 0 && i + 6 < s.size() &&
                 (s[i + 6] == ':' || s[i + 6] == '='))
            s.erase(0, i + 7);
        else
            break;
    }
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(c));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

} // namespace detail

// Total: every string maps to exactly one of {One, Zero, Missing}.
inline Cell parse_llm_response(const std::string& raw) {
    const auto words = detail::response_words(raw);
    if (words.empty()) return Cell::Missing;
    const bool leads_yes = words.front() == "yes";
    const bool leads_no = words.front() == "no";
    if (!leads_yes && !leads_no) return Cell::Missing;
    for (std::size_t i = 1; i < words.size(); ++i) {
        if (leads_yes && words[i] == "no") return Cell::Missing;
        if (leads_no && words[i] == "yes") return Cell::Missing;
    }
    return leads_yes ? Cell::One : Cell::Zero;
}

// ---------------------------------------------------------------------------
// Annotation client contract

struct AnnotationRequest {
    std::string prompt;
    std::string model_id;
    std::uint64_t seed = 0;
    int max_tokens = 16;
};

struct AnnotationResponse {
    bool transport_ok = false;
    std::string raw_text;
    std::string error;
};

class AnnotationClient {
public:
    virtual ~AnnotationClient() = default;
    virtual AnnotationResponse complete(const AnnotationRequest& req) = 0;
};

// Offline client answering from a fixed prompt -> response map; unmapped
// prompts are transport failures.
class ScriptedClient : public AnnotationClient {
public:
    explicit ScriptedClient(std::map<std::string, std::string> by_prompt)
        : by_prompt_(std::move(by_prompt)) {}

    AnnotationResponse complete(const AnnotationRequest& req) override {
        ++calls_;
        const auto it = by_prompt_.find(req.prompt);
        if (it == by_prompt_.end()) return {false, "", "no scripted response"};
        return {true, it->second, ""};
    }

    std::size_t calls() const { return calls_; }

private:
    std::map<std::string, std::string> by_prompt_;
    std::size_t calls_ = 0;
};

inline std::string prompt_hash(const std::string& prompt) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(prompt)));
    return buf;
}

// Append-only replay cache keyed by (item_key, ad_id, prompt_hash).
class ReplayCache {
public:
    struct Entry {
        std::string item_key;
        std::string ad_id;
        std::string prompt_hash;
        std::string raw_response;
    };

    void load(std::istream& in) {
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            const auto j = nlohmann::json::parse(line);
            Entry e{j.at("item_key").get<std::string>(), j.at("ad_id").get<std::string>(),
                    j.at("prompt_hash").get<std::string>(), j.at("raw_response").get<std::string>()};
            map_[key_of(e.item_key, e.ad_id, e.prompt_hash)] = e.raw_response;
        }
    }

    std::optional<std::string> lookup(const std::string& item_key, const std::string& ad_id,
                                      const std::string& phash) const {
        const auto it = map_.find(key_of(item_key, ad_id, phash));
        if (it == map_.end()) return std::nullopt;
        return it->second;
    }

    // single synchronization point for concurrent annotation
    void insert(const Entry& e, std::ostream* sink) {
        std::lock_guard<std::mutex> lock(mu_);
        map_[key_of(e.item_key, e.ad_id, e.prompt_hash)] = e.raw_response;
        if (sink) {
            nlohmann::json j{{"item_key", e.item_key},
                             {"ad_id", e.ad_id},
                             {"prompt_hash", e.prompt_hash},
                             {"raw_response", e.raw_response}};
            *sink << j.dump() << '\n';
            sink->flush();
        }
    }

    std::size_t size() const { return map_.size(); }

private:
    static std::string key_of(const std::string& item, const std::string& ad, const std::string& h) {
        return item + '\x1f' + ad + '\x1f' + h;
    }

    std::map<std::string, std::string> map_;
    std::mutex mu_;
};

struct AnnotationColumn {
    std::string item_key;
    std::map<std::string, Cell> values;  // ad_id -> cell
    std::string annotator_id;
    std::string model_version;
    std::uint64_t seed = 0;
};

struct AnnotateOptions {
    int max_retries = 2;
    std::ostream* cache_sink = nullptr;  // appended replay entries
    std::vector<std::string>* warnings = nullptr;
};

// One parsed value per ad. Cache hits make no external calls; transport
// failures retry then degrade to Missing with a warning (parse-level
// Missing is logged separately).
inline AnnotationColumn annotate_corpus(const std::vector<AdRecord>& ads, AnnotationClient* client,
                                        const std::string& item_key, std::uint64_t seed,
                                        ReplayCache& cache, const AnnotateOptions& opts = {}) {
    AnnotationColumn col;
    col.item_key = item_key;
    col.annotator_id = item_key;
    col.model_version = item_key;
    col.seed = seed;

    auto warn = [&](const std::string& msg) {
        if (opts.warnings) opts.warnings->push_back(msg);
    };

    for (const auto& ad : ads) {
        const std::string prompt = build_prompt(ad.text, ad.page_name);
        const std::string phash = prompt_hash(prompt);

        std::optional<std::string> raw = cache.lookup(item_key, ad.ad_id, phash);
        if (!raw) {
            AnnotationResponse resp;
            for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
                if (!client) break;
                resp = client->complete({prompt, item_key, seed, 16});
                if (resp.transport_ok) break;
            }
            if (!resp.transport_ok) {
                warn("transport failure for ad " + ad.ad_id + " on item " + item_key +
                     "; coding as missing");
                col.values[ad.ad_id] = Cell::Missing;
                continue;
            }
            raw = resp.raw_text;
            cache.insert({item_key, ad.ad_id, phash, *raw}, opts.cache_sink);
        }

        const Cell c = parse_llm_response(*raw);
        if (c == Cell::Missing)
            warn("unparseable response for ad " + ad.ad_id + " on item " + item_key +
                 "; coding as missing");
        col.values[ad.ad_id] = c;
    }
    return col;
}

// Precomputed stance column ingested from a delimited file: ad_id<TAB>value
// with value in {1,0,.}.
inline AnnotationColumn load_stance_column(std::istream& in, const std::string& item_key) {
    AnnotationColumn col;
    col.item_key = item_key;
    col.annotator_id = item_key;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty() || line.rfind("ad_id", 0) == 0) continue;
        const auto fields = split(trim(line), '\t');
        if (fields.size() != 2)
            throw std::runtime_error("stance row " + std::to_string(lineno) + " needs ad_id<TAB>value");
        col.values[fields[0]] = cell_from_symbol(fields[1][0]);
    }
    return col;
}

// ---------------------------------------------------------------------------
// Indicator matrix

enum class ItemSource { Keyword, Llm, Stance };

inline const char* item_source_name(ItemSource s) {
    switch (s) {
        case ItemSource::Keyword: return "keyword";
        case ItemSource::Llm: return "llm";
        default: return "stance";
    }
}

inline ItemSource item_source_from(std::string_view s) {
    if (s == "keyword") return ItemSource::Keyword;
    if (s == "llm") return ItemSource::Llm;
    if (s == "stance") return ItemSource::Stance;
    throw std::runtime_error("unknown item source '" + std::string(s) + "'");
}

struct ItemDescriptor {
    std::string key;
    ItemSource source = ItemSource::Keyword;
    bool can_be_missing = false;
};

struct IndicatorMatrix {
    std::vector<std::string> ads;          // ordered ad_ids
    std::vector<ItemDescriptor> items;     // ordered item descriptors
    std::vector<std::vector<Cell>> cells;  // ads x items

    Cell at(std::size_t ad, std::size_t item) const { return cells[ad][item]; }

    std::size_t n_ads() const { return ads.size(); }
    std::size_t n_items() const { return items.size(); }

    void validate_shape() const {
        if (cells.size() != ads.size())
            throw std::runtime_error("indicator matrix row count mismatch");
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (cells[i].size() != items.size())
                throw std::runtime_error("indicator matrix column count mismatch at row " +
                                         std::to_string(i));
            for (std::size_t j = 0; j < items.size(); ++j)
                if (!items[j].can_be_missing && cells[i][j] == Cell::Missing)
                    throw std::runtime_error("missing cell in never-missing item '" + items[j].key +
                                             "' for ad " + ads[i]);
        }
    }

    // fitting additionally needs a nondegenerate size
    void validate() const {
        validate_shape();
        if (ads.size() < 2 || items.size() < 2)
            throw std::runtime_error("indicator matrix needs at least 2 ads and 2 items");
    }
};

// Combine keyword bits and annotation columns into one matrix with stable
// lexicographic ad and item ordering.
inline IndicatorMatrix assemble_matrix(const std::vector<KeywordVector>& keyword_vectors,
                                       const std::vector<AnnotationColumn>& columns,
                                       const std::map<std::string, ItemSource>& column_sources = {}) {
    IndicatorMatrix m;

    std::set<std::string> ad_ids;
    for (const auto& kv : keyword_vectors) ad_ids.insert(kv.ad_id);
    for (const auto& col : columns)
        for (const auto& [ad, cell] : col.values) ad_ids.insert(ad);
    m.ads.assign(ad_ids.begin(), ad_ids.end());  // std::set iterates sorted

    auto missing_ads = [&](const std::string& what, const std::set<std::string>& have) {
        std::string named;
        for (const auto& ad : m.ads)
            if (!have.count(ad)) {
                if (!named.empty()) named += ", ";
                named += ad;
            }
        if (!named.empty())
            throw std::runtime_error(what + " does not cover ad_ids: " + named);
    };

    std::set<std::string> kw_have;
    for (const auto& kv : keyword_vectors) kw_have.insert(kv.ad_id);
    if (!keyword_vectors.empty()) missing_ads("keyword vectors", kw_have);
    for (const auto& col : columns) {
        std::set<std::string> have;
        for (const auto& [ad, cell] : col.values) have.insert(ad);
        missing_ads("column '" + col.item_key + "'", have);
    }

    std::set<std::string> kw_keys;
    for (const auto& kv : keyword_vectors)
        for (const auto& [k, bit] : kv.bits) kw_keys.insert(k);
    std::set<std::string> col_keys;
    for (const auto& col : columns) {
        if (kw_keys.count(col.item_key) || !col_keys.insert(col.item_key).second)
            throw std::runtime_error("duplicate item key '" + col.item_key + "'");
    }

    for (const auto& k : kw_keys) m.items.push_back({k, ItemSource::Keyword, false});
    for (const auto& k : col_keys) {
        ItemSource src = ItemSource::Llm;
        const auto it = column_sources.find(k);
        if (it != column_sources.end()) src = it->second;
        m.items.push_back({k, src, true});
    }
    std::sort(m.items.begin(), m.items.end(),
              [](const ItemDescriptor& a, const ItemDescriptor& b) { return a.key < b.key; });

    std::map<std::string, const KeywordVector*> kv_by_ad;
    for (const auto& kv : keyword_vectors) kv_by_ad[kv.ad_id] = &kv;
    std::map<std::string, const AnnotationColumn*> col_by_key;
    for (const auto& col : columns) col_by_key[col.item_key] = &col;

    m.cells.assign(m.ads.size(), std::vector<Cell>(m.items.size(), Cell::Zero));
    for (std::size_t i = 0; i < m.ads.size(); ++i) {
        const std::string& ad = m.ads[i];
        for (std::size_t j = 0; j < m.items.size(); ++j) {
            const auto& item = m.items[j];
            if (item.source == ItemSource::Keyword) {
                m.cells[i][j] = kv_by_ad.at(ad)->bits.at(item.key) ? Cell::One : Cell::Zero;
            } else {
                m.cells[i][j] = col_by_key.at(item.key)->values.at(ad);
            }
        }
    }
    return m;
}

// File layout: header "ad_id" then item descriptors key|source|missable,
// one row per ad with symbols {1,0,.}.
inline void write_matrix(std::ostream& out, const IndicatorMatrix& m) {
    out << "ad_id";
    for (const auto& it : m.items)
        out << '\t' << it.key << '|' << item_source_name(it.source) << '|'
            << (it.can_be_missing ? '1' : '0');
    out << '\n';
    for (std::size_t i = 0; i < m.ads.size(); ++i) {
        out << m.ads[i];
        for (std::size_t j = 0; j < m.items.size(); ++j) out << '\t' << cell_symbol(m.cells[i][j]);
        out << '\n';
    }
}

inline IndicatorMatrix read_matrix(std::istream& in) {
    IndicatorMatrix m;
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("matrix stream is empty");
    const auto head = split(trim(header), '\t');
    if (head.empty() || head[0] != "ad_id")
        throw std::runtime_error("matrix header must start with ad_id");
    for (std::size_t j = 1; j < head.size(); ++j) {
        const auto parts = split(head[j], '|');
        if (parts.size() != 3)
            throw std::runtime_error("bad item descriptor '" + head[j] + "'");
        m.items.push_back({parts[0], item_source_from(parts[1]), parts[2] == "1"});
    }
    std::string line;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto fields = split(line, '\t');
        if (fields.size() != m.items.size() + 1)
            throw std::runtime_error("matrix row for '" + (fields.empty() ? "" : fields[0]) +
                                     "' has wrong cell count");
        m.ads.push_back(fields[0]);
        std::vector<Cell> row;
        row.reserve(m.items.size());
        for (std::size_t j = 1; j < fields.size(); ++j) {
            if (fields[j].size() != 1)
                throw std::runtime_error("bad cell '" + fields[j] + "' in matrix row " + fields[0]);
            row.push_back(cell_from_symbol(fields[j][0]));
        }
        m.cells.push_back(std::move(row));
    }
    return m;
}

} // namespace greenscore

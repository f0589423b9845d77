#pragma once

#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "greenscore/common.hpp"
#include "greenscore/ingest.hpp"

namespace greenscore {

namespace utf8 {

// Decode UTF-8 to code points; invalid bytes decode to U+FFFD.
inline std::vector<char32_t> decode(std::string_view s) {
    std::vector<char32_t> out;
    out.reserve(s.size());
    std::size_t i = 0;
    while (i < s.size()) {
        const unsigned char b = static_cast<unsigned char>(s[i]);
        char32_t cp;
        std::size_t len;
        if (b < 0x80) {
            cp = b;
            len = 1;
        } else if ((b >> 5) == 0x6) {
            cp = b & 0x1f;
            len = 2;
        } else if ((b >> 4) == 0xe) {
            cp = b & 0x0f;
            len = 3;
        } else if ((b >> 3) == 0x1e) {
            cp = b & 0x07;
            len = 4;
        } else {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        if (i + len > s.size()) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        bool ok = true;
        for (std::size_t k = 1; k < len; ++k) {
            const unsigned char c = static_cast<unsigned char>(s[i + k]);
            if ((c >> 6) != 0x2) {
                ok = false;
                break;
            }
            cp = (cp << 6) | (c & 0x3f);
        }
        if (!ok) {
            out.push_back(0xFFFD);
            ++i;
            continue;
        }
        out.push_back(cp);
        i += len;
    }
    return out;
}

// Simple case fold covering the scripts of the shipped lexicons: ASCII,
// Latin-1/Extended-A, Greek, Cyrillic. Caseless scripts pass through.
inline char32_t fold(char32_t c) {
    if (c >= U'A' && c <= U'Z') return c + 32;
    if (c >= 0x00C0 && c <= 0x00DE && c != 0x00D7) return c + 32;  // Latin-1 capitals
    if (c >= 0x0100 && c <= 0x017F) return (c % 2 == 0) ? c + 1 : c;  // Latin Extended-A pairs
    if (c >= 0x0391 && c <= 0x03A9 && c != 0x03A2) return c + 32;  // Greek capitals
    if (c >= 0x0410 && c <= 0x042F) return c + 32;                 // Cyrillic capitals
    if (c >= 0x0400 && c <= 0x040F) return c + 80;                 // Cyrillic supplements
    return c;
}

inline bool is_space(char32_t c) {
    return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' || c == U'\v' ||
           c == 0x00A0 || (c >= 0x2000 && c <= 0x200B) || c == 0x3000;
}

// Word characters: alphanumerics plus underscore. Non-ASCII code points
// count as word characters unless they fall in known punctuation or space
// blocks; this keeps boundaries sane for alphabetic scripts without full
// Unicode property tables.
inline bool is_word(char32_t c) {
    if (c < 0x80)
        return (c >= U'a' && c <= U'z') || (c >= U'A' && c <= U'Z') || (c >= U'0' && c <= U'9') ||
               c == U'_';
    if (is_space(c)) return false;
    if (c >= 0x00A1 && c <= 0x00BF) return false;  // Latin-1 punctuation/symbols
    if (c == 0x00D7 || c == 0x00F7) return false;
    if (c >= 0x2010 && c <= 0x205E) return false;  // general punctuation
    if (c >= 0x2190 && c <= 0x2BFF) return false;  // arrows, math, symbols
    if (c >= 0x3001 && c <= 0x303F) return false;  // CJK punctuation
    if (c >= 0xFE50 && c <= 0xFE6F) return false;  // small form variants
    if (c >= 0xFF01 && c <= 0xFF0F) return false;  // fullwidth punctuation
    if (c >= 0x1F300 && c <= 0x1FAFF) return false;  // emoji
    return true;
}

inline std::vector<char32_t> fold_all(std::string_view s) {
    auto cps = decode(s);
    for (auto& c : cps) c = fold(c);
    return cps;
}

} // namespace utf8

enum class PatternKind { Literal, StemWildcard, Conjunction };

// One compiled pattern: folded stem code points; spaces in the stem match a
// nonempty whitespace run in the text.
struct CompiledPattern {
    std::vector<char32_t> stem;
    bool wildcard = false;  // word characters may follow the stem
};

struct LexEntry {
    std::string key;  // canonical item name, language-independent
    PatternKind kind = PatternKind::Literal;
    std::vector<std::string> patterns;  // conjunction clauses use '+'-joined stems

    // compiled form
    std::vector<CompiledPattern> compiled;                   // literal / stem_wildcard
    std::vector<std::vector<CompiledPattern>> clauses;       // conjunction: all stems of one clause must hit
};

struct Lexicon {
    std::string language;
    bool boundary_anchored = true;  // scripts without word boundaries match raw substrings
    std::vector<LexEntry> terms;

    std::vector<std::string> keys() const {
        std::vector<std::string> out;
        out.reserve(terms.size());
        for (const auto& t : terms) out.push_back(t.key);
        return out;
    }
};

struct KeywordVector {
    std::string ad_id;
    std::map<std::string, int> bits;  // key -> 0/1
};

namespace detail {

inline CompiledPattern compile_pattern(const std::string& raw, const std::string& key,
                                       const std::string& language) {
    if (raw.empty())
        throw std::runtime_error("empty pattern for key '" + key + "' (" + language + ")");
    CompiledPattern p;
    std::string body = raw;
    if (body.back() == '*') {
        p.wildcard = true;
        body.pop_back();
        if (body.empty())
            throw std::runtime_error("bare wildcard pattern for key '" + key + "' (" + language + ")");
    }
    if (body.find('*') != std::string::npos)
        throw std::runtime_error("wildcard must be pattern-final in key '" + key + "' (" + language + ")");
    if (body.find('\\') != std::string::npos)
        throw std::runtime_error("unsupported escape in pattern for key '" + key + "' (" + language + ")");
    p.stem = utf8::fold_all(body);
    return p;
}

// Match one compiled pattern against folded text, honoring word boundaries
// when anchored. Pattern spaces consume one-or-more whitespace code points.
inline bool pattern_matches(const CompiledPattern& p, const std::vector<char32_t>& text,
                            bool anchored) {
    const std::size_t n = text.size();
    const std::size_t m = p.stem.size();
    if (m == 0 || m > n) return false;
    for (std::size_t start = 0; start < n; ++start) {
        if (anchored) {
            // boundary: start of text or previous code point is not a word char
            if (start > 0 && utf8::is_word(text[start - 1])) continue;
        }
        std::size_t ti = start;
        std::size_t pi = 0;
        bool ok = true;
        while (pi < m) {
            if (utf8::is_space(p.stem[pi])) {
                if (ti >= n || !utf8::is_space(text[ti])) {
                    ok = false;
                    break;
                }
                while (ti < n && utf8::is_space(text[ti])) ++ti;
                ++pi;
                continue;
            }
            if (ti >= n || text[ti] != p.stem[pi]) {
                ok = false;
                break;
            }
            ++ti;
            ++pi;
        }
        if (!ok) continue;
        if (anchored && !p.wildcard) {
            // end boundary: next code point is not a word char
            if (ti < n && utf8::is_word(text[ti])) continue;
        }
        return true;
    }
    return false;
}

inline bool entry_matches(const LexEntry& e, const std::vector<char32_t>& text, bool anchored) {
    if (e.kind == PatternKind::Conjunction) {
        for (const auto& clause : e.clauses) {
            bool all = true;
            for (const auto& p : clause)
                if (!pattern_matches(p, text, anchored)) {
                    all = false;
                    break;
                }
            if (all) return true;
        }
        return false;
    }
    for (const auto& p : e.compiled)
        if (pattern_matches(p, text, anchored)) return true;
    return false;
}

} // namespace detail

// Per-language lexicons with English fallback for unknown languages.
// Immutable after compilation; the warning sink is the only mutable state
// and is locked so matching can fan out across threads.
struct LexiconSet {
    std::map<std::string, Lexicon> by_language;

    const Lexicon& resolve(const std::string& language) const {
        auto it = by_language.find(language);
        if (it != by_language.end()) return it->second;
        // primary subtag fallback: "de-AT" -> "de"
        const auto dash = language.find('-');
        if (dash != std::string::npos) {
            it = by_language.find(language.substr(0, dash));
            if (it != by_language.end()) return it->second;
        }
        it = by_language.find("en");
        if (it == by_language.end()) throw std::runtime_error("no lexicon for 'en' fallback");
        {
            std::lock_guard<std::mutex> lock(*warn_mu_);
            warnings_->push_back("no lexicon for language '" + language + "', falling back to en");
        }
        return it->second;
    }

    std::vector<std::string> fallback_warnings() const {
        std::lock_guard<std::mutex> lock(*warn_mu_);
        return *warnings_;
    }

private:
    std::shared_ptr<std::mutex> warn_mu_ = std::make_shared<std::mutex>();
    std::shared_ptr<std::vector<std::string>> warnings_ =
        std::make_shared<std::vector<std::string>>();
};

// Config layout: {"languages": {"en": {"substring_match": false, "terms":
// [{"key":..., "kind":..., "patterns":[...]}, ...]}, ...}}
inline LexiconSet compile_lexicon(const nlohmann::json& config) {
    LexiconSet set;
    if (!config.contains("languages")) throw std::runtime_error("lexicon config missing 'languages'");
    for (const auto& [lang, block] : config.at("languages").items()) {
        Lexicon lex;
        lex.language = lang;
        if (block.contains("substring_match")) lex.boundary_anchored = !block.at("substring_match").get<bool>();
        std::set<std::string> keys;
        for (const auto& t : block.at("terms")) {
            LexEntry e;
            e.key = t.at("key").get<std::string>();
            if (!keys.insert(e.key).second)
                throw std::runtime_error("duplicate key '" + e.key + "' in lexicon " + lang);
            const std::string kind = t.value("kind", "literal");
            if (kind == "literal")
                e.kind = PatternKind::Literal;
            else if (kind == "stem_wildcard")
                e.kind = PatternKind::StemWildcard;
            else if (kind == "conjunction")
                e.kind = PatternKind::Conjunction;
            else
                throw std::runtime_error("unknown pattern kind '" + kind + "' for key '" + e.key + "'");
            for (const auto& p : t.at("patterns")) e.patterns.push_back(p.get<std::string>());
            if (e.patterns.empty())
                throw std::runtime_error("no patterns for key '" + e.key + "' (" + lang + ")");

            if (e.kind == PatternKind::Conjunction) {
                for (const auto& clause_raw : e.patterns) {
                    std::vector<CompiledPattern> clause;
                    for (const auto& stem : split(clause_raw, '+'))
                        clause.push_back(detail::compile_pattern(trim(stem), e.key, lang));
                    if (clause.size() < 2)
                        throw std::runtime_error("conjunction clause needs >=2 stems for key '" + e.key +
                                                 "' (" + lang + ")");
                    e.clauses.push_back(std::move(clause));
                }
            } else {
                for (const auto& p : e.patterns) {
                    auto cp = detail::compile_pattern(p, e.key, lang);
                    if (e.kind == PatternKind::StemWildcard && !cp.wildcard)
                        throw std::runtime_error("stem_wildcard pattern must end in '*' for key '" +
                                                 e.key + "' (" + lang + ")");
                    e.compiled.push_back(std::move(cp));
                }
            }
            lex.terms.push_back(std::move(e));
        }
        set.by_language[lang] = std::move(lex);
    }
    return set;
}

inline LexiconSet load_lexicon_file(std::istream& in) {
    nlohmann::json j;
    in >> j;
    return compile_lexicon(j);
}

// One bit per lexicon key; empty text yields all zeros.
inline KeywordVector match_keywords(const std::string& ad_id, const std::string& text,
                                    const Lexicon& lex) {
    KeywordVector v;
    v.ad_id = ad_id;
    const auto folded = utf8::fold_all(text);
    for (const auto& e : lex.terms)
        v.bits[e.key] = detail::entry_matches(e, folded, lex.boundary_anchored) ? 1 : 0;
    return v;
}

// true iff any broad-lexicon key matches
inline bool climate_filter(const AdRecord& ad, const LexiconSet& lexicons) {
    const auto v = match_keywords(ad.ad_id, ad.text, lexicons.resolve(ad.language));
    for (const auto& [k, bit] : v.bits)
        if (bit) return true;
    return false;
}

// true iff the ad should be EXCLUDED as electoral
inline bool electoral_filter(const AdRecord& ad, const LexiconSet& exclusion) {
    const auto v = match_keywords(ad.ad_id, ad.text, exclusion.resolve(ad.language));
    for (const auto& [k, bit] : v.bits)
        if (bit) return true;
    return false;
}

struct KeywordCountRow {
    std::string key;
    std::size_t n_ads = 0;
};

struct KeywordCountTable {
    std::vector<KeywordCountRow> rows;  // lexicographic by key
    std::size_t any_keywords = 0;

    std::size_t count_of(const std::string& key) const {
        for (const auto& r : rows)
            if (r.key == key) return r.n_ads;
        throw std::runtime_error("no keyword count for key '" + key + "'");
    }
};

inline KeywordCountTable keyword_count_table(const std::vector<AdRecord>& corpus,
                                             const LexiconSet& lexicons) {
    std::map<std::string, std::size_t> counts;
    std::size_t any = 0;
    for (const auto& ad : corpus) {
        const auto v = match_keywords(ad.ad_id, ad.text, lexicons.resolve(ad.language));
        bool hit = false;
        for (const auto& [key, bit] : v.bits) {
            counts.try_emplace(key, 0);
            if (bit) {
                ++counts[key];
                hit = true;
            }
        }
        if (hit) ++any;
    }
    KeywordCountTable t;
    for (const auto& [key, n] : counts) t.rows.push_back({key, n});
    t.any_keywords = any;
    return t;
}

inline void write_keyword_counts(std::ostream& out, const KeywordCountTable& t) {
    out << "key\tn_ads\n";
    for (const auto& r : t.rows) out << r.key << '\t' << r.n_ads << '\n';
    out << "any_keywords\t" << t.any_keywords << '\n';
}

// The table-derived broad lexicon shipped as an editable default (English
// block; other languages are user-supplied config).
inline nlohmann::json default_lexicon_config() {
    return nlohmann::json::parse(R"({
  "languages": {
    "en": {
      "terms": [
        {"key": "carbon_capture", "kind": "literal", "patterns": ["carbon capture"]},
        {"key": "carbon_removal", "kind": "stem_wildcard", "patterns": ["carbon remov*"]},
        {"key": "climate", "kind": "stem_wildcard", "patterns": ["climat*"]},
        {"key": "coal", "kind": "literal", "patterns": ["coal"]},
        {"key": "extinction", "kind": "literal", "patterns": ["extinction"]},
        {"key": "fossil_fuel", "kind": "stem_wildcard", "patterns": ["fossil fuel*"]},
        {"key": "global_warming", "kind": "literal", "patterns": ["global warming"]},
        {"key": "greenhouse", "kind": "literal", "patterns": ["greenhouse"]},
        {"key": "icecap_melt_flood", "kind": "conjunction", "patterns": ["icecap*+melt*", "icecap*+flood*"]},
        {"key": "natural_gas", "kind": "literal", "patterns": ["natural gas"]},
        {"key": "recycle", "kind": "literal", "patterns": ["recycle"]},
        {"key": "sustainable", "kind": "literal", "patterns": ["sustainable"]}
      ]
    }
  }
})");
}

// Editable electoral-exclusion default; candidate-name slots are intended
// to be filled per corpus.
inline nlohmann::json default_electoral_config() {
    return nlohmann::json::parse(R"({
  "languages": {
    "en": {
      "terms": [
        {"key": "vote", "kind": "stem_wildcard", "patterns": ["vot*"]},
        {"key": "election", "kind": "stem_wildcard", "patterns": ["elect*"]},
        {"key": "ballot", "kind": "stem_wildcard", "patterns": ["ballot*"]},
        {"key": "campaign", "kind": "stem_wildcard", "patterns": ["campaign*"]},
        {"key": "candidate", "kind": "stem_wildcard", "patterns": ["candidate*"]},
        {"key": "candidate_names", "kind": "literal", "patterns": ["__configure_candidate_names__"]}
      ]
    }
  }
})");
}

} // namespace greenscore

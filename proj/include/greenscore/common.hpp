#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace greenscore {

// Ternary indicator cell. Keyword items never carry Missing.
enum class Cell : std::int8_t { Zero = 0, One = 1, Missing = -1 };

inline char cell_symbol(Cell c) {
    switch (c) {
        case Cell::Zero: return '0';
        case Cell::One: return '1';
        default: return '.';
    }
}

inline Cell cell_from_symbol(char c) {
    if (c == '0') return Cell::Zero;
    if (c == '1') return Cell::One;
    if (c == '.') return Cell::Missing;
    throw std::runtime_error(std::string("invalid cell symbol '") + c + "'");
}

// ---------------------------------------------------------------------------
// Hashing and seed derivation

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Per-stage seed split: stable across runs and platforms.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view stage) {
    return splitmix64(root ^ fnv1a64(stage));
}

// ---------------------------------------------------------------------------
// Deterministic RNG. Self-contained xorshift* core with explicit
// uniform/normal transforms so streams are reproducible across platforms
// and standard libraries.

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed)) {}

    std::uint64_t next_u64() {
        // xorshift* stream seeded via splitmix
        state_ ^= state_ >> 12;
        state_ ^= state_ << 25;
        state_ ^= state_ >> 27;
        return state_ * 0x2545f4914f6cdd1dull;
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) {
        // modulo bias is negligible for n << 2^64 (desk-scale draws)
        return next_u64() % n;
    }

    // standard normal via Box-Muller, spare cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Numerics

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log sigma(x), stable for large |x|
inline double log_sigmoid(double x) {
    if (x >= 0.0) return -std::log1p(std::exp(-x));
    return x - std::log1p(std::exp(x));
}

// log Bernoulli(y; sigma(z)) on the logit scale
inline double bernoulli_logpmf(int y, double z) {
    return y ? log_sigmoid(z) : log_sigmoid(-z);
}

inline double log_beta_fn(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

inline double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

// sample standard deviation, n-1 denominator
inline double sample_sd(const std::vector<double>& v) {
    const std::size_t n = v.size();
    if (n < 2) throw std::runtime_error("sample_sd requires at least 2 values");
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(n - 1));
}

inline double pearson_corr(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw std::runtime_error("pearson_corr: mismatched or too-short inputs");
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

// Type-7 quantile (linear interpolation) on an unsorted copy.
inline double quantile_type7(std::vector<double> v, double p) {
    if (v.empty()) throw std::runtime_error("quantile of empty vector");
    std::sort(v.begin(), v.end());
    if (p <= 0.0) return v.front();
    if (p >= 1.0) return v.back();
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = lo + 1 < v.size() ? lo + 1 : lo;
    const double frac = h - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------------------
// Deterministic parallel reduction.
//
// The index range is cut into fixed-size chunks independent of the thread
// count; chunk partials are combined by a sequential pairwise tree. The
// result is therefore bit-identical for any thread count.

inline int& global_thread_cap() {
    static int cap = 1;
    return cap;
}

namespace detail {
constexpr std::size_t kChunk = 1024;

inline std::vector<double> tree_reduce(std::vector<double> parts) {
    while (parts.size() > 1) {
        std::vector<double> next;
        next.reserve((parts.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < parts.size(); i += 2) next.push_back(parts[i] + parts[i + 1]);
        if (parts.size() % 2 == 1) next.push_back(parts.back());
        parts = std::move(next);
    }
    return parts;
}
} // namespace detail

// Sum fn(i) for i in [0, n). fn must be pure over disjoint indices.
inline double chunked_sum(std::size_t n, const std::function<double(std::size_t, std::size_t)>& chunk_fn) {
    if (n == 0) return 0.0;
    const std::size_t nchunks = (n + detail::kChunk - 1) / detail::kChunk;
    std::vector<double> parts(nchunks, 0.0);
    const int threads = std::max(1, global_thread_cap());
    if (threads == 1 || nchunks == 1) {
        for (std::size_t c = 0; c < nchunks; ++c) {
            const std::size_t lo = c * detail::kChunk;
            parts[c] = chunk_fn(lo, std::min(n, lo + detail::kChunk));
        }
    } else {
        std::vector<std::thread> pool;
        std::size_t per = (nchunks + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const std::size_t c0 = static_cast<std::size_t>(t) * per;
            const std::size_t c1 = std::min(nchunks, c0 + per);
            if (c0 >= c1) break;
            pool.emplace_back([&, c0, c1]() {
                for (std::size_t c = c0; c < c1; ++c) {
                    const std::size_t lo = c * detail::kChunk;
                    parts[c] = chunk_fn(lo, std::min(n, lo + detail::kChunk));
                }
            });
        }
        for (auto& th : pool) th.join();
    }
    return detail::tree_reduce(std::move(parts))[0];
}

// Run fn(i) over [0, n) in parallel; fn writes only to index-owned state.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int threads = std::max(1, global_thread_cap());
    if (threads == 1 || n < 2 * detail::kChunk) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    const std::size_t per = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const std::size_t lo = static_cast<std::size_t>(t) * per;
        const std::size_t hi = std::min(n, lo + per);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi]() {
            for (std::size_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

// ---------------------------------------------------------------------------
// Strings and formatting

inline std::vector<std::string> split(std::string_view s, char delim) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == delim) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string ascii_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    return out;
}

// Shortest round-trip decimal form; keeps text outputs byte-stable.
inline std::string format_double(double x) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    if (ec != std::errc()) throw std::runtime_error("format_double failed");
    return std::string(buf, p);
}

inline bool parse_double(std::string_view s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto [p, ec] = std::from_chars(b, e, out);
    return ec == std::errc() && p == e;
}

} // namespace greenscore

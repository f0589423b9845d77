#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "greenscore/annotate.hpp"
#include "greenscore/common.hpp"

namespace greenscore {

// ---------------------------------------------------------------------------
// Model
//
// One latent trait theta per ad feeds two item families:
//   outcome      P(y_ij = 1) = sigma(lambda_j * theta_i - beta_j)
//   missingness  P(m_ij = 1) = sigma(lambda_m_j * theta_i - beta_m_j)
// where m_ij marks a MISSING cell of a missable item; the outcome term is
// included only when the cell is observed. Keyword items are structurally
// never missing and carry no missingness parameters.
//
// Discriminations are bounded: lambda = 2g - 1 with g in (0,1) under a
// Beta(a,b) prior; g is stored on the logit scale u, so the prior density
// in u-space is  a*log(g) + b*log(1-g) - log B(a,b)  after the change of
// variables.

struct IrtConfig {
    // per-item Beta prior on g; anchors override, then discrimination_priors,
    // then the uniform default
    std::map<std::string, std::pair<double, double>> anchors = {
        {"natural_gas", {1000.0, 0.001}},
        {"fossil_fuel", {0.001, 1000.0}},
    };
    std::map<std::string, std::pair<double, double>> discrimination_priors;
    double default_alpha = 1.0;
    double default_beta = 1.0;

    double theta_prior_sd = 1.0;
    double difficulty_prior_sd = 3.0;
    double missing_alpha = 1.0;  // prior on missingness g
    double missing_beta = 1.0;

    int max_iters = 1000;
    double step_size = 1.0;  // initial Newton damping
    double tol = 1e-4;       // gradient norm convergence

    int draws = 4000;
    std::uint64_t seed = 1;

    // mcmc_validate settings
    std::size_t mcmc_max_ads = 200;
    int mcmc_burnin = 4000;
    int mcmc_thin = 5;

    std::pair<double, double> prior_for(const std::string& key, bool missing_stage) const {
        if (missing_stage) return {missing_alpha, missing_beta};
        if (const auto it = anchors.find(key); it != anchors.end()) return it->second;
        if (const auto it = discrimination_priors.find(key); it != discrimination_priors.end())
            return it->second;
        return {default_alpha, default_beta};
    }

    void validate() const {
        auto chk = [](double a, double b) {
            if (a <= 0.0 || b <= 0.0) throw std::runtime_error("Beta prior parameters must be positive");
        };
        chk(default_alpha, default_beta);
        chk(missing_alpha, missing_beta);
        for (const auto& [k, ab] : anchors) chk(ab.first, ab.second);
        for (const auto& [k, ab] : discrimination_priors) chk(ab.first, ab.second);
        if (draws < 1) throw std::runtime_error("draw count must be >= 1");
        if (tol <= 0.0) throw std::runtime_error("convergence tol must be > 0");
        if (theta_prior_sd <= 0.0 || difficulty_prior_sd <= 0.0)
            throw std::runtime_error("prior sds must be > 0");
    }
};

inline IrtConfig irt_config_from_json(const nlohmann::json& j) {
    IrtConfig c;
    auto pairs = [](const nlohmann::json& block) {
        std::map<std::string, std::pair<double, double>> out;
        for (const auto& [k, v] : block.items()) out[k] = {v.at(0).get<double>(), v.at(1).get<double>()};
        return out;
    };
    if (j.contains("anchors")) c.anchors = pairs(j.at("anchors"));
    if (j.contains("discrimination_priors")) c.discrimination_priors = pairs(j.at("discrimination_priors"));
    if (j.contains("default_alpha")) c.default_alpha = j.at("default_alpha").get<double>();
    if (j.contains("default_beta")) c.default_beta = j.at("default_beta").get<double>();
    if (j.contains("theta_prior_sd")) c.theta_prior_sd = j.at("theta_prior_sd").get<double>();
    if (j.contains("difficulty_prior_sd")) c.difficulty_prior_sd = j.at("difficulty_prior_sd").get<double>();
    if (j.contains("missing_alpha")) c.missing_alpha = j.at("missing_alpha").get<double>();
    if (j.contains("missing_beta")) c.missing_beta = j.at("missing_beta").get<double>();
    if (j.contains("max_iters")) c.max_iters = j.at("max_iters").get<int>();
    if (j.contains("tol")) c.tol = j.at("tol").get<double>();
    if (j.contains("draws")) c.draws = j.at("draws").get<int>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("mcmc_max_ads")) c.mcmc_max_ads = j.at("mcmc_max_ads").get<std::size_t>();
    if (j.contains("mcmc_burnin")) c.mcmc_burnin = j.at("mcmc_burnin").get<int>();
    if (j.contains("mcmc_thin")) c.mcmc_thin = j.at("mcmc_thin").get<int>();
    c.validate();
    return c;
}

// Parameters on the unconstrained scale. lambda(j) = 2*sigmoid(u[j]) - 1.
struct IrtParams {
    std::vector<double> theta;      // per ad
    std::vector<double> u;          // per item, logit of g
    std::vector<double> beta;       // per item difficulty
    std::vector<double> u_miss;     // per missable item
    std::vector<double> beta_miss;  // per missable item

    double lambda(std::size_t j) const { return 2.0 * sigmoid(u[j]) - 1.0; }
    double lambda_miss(std::size_t slot) const { return 2.0 * sigmoid(u_miss[slot]) - 1.0; }

    // bounded transform with a clamp so mapped draws stay strictly inside
    // (-1, 1) even when u saturates in double precision
    static double bounded_lambda(double u_value) {
        const double g = std::min(1.0 - 1e-12, std::max(1e-12, sigmoid(u_value)));
        return 2.0 * g - 1.0;
    }

    std::size_t size() const {
        return theta.size() + 2 * u.size() + 2 * u_miss.size();
    }

    std::vector<double> pack() const {
        std::vector<double> v;
        v.reserve(size());
        v.insert(v.end(), theta.begin(), theta.end());
        v.insert(v.end(), u.begin(), u.end());
        v.insert(v.end(), beta.begin(), beta.end());
        v.insert(v.end(), u_miss.begin(), u_miss.end());
        v.insert(v.end(), beta_miss.begin(), beta_miss.end());
        return v;
    }

    static IrtParams unpack(const std::vector<double>& v, std::size_t n_ads, std::size_t n_items,
                            std::size_t n_miss) {
        if (v.size() != n_ads + 2 * n_items + 2 * n_miss)
            throw std::runtime_error("packed parameter vector has wrong length");
        IrtParams p;
        auto it = v.begin();
        p.theta.assign(it, it + n_ads), it += n_ads;
        p.u.assign(it, it + n_items), it += n_items;
        p.beta.assign(it, it + n_items), it += n_items;
        p.u_miss.assign(it, it + n_miss), it += n_miss;
        p.beta_miss.assign(it, it + n_miss);
        return p;
    }
};

namespace irt_detail {

constexpr double kLogEps = -27.631021115928547;  // log(1e-12), clamp floor for log g
constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);

// Matrix + config digested for fitting.
struct Problem {
    std::size_t n_ads = 0;
    std::size_t n_items = 0;
    std::vector<std::int8_t> cells;       // row-major, 1 / 0 / -1 = missing
    std::vector<std::size_t> miss_slot;   // item -> slot in u_miss, or kNoSlot
    std::vector<std::size_t> slot_item;   // slot -> item
    std::vector<double> prior_a, prior_b; // outcome g priors per item
    double miss_a = 1.0, miss_b = 1.0;
    double theta_sd = 1.0, beta_sd = 3.0;
    std::vector<std::string> item_keys;

    std::int8_t cell(std::size_t i, std::size_t j) const { return cells[i * n_items + j]; }
};

inline Problem make_problem(const IndicatorMatrix& m, const IrtConfig& config) {
    m.validate_shape();
    Problem p;
    p.n_ads = m.n_ads();
    p.n_items = m.n_items();
    p.cells.resize(p.n_ads * p.n_items);
    p.miss_slot.assign(p.n_items, kNoSlot);
    for (std::size_t j = 0; j < p.n_items; ++j) {
        p.item_keys.push_back(m.items[j].key);
        const auto [a, b] = config.prior_for(m.items[j].key, false);
        p.prior_a.push_back(a);
        p.prior_b.push_back(b);
        if (m.items[j].can_be_missing) {
            p.miss_slot[j] = p.slot_item.size();
            p.slot_item.push_back(j);
        }
    }
    for (std::size_t i = 0; i < p.n_ads; ++i)
        for (std::size_t j = 0; j < p.n_items; ++j)
            p.cells[i * p.n_items + j] = static_cast<std::int8_t>(m.at(i, j));
    p.miss_a = config.missing_alpha;
    p.miss_b = config.missing_beta;
    p.theta_sd = config.theta_prior_sd;
    p.beta_sd = config.difficulty_prior_sd;
    return p;
}

// Clamped Beta log density of g in u-space (change of variables absorbed):
// a*log(g) + b*log(1-g) - log B(a,b), with log g floored at log(1e-12).
inline double beta_u_logprior(double u, double a, double b) {
    const double lg = std::max(log_sigmoid(u), kLogEps);
    const double l1mg = std::max(log_sigmoid(-u), kLogEps);
    return a * lg + b * l1mg - log_beta_fn(a, b);
}

// d/du of the above; clamped terms contribute zero slope.
inline double beta_u_grad(double u, double a, double b) {
    const double g = sigmoid(u);
    double out = 0.0;
    if (log_sigmoid(u) > kLogEps) out += a * (1.0 - g);
    if (log_sigmoid(-u) > kLogEps) out -= b * g;
    return out;
}

inline double beta_u_hess(double u, double a, double b) {
    const double g = sigmoid(u);
    double out = 0.0;
    if (log_sigmoid(u) > kLogEps) out -= a * g * (1.0 - g);
    if (log_sigmoid(-u) > kLogEps) out -= b * g * (1.0 - g);
    return out;
}

inline double normal_logpdf(double x, double sd) {
    const double z = x / sd;
    return -0.5 * z * z - std::log(sd) - 0.9189385332046727;  // log sqrt(2 pi)
}

// Row contribution of ad i: all cell terms, no priors.
inline double row_loglik(const Problem& p, const IrtParams& q, std::size_t i, double theta_i) {
    double ll = 0.0;
    for (std::size_t j = 0; j < p.n_items; ++j) {
        const std::int8_t c = p.cell(i, j);
        const std::size_t slot = p.miss_slot[j];
        if (slot != kNoSlot) {
            const int m = (c == -1) ? 1 : 0;
            ll += bernoulli_logpmf(m, q.lambda_miss(slot) * theta_i - q.beta_miss[slot]);
            if (!m) ll += bernoulli_logpmf(c, q.lambda(j) * theta_i - q.beta[j]);
        } else {
            ll += bernoulli_logpmf(c, q.lambda(j) * theta_i - q.beta[j]);
        }
    }
    return ll;
}

// Outcome column contribution of item j at (u, beta), observed cells only.
inline double col_loglik(const Problem& p, const IrtParams& q, std::size_t j, double u, double beta) {
    const double lam = 2.0 * sigmoid(u) - 1.0;
    double ll = 0.0;
    for (std::size_t i = 0; i < p.n_ads; ++i) {
        const std::int8_t c = p.cell(i, j);
        if (c == -1) continue;
        ll += bernoulli_logpmf(c, lam * q.theta[i] - beta);
    }
    return ll;
}

// Missingness column contribution of missable item (by slot).
inline double miss_col_loglik(const Problem& p, const IrtParams& q, std::size_t slot, double u,
                              double beta) {
    const std::size_t j = p.slot_item[slot];
    const double lam = 2.0 * sigmoid(u) - 1.0;
    double ll = 0.0;
    for (std::size_t i = 0; i < p.n_ads; ++i) {
        const int m = (p.cell(i, j) == -1) ? 1 : 0;
        ll += bernoulli_logpmf(m, lam * q.theta[i] - beta);
    }
    return ll;
}

inline double log_likelihood(const Problem& p, const IrtParams& q) {
    return chunked_sum(p.n_ads, [&](std::size_t lo, std::size_t hi) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += row_loglik(p, q, i, q.theta[i]);
        return s;
    });
}

inline double log_prior(const Problem& p, const IrtParams& q) {
    double lp = 0.0;
    for (std::size_t i = 0; i < p.n_ads; ++i) lp += normal_logpdf(q.theta[i], p.theta_sd);
    for (std::size_t j = 0; j < p.n_items; ++j) {
        lp += beta_u_logprior(q.u[j], p.prior_a[j], p.prior_b[j]);
        lp += normal_logpdf(q.beta[j], p.beta_sd);
    }
    for (std::size_t s = 0; s < p.slot_item.size(); ++s) {
        lp += beta_u_logprior(q.u_miss[s], p.miss_a, p.miss_b);
        lp += normal_logpdf(q.beta_miss[s], p.beta_sd);
    }
    return lp;
}

struct ScalarGH {
    double g = 0.0;
    double h = 0.0;
};

// Gradient and curvature of the log posterior in theta_i, items fixed.
inline ScalarGH theta_grad_hess(const Problem& p, const IrtParams& q, std::size_t i, double theta_i) {
    ScalarGH out;
    for (std::size_t j = 0; j < p.n_items; ++j) {
        const std::int8_t c = p.cell(i, j);
        const std::size_t slot = p.miss_slot[j];
        if (slot != kNoSlot) {
            const int m = (c == -1) ? 1 : 0;
            const double lam = q.lambda_miss(slot);
            const double s = sigmoid(lam * theta_i - q.beta_miss[slot]);
            out.g += (m - s) * lam;
            out.h -= s * (1.0 - s) * lam * lam;
            if (m) continue;
        }
        const double lam = q.lambda(j);
        const double s = sigmoid(lam * theta_i - q.beta[j]);
        out.g += (c - s) * lam;
        out.h -= s * (1.0 - s) * lam * lam;
    }
    out.g -= theta_i / (p.theta_sd * p.theta_sd);
    out.h -= 1.0 / (p.theta_sd * p.theta_sd);
    return out;
}

struct BlockGH {
    double gu = 0.0, gb = 0.0;        // gradient in (u, beta)
    double huu = 0.0, hub = 0.0, hbb = 0.0;  // Hessian
};

// Shared core for outcome and missingness item blocks: Bernoulli regression
// of the column responses on theta with slope 2g-1 and intercept -beta.
inline BlockGH item_block_core(const Problem& p, const IrtParams& q, std::size_t j, double u,
                               double beta, bool missing_stage) {
    BlockGH out;
    const double g = sigmoid(u);
    const double lam = 2.0 * g - 1.0;
    const double dg2 = 2.0 * g * (1.0 - g);        // d lambda / d u
    const double ddg2 = dg2 * (1.0 - 2.0 * g);     // d^2 lambda / d u^2
    for (std::size_t i = 0; i < p.n_ads; ++i) {
        const std::int8_t c = p.cell(i, j);
        int y;
        if (missing_stage) {
            y = (c == -1) ? 1 : 0;
        } else {
            if (c == -1) continue;
            y = c;
        }
        const double th = q.theta[i];
        const double s = sigmoid(lam * th - beta);
        const double r = y - s;
        const double w = s * (1.0 - s);
        out.gu += r * th * dg2;
        out.gb -= r;
        out.huu += -w * th * th * dg2 * dg2 + r * th * ddg2;
        out.hub += w * th * dg2;
        out.hbb -= w;
    }
    return out;
}

inline BlockGH item_grad_hess(const Problem& p, const IrtParams& q, std::size_t j, double u,
                              double beta) {
    BlockGH out = item_block_core(p, q, j, u, beta, false);
    out.gu += beta_u_grad(u, p.prior_a[j], p.prior_b[j]);
    out.huu += beta_u_hess(u, p.prior_a[j], p.prior_b[j]);
    out.gb -= beta / (p.beta_sd * p.beta_sd);
    out.hbb -= 1.0 / (p.beta_sd * p.beta_sd);
    return out;
}

inline BlockGH miss_grad_hess(const Problem& p, const IrtParams& q, std::size_t slot, double u,
                              double beta) {
    BlockGH out = item_block_core(p, q, p.slot_item[slot], u, beta, true);
    out.gu += beta_u_grad(u, p.miss_a, p.miss_b);
    out.huu += beta_u_hess(u, p.miss_a, p.miss_b);
    out.gb -= beta / (p.beta_sd * p.beta_sd);
    out.hbb -= 1.0 / (p.beta_sd * p.beta_sd);
    return out;
}

inline std::vector<double> grad_packed(const Problem& p, const IrtParams& q) {
    std::vector<double> g;
    g.reserve(q.size());
    for (std::size_t i = 0; i < p.n_ads; ++i) g.push_back(theta_grad_hess(p, q, i, q.theta[i]).g);
    std::vector<double> gu(p.n_items), gb(p.n_items);
    for (std::size_t j = 0; j < p.n_items; ++j) {
        const BlockGH b = item_grad_hess(p, q, j, q.u[j], q.beta[j]);
        gu[j] = b.gu;
        gb[j] = b.gb;
    }
    g.insert(g.end(), gu.begin(), gu.end());
    g.insert(g.end(), gb.begin(), gb.end());
    std::vector<double> gum(p.slot_item.size()), gbm(p.slot_item.size());
    for (std::size_t s = 0; s < p.slot_item.size(); ++s) {
        const BlockGH b = miss_grad_hess(p, q, s, q.u_miss[s], q.beta_miss[s]);
        gum[s] = b.gu;
        gbm[s] = b.gb;
    }
    g.insert(g.end(), gum.begin(), gum.end());
    g.insert(g.end(), gbm.begin(), gbm.end());
    return g;
}

inline double grad_norm(const std::vector<double>& g) {
    double s = 0.0;
    for (double x : g) s += x * x;
    return std::sqrt(s);
}

} // namespace irt_detail

// ---------------------------------------------------------------------------
// Public likelihood surface

// Data terms only (both stages), no priors.
inline double log_likelihood(const IrtParams& params, const IndicatorMatrix& matrix,
                             const IrtConfig& config) {
    const auto p = irt_detail::make_problem(matrix, config);
    return irt_detail::log_likelihood(p, params);
}

// Prior terms only.
inline double log_prior(const IrtParams& params, const IndicatorMatrix& matrix,
                        const IrtConfig& config) {
    const auto p = irt_detail::make_problem(matrix, config);
    return irt_detail::log_prior(p, params);
}

inline double log_posterior(const IrtParams& params, const IndicatorMatrix& matrix,
                            const IrtConfig& config) {
    const auto p = irt_detail::make_problem(matrix, config);
    const double lp = irt_detail::log_likelihood(p, params) + irt_detail::log_prior(p, params);
    if (!std::isfinite(lp)) {
        const auto v = params.pack();
        for (std::size_t k = 0; k < v.size(); ++k)
            if (!std::isfinite(v[k]))
                throw std::runtime_error("non-finite parameter at packed index " + std::to_string(k));
        throw std::runtime_error("log posterior is non-finite");
    }
    return lp;
}

// Analytic gradient in the unconstrained parameterization, packed as
// [theta | u | beta | u_miss | beta_miss].
inline std::vector<double> grad_log_posterior(const IrtParams& params, const IndicatorMatrix& matrix,
                                              const IrtConfig& config) {
    const auto p = irt_detail::make_problem(matrix, config);
    auto g = irt_detail::grad_packed(p, params);
    for (std::size_t k = 0; k < g.size(); ++k)
        if (!std::isfinite(g[k]))
            throw std::runtime_error("non-finite gradient at packed index " + std::to_string(k));
    return g;
}

struct FitDiagnostics {
    double log_posterior = 0.0;
    double gradient_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<std::string> warnings;
};

struct FitResult {
    IrtParams params;
    FitDiagnostics diagnostics;
};

namespace irt_detail {

// Deterministic, symmetry-breaking start: standardized signed row means for
// theta; g nudged toward each anchor's side; difficulties at zero.
inline IrtParams initialize(const Problem& p) {
    IrtParams q;
    q.theta.assign(p.n_ads, 0.0);
    for (std::size_t i = 0; i < p.n_ads; ++i) {
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t j = 0; j < p.n_items; ++j) {
            const std::int8_t c = p.cell(i, j);
            if (c == -1) continue;
            s += 2.0 * c - 1.0;
            ++n;
        }
        q.theta[i] = n ? s / static_cast<double>(n) : 0.0;
    }
    const double m = mean_of(q.theta);
    double ss = 0.0;
    for (double t : q.theta) ss += (t - m) * (t - m);
    const double sd = p.n_ads > 1 ? std::sqrt(ss / static_cast<double>(p.n_ads - 1)) : 0.0;
    for (double& t : q.theta) t = sd > 1e-12 ? (t - m) / sd : 0.0;

    q.u.assign(p.n_items, 0.0);
    q.beta.assign(p.n_items, 0.0);
    for (std::size_t j = 0; j < p.n_items; ++j) {
        double g = 0.5;
        if (p.prior_a[j] > p.prior_b[j]) g = 0.55;
        if (p.prior_a[j] < p.prior_b[j]) g = 0.45;
        q.u[j] = std::log(g / (1.0 - g));
    }
    q.u_miss.assign(p.slot_item.size(), 0.0);
    q.beta_miss.assign(p.slot_item.size(), 0.0);
    return q;
}

// Damped 2x2 Newton ascent step on one item block; falls back to a scaled
// gradient step when the Hessian is not negative definite. Returns the new
// (u, beta), guaranteed not to decrease the block objective.
template <typename Objective, typename GradHess>
inline std::pair<double, double> block_newton(double u, double beta, double damping,
                                              const Objective& objective, const GradHess& gh_fn) {
    const BlockGH gh = gh_fn(u, beta);
    const double det = gh.huu * gh.hbb - gh.hub * gh.hub;
    double du, db;
    if (gh.huu < 0.0 && det > 0.0) {
        // Newton direction -H^{-1} g
        du = -(gh.hbb * gh.gu - gh.hub * gh.gb) / det;
        db = -(-gh.hub * gh.gu + gh.huu * gh.gb) / det;
    } else {
        const double gn = std::sqrt(gh.gu * gh.gu + gh.gb * gh.gb);
        const double scale = 0.5 / (1.0 + gn);
        du = gh.gu * scale;
        db = gh.gb * scale;
    }
    const double f0 = objective(u, beta);
    double step = damping;
    for (int k = 0; k < 40; ++k) {
        const double u1 = u + step * du;
        const double b1 = beta + step * db;
        const double f1 = objective(u1, b1);
        if (std::isfinite(f1) && f1 >= f0 - 1e-13) return {u1, b1};
        step *= 0.5;
    }
    return {u, beta};
}

} // namespace irt_detail

// Maximum-a-posteriori fit via damped blockwise Newton ascent with the
// deterministic initialization above. Converged when the full gradient norm
// drops below config.tol.
inline FitResult fit_map(const IndicatorMatrix& matrix, const IrtConfig& config) {
    using namespace irt_detail;
    config.validate();
    matrix.validate();
    const Problem p = make_problem(matrix, config);

    bool anchored = false;
    for (std::size_t j = 0; j < p.n_items; ++j)
        if (p.prior_a[j] != p.prior_b[j]) anchored = true;
    if (!anchored)
        throw std::runtime_error(
            "rotation unidentified: no sign anchor or asymmetric discrimination prior configured");

    IrtParams q = initialize(p);
    FitDiagnostics diag;

    for (int iter = 1; iter <= config.max_iters; ++iter) {
        // theta blocks: strictly concave scalar problems. The inner stop must
        // undercut tol by sqrt(n_ads) so the full gradient norm can clear it.
        const double theta_tol = 0.1 * config.tol / std::sqrt(static_cast<double>(p.n_ads));
        parallel_for(p.n_ads, [&](std::size_t i) {
            double t = q.theta[i];
            for (int inner = 0; inner < 4; ++inner) {
                const ScalarGH gh = theta_grad_hess(p, q, i, t);
                if (std::abs(gh.g) < theta_tol) break;
                const double step = -gh.g / gh.h;  // h < -1/sd^2 always
                const double f0 = row_loglik(p, q, i, t) + normal_logpdf(t, p.theta_sd);
                double damp = config.step_size;
                for (int k = 0; k < 40; ++k) {
                    const double t1 = t + damp * step;
                    const double f1 = row_loglik(p, q, i, t1) + normal_logpdf(t1, p.theta_sd);
                    if (std::isfinite(f1) && f1 >= f0 - 1e-13) {
                        t = t1;
                        break;
                    }
                    damp *= 0.5;
                }
            }
            q.theta[i] = t;
        });

        // outcome item blocks
        for (std::size_t j = 0; j < p.n_items; ++j) {
            auto obj = [&](double u, double b) {
                return col_loglik(p, q, j, u, b) + beta_u_logprior(u, p.prior_a[j], p.prior_b[j]) +
                       normal_logpdf(b, p.beta_sd);
            };
            auto gh = [&](double u, double b) { return item_grad_hess(p, q, j, u, b); };
            std::tie(q.u[j], q.beta[j]) = block_newton(q.u[j], q.beta[j], config.step_size, obj, gh);
        }

        // missingness item blocks
        for (std::size_t s = 0; s < p.slot_item.size(); ++s) {
            auto obj = [&](double u, double b) {
                return miss_col_loglik(p, q, s, u, b) + beta_u_logprior(u, p.miss_a, p.miss_b) +
                       normal_logpdf(b, p.beta_sd);
            };
            auto gh = [&](double u, double b) { return miss_grad_hess(p, q, s, u, b); };
            std::tie(q.u_miss[s], q.beta_miss[s]) =
                block_newton(q.u_miss[s], q.beta_miss[s], config.step_size, obj, gh);
        }

        const double lp = log_likelihood(p, q) + log_prior(p, q);
        if (!std::isfinite(lp))
            throw std::runtime_error("log posterior diverged at iteration " + std::to_string(iter));
        diag.iterations = iter;
        diag.log_posterior = lp;
        diag.gradient_norm = grad_norm(grad_packed(p, q));
        if (diag.gradient_norm < config.tol) {
            diag.converged = true;
            break;
        }
    }
    if (!diag.converged)
        diag.warnings.push_back("max iterations reached before gradient norm fell below tol");
    return {std::move(q), std::move(diag)};
}

// ---------------------------------------------------------------------------
// Posterior summaries

enum class Classification { Greenwashing, NonGreenwashing, Unclassified };

inline const char* classification_name(Classification c) {
    switch (c) {
        case Classification::Greenwashing: return "GREENWASHING";
        case Classification::NonGreenwashing: return "NON_GREENWASHING";
        default: return "UNCLASSIFIED";
    }
}

struct ScoreSummary {
    std::string ad_id;
    double mean = 0.0;
    double sd = 0.0;
    double q05 = 0.0;
    double q95 = 0.0;
};

// High-probability rule: the 5%-95% interval must clear zero.
inline Classification classify(const ScoreSummary& s) {
    if (s.q05 > s.q95) throw std::runtime_error("invalid summary: q05 > q95 for ad " + s.ad_id);
    if (s.q05 > 0.0) return Classification::Greenwashing;
    if (s.q95 < 0.0) return Classification::NonGreenwashing;
    return Classification::Unclassified;
}

enum class ItemStage { Outcome, Missingness };

struct ItemSummary {
    std::string key;
    ItemStage stage = ItemStage::Outcome;
    double mean = 0.0;
    double sd = 0.0;
    double q05 = 0.0;
    double q95 = 0.0;
};

struct IrtPosterior {
    std::vector<std::string> ads;
    std::vector<std::string> item_keys;
    std::vector<std::size_t> missable_items;  // slot -> item index

    // draws[d] holds one posterior sample
    std::vector<std::vector<double>> theta_draws;        // D x N
    std::vector<std::vector<double>> lambda_draws;       // D x J, strictly in (-1, 1)
    std::vector<std::vector<double>> beta_draws;         // D x J
    std::vector<std::vector<double>> lambda_miss_draws;  // D x M
    std::vector<std::vector<double>> beta_miss_draws;    // D x M

    std::vector<ScoreSummary> scores;  // per ad
    std::vector<ItemSummary> items;    // outcome then missingness stages
    FitDiagnostics diagnostics;

    std::size_t n_draws() const { return theta_draws.size(); }
};

namespace irt_detail {

inline void summarize(IrtPosterior& post) {
    const std::size_t D = post.theta_draws.size();
    const std::size_t N = post.ads.size();
    const std::size_t J = post.item_keys.size();
    const std::size_t M = post.missable_items.size();

    post.scores.clear();
    std::vector<double> col(D);
    for (std::size_t i = 0; i < N; ++i) {
        for (std::size_t d = 0; d < D; ++d) col[d] = post.theta_draws[d][i];
        ScoreSummary s;
        s.ad_id = post.ads[i];
        s.mean = mean_of(col);
        s.sd = D > 1 ? sample_sd(col) : 0.0;
        s.q05 = quantile_type7(col, 0.05);
        s.q95 = quantile_type7(col, 0.95);
        post.scores.push_back(std::move(s));
    }

    post.items.clear();
    for (std::size_t j = 0; j < J; ++j) {
        for (std::size_t d = 0; d < D; ++d) col[d] = post.lambda_draws[d][j];
        ItemSummary s;
        s.key = post.item_keys[j];
        s.stage = ItemStage::Outcome;
        s.mean = mean_of(col);
        s.sd = D > 1 ? sample_sd(col) : 0.0;
        s.q05 = quantile_type7(col, 0.05);
        s.q95 = quantile_type7(col, 0.95);
        post.items.push_back(std::move(s));
    }
    for (std::size_t m = 0; m < M; ++m) {
        for (std::size_t d = 0; d < D; ++d) col[d] = post.lambda_miss_draws[d][m];
        ItemSummary s;
        s.key = post.item_keys[post.missable_items[m]];
        s.stage = ItemStage::Missingness;
        s.mean = mean_of(col);
        s.sd = D > 1 ? sample_sd(col) : 0.0;
        s.q05 = quantile_type7(col, 0.05);
        s.q95 = quantile_type7(col, 0.95);
        post.items.push_back(std::move(s));
    }
}

} // namespace irt_detail

namespace irt_detail {

// Monotone quantile transform of one scalar coordinate of the log posterior.
// At knot z the offset delta solves f(mode) - f(mode + dir*delta) = z^2/2,
// which for a Gaussian log density is exactly delta = sd*z; linear
// interpolation between knots, last slope continued beyond. This matches
// the true log posterior at the quantiles that the summaries report, keeps
// interval coverage honest for the flatter-than-quadratic tails of the
// logistic likelihood, and follows the wall of near-degenerate anchor
// priors that leaves the curvature at the mode useless.
struct QuantileTransform {
    // normal quantiles .75, .90, .95, .99, .999
    static constexpr std::array<double, 5> kKnots = {0.6744897501960817, 1.2815515655446004,
                                                     1.6448536269514722, 2.3263478740408408,
                                                     3.090232306167813};
    std::array<double, 5> left{};   // offsets at -kKnots, positive numbers
    std::array<double, 5> right{};  // offsets at +kKnots

    double map(double z) const {
        const auto& d = z < 0.0 ? left : right;
        const double a = std::abs(z);
        double z0 = 0.0, d0 = 0.0;
        for (std::size_t k = 0; k < kKnots.size(); ++k) {
            if (a <= kKnots[k]) {
                const double t = (a - z0) / (kKnots[k] - z0);
                const double off = d0 + t * (d[k] - d0);
                return z < 0.0 ? -off : off;
            }
            z0 = kKnots[k];
            d0 = d[k];
        }
        const double slope = (d[4] - d[3]) / (kKnots[4] - kKnots[3]);
        const double off = d[4] + (a - kKnots[4]) * slope;
        return z < 0.0 ? -off : off;
    }

    // effective one-sigma scale, for reporting
    double sigma() const { return 0.5 * (left[1] + right[1]) / kKnots[1]; }
};

template <typename F>
inline double solve_drop(const F& f, double f0, double direction, double drop, double hint) {
    constexpr double kMax = 80.0;  // beyond this the bounded transform saturates anyway
    double step = hint > 0.0 ? hint : 0.25;
    while (step < kMax && f0 - f(direction * step) < drop) step *= 2.0;
    if (step >= kMax) return kMax;
    double lo = 0.0, hi = step;
    for (int it = 0; it < 50; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (f0 - f(direction * mid) < drop)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

// f is the block log posterior as a function of the offset from the mode.
template <typename F>
inline QuantileTransform fit_transform(const F& f) {
    QuantileTransform t;
    const double f0 = f(0.0);
    double hint = 0.0;
    for (std::size_t k = 0; k < QuantileTransform::kKnots.size(); ++k) {
        const double z = QuantileTransform::kKnots[k];
        t.right[k] = solve_drop(f, f0, +1.0, 0.5 * z * z, hint);
        if (k > 0 && t.right[k] < t.right[k - 1]) t.right[k] = t.right[k - 1];
        hint = t.right[k];
    }
    hint = 0.0;
    for (std::size_t k = 0; k < QuantileTransform::kKnots.size(); ++k) {
        const double z = QuantileTransform::kKnots[k];
        t.left[k] = solve_drop(f, f0, -1.0, 0.5 * z * z, hint);
        if (k > 0 && t.left[k] < t.left[k - 1]) t.left[k] = t.left[k - 1];
        hint = t.left[k];
    }
    return t;
}

// Draw scales for one (u, beta) item block: quantile transform for u,
// curvature-based conditional for beta.
struct BlockScales {
    QuantileTransform u_transform;
    double beta_slope = 0.0;  // conditional mean shift of beta per unit du
    double sd_beta = 1.0;     // conditional sd of beta given u
};

template <typename Objective>
inline BlockScales block_scales(const Objective& objective, const BlockGH& gh, double u_mode,
                                double beta_mode, std::vector<std::string>& warnings,
                                const std::string& what) {
    BlockScales s;
    s.u_transform = fit_transform([&](double du) { return objective(u_mode + du, beta_mode); });
    double hbb = gh.hbb;
    if (!(hbb < 0.0)) {
        warnings.push_back("non-positive-definite curvature for " + what +
                           "; using diagonal curvature");
        hbb = -1e-8;
    }
    s.sd_beta = std::sqrt(-1.0 / hbb);
    s.beta_slope = -gh.hub / hbb;
    return s;
}

} // namespace irt_detail

// Gaussian approximation at the mode: per-block two-piece scales from the
// quantile-calibrated profile of each block's log posterior (these equal the
// curvature scale when the block is Gaussian), with beta drawn conditionally
// on u via the 2x2 curvature. Theta blocks are conditionally independent
// given items, item blocks given theta. Discrimination draws pass back
// through the bounded transform, so every lambda stays strictly inside
// (-1, 1).
inline IrtPosterior laplace_draws(const FitResult& map_fit, const IndicatorMatrix& matrix,
                                  const IrtConfig& config) {
    using namespace irt_detail;
    const Problem p = make_problem(matrix, config);
    const IrtParams& q = map_fit.params;
    const std::size_t N = p.n_ads, J = p.n_items, M = p.slot_item.size();
    const std::size_t D = static_cast<std::size_t>(config.draws);

    IrtPosterior post;
    post.ads = matrix.ads;
    post.item_keys = p.item_keys;
    post.missable_items = p.slot_item;
    post.diagnostics = map_fit.diagnostics;

    // quantile transform of each row's log posterior in theta
    std::vector<QuantileTransform> theta_t(N);
    parallel_for(N, [&](std::size_t i) {
        theta_t[i] = fit_transform([&](double dt) {
            const double t = q.theta[i] + dt;
            return row_loglik(p, q, i, t) + normal_logpdf(t, p.theta_sd);
        });
    });

    std::vector<BlockScales> item_scales(J), miss_scales(M);
    for (std::size_t j = 0; j < J; ++j) {
        auto obj = [&](double u, double b) {
            return col_loglik(p, q, j, u, b) + beta_u_logprior(u, p.prior_a[j], p.prior_b[j]) +
                   normal_logpdf(b, p.beta_sd);
        };
        item_scales[j] = block_scales(obj, item_grad_hess(p, q, j, q.u[j], q.beta[j]), q.u[j],
                                      q.beta[j], post.diagnostics.warnings,
                                      "item '" + p.item_keys[j] + "'");
    }
    for (std::size_t s = 0; s < M; ++s) {
        auto obj = [&](double u, double b) {
            return miss_col_loglik(p, q, s, u, b) + beta_u_logprior(u, p.miss_a, p.miss_b) +
                   normal_logpdf(b, p.beta_sd);
        };
        miss_scales[s] = block_scales(obj, miss_grad_hess(p, q, s, q.u_miss[s], q.beta_miss[s]),
                                      q.u_miss[s], q.beta_miss[s], post.diagnostics.warnings,
                                      "missingness of item '" + p.item_keys[p.slot_item[s]] + "'");
    }

    Rng rng(derive_seed(config.seed, "laplace"));
    post.theta_draws.assign(D, std::vector<double>(N));
    post.lambda_draws.assign(D, std::vector<double>(J));
    post.beta_draws.assign(D, std::vector<double>(J));
    post.lambda_miss_draws.assign(D, std::vector<double>(M));
    post.beta_miss_draws.assign(D, std::vector<double>(M));

    auto draw_block = [&](const BlockScales& s, double u_mode, double beta_mode, double& u_out,
                          double& beta_out) {
        const double du = s.u_transform.map(rng.normal());
        u_out = u_mode + du;
        beta_out = beta_mode + s.beta_slope * du + s.sd_beta * rng.normal();
    };

    for (std::size_t d = 0; d < D; ++d) {
        for (std::size_t i = 0; i < N; ++i)
            post.theta_draws[d][i] = q.theta[i] + theta_t[i].map(rng.normal());
        for (std::size_t j = 0; j < J; ++j) {
            double u, b;
            draw_block(item_scales[j], q.u[j], q.beta[j], u, b);
            post.lambda_draws[d][j] = IrtParams::bounded_lambda(u);
            post.beta_draws[d][j] = b;
        }
        for (std::size_t s = 0; s < M; ++s) {
            double u, b;
            draw_block(miss_scales[s], q.u_miss[s], q.beta_miss[s], u, b);
            post.lambda_miss_draws[d][s] = IrtParams::bounded_lambda(u);
            post.beta_miss_draws[d][s] = b;
        }
    }
    irt_detail::summarize(post);
    return post;
}

// Blockwise random-walk Metropolis cross-check for small instances. Scalar
// theta blocks and 2-d item blocks, scales adapted during burn-in only.
inline IrtPosterior mcmc_validate(const IndicatorMatrix& matrix, const IrtConfig& config) {
    using namespace irt_detail;
    config.validate();
    const Problem p = make_problem(matrix, config);
    if (p.n_ads > config.mcmc_max_ads)
        throw std::runtime_error("mcmc_validate guardrail: " + std::to_string(p.n_ads) +
                                 " ads exceeds mcmc_max_ads=" + std::to_string(config.mcmc_max_ads));

    FitResult start = fit_map(matrix, config);
    IrtParams q = start.params;
    const std::size_t N = p.n_ads, J = p.n_items, M = p.slot_item.size();
    const std::size_t D = static_cast<std::size_t>(config.draws);
    const int burnin = config.mcmc_burnin;
    const int thin = std::max(1, config.mcmc_thin);
    const long total = static_cast<long>(burnin) + static_cast<long>(D) * thin;

    Rng rng(derive_seed(config.seed, "mcmc"));

    std::vector<double> theta_scale(N, 0.5), item_scale(J, 0.3), miss_scale(M, 0.3);
    std::vector<int> theta_acc(N, 0), item_acc(J, 0), miss_acc(M, 0);
    long post_props = 0, post_accs = 0;

    auto adapt = [](double& scale, int& acc, int window) {
        const double rate = static_cast<double>(acc) / window;
        scale *= std::exp(0.6 * (rate - 0.3));
        scale = std::min(10.0, std::max(1e-3, scale));
        acc = 0;
    };

    IrtPosterior post;
    post.ads = matrix.ads;
    post.item_keys = p.item_keys;
    post.missable_items = p.slot_item;
    post.diagnostics = start.diagnostics;
    post.theta_draws.reserve(D);

    constexpr int kWindow = 100;
    for (long it = 0; it < total; ++it) {
        const bool adapting = it < burnin;

        for (std::size_t i = 0; i < N; ++i) {
            const double t0 = q.theta[i];
            const double t1 = t0 + theta_scale[i] * rng.normal();
            const double f0 = row_loglik(p, q, i, t0) + normal_logpdf(t0, p.theta_sd);
            const double f1 = row_loglik(p, q, i, t1) + normal_logpdf(t1, p.theta_sd);
            const bool accept = std::log(rng.uniform() + 1e-300) < f1 - f0;
            if (accept) {
                q.theta[i] = t1;
                ++theta_acc[i];
            }
            if (!adapting) {
                ++post_props;
                post_accs += accept;
            }
        }
        for (std::size_t j = 0; j < J; ++j) {
            const double u0 = q.u[j], b0 = q.beta[j];
            const double u1 = u0 + item_scale[j] * rng.normal();
            const double b1 = b0 + item_scale[j] * rng.normal();
            auto obj = [&](double u, double b) {
                return col_loglik(p, q, j, u, b) + beta_u_logprior(u, p.prior_a[j], p.prior_b[j]) +
                       normal_logpdf(b, p.beta_sd);
            };
            const bool accept = std::log(rng.uniform() + 1e-300) < obj(u1, b1) - obj(u0, b0);
            if (accept) {
                q.u[j] = u1;
                q.beta[j] = b1;
                ++item_acc[j];
            }
            if (!adapting) {
                ++post_props;
                post_accs += accept;
            }
        }
        for (std::size_t s = 0; s < M; ++s) {
            const double u0 = q.u_miss[s], b0 = q.beta_miss[s];
            const double u1 = u0 + miss_scale[s] * rng.normal();
            const double b1 = b0 + miss_scale[s] * rng.normal();
            auto obj = [&](double u, double b) {
                return miss_col_loglik(p, q, s, u, b) + beta_u_logprior(u, p.miss_a, p.miss_b) +
                       normal_logpdf(b, p.beta_sd);
            };
            const bool accept = std::log(rng.uniform() + 1e-300) < obj(u1, b1) - obj(u0, b0);
            if (accept) {
                q.u_miss[s] = u1;
                q.beta_miss[s] = b1;
                ++miss_acc[s];
            }
            if (!adapting) {
                ++post_props;
                post_accs += accept;
            }
        }

        if (adapting && (it + 1) % kWindow == 0) {
            for (std::size_t i = 0; i < N; ++i) adapt(theta_scale[i], theta_acc[i], kWindow);
            for (std::size_t j = 0; j < J; ++j) adapt(item_scale[j], item_acc[j], kWindow);
            for (std::size_t s = 0; s < M; ++s) adapt(miss_scale[s], miss_acc[s], kWindow);
        }

        if (!adapting && (it - burnin) % thin == 0 && post.theta_draws.size() < D) {
            post.theta_draws.push_back(q.theta);
            std::vector<double> lam(J), bet(J), lamm(M), betm(M);
            for (std::size_t j = 0; j < J; ++j) {
                lam[j] = IrtParams::bounded_lambda(q.u[j]);
                bet[j] = q.beta[j];
            }
            for (std::size_t s = 0; s < M; ++s) {
                lamm[s] = IrtParams::bounded_lambda(q.u_miss[s]);
                betm[s] = q.beta_miss[s];
            }
            post.lambda_draws.push_back(std::move(lam));
            post.beta_draws.push_back(std::move(bet));
            post.lambda_miss_draws.push_back(std::move(lamm));
            post.beta_miss_draws.push_back(std::move(betm));
        }
    }

    const double rate = post_props ? static_cast<double>(post_accs) / post_props : 0.0;
    if (rate < 0.1 || rate > 0.6)
        post.diagnostics.warnings.push_back("mcmc acceptance rate " + format_double(rate) +
                                            " outside [0.1, 0.6] after adaptation");
    irt_detail::summarize(post);
    return post;
}

// ---------------------------------------------------------------------------
// Fit output files

inline void write_scores(std::ostream& out, const IrtPosterior& post) {
    out << "ad_id\tmean\tq05\tq95\tclassification\n";
    for (const auto& s : post.scores)
        out << s.ad_id << '\t' << format_double(s.mean) << '\t' << format_double(s.q05) << '\t'
            << format_double(s.q95) << '\t' << classification_name(classify(s)) << '\n';
}

inline void write_item_summaries(std::ostream& out, const IrtPosterior& post) {
    out << "key\tstage\tmean\tq05\tq95\n";
    for (const auto& s : post.items)
        out << s.key << '\t' << (s.stage == ItemStage::Outcome ? "outcome" : "missingness") << '\t'
            << format_double(s.mean) << '\t' << format_double(s.q05) << '\t' << format_double(s.q95)
            << '\n';
}

inline void write_diagnostics(std::ostream& out, const FitDiagnostics& d) {
    nlohmann::json j{{"log_posterior", d.log_posterior},
                     {"gradient_norm", d.gradient_norm},
                     {"iterations", d.iterations},
                     {"converged", d.converged},
                     {"warnings", d.warnings}};
    out << j.dump(2) << '\n';
}

// Score file reader for downstream stages (aggregate, network).
inline std::map<std::string, double> read_score_means(std::istream& in) {
    std::map<std::string, double> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        const auto f = split(line, '\t');
        if (f.size() < 2) throw std::runtime_error("bad score row: " + line);
        double v;
        if (!parse_double(f[1], v)) throw std::runtime_error("bad score value: " + f[1]);
        out[f[0]] = v;
    }
    return out;
}

inline std::map<std::string, Classification> read_score_classifications(std::istream& in) {
    std::map<std::string, Classification> out;
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        if (header) {
            header = false;
            continue;
        }
        const auto f = split(line, '\t');
        if (f.size() < 5) throw std::runtime_error("bad score row: " + line);
        Classification c = Classification::Unclassified;
        if (f[4] == "GREENWASHING") c = Classification::Greenwashing;
        else if (f[4] == "NON_GREENWASHING") c = Classification::NonGreenwashing;
        out[f[0]] = c;
    }
    return out;
}

} // namespace greenscore

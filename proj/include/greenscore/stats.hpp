#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "greenscore/common.hpp"
#include "greenscore/ingest.hpp"

namespace greenscore {

struct ModelTerm {
    std::string column;
    int power = 1;  // 1 or 2
};

struct ModelSpec {
    std::string outcome;
    std::vector<ModelTerm> terms;                              // mains and squares
    std::vector<std::pair<std::string, std::string>> interactions;
    bool intercept = true;

    void validate(const CovariateTable& table) const {
        std::set<std::string> seen;
        auto check_col = [&](const std::string& c) { (void)table.col_index(c); };
        check_col(outcome);
        for (const auto& t : terms) {
            if (t.power != 1 && t.power != 2)
                throw std::runtime_error("term power must be 1 or 2 for column '" + t.column + "'");
            check_col(t.column);
            const std::string name = t.column + (t.power == 2 ? "^2" : "");
            if (!seen.insert(name).second)
                throw std::runtime_error("duplicate term '" + name + "'");
        }
        for (const auto& [a, b] : interactions) {
            check_col(a);
            check_col(b);
            if (!seen.insert(a + ":" + b).second)
                throw std::runtime_error("duplicate term '" + a + ":" + b + "'");
        }
    }
};

// Spec string grammar: terms joined by '+'; "col" main effect, "col^2"
// square, "a:b" interaction. Example: "transition + republican +
// republican^2 + transition:republican".
inline ModelSpec parse_model_spec(const std::string& outcome, const std::string& spec_string,
                                  bool intercept = true) {
    ModelSpec spec;
    spec.outcome = outcome;
    spec.intercept = intercept;
    for (const auto& raw : split(spec_string, '+')) {
        const std::string tok = trim(raw);
        if (tok.empty()) continue;
        if (const auto colon = tok.find(':'); colon != std::string::npos) {
            spec.interactions.emplace_back(trim(tok.substr(0, colon)), trim(tok.substr(colon + 1)));
        } else if (tok.size() > 2 && tok.substr(tok.size() - 2) == "^2") {
            spec.terms.push_back({trim(tok.substr(0, tok.size() - 2)), 2});
        } else {
            spec.terms.push_back({tok, 1});
        }
    }
    return spec;
}

struct DesignMatrix {
    std::vector<std::string> column_names;  // intercept, mains, squares, interactions
    std::vector<std::vector<double>> x;     // rows x columns
    std::vector<double> y;
    std::vector<std::string> row_units;     // retained unit_ids
    std::size_t dropped_rows = 0;           // listwise deletions
};

// Columns ordered: intercept, main effects, squares, interactions. Rows
// with any missing referenced cell are dropped listwise and counted.
inline DesignMatrix design_matrix(const CovariateTable& table, const ModelSpec& spec) {
    spec.validate(table);
    DesignMatrix d;

    std::vector<std::string> referenced;
    referenced.push_back(spec.outcome);
    for (const auto& t : spec.terms) referenced.push_back(t.column);
    for (const auto& [a, b] : spec.interactions) {
        referenced.push_back(a);
        referenced.push_back(b);
    }
    std::vector<std::size_t> ref_idx;
    for (const auto& c : referenced) ref_idx.push_back(table.col_index(c));

    if (spec.intercept) d.column_names.push_back("(Intercept)");
    for (const auto& t : spec.terms)
        if (t.power == 1) d.column_names.push_back(t.column);
    for (const auto& t : spec.terms)
        if (t.power == 2) d.column_names.push_back(t.column + "^2");
    for (const auto& [a, b] : spec.interactions) d.column_names.push_back(a + ":" + b);

    const std::size_t y_idx = table.col_index(spec.outcome);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        bool complete = true;
        for (std::size_t idx : ref_idx)
            if (!table.rows[r][idx]) {
                complete = false;
                break;
            }
        if (!complete) {
            ++d.dropped_rows;
            continue;
        }
        std::vector<double> row;
        row.reserve(d.column_names.size());
        if (spec.intercept) row.push_back(1.0);
        for (const auto& t : spec.terms)
            if (t.power == 1) row.push_back(*table.rows[r][table.col_index(t.column)]);
        for (const auto& t : spec.terms)
            if (t.power == 2) {
                const double v = *table.rows[r][table.col_index(t.column)];
                row.push_back(v * v);
            }
        for (const auto& [a, b] : spec.interactions)
            row.push_back(*table.rows[r][table.col_index(a)] * *table.rows[r][table.col_index(b)]);
        d.x.push_back(std::move(row));
        d.y.push_back(*table.rows[r][y_idx]);
        d.row_units.push_back(table.unit_ids[r]);
    }

    if (d.x.size() <= d.column_names.size())
        throw std::runtime_error("insufficient observations: n=" + std::to_string(d.x.size()) +
                                 " <= p=" + std::to_string(d.column_names.size()));
    return d;
}

struct OlsFit {
    std::vector<std::string> column_names;
    std::vector<double> coefficients;
    std::vector<double> std_errors;
    std::vector<double> t_stats;
    std::vector<std::vector<double>> coef_cov;  // sigma^2 (X'X)^-1
    double r_squared = 0.0;
    double adj_r_squared = 0.0;
    double residual_std_error = 0.0;
    double f_statistic = 0.0;
    std::size_t df = 0;  // n - p
    std::size_t n = 0;
    bool has_intercept = true;

    std::size_t index_of(const std::string& name) const {
        for (std::size_t i = 0; i < column_names.size(); ++i)
            if (column_names[i] == name) return i;
        throw std::runtime_error("no coefficient named '" + name + "'");
    }
};

namespace stats_detail {

// Householder QR in place: returns R in the upper triangle and applies the
// reflections to y. x is n x p, column-major access via row vectors.
inline void householder_qr(std::vector<std::vector<double>>& x, std::vector<double>& y,
                           const std::vector<std::string>& names) {
    const std::size_t n = x.size();
    const std::size_t p = names.size();
    std::vector<double> v(n);
    for (std::size_t k = 0; k < p; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < n; ++i) norm += x[i][k] * x[i][k];
        norm = std::sqrt(norm);
        if (norm == 0.0)
            throw std::runtime_error("rank deficiency: column '" + names[k] +
                                     "' is linearly dependent");
        const double alpha = x[k][k] > 0.0 ? -norm : norm;
        double vnorm2 = 0.0;
        for (std::size_t i = k; i < n; ++i) {
            v[i] = x[i][k] - (i == k ? alpha : 0.0);
            vnorm2 += v[i] * v[i];
        }
        if (vnorm2 == 0.0) continue;
        for (std::size_t j = k; j < p; ++j) {
            double dot = 0.0;
            for (std::size_t i = k; i < n; ++i) dot += v[i] * x[i][j];
            const double f = 2.0 * dot / vnorm2;
            for (std::size_t i = k; i < n; ++i) x[i][j] -= f * v[i];
        }
        double dot = 0.0;
        for (std::size_t i = k; i < n; ++i) dot += v[i] * y[i];
        const double f = 2.0 * dot / vnorm2;
        for (std::size_t i = k; i < n; ++i) y[i] -= f * v[i];
    }
}

} // namespace stats_detail

// Least squares via Householder QR; classical standard errors from
// sigma^2 (X'X)^{-1} = sigma^2 R^{-1} R^{-T}.
inline OlsFit ols(const std::vector<std::vector<double>>& x_in, const std::vector<double>& y_in,
                  const std::vector<std::string>& column_names, bool has_intercept = true,
                  bool robust_se = false) {
    const std::size_t n = x_in.size();
    const std::size_t p = column_names.size();
    if (n == 0 || p == 0 || x_in[0].size() != p)
        throw std::runtime_error("ols: malformed design matrix");
    if (y_in.size() != n) throw std::runtime_error("ols: y length mismatch");
    if (n <= p) throw std::runtime_error("insufficient observations: n <= p");

    auto x = x_in;
    auto qty = y_in;
    stats_detail::householder_qr(x, qty, column_names);

    // rank check on R's diagonal
    double rmax = 0.0;
    for (std::size_t k = 0; k < p; ++k) rmax = std::max(rmax, std::abs(x[k][k]));
    for (std::size_t k = 0; k < p; ++k)
        if (std::abs(x[k][k]) < 1e-10 * std::max(1.0, rmax))
            throw std::runtime_error("rank deficiency: column '" + column_names[k] +
                                     "' is linearly dependent");

    OlsFit fit;
    fit.column_names = column_names;
    fit.has_intercept = has_intercept;
    fit.n = n;
    fit.df = n - p;

    // back substitution for coefficients
    fit.coefficients.assign(p, 0.0);
    for (std::size_t k = p; k-- > 0;) {
        double s = qty[k];
        for (std::size_t j = k + 1; j < p; ++j) s -= x[k][j] * fit.coefficients[j];
        fit.coefficients[k] = s / x[k][k];
    }

    // residual sum of squares: tail of Q'y beyond the first p entries
    double rss = 0.0;
    for (std::size_t i = p; i < n; ++i) rss += qty[i] * qty[i];

    const double ybar = mean_of(y_in);
    double tss = 0.0;
    for (double yv : y_in) {
        const double d = has_intercept ? yv - ybar : yv;
        tss += d * d;
    }
    fit.r_squared = tss > 0.0 ? std::max(0.0, 1.0 - rss / tss) : 0.0;
    const double n_d = static_cast<double>(n);
    const double p_d = static_cast<double>(p);
    if (has_intercept)
        fit.adj_r_squared = 1.0 - (1.0 - fit.r_squared) * (n_d - 1.0) / (n_d - p_d);
    else
        fit.adj_r_squared = 1.0 - (1.0 - fit.r_squared) * n_d / (n_d - p_d);

    const double sigma2 = rss / static_cast<double>(fit.df);
    fit.residual_std_error = std::sqrt(sigma2);

    // R^{-1} by back substitution on the identity
    std::vector<std::vector<double>> rinv(p, std::vector<double>(p, 0.0));
    for (std::size_t c = 0; c < p; ++c) {
        for (std::size_t k = p; k-- > 0;) {
            double s = (k == c) ? 1.0 : 0.0;
            for (std::size_t j = k + 1; j < p; ++j) s -= x[k][j] * rinv[j][c];
            rinv[k][c] = s / x[k][k];
        }
    }
    fit.coef_cov.assign(p, std::vector<double>(p, 0.0));
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) {
            double s = 0.0;
            for (std::size_t k = 0; k < p; ++k) s += rinv[a][k] * rinv[b][k];
            fit.coef_cov[a][b] = sigma2 * s;
        }

    // HC1 sandwich covariance when requested; classical sigma^2 (X'X)^-1
    // otherwise (the default, matching conventional table annotations)
    if (robust_se) {
        std::vector<std::vector<double>> xtx_inv(p, std::vector<double>(p, 0.0));
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b) {
                double s = 0.0;
                for (std::size_t k = 0; k < p; ++k) s += rinv[a][k] * rinv[b][k];
                xtx_inv[a][b] = s;
            }
        std::vector<std::vector<double>> meat(p, std::vector<double>(p, 0.0));
        for (std::size_t i = 0; i < n; ++i) {
            double fitted = 0.0;
            for (std::size_t j = 0; j < p; ++j) fitted += x_in[i][j] * fit.coefficients[j];
            const double e2 = (y_in[i] - fitted) * (y_in[i] - fitted);
            for (std::size_t a = 0; a < p; ++a)
                for (std::size_t b = 0; b < p; ++b) meat[a][b] += e2 * x_in[i][a] * x_in[i][b];
        }
        const double dof_adjust = n_d / (n_d - p_d);
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b) {
                double s = 0.0;
                for (std::size_t c = 0; c < p; ++c)
                    for (std::size_t d = 0; d < p; ++d)
                        s += xtx_inv[a][c] * meat[c][d] * xtx_inv[d][b];
                fit.coef_cov[a][b] = dof_adjust * s;
            }
    }

    fit.std_errors.assign(p, 0.0);
    fit.t_stats.assign(p, 0.0);
    for (std::size_t k = 0; k < p; ++k) {
        fit.std_errors[k] = std::sqrt(fit.coef_cov[k][k]);
        fit.t_stats[k] = fit.std_errors[k] > 0.0 ? fit.coefficients[k] / fit.std_errors[k] : 0.0;
    }

    // F statistic for the all-slopes-zero null
    const double k_slopes = has_intercept ? p_d - 1.0 : p_d;
    if (k_slopes > 0.0 && fit.r_squared < 1.0)
        fit.f_statistic = (fit.r_squared / k_slopes) / ((1.0 - fit.r_squared) / (n_d - p_d));
    else if (fit.r_squared >= 1.0)
        fit.f_statistic = std::numeric_limits<double>::infinity();
    return fit;
}

inline OlsFit ols(const DesignMatrix& d, bool has_intercept = true, bool robust_se = false) {
    return ols(d.x, d.y, d.column_names, has_intercept, robust_se);
}

struct MarginalEffectPoint {
    double moderator_value = 0.0;
    double effect = 0.0;
    double std_error = 0.0;
};

// effect(m) = b_var + b_interaction * m; delta-method standard error from
// the coefficient covariance.
inline std::vector<MarginalEffectPoint> marginal_effect(const OlsFit& fit, const ModelSpec& spec,
                                                        const std::string& var,
                                                        const std::string& moderator,
                                                        const std::vector<double>& grid) {
    bool has_inter = false;
    std::string inter_name;
    for (const auto& [a, b] : spec.interactions) {
        if ((a == var && b == moderator) || (a == moderator && b == var)) {
            has_inter = true;
            inter_name = a + ":" + b;
        }
    }
    if (!has_inter)
        throw std::runtime_error("spec has no interaction between '" + var + "' and '" + moderator +
                                 "'");
    const std::size_t iv = fit.index_of(var);
    const std::size_t ii = fit.index_of(inter_name);
    const double b_v = fit.coefficients[iv];
    const double b_i = fit.coefficients[ii];
    const double var_v = fit.coef_cov[iv][iv];
    const double var_i = fit.coef_cov[ii][ii];
    const double cov_vi = fit.coef_cov[iv][ii];

    std::vector<MarginalEffectPoint> out;
    out.reserve(grid.size());
    for (double m : grid) {
        MarginalEffectPoint pt;
        pt.moderator_value = m;
        pt.effect = b_v + b_i * m;
        pt.std_error = std::sqrt(std::max(0.0, var_v + m * m * var_i + 2.0 * m * cov_vi));
        out.push_back(pt);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports: coefficient block then fit block, mirroring common journal
// regression tables.

inline void write_ols_table(std::ostream& out, const OlsFit& fit, std::size_t dropped_rows = 0) {
    out << "term\tcoefficient\tstd_error\tt_statistic\n";
    for (std::size_t k = 0; k < fit.column_names.size(); ++k)
        out << fit.column_names[k] << '\t' << format_double(fit.coefficients[k]) << '\t'
            << format_double(fit.std_errors[k]) << '\t' << format_double(fit.t_stats[k]) << '\n';
    out << "R2\t" << format_double(fit.r_squared) << "\t\t\n";
    out << "Adj_R2\t" << format_double(fit.adj_r_squared) << "\t\t\n";
    out << "Residual_SE\t" << format_double(fit.residual_std_error) << "\t\t\n";
    out << "F_stat\t" << format_double(fit.f_statistic) << "\t\t\n";
    out << "DF\t" << fit.df << "\t\t\n";
    out << "N\t" << fit.n << "\t\t\n";
    if (dropped_rows) out << "Dropped_rows\t" << dropped_rows << "\t\t\n";
}

inline void write_marginal_effects(std::ostream& out, const std::vector<MarginalEffectPoint>& pts) {
    out << "moderator_value\teffect\tstd_error\n";
    for (const auto& p : pts)
        out << format_double(p.moderator_value) << '\t' << format_double(p.effect) << '\t'
            << format_double(p.std_error) << '\n';
}

} // namespace greenscore

#include <doctest.h>

#include <sstream>

#include "greenscore/stats.hpp"
#include "oracles.hpp"

using namespace greenscore;

namespace {

CovariateTable table_from(const std::string& text) {
    std::istringstream in(text);
    return parse_covariates(in);
}

} // namespace

TEST_CASE("term spec strings parse into mains, squares and interactions") {
    const ModelSpec spec = parse_model_spec("y", "transition + republican + republican^2 + transition:republican");
    CHECK(spec.terms.size() == 3);
    CHECK(spec.terms[2].power == 2);
    REQUIRE(spec.interactions.size() == 1);
    CHECK(spec.interactions[0].first == "transition");
    CHECK(spec.intercept);
}

TEST_CASE("design matrix orders intercept, mains, squares, interactions") {
    const CovariateTable t = table_from(
        "unit_id\ty\ta\tb\n"
        "r1\t1\t2\t3\n"
        "r2\t2\t4\t5\n"
        "r3\t0\t1\t7\n"
        "r4\t3\t5\t2\n"
        "r5\t1\t2\t2\n"
        "r6\t4\t6\t1\n"
        "r7\t2\t3\t3\n");
    ModelSpec spec = parse_model_spec("y", "a + b + a^2 + b^2 + a:b");
    const DesignMatrix d = design_matrix(t, spec);
    CHECK(d.column_names ==
          std::vector<std::string>{"(Intercept)", "a", "b", "a^2", "b^2", "a:b"});
    CHECK(d.x.size() == 7);
    CHECK(d.dropped_rows == 0);
    // interaction column is the elementwise product of its parents
    for (std::size_t r = 0; r < d.x.size(); ++r) {
        CHECK(d.x[r][5] == doctest::Approx(d.x[r][1] * d.x[r][2]));
        CHECK(d.x[r][3] == doctest::Approx(d.x[r][1] * d.x[r][1]));
    }
}

TEST_CASE("rows with missing referenced cells are dropped and counted") {
    const CovariateTable t = table_from(
        "unit_id\ty\tpolyarchy\tgdp\n"
        "r1\t1\t0.5\t2\n"
        "r2\t2\tNA\t3\n"
        "r3\t3\t0.7\t4\n"
        "r4\t4\t0.8\t5\n"
        "r5\t5\t0.6\t6\n");
    const DesignMatrix d = design_matrix(t, parse_model_spec("y", "polyarchy"));
    CHECK(d.x.size() == 4);
    CHECK(d.dropped_rows == 1);
    // gdp missingness is irrelevant when not referenced
    const CovariateTable t2 = table_from(
        "unit_id\ty\tpolyarchy\tgdp\n"
        "r1\t1\t0.5\tNA\n"
        "r2\t2\t0.6\t3\n"
        "r3\t3\t0.7\t4\n"
        "r4\t4\t0.8\t5\n"
        "r5\t5\t0.9\t6\n");
    CHECK(design_matrix(t2, parse_model_spec("y", "polyarchy")).dropped_rows == 0);
}

TEST_CASE("too few observations is an explicit error") {
    const CovariateTable t = table_from(
        "unit_id\ty\ta\n"
        "r1\t1\t2\n"
        "r2\t2\t3\n");
    CHECK_THROWS_WITH_AS(design_matrix(t, parse_model_spec("y", "a")),
                         doctest::Contains("insufficient observations"), std::runtime_error);
}

TEST_CASE("an exact linear relation is fit exactly") {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (double xv : {0.0, 1.0, 2.0, 3.0, 4.0}) {
        x.push_back({1.0, xv});
        y.push_back(2.0 * xv + 1.0);
    }
    const OlsFit fit = ols(x, y, {"(Intercept)", "x"});
    CHECK(fit.coefficients[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.coefficients[1] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(fit.r_squared == doctest::Approx(1.0));
    CHECK(fit.residual_std_error == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("a constant outcome has zero slope and zero r-squared") {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    Rng rng(5);
    for (int i = 0; i < 8; ++i) {
        x.push_back({1.0, rng.uniform()});
        y.push_back(3.5);
    }
    const OlsFit fit = ols(x, y, {"(Intercept)", "x"});
    CHECK(fit.coefficients[1] == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(fit.r_squared == doctest::Approx(0.0));
}

TEST_CASE("coefficients match the normal-equation solve on random instances") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        std::vector<std::vector<double>> x;
        std::vector<double> y;
        for (int i = 0; i < 20; ++i) {
            x.push_back({1.0, 2.0 * rng.normal(), 2.0 * rng.normal()});
            y.push_back(rng.normal() + 0.5 * x.back()[1] - 1.2 * x.back()[2]);
        }
        const OlsFit fit = ols(x, y, {"(Intercept)", "x1", "x2"});
        const auto oracle = oracles::normal_equation_ols(x, y);
        CAPTURE(seed);
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(std::abs(fit.coefficients[k] - oracle[k]) < 1e-10);
    }
}

TEST_CASE("rank deficiency names the dependent column") {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    Rng rng(8);
    for (int i = 0; i < 10; ++i) {
        const double a = rng.normal();
        x.push_back({1.0, a, 2.0 * a});
        y.push_back(rng.normal());
    }
    CHECK_THROWS_WITH_AS(ols(x, y, {"(Intercept)", "a", "twice_a"}),
                         doctest::Contains("twice_a"), std::runtime_error);
}

TEST_CASE("residuals are orthogonal to the design") {
    Rng rng(11);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 40; ++i) {
        x.push_back({1.0, rng.normal(), rng.normal(), rng.normal()});
        y.push_back(2.0 + x.back()[1] - x.back()[2] + 0.5 * rng.normal());
    }
    const OlsFit fit = ols(x, y, {"(Intercept)", "a", "b", "c"});
    double ynorm = 0.0;
    for (double v : y) ynorm += v * v;
    ynorm = std::sqrt(ynorm);
    for (std::size_t k = 0; k < 4; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            double fitted = 0.0;
            for (std::size_t j = 0; j < 4; ++j) fitted += x[i][j] * fit.coefficients[j];
            dot += x[i][k] * (y[i] - fitted);
        }
        CHECK(std::abs(dot) < 1e-8 * ynorm);
    }
}

TEST_CASE("rescaling a predictor rescales only its coefficient") {
    Rng rng(13);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 30; ++i) {
        x.push_back({1.0, rng.normal(), rng.normal()});
        y.push_back(1.0 + 2.0 * x.back()[1] - x.back()[2] + rng.normal());
    }
    const OlsFit base = ols(x, y, {"(Intercept)", "a", "b"});
    const double c = 4.0;
    auto x2 = x;
    for (auto& row : x2) row[1] *= c;
    const OlsFit scaled = ols(x2, y, {"(Intercept)", "a", "b"});
    CHECK(scaled.coefficients[1] == doctest::Approx(base.coefficients[1] / c).epsilon(1e-10));
    CHECK(scaled.coefficients[2] == doctest::Approx(base.coefficients[2]).epsilon(1e-10));
    CHECK(scaled.r_squared == doctest::Approx(base.r_squared).epsilon(1e-10));
    CHECK(scaled.f_statistic == doctest::Approx(base.f_statistic).epsilon(1e-10));
}

TEST_CASE("a pure noise column cannot lower r-squared") {
    Rng rng(17);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 25; ++i) {
        x.push_back({1.0, rng.normal()});
        y.push_back(0.5 * x.back()[1] + rng.normal());
    }
    const OlsFit base = ols(x, y, {"(Intercept)", "a"});
    auto x2 = x;
    for (auto& row : x2) row.push_back(rng.normal());
    const OlsFit bigger = ols(x2, y, {"(Intercept)", "a", "noise"});
    CHECK(bigger.r_squared >= base.r_squared - 1e-12);
    CHECK(bigger.adj_r_squared <= base.adj_r_squared + 0.05);
}

TEST_CASE("fit statistics carry their identities") {
    Rng rng(19);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    const std::size_t n = 32, p = 3;
    for (std::size_t i = 0; i < n; ++i) {
        x.push_back({1.0, rng.normal(), rng.normal()});
        y.push_back(1.0 + x.back()[1] + rng.normal());
    }
    const OlsFit fit = ols(x, y, {"(Intercept)", "a", "b"});
    CHECK(fit.df == n - p);
    CHECK(fit.n == n);
    CHECK(fit.adj_r_squared ==
          doctest::Approx(1.0 - (1.0 - fit.r_squared) * (n - 1.0) / (n - p)).epsilon(1e-12));
    const double f_expected =
        (fit.r_squared / (p - 1.0)) / ((1.0 - fit.r_squared) / (n - p));
    CHECK(fit.f_statistic == doctest::Approx(f_expected).epsilon(1e-12));
    for (double se : fit.std_errors) CHECK(se > 0.0);
}

TEST_CASE("robust standard errors react to heteroskedastic noise") {
    Rng rng(29);
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 200; ++i) {
        const double a = rng.normal();
        x.push_back({1.0, a});
        // noise sd grows with |a|
        y.push_back(1.0 + 0.5 * a + (0.2 + std::abs(a)) * rng.normal());
    }
    const OlsFit classical = ols(x, y, {"(Intercept)", "a"});
    const OlsFit robust = ols(x, y, {"(Intercept)", "a"}, true, true);
    // coefficients identical, the slope's sandwich se larger under this design
    CHECK(robust.coefficients[1] == doctest::Approx(classical.coefficients[1]).epsilon(1e-12));
    CHECK(robust.std_errors[1] > classical.std_errors[1]);

    // homoskedastic data: the two agree to first order
    std::vector<std::vector<double>> xh;
    std::vector<double> yh;
    for (int i = 0; i < 400; ++i) {
        xh.push_back({1.0, rng.normal()});
        yh.push_back(1.0 + 0.5 * xh.back()[1] + rng.normal());
    }
    const OlsFit c2 = ols(xh, yh, {"(Intercept)", "a"});
    const OlsFit r2 = ols(xh, yh, {"(Intercept)", "a"}, true, true);
    CHECK(r2.std_errors[1] == doctest::Approx(c2.std_errors[1]).epsilon(0.15));
}

TEST_CASE("marginal effects reproduce the interaction table arithmetic") {
    // coefficient layout mirroring an interaction model fit
    OlsFit fit;
    fit.column_names = {"(Intercept)", "transition", "republican", "transition:republican"};
    fit.coefficients = {-5.069, 0.674, -3.671, -0.683};
    fit.coef_cov.assign(4, std::vector<double>(4, 0.0));
    fit.coef_cov[1][1] = 0.166 * 0.166;
    fit.coef_cov[3][3] = 0.304 * 0.304;
    fit.coef_cov[1][3] = fit.coef_cov[3][1] = -0.02;

    ModelSpec spec = parse_model_spec("y", "transition + republican + transition:republican");
    const auto pts = marginal_effect(fit, spec, "transition", "republican", {0.0, 1.0});
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].effect == doctest::Approx(0.674));
    CHECK(pts[0].std_error == doctest::Approx(0.166));
    CHECK(pts[1].effect == doctest::Approx(-0.009));
    CHECK(pts[1].std_error ==
          doctest::Approx(std::sqrt(0.166 * 0.166 + 0.304 * 0.304 + 2.0 * -0.02)));
}

TEST_CASE("zero interaction keeps the effect flat") {
    OlsFit fit;
    fit.column_names = {"(Intercept)", "a", "b", "a:b"};
    fit.coefficients = {0.0, 1.5, 0.2, 0.0};
    fit.coef_cov.assign(4, std::vector<double>(4, 0.0));
    ModelSpec spec = parse_model_spec("y", "a + b + a:b");
    const auto pts = marginal_effect(fit, spec, "a", "b", {-2.0, 0.0, 2.0});
    for (const auto& p : pts) CHECK(p.effect == doctest::Approx(1.5));
}

TEST_CASE("requesting margins without the interaction is an error") {
    OlsFit fit;
    fit.column_names = {"(Intercept)", "a", "b"};
    fit.coefficients = {0.0, 1.0, 1.0};
    fit.coef_cov.assign(3, std::vector<double>(3, 0.0));
    ModelSpec spec = parse_model_spec("y", "a + b");
    CHECK_THROWS_WITH_AS(marginal_effect(fit, spec, "a", "b", {0.0}),
                         doctest::Contains("no interaction"), std::runtime_error);
}

TEST_CASE("full pipeline from table to report") {
    std::string text = "unit_id\tscore\ttransition\trepublican\n";
    Rng rng(23);
    for (int i = 0; i < 60; ++i) {
        const double tr = rng.uniform();
        const double rep = rng.uniform();
        const double score = -0.3 + 0.7 * tr - 0.6 * tr * rep + 0.1 * rng.normal();
        text += "c" + std::to_string(i) + "\t" + format_double(score) + "\t" + format_double(tr) +
                "\t" + format_double(rep) + "\n";
    }
    const CovariateTable t = table_from(text);
    const ModelSpec spec =
        parse_model_spec("score", "transition + republican + transition:republican");
    const DesignMatrix d = design_matrix(t, spec);
    const OlsFit fit = ols(d);
    CHECK(fit.coefficients[d.column_names.size() - 1] < 0.0);  // interaction sign recovered

    std::ostringstream out;
    write_ols_table(out, fit, d.dropped_rows);
    CHECK(out.str().find("transition:republican") != std::string::npos);
    CHECK(out.str().find("R2\t") != std::string::npos);
}

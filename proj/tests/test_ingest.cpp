#include <doctest.h>

#include <sstream>

#include "greenscore/ingest.hpp"

using namespace greenscore;

namespace {

std::istringstream fixture(const std::string& s) { return std::istringstream(s); }

} // namespace

TEST_CASE("well-formed ad lines parse cleanly") {
    auto in = fixture(
        R"({"ad_id":"a1","page_id":"p1","text":"hello","language":"en"})"
        "\n"
        R"({"ad_id":"a2","page_id":"p2","text":"world","start_date":"2021-01-02","end_date":"2021-02-01"})"
        "\n");
    const AdCorpus c = parse_ads(in);
    REQUIRE(c.ads.size() == 2);
    CHECK(c.errors.empty());
    CHECK(c.ads[0].ad_id == "a1");
    CHECK(c.ads[1].start_date->str() == "2021-01-02");
    CHECK(c.input_lines == 2);
}

TEST_CASE("duplicate ad_id is a hard error naming the id") {
    auto in = fixture(
        R"({"ad_id":"a1","page_id":"p1","text":"x"})"
        "\n"
        R"({"ad_id":"a1","page_id":"p2","text":"y"})"
        "\n");
    CHECK_THROWS_WITH_AS(parse_ads(in), doctest::Contains("duplicate ad_id a1"),
                         std::runtime_error);
}

TEST_CASE("missing mandatory field becomes a line-level error") {
    auto in = fixture(
        R"({"ad_id":"a1","page_id":"p1","text":"x"})"
        "\n"
        R"({"ad_id":"a2","page_id":"p2"})"
        "\n");
    const AdCorpus c = parse_ads(in);
    CHECK(c.ads.size() == 1);
    REQUIRE(c.errors.size() == 1);
    CHECK(c.errors[0].line == 2);
    CHECK(c.errors[0].message.find("text") != std::string::npos);
    CHECK(c.ads.size() + c.errors.size() == c.input_lines);
}

TEST_CASE("schema remaps source field names") {
    AdSchema schema;
    schema.field_map = {{"id", "ad_id"}, {"body", "text"}, {"page", "page_id"}};
    auto in = fixture(R"({"id":"a1","page":"p1","body":"hello"})"
                      "\n");
    const AdCorpus c = parse_ads(in, schema);
    REQUIRE(c.ads.size() == 1);
    CHECK(c.ads[0].text == "hello");
}

TEST_CASE("impression shares above one are rejected per dimension") {
    auto in = fixture(
        R"({"ad_id":"a1","page_id":"p1","text":"x","impressions":{"country":[{"group_key":"US","value":0.7},{"group_key":"GB","value":0.4}]}})"
        "\n");
    const AdCorpus c = parse_ads(in);
    CHECK(c.ads.empty());
    REQUIRE(c.errors.size() == 1);
    CHECK(c.errors[0].message.find("sum") != std::string::npos);
}

TEST_CASE("counts flag allows weights above one") {
    auto in = fixture(
        R"({"ad_id":"a1","page_id":"p1","text":"x","impressions_are_counts":true,"impressions":{"country":[{"group_key":"US","value":700},{"group_key":"GB","value":400}]}})"
        "\n");
    const AdCorpus c = parse_ads(in);
    CHECK(c.ads.size() == 1);
    CHECK(c.impressions_are_counts);
}

TEST_CASE("end date before start date is rejected") {
    auto in = fixture(
        R"({"ad_id":"a1","page_id":"p1","text":"x","start_date":"2021-05-01","end_date":"2021-04-01"})"
        "\n");
    const AdCorpus c = parse_ads(in);
    CHECK(c.ads.empty());
    REQUIRE(c.errors.size() == 1);
}

TEST_CASE("ads round-trip through their file format") {
    auto in = fixture(
        R"({"ad_id":"a1","page_id":"p1","page_name":"Page One","funder":"F","text":"héllo wörld","language":"de","start_date":"2021-01-02","end_date":"2021-02-01","impressions":{"country":[{"group_key":"DE","value":0.6},{"group_key":"AT","value":0.4}],"age":[{"group_key":"18-24","value":0.5}]}})"
        "\n"
        R"({"ad_id":"a2","page_id":"p2","text":""})"
        "\n");
    const AdCorpus c = parse_ads(in);
    REQUIRE(c.ads.size() == 2);

    std::ostringstream out;
    write_ads(out, c);
    auto again = fixture(out.str());
    const AdCorpus c2 = parse_ads(again);
    REQUIRE(c2.ads.size() == 2);
    CHECK(c2.ads[0] == c.ads[0]);
    CHECK(c2.ads[1] == c.ads[1]);
    CHECK(c2.impressions_are_counts == c.impressions_are_counts);
}

TEST_CASE("record count plus error count equals input line count") {
    // property over a batch of randomly broken fixtures
    Rng rng(404);
    for (int rep = 0; rep < 25; ++rep) {
        std::string text;
        std::size_t lines = 0;
        for (int i = 0; i < 20; ++i) {
            const double roll = rng.uniform();
            if (roll < 0.6) {
                text += R"({"ad_id":"a)" + std::to_string(rep * 100 + i) +
                        R"(","page_id":"p","text":"t"})" "\n";
            } else if (roll < 0.8) {
                text += "not json at all\n";
            } else {
                text += R"({"ad_id":"b)" + std::to_string(rep * 100 + i) + R"(","page_id":"p"})" "\n";
            }
            ++lines;
        }
        auto in = fixture(text);
        const AdCorpus c = parse_ads(in);
        CHECK(c.ads.size() + c.errors.size() == lines);
    }
}

TEST_CASE("registry parses the closed entity type set") {
    auto in = fixture("page_id\tentity_name\tentity_type\np1\tExxonMobil\toil_company\n");
    const EntityRegistry reg = parse_registry(in);
    REQUIRE(reg.entries.size() == 1);
    CHECK(reg.entries[0].entity_type == EntityType::OilCompany);
    CHECK(reg.contains("p1"));
    CHECK(!reg.contains("p2"));
}

TEST_CASE("registry rejects unknown entity types naming the row") {
    auto in = fixture("page_id\tentity_name\tentity_type\np1\tSomeCharity\tcharity\n");
    CHECK_THROWS_WITH_AS(parse_registry(in), doctest::Contains("charity"), std::runtime_error);
}

TEST_CASE("registry rejects duplicate page ids naming the duplicate") {
    auto in = fixture(
        "page_id\tentity_name\tentity_type\n"
        "p1\tA\toil_company\n"
        "p2\tB\tthink_tank\n"
        "p3\tC\ttrade_association\n"
        "p2\tD\tinterest_group\n"
        "p4\tE\tother\n");
    CHECK_THROWS_WITH_AS(parse_registry(in), doctest::Contains("duplicate page_id p2"),
                         std::runtime_error);
}

TEST_CASE("registry round-trips") {
    auto in = fixture(
        "page_id\tentity_name\tentity_type\n"
        "p1\tA Corp\toil_company\n"
        "p2\tB Tank\tthink_tank\n");
    const EntityRegistry reg = parse_registry(in);
    std::ostringstream out;
    write_registry(out, reg);
    auto again = fixture(out.str());
    const EntityRegistry reg2 = parse_registry(again);
    REQUIRE(reg2.entries.size() == reg.entries.size());
    for (std::size_t i = 0; i < reg.entries.size(); ++i) {
        CHECK(reg2.entries[i].page_id == reg.entries[i].page_id);
        CHECK(reg2.entries[i].entity_type == reg.entries[i].entity_type);
    }
}

TEST_CASE("covariate table carries the polyarchy extremes") {
    auto in = fixture(
        "unit_id\tpolyarchy\tco2_pc\n"
        "SAU\t0.016\t18.0\n"
        "DNK\t0.916\t5.0\n");
    const CovariateTable t = parse_covariates(in, {"polyarchy"});
    REQUIRE(t.rows.size() == 2);
    double mn = 1e9, mx = -1e9;
    const std::size_t c = t.col_index("polyarchy");
    for (const auto& row : t.rows) {
        mn = std::min(mn, *row[c]);
        mx = std::max(mx, *row[c]);
    }
    CHECK(mn == doctest::Approx(0.016));
    CHECK(mx == doctest::Approx(0.916));
}

TEST_CASE("NA and empty cells are explicit missing markers") {
    auto in = fixture(
        "unit_id\tpolyarchy\tco2_pc\n"
        "A\tNA\t1.5\n"
        "B\t0.5\t\n");
    const CovariateTable t = parse_covariates(in);
    CHECK(!t.rows[0][0].has_value());
    CHECK(t.rows[0][1].has_value());
    CHECK(!t.rows[1][1].has_value());
}

TEST_CASE("non-numeric covariate cells are errors with row and column") {
    auto in = fixture(
        "unit_id\tpolyarchy\tco2_pc\n"
        "A\t0.2\t1.5\n"
        "B\t0.5\tabc\n");
    CHECK_THROWS_WITH_AS(parse_covariates(in), doctest::Contains("(row 3, col co2_pc)"),
                         std::runtime_error);
}

TEST_CASE("covariates demand expected columns") {
    auto in = fixture("unit_id\tpolyarchy\nA\t0.2\n");
    CHECK_THROWS_WITH_AS(parse_covariates(in, {"gdp"}), doctest::Contains("gdp"),
                         std::runtime_error);
}

TEST_CASE("covariate tables round-trip") {
    auto in = fixture(
        "unit_id\ta\tb\n"
        "X\t1.25\tNA\n"
        "Y\t-0.5\t3\n");
    const CovariateTable t = parse_covariates(in);
    std::ostringstream out;
    write_covariates(out, t);
    auto again = fixture(out.str());
    const CovariateTable t2 = parse_covariates(again);
    REQUIRE(t2.rows.size() == t.rows.size());
    for (std::size_t r = 0; r < t.rows.size(); ++r)
        for (std::size_t c = 0; c < t.columns.size(); ++c)
            CHECK(t2.rows[r][c] == t.rows[r][c]);
}

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <sstream>

#include "locprod/panel.hpp"
#include "locprod/simulator.hpp"

using namespace locprod;

namespace {

PanelSchema level_schema() {
    PanelSchema s;
    s.firm_id = "firm";
    s.period = "year";
    s.output = "Y";
    s.capital = "K";
    s.labor = "L";
    s.materials = "M";
    s.coordinates = {"lat", "lon"};
    s.log_transform = true;
    return s;
}

}  // namespace

TEST_CASE("load_panel ingests a well-formed two-firm file") {
    std::istringstream in(
        "firm,year,Y,K,L,M,lat,lon\n"
        "a,1,10,5,2,4,0.5,0.9\n"
        "a,2,11,5,2,4.5,0.5,0.9\n"
        "b,1,20,8,3,9,0.6,1.0\n"
        "b,2,22,8,3,9.5,0.6,1.0\n");
    const auto panel = load_panel(in, level_schema());
    REQUIRE(panel.n_observations() == 4);
    REQUIRE(panel.n_locations() == 2);
    REQUIRE(panel.n_firms == 2);
    REQUIRE(panel.observations[0].y == Catch::Approx(std::log(10.0)));
    // deflated-data default: price ratio 0, v = m - y
    REQUIRE(panel.observations[0].price_ratio == 0.0);
    REQUIRE(panel.observations[0].v ==
            Catch::Approx(std::log(4.0) - std::log(10.0)).epsilon(1e-15));
    REQUIRE(panel.location_observations[0].size() == 2);
}

TEST_CASE("load_panel rejects a nonpositive level naming the cell") {
    std::istringstream in(
        "firm,year,Y,K,L,M,lat,lon\n"
        "a,1,10,5,2,0,0.5,0.9\n");
    try {
        load_panel(in, level_schema());
        FAIL("expected DataDomainError");
    } catch (const DataDomainError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("'a'") != std::string::npos);
        REQUIRE(msg.find("M") != std::string::npos);
        REQUIRE(msg.find("1") != std::string::npos);
    }
}

TEST_CASE("load_panel derives v from nominal cost and revenue") {
    auto schema = level_schema();
    schema.materials_cost = "MC";
    schema.revenue = "REV";
    std::istringstream in(
        "firm,year,Y,K,L,M,lat,lon,MC,REV\n"
        "a,1,10,5,2,4,0.5,0.9,50,100\n");
    const auto panel = load_panel(in, schema);
    REQUIRE(panel.observations[0].v == Catch::Approx(std::log(0.5)).epsilon(1e-15));
}

TEST_CASE("load_panel integrity errors") {
    SECTION("duplicate (firm, period)") {
        std::istringstream in(
            "firm,year,Y,K,L,M,lat,lon\n"
            "a,1,10,5,2,4,0.5,0.9\n"
            "a,1,11,5,2,4,0.5,0.9\n");
        REQUIRE_THROWS_AS(load_panel(in, level_schema()), IntegrityError);
    }
    SECTION("firm with time-varying coordinates") {
        std::istringstream in(
            "firm,year,Y,K,L,M,lat,lon\n"
            "a,1,10,5,2,4,0.5,0.9\n"
            "a,2,11,5,2,4,0.5,0.8\n");
        REQUIRE_THROWS_AS(load_panel(in, level_schema()), IntegrityError);
    }
    SECTION("malformed row carries the row number") {
        std::istringstream in(
            "firm,year,Y,K,L,M,lat,lon\n"
            "a,1,10,5,2,4,0.5,0.9\n"
            "b,2,xx,5,2,4,0.5,0.9\n");
        try {
            load_panel(in, level_schema());
            FAIL("expected ParseError");
        } catch (const ParseError& e) {
            REQUIRE(e.row() == 3);
        }
    }
    SECTION("missing required column is named") {
        std::istringstream in("firm,year,Y,K,L,lat,lon\na,1,10,5,2,0.5,0.9\n");
        try {
            load_panel(in, level_schema());
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            REQUIRE(std::string(e.what()).find("'M'") != std::string::npos);
        }
    }
}

TEST_CASE("derive_share is the linear share identity") {
    REQUIRE(derive_share(0.0, 1.5, 1.5) == 0.0);
    REQUIRE(derive_share(0.0, 1.0 + std::log(0.5), 1.0) == Catch::Approx(std::log(0.5)));
    // linearity in (m, -y), exact
    const double pr = 0.37, m = 2.1, y = 3.3;
    REQUIRE(derive_share(pr, m, y) == pr + m - y);
}

TEST_CASE("zero-noise simulated rows satisfy the share optimality condition") {
    // with eta == 0 and theta == 1 the first-order condition collapses to
    // v = ln beta_M(S); the oracle is the closed-form elasticity
    SimConfig cfg;
    cfg.n = 5;
    cfg.T = 3;
    cfg.sigma_eta = 0.0;
    cfg.sigma_zeta = 0.0;
    cfg.seed = 99;
    const auto sim = generate_panel(cfg);
    REQUIRE(cfg.theta() == 1.0);
    for (const auto& o : sim.panel.observations) {
        const double s = sim.panel.location_of(o)[0];
        REQUIRE(o.v == Catch::Approx(std::log(cfg.beta_m(s))).margin(1e-12));
    }
}

TEST_CASE("build_lagged_rows counts") {
    SECTION("balanced two-firm three-period panel has four rows") {
        PanelDatasetBuilder b(1, true, 0);
        for (int t = 1; t <= 3; ++t) {
            b.add("a", t, 1.0, 1.0, 1.0, 1.0, {0.5});
            b.add("b", t, 1.0, 1.0, 1.0, 1.0, {0.6});
        }
        const auto panel = b.finish();
        REQUIRE(build_lagged_rows(panel).size() == 4);
    }
    SECTION("a gap produces no row") {
        PanelDatasetBuilder b(1, true, 0);
        b.add("a", 1, 1.0, 1.0, 1.0, 1.0, {0.5});
        b.add("a", 3, 1.0, 1.0, 1.0, 1.0, {0.5});
        const auto panel = b.finish();
        REQUIRE(build_lagged_rows(panel).empty());
    }
    SECTION("simulated panel n=100 T=10 has 900 rows") {
        SimConfig cfg;
        cfg.n = 100;
        cfg.T = 10;
        cfg.seed = 5;
        const auto sim = generate_panel(cfg);
        REQUIRE(build_lagged_rows(sim.panel).size() == 900);
    }
    SECTION("row count equals observations minus firm first-appearances") {
        // unbalanced: a observed 1..4, b observed {2,3}, c observed {5}
        PanelDatasetBuilder b(1, true, 0);
        for (int t = 1; t <= 4; ++t) b.add("a", t, 1, 1, 1, 1, {0.5});
        b.add("b", 2, 1, 1, 1, 1, {0.6});
        b.add("b", 3, 1, 1, 1, 1, {0.6});
        b.add("c", 5, 1, 1, 1, 1, {0.7});
        const auto panel = b.finish();
        REQUIRE(build_lagged_rows(panel).size() == panel.n_observations() - 3);
    }
}

TEST_CASE("canonical round-trip is bit-identical") {
    SimConfig cfg;
    cfg.n = 13;
    cfg.T = 4;
    cfg.seed = 21;
    const auto sim = generate_panel(cfg);

    std::ostringstream out;
    save_panel_csv(sim.panel, out);
    std::istringstream in(out.str());
    const auto back =
        load_panel(in, canonical_schema(sim.panel.coord_dim, sim.panel.has_labor,
                                        sim.panel.control_dim));

    REQUIRE(back.n_observations() == sim.panel.n_observations());
    REQUIRE(back.n_locations() == sim.panel.n_locations());
    for (std::size_t i = 0; i < back.n_observations(); ++i) {
        const auto& a = sim.panel.observations[i];
        const auto& b = back.observations[i];
        REQUIRE(a.firm_id == b.firm_id);
        REQUIRE(a.period == b.period);
        REQUIRE(a.y == b.y);  // bitwise
        REQUIRE(a.k == b.k);
        REQUIRE(a.m == b.m);
        REQUIRE(a.v == b.v);
        REQUIRE(a.price_ratio == b.price_ratio);
        REQUIRE(sim.panel.location_of(a) == back.location_of(b));
    }

    // and a second save reproduces the exact bytes
    std::ostringstream out2;
    save_panel_csv(back, out2);
    REQUIRE(out.str() == out2.str());
}

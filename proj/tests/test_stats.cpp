#include <catch2/catch_amalgamated.hpp>

#include "locprod/stats.hpp"

using namespace locprod;

TEST_CASE("normal quantile inverts the cdf") {
    for (double p : {1e-6, 0.01, 0.025, 0.3, 0.5, 0.8, 0.975, 0.999999}) {
        REQUIRE(normal_cdf(normal_quantile(p)) == Catch::Approx(p).epsilon(1e-10));
    }
    REQUIRE(normal_quantile(0.5) == Catch::Approx(0.0).margin(1e-15));
    // classical two-sided 5% point
    REQUIRE(normal_quantile(0.975) == Catch::Approx(1.959963984540054).epsilon(1e-12));
    REQUIRE(std::isinf(normal_quantile(0.0)));
    REQUIRE(std::isinf(normal_quantile(1.0)));
}

TEST_CASE("type-7 quantile interpolates order statistics") {
    std::vector<double> x = {1, 2, 3, 4, 5};
    REQUIRE(quantile_type7(x, 0.0) == 1.0);
    REQUIRE(quantile_type7(x, 1.0) == 5.0);
    REQUIRE(quantile_type7(x, 0.5) == 3.0);
    // h = (n-1)p + 1 = 4*0.25 + 1 = 2.0
    REQUIRE(quantile_type7(x, 0.25) == 2.0);
    // h = 4*0.1 + 1 = 1.4: 1 + 0.4*(2-1)
    REQUIRE(quantile_type7(x, 0.1) == Catch::Approx(1.4));
}

TEST_CASE("summary quartiles") {
    std::vector<double> x;
    for (int i = 1; i <= 101; ++i) x.push_back(i);
    const auto s = summarize_quartiles(x);
    REQUIRE(s.mean == Catch::Approx(51.0));
    REQUIRE(s.q1 == Catch::Approx(26.0));
    REQUIRE(s.median == Catch::Approx(51.0));
    REQUIRE(s.q3 == Catch::Approx(76.0));
}

TEST_CASE("pearson correlation basics") {
    std::vector<double> a = {1, 2, 3, 4}, b = {2, 4, 6, 8}, c = {8, 6, 4, 2};
    REQUIRE(pearson_correlation(a, b) == Catch::Approx(1.0));
    REQUIRE(pearson_correlation(a, c) == Catch::Approx(-1.0));
}

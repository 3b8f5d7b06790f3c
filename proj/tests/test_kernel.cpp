#include <catch2/catch_amalgamated.hpp>
#include <algorithm>
#include <cmath>

#include "locprod/kernel.hpp"
#include "locprod/rng.hpp"

using namespace locprod;

namespace {

PanelDataset one_obs_per_location(const std::vector<std::vector<double>>& coords) {
    PanelDatasetBuilder b(static_cast<int>(coords[0].size()), true, 0);
    for (std::size_t i = 0; i < coords.size(); ++i)
        b.add("f" + std::to_string(i), 1, 1.0, 1.0, 1.0, 1.0, coords[i]);
    return b.finish();
}

}  // namespace

TEST_CASE("euclidean distance") {
    REQUIRE(distance({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    REQUIRE(distance({0.0, 0.0}, {3.0, 4.0}) == Catch::Approx(5.0));
    REQUIRE_THROWS_AS(distance({1.0}, {1.0, 2.0}), std::invalid_argument);

    // random pairs vs the component-wise oracle
    RngStream rng(17);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> a = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
        std::vector<double> b = {rng.uniform(-2, 2), rng.uniform(-2, 2)};
        const double oracle =
            std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]));
        REQUIRE(distance(a, b) == Catch::Approx(oracle).margin(1e-12));
    }
}

TEST_CASE("adaptive bandwidth is the h-th order statistic") {
    const auto panel = one_obs_per_location({{0.0}, {3.0}, {4.0}});
    SECTION("sorted distances {0,3,4}: h=2 gives 3") {
        REQUIRE(adaptive_bandwidth({0.0}, panel, 2) == Catch::Approx(3.0));
        REQUIRE(adaptive_bandwidth({0.0}, panel, 1) == Catch::Approx(3.0));  // escalation past 0
        REQUIRE(adaptive_bandwidth({0.0}, panel, 3) == Catch::Approx(4.0));
    }
    SECTION("h out of range") {
        REQUIRE_THROWS_AS(adaptive_bandwidth({0.0}, panel, 0), std::invalid_argument);
        REQUIRE_THROWS_AS(adaptive_bandwidth({0.0}, panel, 4), std::invalid_argument);
    }
    SECTION("random instance equals the full-sort oracle") {
        RngStream rng(5);
        std::vector<std::vector<double>> coords;
        for (int i = 0; i < 200; ++i) coords.push_back({rng.uniform(0, 1), rng.uniform(0, 1)});
        const auto big = one_obs_per_location(coords);
        const std::vector<double> s = {0.4, 0.6};
        std::vector<double> dist;
        for (const auto& c : coords) dist.push_back(distance(c, s));
        std::sort(dist.begin(), dist.end());
        for (int h : {1, 10, 50, 200})
            REQUIRE(adaptive_bandwidth(s, big, h) ==
                    Catch::Approx(dist[static_cast<std::size_t>(h - 1)]).margin(1e-15));
    }
}

TEST_CASE("degenerate geometries") {
    SECTION("co-located mass escalates to the smallest positive distance") {
        PanelDatasetBuilder b(1, true, 0);
        for (int i = 0; i < 5; ++i) b.add("f" + std::to_string(i), 1, 1, 1, 1, 1, {0.5});
        b.add("far", 1, 1, 1, 1, 1, {0.9});
        const auto panel = b.finish();
        REQUIRE(adaptive_bandwidth({0.5}, panel, 3) == Catch::Approx(0.4));
        const auto w = kernel_weights({0.5}, panel, KernelSpec{3});
        REQUIRE(w.status == BandwidthStatus::Escalated);
    }
    SECTION("all observations coincident: uniform weights") {
        PanelDatasetBuilder b(1, true, 0);
        for (int i = 0; i < 5; ++i) b.add("f" + std::to_string(i), 1, 1, 1, 1, 1, {0.5});
        const auto panel = b.finish();
        const auto w = kernel_weights({0.5}, panel, KernelSpec{3});
        REQUIRE(w.status == BandwidthStatus::AllCoincident);
        for (double wi : w.weights) REQUIRE(wi == Catch::Approx(w.weights[0]));
    }
}

TEST_CASE("kernel weights follow the scaled Gaussian") {
    const auto panel = one_obs_per_location({{0.0}, {1.0}, {2.0}, {5.0}});
    const auto w = kernel_weights({0.0}, panel, KernelSpec{2});
    REQUIRE(w.bandwidth == Catch::Approx(1.0));
    // an observation exactly at distance R has weight exp(-1/2)/sqrt(2 pi)
    REQUIRE(w.weights[1] == Catch::Approx(0.24197072451914337).epsilon(1e-12));
    REQUIRE(w.weights[0] == Catch::Approx(0.3989422804014327).epsilon(1e-12));
    for (double wi : w.weights) REQUIRE(wi > 0.0);
}

TEST_CASE("weight ordering mirrors distance ordering") {
    RngStream rng(23);
    std::vector<std::vector<double>> coords;
    for (int i = 0; i < 120; ++i) coords.push_back({rng.uniform(0, 1), rng.uniform(0, 1)});
    const auto panel = one_obs_per_location(coords);
    const std::vector<double> s = {0.5, 0.5};
    const auto w = kernel_weights(s, panel, KernelSpec{30});

    std::vector<std::size_t> by_dist(coords.size()), by_weight(coords.size());
    for (std::size_t i = 0; i < coords.size(); ++i) by_dist[i] = by_weight[i] = i;
    std::sort(by_dist.begin(), by_dist.end(), [&](std::size_t a, std::size_t b) {
        return distance(coords[a], s) < distance(coords[b], s);
    });
    std::sort(by_weight.begin(), by_weight.end(),
              [&](std::size_t a, std::size_t b) { return w.weights[a] > w.weights[b]; });
    for (std::size_t i = 0; i + 1 < coords.size(); ++i) {
        // monotonicity: d1 <= d2 implies w1 >= w2
        REQUIRE(w.weights[by_dist[i]] >= w.weights[by_dist[i + 1]]);
    }
    // nearest observation receives the maximal weight
    const double wmax = *std::max_element(w.weights.begin(), w.weights.end());
    REQUIRE(w.weights[by_dist[0]] == Catch::Approx(wmax));
    (void)by_weight;
}

TEST_CASE("scale coupling: doubling coordinates doubles R and preserves weights") {
    RngStream rng(31);
    std::vector<std::vector<double>> coords, doubled;
    for (int i = 0; i < 60; ++i) {
        coords.push_back({rng.uniform(0, 1), rng.uniform(0, 1)});
        doubled.push_back({2.0 * coords.back()[0], 2.0 * coords.back()[1]});
    }
    const auto p1 = one_obs_per_location(coords);
    const auto p2 = one_obs_per_location(doubled);
    const std::vector<double> s = {0.3, 0.4}, s2 = {0.6, 0.8};
    const auto w1 = kernel_weights(s, p1, KernelSpec{15});
    const auto w2 = kernel_weights(s2, p2, KernelSpec{15});
    REQUIRE(w2.bandwidth == Catch::Approx(2.0 * w1.bandwidth).epsilon(1e-12));
    for (std::size_t i = 0; i < coords.size(); ++i)
        REQUIRE(w2.weights[i] == Catch::Approx(w1.weights[i]).epsilon(1e-12));
}

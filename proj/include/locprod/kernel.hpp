#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "locprod/error.hpp"
#include "locprod/panel.hpp"

namespace locprod {

enum class KernelFamily { GaussianSecondOrder };

// Smoothing configuration: number of nearest neighbors counted in
// firm-year observations.
struct KernelSpec {
    int h = 1;
    KernelFamily kernel = KernelFamily::GaussianSecondOrder;
};

enum class BandwidthStatus {
    Regular,        // h-th order statistic was strictly positive
    Escalated,      // order statistic was 0, escalated to smallest positive distance
    AllCoincident,  // every observation sits at the target: uniform weights
};

struct WeightVector {
    std::vector<double> target;    // evaluation location s
    double bandwidth = 0.0;        // R_h(s)
    BandwidthStatus status = BandwidthStatus::Regular;
    std::vector<double> weights;   // aligned with panel observation order

    double total() const {
        double s = 0.0;
        for (double w : weights) s += w;
        return s;
    }
};

inline double distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("distance: coordinate dimension mismatch");
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        ss += d * d;
    }
    return std::sqrt(ss);
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
    return distance(std::span<const double>(a), std::span<const double>(b));
}

// Second-order Gaussian kernel, normalization kept for definiteness.
inline double gaussian_kernel(double u) {
    return std::exp(-0.5 * u * u) * 0.39894228040143267794;  // 1/sqrt(2*pi)
}

namespace detail {

inline std::vector<double> all_distances(const std::vector<double>& s, const PanelDataset& panel) {
    std::vector<double> d(panel.n_observations());
    // distances depend on the firm's location only; compute per unique location
    std::vector<double> by_loc(panel.n_locations());
    for (std::size_t j = 0; j < panel.n_locations(); ++j)
        by_loc[j] = distance(panel.locations[j], s);
    for (std::size_t i = 0; i < panel.n_observations(); ++i)
        d[i] = by_loc[static_cast<std::size_t>(panel.observations[i].location_index)];
    return d;
}

struct BandwidthResult {
    double value = 0.0;
    BandwidthStatus status = BandwidthStatus::Regular;
};

inline BandwidthResult adaptive_bandwidth_impl(std::vector<double> dist, int h) {
    const auto n = static_cast<long>(dist.size());
    if (h < 1 || h > n)
        throw std::invalid_argument("adaptive_bandwidth: h out of range [1, N]");
    std::nth_element(dist.begin(), dist.begin() + (h - 1), dist.end());
    double r = dist[static_cast<std::size_t>(h - 1)];
    if (r > 0.0) return {r, BandwidthStatus::Regular};
    // h-th order statistic is 0 (>= h observations co-located with s):
    // escalate to the smallest strictly positive distance
    double smallest_pos = std::numeric_limits<double>::infinity();
    for (double d : dist)
        if (d > 0.0) smallest_pos = std::min(smallest_pos, d);
    if (std::isfinite(smallest_pos)) return {smallest_pos, BandwidthStatus::Escalated};
    return {0.0, BandwidthStatus::AllCoincident};
}

}  // namespace detail

// R_h(s): h-th smallest Euclidean distance from s over all firm-year
// observations (co-located zeros counted, ties preserved).
inline double adaptive_bandwidth(const std::vector<double>& s, const PanelDataset& panel, int h) {
    return detail::adaptive_bandwidth_impl(detail::all_distances(s, panel), h).value;
}

inline WeightVector kernel_weights(const std::vector<double>& s, const PanelDataset& panel,
                                   const KernelSpec& spec) {
    std::vector<double> dist = detail::all_distances(s, panel);
    const auto bw = detail::adaptive_bandwidth_impl(dist, spec.h);

    WeightVector wv;
    wv.target = s;
    wv.bandwidth = bw.value;
    wv.status = bw.status;
    wv.weights.resize(dist.size());
    if (bw.status == BandwidthStatus::AllCoincident) {
        // no positive distance exists: all u equal, weights uniform
        std::fill(wv.weights.begin(), wv.weights.end(), gaussian_kernel(0.0));
        return wv;
    }
    for (std::size_t i = 0; i < dist.size(); ++i)
        wv.weights[i] = gaussian_kernel(dist[i] / bw.value);
    return wv;
}

}

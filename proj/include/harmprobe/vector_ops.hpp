// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "harmprobe/activation_store.hpp"

namespace harmprobe {

// Small dense helpers. Reductions accumulate in double over f32 inputs, in
// index order, so results are reproducible run to run.

template <typename A, typename B>
double dot(std::span<const A> a, std::span<const B> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return acc;
}

template <typename A>
double norm(std::span<const A> a) {
    return std::sqrt(dot(a, a));
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    return dot(std::span<const double>(a), std::span<const double>(b));
}

inline double norm(const std::vector<double>& a) { return norm(std::span<const double>(a)); }

/// Scales to unit length; returns the norm before scaling.
inline double normalize(std::vector<double>& v) {
    const double n = norm(v);
    if (n > 0.0) {
        for (double& x : v) x /= n;
    }
    return n;
}

/// Column mean of all rows. Requires rows() >= 1.
std::vector<double> mean_row(const ActivationSet& set);

/// mean(pos) - mean(neg).
std::vector<double> mean_difference(const ActivationSet& pos, const ActivationSet& neg);

}  // namespace harmprobe

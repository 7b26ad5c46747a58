// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <string_view>

namespace ecgchat {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Index = Eigen::Index;

using Rng = std::mt19937_64;

/// Derives a child seed from a parent seed and a salt string (FNV-1a over both).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view salt) {
    std::uint64_t h = 1469598103934665603ull ^ seed;
    for (unsigned char c : salt) {
        h ^= c;
        h *= 1099511628211ull;
    }
    h ^= seed >> 29;
    h *= 1099511628211ull;
    return h;
}

/// FNV-1a over the raw bytes of a matrix. Used for freeze audits.
inline std::uint64_t hash_matrix(const Matrix& m) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const unsigned char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    const Index dims[2] = {m.rows(), m.cols()};
    mix(reinterpret_cast<const unsigned char*>(dims), sizeof(dims));
    mix(reinterpret_cast<const unsigned char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
    return h;
}

inline Matrix randn(Index rows, Index cols, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

}  // namespace ecgchat

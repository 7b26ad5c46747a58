// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ecgchat/nn.hpp"

#include <stdexcept>
#include <string>

namespace ecgchat::fusion {

class LoraError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline constexpr int kDefaultLoraRank = 8;
inline constexpr double kDefaultLoraAlpha = 16.0;

/// Low-rank additive update on a frozen projection: delta = (alpha / r) * B * A.
/// B starts at zero, so a fresh adapter leaves the base projection untouched.
struct LoraAdapter {
    std::string target;  // e.g. "lm.layer0.attn.query"
    int rank = kDefaultLoraRank;
    double alpha = kDefaultLoraAlpha;
    ag::ParamPtr a;  // rank x d_in
    ag::ParamPtr b;  // d_out x rank

    LoraAdapter() = default;
    LoraAdapter(nn::ParameterSet& ps, std::string target_name, Index d_in, Index d_out, Rng& rng,
                int r = kDefaultLoraRank, double alpha_value = kDefaultLoraAlpha);

    double scaling() const { return alpha / static_cast<double>(rank); }
    /// Throws LoraError when A, B and the base projection disagree.
    void check_shapes(const nn::Linear& base) const;
};

/// y = x W + b + (alpha / r) * x A^T B^T  (row-vector convention).
ag::Var lora_apply(const nn::Linear& base, const LoraAdapter* adapter, const ag::Var& x);

/// W + (alpha / r) * (B A)^T, in the in x out layout of nn::Linear.
Matrix merged_weight(const nn::Linear& base, const LoraAdapter& adapter);

}  // namespace ecgchat::fusion

// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ecgchat/autograd.hpp"

#include <map>
#include <string>
#include <vector>

namespace ecgchat::nn {

/// Ordered registry of named parameters. Names are unique; insertion order is
/// the iteration order used by checkpoints and optimizers.
class ParameterSet {
public:
    ag::ParamPtr add(const std::string& name, const std::string& group, Matrix init);
    ag::ParamPtr find(const std::string& name) const;
    const std::vector<ag::ParamPtr>& all() const { return params_; }
    void append(const ParameterSet& other);

    void zero_grad();
    void set_trainable_groups(const std::vector<std::string>& groups);
    /// Per-parameter FNV hash keyed by name.
    std::map<std::string, std::uint64_t> hashes() const;

private:
    std::vector<ag::ParamPtr> params_;
};

struct Linear {
    ag::ParamPtr weight;  // in x out
    ag::ParamPtr bias;    // 1 x out, may be null

    Linear() = default;
    Linear(ParameterSet& ps, const std::string& name, const std::string& group, Index in, Index out, Rng& rng,
           bool with_bias = true);

    ag::Var operator()(const ag::Var& x) const;
    Index in_features() const { return weight->value.rows(); }
    Index out_features() const { return weight->value.cols(); }
};

struct LayerNorm {
    ag::ParamPtr gamma;
    ag::ParamPtr beta;

    LayerNorm() = default;
    LayerNorm(ParameterSet& ps, const std::string& name, const std::string& group, Index width);

    ag::Var operator()(const ag::Var& x) const;
};

}  // namespace ecgchat::nn

// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ecgchat::nn {

ag::ParamPtr ParameterSet::add(const std::string& name, const std::string& group, Matrix init) {
    if (find(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_shared<ag::Parameter>(name, group, std::move(init));
    params_.push_back(p);
    return p;
}

ag::ParamPtr ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p;
    return nullptr;
}

void ParameterSet::append(const ParameterSet& other) {
    for (const auto& p : other.params_) {
        if (find(p->name)) throw std::invalid_argument("duplicate parameter name: " + p->name);
        params_.push_back(p);
    }
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

void ParameterSet::set_trainable_groups(const std::vector<std::string>& groups) {
    for (auto& p : params_)
        p->trainable = std::find(groups.begin(), groups.end(), p->group) != groups.end();
}

std::map<std::string, std::uint64_t> ParameterSet::hashes() const {
    std::map<std::string, std::uint64_t> out;
    for (const auto& p : params_) out[p->name] = hash_matrix(p->value);
    return out;
}

Linear::Linear(ParameterSet& ps, const std::string& name, const std::string& group, Index in, Index out, Rng& rng,
               bool with_bias) {
    weight = ps.add(name + ".weight", group, randn(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    if (with_bias) bias = ps.add(name + ".bias", group, Matrix::Zero(1, out));
}

ag::Var Linear::operator()(const ag::Var& x) const {
    ag::Var y = ag::matmul(x, ag::Var::leaf(*weight));
    if (bias) y = ag::add_row(y, ag::Var::leaf(*bias));
    return y;
}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, const std::string& group, Index width) {
    gamma = ps.add(name + ".gamma", group, Matrix::Ones(1, width));
    beta = ps.add(name + ".beta", group, Matrix::Zero(1, width));
}

ag::Var LayerNorm::operator()(const ag::Var& x) const {
    return ag::layer_norm(x, ag::Var::leaf(*gamma), ag::Var::leaf(*beta));
}

}  // namespace ecgchat::nn

// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/lora.hpp"

#include <cmath>

namespace ecgchat::fusion {

LoraAdapter::LoraAdapter(nn::ParameterSet& ps, std::string target_name, Index d_in, Index d_out, Rng& rng, int r,
                         double alpha_value)
    : target(std::move(target_name)), rank(r), alpha(alpha_value) {
    if (r <= 0) throw LoraError("LoRA rank must be positive");
    a = ps.add(target + ".lora_a", "lora", randn(r, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), rng));
    b = ps.add(target + ".lora_b", "lora", Matrix::Zero(d_out, r));
}

void LoraAdapter::check_shapes(const nn::Linear& base) const {
    if (a->value.rows() != rank || b->value.cols() != rank)
        throw LoraError(target + ": rank mismatch (A has " + std::to_string(a->value.rows()) + " rows, B has " +
                        std::to_string(b->value.cols()) + " columns, rank " + std::to_string(rank) + ")");
    if (a->value.cols() != base.in_features() || b->value.rows() != base.out_features())
        throw LoraError(target + ": adapter does not match base projection shape");
}

ag::Var lora_apply(const nn::Linear& base, const LoraAdapter* adapter, const ag::Var& x) {
    ag::Var y = base(x);
    if (adapter == nullptr) return y;
    adapter->check_shapes(base);
    ag::Var low = ag::matmul(x, ag::transpose(ag::Var::leaf(*adapter->a)));
    ag::Var up = ag::matmul(low, ag::transpose(ag::Var::leaf(*adapter->b)));
    return ag::add(y, ag::scale(up, adapter->scaling()));
}

Matrix merged_weight(const nn::Linear& base, const LoraAdapter& adapter) {
    adapter.check_shapes(base);
    return base.weight->value + adapter.scaling() * (adapter.b->value * adapter.a->value).transpose();
}

}  // namespace ecgchat::fusion

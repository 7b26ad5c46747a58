// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ecgchat/lora.hpp"

#include <memory>
#include <string>

namespace ecgchat::nn {

/// Pre-LN transformer block:
///   h = x + MSA(LN(x));  out = h + FFN(LN(h)),  FFN = Linear -> GELU -> Linear.
/// Query and key projections accept optional LoRA adapters.
struct TransformerBlock {
    LayerNorm ln_attn;
    Linear query, key, value, proj;
    LayerNorm ln_ffn;
    Linear fc1, fc2;
    int heads = 1;
    bool causal = false;
    std::unique_ptr<fusion::LoraAdapter> query_lora;
    std::unique_ptr<fusion::LoraAdapter> key_lora;

    TransformerBlock(ParameterSet& ps, const std::string& name, const std::string& group, Index width, int n_heads,
                     int mlp_ratio, bool is_causal, Rng& rng);

    ag::Var operator()(const ag::Var& x) const;
};

}  // namespace ecgchat::nn

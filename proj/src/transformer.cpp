// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/transformer.hpp"

namespace ecgchat::nn {

TransformerBlock::TransformerBlock(ParameterSet& ps, const std::string& name, const std::string& group, Index width,
                                   int n_heads, int mlp_ratio, bool is_causal, Rng& rng)
    : ln_attn(ps, name + ".ln_attn", group, width),
      query(ps, name + ".attn.query", group, width, width, rng),
      key(ps, name + ".attn.key", group, width, width, rng),
      value(ps, name + ".attn.value", group, width, width, rng),
      proj(ps, name + ".attn.proj", group, width, width, rng),
      ln_ffn(ps, name + ".ln_ffn", group, width),
      fc1(ps, name + ".ffn.fc1", group, width, width * mlp_ratio, rng),
      fc2(ps, name + ".ffn.fc2", group, width * mlp_ratio, width, rng),
      heads(n_heads),
      causal(is_causal) {}

ag::Var TransformerBlock::operator()(const ag::Var& x) const {
    ag::Var h = ln_attn(x);
    ag::Var q = fusion::lora_apply(query, query_lora.get(), h);
    ag::Var k = fusion::lora_apply(key, key_lora.get(), h);
    ag::Var v = value(h);
    ag::Var attn = proj(ag::attention(q, k, v, heads, causal));
    ag::Var mid = ag::add(x, attn);
    ag::Var ff = fc2(ag::gelu(fc1(ln_ffn(mid))));
    return ag::add(mid, ff);
}

}  // namespace ecgchat::nn

// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ecgchat/tokenizer.hpp"
#include "ecgchat/transformer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ecgchat::fusion {

/// What the fusion layer needs from a decoder LM. Base parameters belong to
/// the "lm" group; adapters attached through attach_lora join "lora".
class LmInterface {
public:
    virtual ~LmInterface() = default;

    virtual std::string identity_tag() const = 0;
    virtual Index width() const = 0;
    virtual Index max_context() const = 0;
    virtual int vocab_size() const = 0;

    /// Embeddings for base-vocabulary ids, one row per id.
    virtual ag::Var embed(std::span<const int> ids) const = 0;
    /// Next-token logits (rows x vocab_size) for a mixed embedding sequence.
    virtual ag::Var forward(const ag::Var& embeddings) const = 0;

    /// Names of projections that accept adapters, e.g. "lm.layer0.attn.query".
    virtual std::vector<std::string> adapter_targets() const = 0;
    virtual void attach_lora(const std::string& target, nn::ParameterSet& ps, Rng& rng, int rank, double alpha) = 0;
    virtual const LoraAdapter* adapter(const std::string& target) const = 0;
};

struct LmConfig {
    int vocab = 0;
    int width = 128;
    int depth = 4;
    int heads = 4;
    int mlp_ratio = 4;
    int max_context = 1024;
};

void to_json(nlohmann::json& j, const LmConfig& c);
void from_json(const nlohmann::json& j, LmConfig& c);

/// Small decoder-only transformer standing in for a pretrained instruction LM:
/// learned token and position embeddings, causal pre-LN blocks, untied head.
class ToyDecoderLm final : public LmInterface {
public:
    ToyDecoderLm(const LmConfig& cfg, nn::ParameterSet& ps, Rng& rng);

    std::string identity_tag() const override;
    Index width() const override { return cfg_.width; }
    Index max_context() const override { return cfg_.max_context; }
    int vocab_size() const override { return cfg_.vocab; }

    ag::Var embed(std::span<const int> ids) const override;
    ag::Var forward(const ag::Var& embeddings) const override;

    std::vector<std::string> adapter_targets() const override;
    void attach_lora(const std::string& target, nn::ParameterSet& ps, Rng& rng, int rank, double alpha) override;
    const LoraAdapter* adapter(const std::string& target) const override;

    const LmConfig& config() const { return cfg_; }
    /// Direct access for merged-weight checks.
    nn::TransformerBlock& block(int i) { return *blocks_[static_cast<std::size_t>(i)]; }

private:
    LmConfig cfg_;
    ag::ParamPtr tok_embed_;
    ag::ParamPtr pos_embed_;
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
    nn::LayerNorm final_ln_;
    nn::Linear head_;
};

}  // namespace ecgchat::fusion

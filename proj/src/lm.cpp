// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/lm.hpp"

#include <nlohmann/json.hpp>

#include <numeric>
#include <stdexcept>

namespace ecgchat::fusion {

void to_json(nlohmann::json& j, const LmConfig& c) {
    j = {{"vocab", c.vocab},         {"width", c.width},         {"depth", c.depth},
         {"heads", c.heads},         {"mlp_ratio", c.mlp_ratio}, {"max_context", c.max_context}};
}

void from_json(const nlohmann::json& j, LmConfig& c) {
    LmConfig d;
    c.vocab = j.value("vocab", d.vocab);
    c.width = j.value("width", d.width);
    c.depth = j.value("depth", d.depth);
    c.heads = j.value("heads", d.heads);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
    c.max_context = j.value("max_context", d.max_context);
}

ToyDecoderLm::ToyDecoderLm(const LmConfig& cfg, nn::ParameterSet& ps, Rng& rng) : cfg_(cfg) {
    if (cfg_.vocab <= 0 || cfg_.width <= 0 || cfg_.heads <= 0 || cfg_.width % cfg_.heads != 0 || cfg_.max_context <= 0)
        throw std::invalid_argument("invalid LM config");
    const std::string g = "lm";
    tok_embed_ = ps.add("lm.tok_embed", g, randn(cfg_.vocab, cfg_.width, 0.02, rng));
    pos_embed_ = ps.add("lm.pos_embed", g, randn(cfg_.max_context, cfg_.width, 0.02, rng));
    for (int l = 0; l < cfg_.depth; ++l)
        blocks_.push_back(std::make_unique<nn::TransformerBlock>(ps, "lm.layer" + std::to_string(l), g, cfg_.width,
                                                                 cfg_.heads, cfg_.mlp_ratio, true, rng));
    final_ln_ = nn::LayerNorm(ps, "lm.final_ln", g, cfg_.width);
    head_ = nn::Linear(ps, "lm.head", g, cfg_.width, cfg_.vocab, rng, false);
}

std::string ToyDecoderLm::identity_tag() const {
    return "toy-decoder/v1/w" + std::to_string(cfg_.width) + "-d" + std::to_string(cfg_.depth) + "-h" +
           std::to_string(cfg_.heads) + "-v" + std::to_string(cfg_.vocab);
}

ag::Var ToyDecoderLm::embed(std::span<const int> ids) const { return ag::gather_rows(ag::Var::leaf(*tok_embed_), ids); }

ag::Var ToyDecoderLm::forward(const ag::Var& embeddings) const {
    const Index n = embeddings.rows();
    if (n > cfg_.max_context)
        throw std::length_error("sequence of " + std::to_string(n) + " exceeds LM context " +
                                std::to_string(cfg_.max_context));
    std::vector<int> positions(static_cast<std::size_t>(n));
    std::iota(positions.begin(), positions.end(), 0);
    ag::Var h = ag::add(embeddings, ag::gather_rows(ag::Var::leaf(*pos_embed_), positions));
    for (const auto& block : blocks_) h = (*block)(h);
    return head_(final_ln_(h));
}

std::vector<std::string> ToyDecoderLm::adapter_targets() const {
    std::vector<std::string> out;
    for (int l = 0; l < cfg_.depth; ++l) {
        out.push_back("lm.layer" + std::to_string(l) + ".attn.query");
        out.push_back("lm.layer" + std::to_string(l) + ".attn.key");
    }
    return out;
}

void ToyDecoderLm::attach_lora(const std::string& target, nn::ParameterSet& ps, Rng& rng, int rank, double alpha) {
    for (int l = 0; l < cfg_.depth; ++l) {
        auto& block = *blocks_[static_cast<std::size_t>(l)];
        const std::string prefix = "lm.layer" + std::to_string(l) + ".attn.";
        if (target == prefix + "query") {
            block.query_lora = std::make_unique<LoraAdapter>(ps, target, cfg_.width, cfg_.width, rng, rank, alpha);
            return;
        }
        if (target == prefix + "key") {
            block.key_lora = std::make_unique<LoraAdapter>(ps, target, cfg_.width, cfg_.width, rng, rank, alpha);
            return;
        }
    }
    throw LoraError("no adapter target named " + target);
}

const LoraAdapter* ToyDecoderLm::adapter(const std::string& target) const {
    for (int l = 0; l < cfg_.depth; ++l) {
        const auto& block = *blocks_[static_cast<std::size_t>(l)];
        const std::string prefix = "lm.layer" + std::to_string(l) + ".attn.";
        if (target == prefix + "query") return block.query_lora.get();
        if (target == prefix + "key") return block.key_lora.get();
    }
    return nullptr;
}

}  // namespace ecgchat::fusion

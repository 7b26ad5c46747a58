// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Everything between encoder outputs and text generation: dynamic-length ECG
// encoding, the two-layer GELU connector, delimiter embeddings, chat prompt
// assembly, LoRA-equipped decoder LM and decoding.

#pragma once

#include "ecgchat/encoder.hpp"
#include "ecgchat/lm.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgchat::fusion {

class ContextOverflow : public std::length_error {
public:
    using std::length_error::length_error;
};

class PromptError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Which encoder outputs reach the LM for each ECG.
enum class EcgTokenMode { Both, ClsOnly, PatchesOnly };

std::string_view to_string(EcgTokenMode m);
EcgTokenMode parse_token_mode(std::string_view s);

struct ModelConfig {
    encoder::EncoderConfig encoder;
    LmConfig lm;  // lm.vocab is filled from the tokenizer
    EcgTokenMode token_mode = EcgTokenMode::Both;
    bool lora = true;
    int lora_rank = kDefaultLoraRank;
    double lora_alpha = kDefaultLoraAlpha;

    /// Encoder depth 2 / width 64 / 4 heads; LM 4 layers / width 128.
    static ModelConfig desk();
    /// Smallest sensible shapes, used by tests and the smoke pipeline.
    static ModelConfig toy();
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct ChatMessage {
    std::string role;  // "user" | "assistant"
    std::string text;  // may contain <ecg> placeholders

    bool operator==(const ChatMessage&) const = default;
};

struct DynamicEncoding {
    ag::Var cls;           // 1 x D, mean of per-clip CLS
    ag::Var patch_tokens;  // (60 k) x D, clips in time order
    int clips = 0;
};

/// A prompt ready for the LM. Rows carrying ECG tokens have token id -1.
struct AssembledSequence {
    ag::Var embeddings;
    std::vector<int> token_ids;
    std::vector<std::uint8_t> assistant;  // 1 on rows that belong to an assistant turn (incl. its <eos>)
    int text_tokens = 0;
    int ecg_blocks = 0;

    Index length() const { return static_cast<Index>(token_ids.size()); }
};

enum class DecodeMode { Greedy, Sampled };

struct DecodeOptions {
    DecodeMode mode = DecodeMode::Greedy;
    int max_new = 32;
    double temperature = 0.7;
    std::uint64_t seed = 0;
};

class Connector {
public:
    Connector() = default;
    Connector(nn::ParameterSet& ps, Index in, Index hidden, Index out, Rng& rng);
    ag::Var operator()(const ag::Var& tokens) const;

    nn::Linear fc1;
    nn::Linear fc2;
};

class EcgChatModel {
public:
    EcgChatModel(const ModelConfig& cfg, Tokenizer tokenizer, std::uint64_t seed);

    EcgChatModel(const EcgChatModel&) = delete;
    EcgChatModel& operator=(const EcgChatModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    const Tokenizer& tokenizer() const { return tokenizer_; }
    nn::ParameterSet& params() { return params_; }
    const nn::ParameterSet& params() const { return params_; }
    const encoder::EcgEncoder& encoder() const { return *encoder_; }
    const Connector& connector() const { return connector_; }
    const LmInterface& lm() const { return *lm_; }
    ToyDecoderLm& toy_lm() { return *lm_; }

    /// Pads to a multiple of 10 s (at least one clip), encodes each clip,
    /// concatenates patch tokens and averages CLS vectors.
    DynamicEncoding encode_dynamic(const records::CanonicalRecord& rec) const;

    /// Linear -> GELU -> Linear on [CLS; patches] (subject to token_mode).
    ag::Var connect(const ag::Var& cls, const ag::Var& patch_tokens) const;

    ag::Var project_ecg(const records::CanonicalRecord& rec) const;

    /// Interleaves text and ECG blocks; every <ecg> placeholder consumes the
    /// next block, wrapped in <ECG_start>/<ECG_end>. Throws PromptError when
    /// placeholder and block counts differ and ContextOverflow when the
    /// sequence exceeds the LM context.
    AssembledSequence assemble_prompt(std::span<const ag::Var> ecg_blocks, std::span<const ChatMessage> messages,
                                      bool add_generation_prompt) const;

    ag::Var logits(const AssembledSequence& seq) const;

    std::string generate(const AssembledSequence& prompt, const DecodeOptions& opts) const;

    /// Checkpoint: config header, tokenizer, LM identity and every tensor.
    void save(const std::filesystem::path& path, const nlohmann::json& meta) const;
    static std::unique_ptr<EcgChatModel> load(const std::filesystem::path& path, nlohmann::json* meta = nullptr);
    /// Copies tensors by name from another checkpoint; missing names are
    /// reported in the return value.
    std::vector<std::string> load_weights(const std::filesystem::path& path, std::span<const std::string> groups);

private:
    ag::Var embed_ids(std::span<const int> ids) const;

    ModelConfig cfg_;
    Tokenizer tokenizer_;
    nn::ParameterSet params_;
    std::unique_ptr<encoder::EcgEncoder> encoder_;
    Connector connector_;
    ag::ParamPtr special_embed_;
    std::unique_ptr<ToyDecoderLm> lm_;
};

/// The user-turn text for a QA sample with n ECGs: one placeholder per ECG, then the question.
std::string ecg_prompt(std::size_t n_ecgs, std::string_view question);

}  // namespace ecgchat::fusion

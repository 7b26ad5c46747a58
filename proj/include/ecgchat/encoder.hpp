// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// ECG encoder: spatio-temporal patchify over (lead, 2 s window) patches, with
// learned signal projection, positional and lead embeddings, a CLS token,
// pre-LN transformer blocks and a final LayerNorm on the CLS state.

#pragma once

#include "ecgchat/records.hpp"
#include "ecgchat/transformer.hpp"

#include <nlohmann/json_fwd.hpp>

#include <vector>

namespace ecgchat::encoder {

struct EncoderConfig {
    int depth = 2;
    int width = 64;
    int heads = 4;
    int patch_len = 200;
    int max_leads = records::kNumLeads;
    int max_patches_per_lead = 5;
    int mlp_ratio = 4;

    static EncoderConfig vit_base() { return {12, 768, 12, 200, records::kNumLeads, 5, 4}; }
    static EncoderConfig desk() { return {}; }

    int clip_samples() const { return patch_len * max_patches_per_lead; }
    int patch_count() const { return max_leads * max_patches_per_lead; }
    /// Throws std::invalid_argument.
    void validate() const;
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Token 0 is CLS (lead and position index -1); patch rows follow in
/// lead-major order: row 1 + lead * patches_per_lead + pos.
struct PatchSequence {
    ag::Var tokens;
    std::vector<int> lead_index;
    std::vector<int> pos_index;
    int n = 0;
};

struct EcgEmbedding {
    ag::Var cls;           // 1 x D
    ag::Var patch_tokens;  // n x D
};

class EcgEncoder {
public:
    EcgEncoder(const EncoderConfig& cfg, nn::ParameterSet& ps, Rng& rng, const std::string& prefix = "encoder");

    const EncoderConfig& config() const { return cfg_; }

    /// clip must have 12 slots and exactly clip_samples() samples.
    PatchSequence patchify(const records::CanonicalRecord& clip) const;
    PatchSequence patchify(const Matrix& clip) const;

    EcgEmbedding encode_clip(const PatchSequence& p) const;

    /// Current (E_lead, E_pos) tables: max_leads x D and max_patches_per_lead x D.
    std::pair<Matrix, Matrix> lead_position_tables() const;

    const nn::Linear& signal_projection() const { return signal_proj_; }
    const ag::ParamPtr& lead_table() const { return lead_table_; }
    const ag::ParamPtr& pos_table() const { return pos_table_; }
    const ag::ParamPtr& cls_token() const { return cls_; }

private:
    EncoderConfig cfg_;
    nn::Linear signal_proj_;
    ag::ParamPtr cls_;
    ag::ParamPtr lead_table_;
    ag::ParamPtr pos_table_;
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks_;
    nn::LayerNorm final_ln_;
};

}  // namespace ecgchat::encoder

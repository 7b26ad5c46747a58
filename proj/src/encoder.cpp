// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/encoder.hpp"

#include <nlohmann/json.hpp>

#include <stdexcept>

namespace ecgchat::encoder {

void EncoderConfig::validate() const {
    if (depth < 0 || width <= 0 || heads <= 0 || patch_len <= 0 || max_patches_per_lead <= 0 || mlp_ratio <= 0)
        throw std::invalid_argument("encoder config: sizes must be positive");
    if (width % heads != 0) throw std::invalid_argument("encoder config: width must be divisible by heads");
    if (max_leads != records::kNumLeads) throw std::invalid_argument("encoder config: max_leads must be 12");
    if (patch_len * max_patches_per_lead != 1000)
        throw std::invalid_argument("encoder config: patch_len * max_patches_per_lead must equal 1000 samples");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
    j = {{"depth", c.depth},         {"width", c.width},
         {"heads", c.heads},         {"patch_len", c.patch_len},
         {"max_leads", c.max_leads}, {"max_patches_per_lead", c.max_patches_per_lead},
         {"mlp_ratio", c.mlp_ratio}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
    EncoderConfig d;
    c.depth = j.value("depth", d.depth);
    c.width = j.value("width", d.width);
    c.heads = j.value("heads", d.heads);
    c.patch_len = j.value("patch_len", d.patch_len);
    c.max_leads = j.value("max_leads", d.max_leads);
    c.max_patches_per_lead = j.value("max_patches_per_lead", d.max_patches_per_lead);
    c.mlp_ratio = j.value("mlp_ratio", d.mlp_ratio);
}

EcgEncoder::EcgEncoder(const EncoderConfig& cfg, nn::ParameterSet& ps, Rng& rng, const std::string& prefix)
    : cfg_(cfg) {
    cfg_.validate();
    const std::string g = "encoder";
    signal_proj_ = nn::Linear(ps, prefix + ".signal_proj", g, cfg_.patch_len, cfg_.width, rng);
    cls_ = ps.add(prefix + ".cls", g, randn(1, cfg_.width, 0.02, rng));
    lead_table_ = ps.add(prefix + ".lead_embed", g, randn(cfg_.max_leads, cfg_.width, 0.02, rng));
    pos_table_ = ps.add(prefix + ".pos_embed", g, randn(cfg_.max_patches_per_lead, cfg_.width, 0.02, rng));
    for (int l = 0; l < cfg_.depth; ++l)
        blocks_.push_back(std::make_unique<nn::TransformerBlock>(ps, prefix + ".block" + std::to_string(l), g,
                                                                 cfg_.width, cfg_.heads, cfg_.mlp_ratio, false, rng));
    final_ln_ = nn::LayerNorm(ps, prefix + ".final_ln", g, cfg_.width);
}

PatchSequence EcgEncoder::patchify(const records::CanonicalRecord& clip) const { return patchify(clip.signal); }

PatchSequence EcgEncoder::patchify(const Matrix& clip) const {
    if (clip.rows() != cfg_.max_leads || clip.cols() != cfg_.clip_samples())
        throw std::invalid_argument("patchify: expected a " + std::to_string(cfg_.max_leads) + "x" +
                                    std::to_string(cfg_.clip_samples()) + " clip, got " +
                                    std::to_string(clip.rows()) + "x" + std::to_string(clip.cols()));
    const int per_lead = cfg_.max_patches_per_lead;
    const int n = cfg_.max_leads * per_lead;
    Matrix patches(n, cfg_.patch_len);
    PatchSequence seq;
    seq.n = n;
    seq.lead_index.push_back(-1);
    seq.pos_index.push_back(-1);
    std::vector<int> lead_rows;
    std::vector<int> pos_rows;
    for (int lead = 0; lead < cfg_.max_leads; ++lead) {
        for (int pos = 0; pos < per_lead; ++pos) {
            patches.row(lead * per_lead + pos) = clip.row(lead).segment(pos * cfg_.patch_len, cfg_.patch_len);
            lead_rows.push_back(lead);
            pos_rows.push_back(pos);
        }
    }
    seq.lead_index.insert(seq.lead_index.end(), lead_rows.begin(), lead_rows.end());
    seq.pos_index.insert(seq.pos_index.end(), pos_rows.begin(), pos_rows.end());

    ag::Var e_signal = signal_proj_(ag::Var(std::move(patches)));
    ag::Var e_pos = ag::gather_rows(ag::Var::leaf(*pos_table_), pos_rows);
    ag::Var e_lead = ag::gather_rows(ag::Var::leaf(*lead_table_), lead_rows);
    ag::Var embedded = ag::add(ag::add(e_signal, e_pos), e_lead);
    const ag::Var parts[] = {ag::Var::leaf(*cls_), embedded};
    seq.tokens = ag::concat_rows(parts);
    return seq;
}

EcgEmbedding EcgEncoder::encode_clip(const PatchSequence& p) const {
    ag::Var z = p.tokens;
    for (const auto& block : blocks_) z = (*block)(z);
    EcgEmbedding out;
    out.cls = final_ln_(ag::slice_rows(z, 0, 1));
    out.patch_tokens = ag::slice_rows(z, 1, z.rows() - 1);
    return out;
}

std::pair<Matrix, Matrix> EcgEncoder::lead_position_tables() const { return {lead_table_->value, pos_table_->value}; }

}  // namespace ecgchat::encoder

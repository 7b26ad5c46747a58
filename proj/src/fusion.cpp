// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/fusion.hpp"

#include "ecgchat/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ecgchat::fusion {

std::string_view to_string(EcgTokenMode m) {
    switch (m) {
        case EcgTokenMode::Both: return "both";
        case EcgTokenMode::ClsOnly: return "cls";
        case EcgTokenMode::PatchesOnly: return "patches";
    }
    return "both";
}

EcgTokenMode parse_token_mode(std::string_view s) {
    if (s == "both") return EcgTokenMode::Both;
    if (s == "cls") return EcgTokenMode::ClsOnly;
    if (s == "patches") return EcgTokenMode::PatchesOnly;
    throw std::invalid_argument("unknown ECG token mode: " + std::string(s));
}

ModelConfig ModelConfig::desk() { return {}; }

ModelConfig ModelConfig::toy() {
    ModelConfig c;
    c.encoder.depth = 2;
    c.encoder.width = 32;
    c.encoder.heads = 4;
    c.encoder.mlp_ratio = 2;
    c.lm.width = 64;
    c.lm.depth = 2;
    c.lm.heads = 4;
    c.lm.mlp_ratio = 2;
    c.lm.max_context = 512;
    return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"encoder", c.encoder},
         {"lm", c.lm},
         {"token_mode", std::string(to_string(c.token_mode))},
         {"lora", c.lora},
         {"lora_rank", c.lora_rank},
         {"lora_alpha", c.lora_alpha}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.encoder = j.value("encoder", d.encoder);
    c.lm = j.value("lm", d.lm);
    c.token_mode = parse_token_mode(j.value("token_mode", std::string("both")));
    c.lora = j.value("lora", d.lora);
    c.lora_rank = j.value("lora_rank", d.lora_rank);
    c.lora_alpha = j.value("lora_alpha", d.lora_alpha);
}

Connector::Connector(nn::ParameterSet& ps, Index in, Index hidden, Index out, Rng& rng)
    : fc1(ps, "connector.fc1", "connector", in, hidden, rng), fc2(ps, "connector.fc2", "connector", hidden, out, rng) {}

ag::Var Connector::operator()(const ag::Var& tokens) const { return fc2(ag::gelu(fc1(tokens))); }

EcgChatModel::EcgChatModel(const ModelConfig& cfg, Tokenizer tokenizer, std::uint64_t seed)
    : cfg_(cfg), tokenizer_(std::move(tokenizer)) {
    cfg_.lm.vocab = tokenizer_.base_size();
    Rng rng(seed);
    encoder_ = std::make_unique<encoder::EcgEncoder>(cfg_.encoder, params_, rng);
    connector_ = Connector(params_, cfg_.encoder.width, cfg_.lm.width, cfg_.lm.width, rng);
    special_embed_ = params_.add("connector.special_embed", "connector", randn(2, cfg_.lm.width, 0.02, rng));
    lm_ = std::make_unique<ToyDecoderLm>(cfg_.lm, params_, rng);
    if (cfg_.lora)
        for (const auto& target : lm_->adapter_targets())
            lm_->attach_lora(target, params_, rng, cfg_.lora_rank, cfg_.lora_alpha);
}

DynamicEncoding EcgChatModel::encode_dynamic(const records::CanonicalRecord& rec) const {
    const Index clip = cfg_.encoder.clip_samples();
    const Index samples = rec.samples();
    if (samples <= 0) throw std::invalid_argument("encode_dynamic: empty record");
    const Index k = std::max<Index>(1, (samples + clip - 1) / clip);
    Matrix padded = Matrix::Zero(records::kNumLeads, k * clip);
    padded.leftCols(samples) = rec.signal;

    std::vector<ag::Var> cls_rows;
    std::vector<ag::Var> patch_blocks;
    for (Index c = 0; c < k; ++c) {
        auto emb = encoder_->encode_clip(encoder_->patchify(Matrix(padded.middleCols(c * clip, clip))));
        cls_rows.push_back(emb.cls);
        patch_blocks.push_back(emb.patch_tokens);
    }
    DynamicEncoding out;
    out.clips = static_cast<int>(k);
    out.cls = ag::mean_rows(ag::concat_rows(cls_rows));
    out.patch_tokens = ag::concat_rows(patch_blocks);
    return out;
}

ag::Var EcgChatModel::connect(const ag::Var& cls, const ag::Var& patch_tokens) const {
    switch (cfg_.token_mode) {
        case EcgTokenMode::ClsOnly: return connector_(cls);
        case EcgTokenMode::PatchesOnly: return connector_(patch_tokens);
        case EcgTokenMode::Both: break;
    }
    const ag::Var parts[] = {cls, patch_tokens};
    return connector_(ag::concat_rows(parts));
}

ag::Var EcgChatModel::project_ecg(const records::CanonicalRecord& rec) const {
    auto enc = encode_dynamic(rec);
    return connect(enc.cls, enc.patch_tokens);
}

ag::Var EcgChatModel::embed_ids(std::span<const int> ids) const {
    std::vector<ag::Var> parts;
    std::vector<int> run;
    auto flush = [&] {
        if (!run.empty()) parts.push_back(lm_->embed(run));
        run.clear();
    };
    for (int id : ids) {
        if (id == tokenizer_.ecg_start() || id == tokenizer_.ecg_end()) {
            flush();
            const int row = id - tokenizer_.ecg_start();
            parts.push_back(ag::gather_rows(ag::Var::leaf(*special_embed_), std::span<const int>(&row, 1)));
        } else {
            run.push_back(id);
        }
    }
    flush();
    return parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
}

AssembledSequence EcgChatModel::assemble_prompt(std::span<const ag::Var> ecg_blocks,
                                                std::span<const ChatMessage> messages,
                                                bool add_generation_prompt) const {
    struct Segment {
        std::vector<int> ids;
        int ecg = -1;
        bool assistant = false;
    };
    std::vector<Segment> segments;
    auto text = [&](int id, bool assistant) {
        if (segments.empty() || segments.back().ecg >= 0 || segments.back().assistant != assistant)
            segments.push_back({{}, -1, assistant});
        segments.back().ids.push_back(id);
    };

    text(Tokenizer::kBos, false);
    std::size_t next_ecg = 0;
    for (const auto& msg : messages) {
        const bool assistant = msg.role == "assistant";
        if (!assistant && msg.role != "user") throw PromptError("unknown chat role: " + msg.role);
        text(assistant ? Tokenizer::kAssistant : Tokenizer::kUser, false);
        for (int id : tokenizer_.encode(msg.text)) {
            if (id != Tokenizer::kEcgPlaceholder) {
                text(id, assistant);
                continue;
            }
            if (next_ecg >= ecg_blocks.size())
                throw PromptError("prompt has more <ecg> placeholders than the " + std::to_string(ecg_blocks.size()) +
                                  " ECGs supplied");
            segments.push_back({{}, static_cast<int>(next_ecg++), false});
        }
        if (assistant) text(Tokenizer::kEos, true);
    }
    if (next_ecg != ecg_blocks.size())
        throw PromptError("prompt has " + std::to_string(next_ecg) + " <ecg> placeholders but " +
                          std::to_string(ecg_blocks.size()) + " ECGs were supplied");
    if (add_generation_prompt) text(Tokenizer::kAssistant, false);

    AssembledSequence seq;
    std::vector<ag::Var> parts;
    for (const auto& seg : segments) {
        if (seg.ecg < 0) {
            parts.push_back(embed_ids(seg.ids));
            seq.token_ids.insert(seq.token_ids.end(), seg.ids.begin(), seg.ids.end());
            seq.assistant.insert(seq.assistant.end(), seg.ids.size(), seg.assistant ? 1 : 0);
            seq.text_tokens += static_cast<int>(seg.ids.size());
            continue;
        }
        const ag::Var& block = ecg_blocks[static_cast<std::size_t>(seg.ecg)];
        const int delims[] = {tokenizer_.ecg_start(), tokenizer_.ecg_end()};
        parts.push_back(embed_ids(std::span<const int>(delims, 1)));
        parts.push_back(block);
        parts.push_back(embed_ids(std::span<const int>(delims + 1, 1)));
        seq.token_ids.push_back(delims[0]);
        seq.token_ids.insert(seq.token_ids.end(), static_cast<std::size_t>(block.rows()), -1);
        seq.token_ids.push_back(delims[1]);
        seq.assistant.insert(seq.assistant.end(), static_cast<std::size_t>(block.rows()) + 2, 0);
        ++seq.ecg_blocks;
    }
    if (seq.length() > lm_->max_context())
        throw ContextOverflow("assembled prompt of " + std::to_string(seq.length()) + " tokens exceeds context of " +
                              std::to_string(lm_->max_context()));
    seq.embeddings = ag::concat_rows(parts);
    return seq;
}

ag::Var EcgChatModel::logits(const AssembledSequence& seq) const { return lm_->forward(seq.embeddings); }

std::string EcgChatModel::generate(const AssembledSequence& prompt, const DecodeOptions& opts) const {
    if (prompt.length() > lm_->max_context())
        throw ContextOverflow("prompt of " + std::to_string(prompt.length()) + " tokens exceeds context of " +
                              std::to_string(lm_->max_context()));
    ag::NoGradGuard no_grad;
    Rng rng(opts.seed);
    std::vector<ag::Var> parts{prompt.embeddings};
    Index length = prompt.length();
    std::vector<int> produced;
    for (int step = 0; step < opts.max_new && length < lm_->max_context(); ++step) {
        ag::Var seq = parts.size() == 1 ? parts.front() : ag::concat_rows(parts);
        const ag::Var out = lm_->forward(seq);
        RowVector last = out.value().row(out.rows() - 1);
        for (int id = 0; id < last.size(); ++id)
            if (tokenizer_.is_reserved(id) && id != Tokenizer::kEos) last(id) = -std::numeric_limits<double>::infinity();
        int next = 0;
        if (opts.mode == DecodeMode::Greedy) {
            last.maxCoeff(&next);
        } else {
            const double t = std::max(opts.temperature, 1e-6);
            const double mx = last.maxCoeff();
            std::vector<double> w(static_cast<std::size_t>(last.size()));
            for (Index i = 0; i < last.size(); ++i) w[static_cast<std::size_t>(i)] = std::exp((last(i) - mx) / t);
            std::discrete_distribution<int> dist(w.begin(), w.end());
            next = dist(rng);
        }
        if (next == Tokenizer::kEos) break;
        produced.push_back(next);
        parts.push_back(lm_->embed(std::span<const int>(&next, 1)));
        ++length;
    }
    return tokenizer_.decode(produced);
}

void EcgChatModel::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
    checkpoint::Archive archive;
    archive.config = {{"format", "ecgchat.model"},
                      {"version", 1},
                      {"model", cfg_},
                      {"tokenizer", tokenizer_.to_json()},
                      {"lm_identity", lm_->identity_tag()},
                      {"meta", meta}};
    for (const auto& p : params_.all()) archive.tensors.emplace_back(p->name, p->value);
    checkpoint::save(path, archive);
}

std::unique_ptr<EcgChatModel> EcgChatModel::load(const std::filesystem::path& path, nlohmann::json* meta) {
    auto archive = checkpoint::load(path);
    if (archive.config.value("format", "") != "ecgchat.model")
        throw checkpoint::CheckpointError(path.string() + " is not a model checkpoint");
    auto cfg = archive.config.at("model").get<ModelConfig>();
    auto model = std::make_unique<EcgChatModel>(cfg, Tokenizer::from_json(archive.config.at("tokenizer")), 0);
    const auto tag = archive.config.value("lm_identity", "");
    if (tag != model->lm_->identity_tag())
        throw checkpoint::CheckpointError("checkpoint LM identity " + tag + " does not match " + model->lm_->identity_tag());
    for (const auto& p : model->params_.all()) {
        const Matrix* m = archive.find(p->name);
        if (m == nullptr) throw checkpoint::CheckpointError("checkpoint is missing tensor " + p->name);
        if (m->rows() != p->value.rows() || m->cols() != p->value.cols())
            throw checkpoint::CheckpointError("shape mismatch for tensor " + p->name);
        p->value = *m;
    }
    if (meta != nullptr) *meta = archive.config.value("meta", nlohmann::json::object());
    return model;
}

std::vector<std::string> EcgChatModel::load_weights(const std::filesystem::path& path,
                                                    std::span<const std::string> groups) {
    auto archive = checkpoint::load(path);
    std::vector<std::string> missing;
    for (const auto& p : params_.all()) {
        if (std::find(groups.begin(), groups.end(), p->group) == groups.end()) continue;
        const Matrix* m = archive.find(p->name);
        if (m == nullptr || m->rows() != p->value.rows() || m->cols() != p->value.cols()) {
            missing.push_back(p->name);
            continue;
        }
        p->value = *m;
    }
    return missing;
}

std::string ecg_prompt(std::size_t n_ecgs, std::string_view question) {
    std::string out;
    for (std::size_t i = 0; i < n_ecgs; ++i) out += Tokenizer::kEcgPlaceholderText;
    out += question;
    return out;
}

}  // namespace ecgchat::fusion

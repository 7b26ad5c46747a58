// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Contrastive encoder pretraining, text-only LM warmup, and the three-stage
// instruction-tuning curriculum with parameter freezing, proportional task
// mixing, resumable state and freeze audits.

#pragma once

#include "ecgchat/datagen.hpp"
#include "ecgchat/fusion.hpp"
#include "ecgchat/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgchat::train {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MissingPrerequisite : public TrainError {
public:
    using TrainError::TrainError;
};

// ------------------------------------------------------------------ examples

struct TrainExample {
    std::string id;
    datagen::Subset task = datagen::Subset::ReportGen;
    std::vector<records::CanonicalRecord> ecgs;
    std::string question;
    std::string answer;
};

/// Resolves every sample of the given split against the store.
std::vector<TrainExample> resolve_examples(std::span<const datagen::QaSample> samples,
                                           const datagen::RecordStore& store, datagen::Split split);

/// User turn with one <ecg> per ECG, then the assistant answer.
std::vector<fusion::ChatMessage> example_messages(const TrainExample& ex, bool with_answer = true);

/// Assembles the example and returns its logits together with the shifted
/// targets and the answer-only loss mask.
struct ExampleGraph {
    fusion::AssembledSequence seq;
    ag::Var logits;
    std::vector<int> targets;
    std::vector<std::uint8_t> mask;
};
ExampleGraph example_graph(const fusion::EcgChatModel& model, const TrainExample& ex);

/// Mean next-token cross-entropy over answer tokens (assistant text + <eos>).
ag::Var example_loss(const fusion::EcgChatModel& model, const TrainExample& ex);

/// Mean example loss without building a graph.
double mean_loss(const fusion::EcgChatModel& model, std::span<const TrainExample> examples);

// --------------------------------------------------------------- task mixing

struct Draw {
    std::size_t stream = 0;
    std::size_t index = 0;
    bool operator==(const Draw&) const = default;
};

/// One epoch: every item of every stream exactly once and in stream order,
/// streams interleaved by drawing the next stream with probability
/// proportional to its remaining size, cut into batches.
std::vector<std::vector<Draw>> mix_batches(std::span<const std::size_t> stream_sizes, std::size_t batch,
                                           std::uint64_t seed);

// ------------------------------------------------------------------- stages

struct StageSpec {
    int stage = 1;
    std::vector<std::string> trainable;
    std::vector<datagen::Subset> tasks;
    double lr = 1e-4;
    int batch = 256;
    int epochs = 2;
    double warmup_fraction = 0.03;
    double weight_decay = 0.01;
    double clip_norm = 1.0;
    long max_steps = 0;  // 0 means epochs * ceil(N / batch)

    /// Table values: stage 1 {connector, encoder} on reportgen, batch 256,
    /// 2 epochs; stage 2 adds lora and localization, batch 64, 2 epochs;
    /// stage 3 adds multiecg and ecgqa, batch 64, 1 epoch.
    static StageSpec defaults(int stage);
    void validate() const;
};

void to_json(nlohmann::json& j, const StageSpec& s);
/// Missing keys keep the defaults of the stage named by "stage".
void from_json(const nlohmann::json& j, StageSpec& s);

struct StepLog {
    int stage = 0;
    long step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double grad_norm = 0.0;
    std::string tasks;  // "reportgen:5,localization:3"
};

/// Records which tensors changed during a stage, by group.
struct FreezeAudit {
    std::vector<std::string> frozen_changed;
    std::vector<std::string> trainable_unchanged;
    std::map<std::string, int> changed_by_group;
    std::map<std::string, int> unchanged_by_group;

    bool ok() const { return frozen_changed.empty(); }
    nlohmann::json to_json() const;
};

FreezeAudit audit_freeze(const std::map<std::string, std::uint64_t>& before, const nn::ParameterSet& after,
                         std::span<const std::string> trainable_groups);

struct TrainOptions {
    std::uint64_t seed = 0;
    std::filesystem::path metrics_path;  // line-oriented JSON, appended
    std::function<void(const StepLog&)> on_step;
};

/// Drives one curriculum stage step by step. Only groups in spec.trainable
/// receive gradients; everything else stays bit-identical.
class StageRunner {
public:
    StageRunner(fusion::EcgChatModel& model, StageSpec spec, std::vector<TrainExample> examples, TrainOptions opts);

    long total_steps() const { return static_cast<long>(plan_.size()); }
    long step_index() const { return step_; }
    bool done() const { return step_ >= total_steps(); }
    double step();
    void run(long until = -1);

    const std::vector<double>& losses() const { return losses_; }
    const StageSpec& spec() const { return spec_; }
    const AdamW& optimizer() const { return opt_; }
    FreezeAudit audit() const;

    /// Optimizer moments, step counter, seed and loss history.
    void save_state(const std::filesystem::path& path) const;
    void load_state(const std::filesystem::path& path);

private:
    fusion::EcgChatModel& model_;
    StageSpec spec_;
    std::vector<TrainExample> examples_;
    TrainOptions opts_;
    std::vector<std::vector<std::size_t>> plan_;  // example indices per step
    WarmupCosine schedule_;
    AdamW opt_;
    long step_ = 0;
    std::vector<double> losses_;
    std::map<std::string, std::uint64_t> start_hashes_;
};

struct StageResult {
    std::vector<double> losses;
    FreezeAudit audit;
};

StageResult run_stage(fusion::EcgChatModel& model, const StageSpec& spec, std::vector<TrainExample> examples,
                      const TrainOptions& opts = {});

// ------------------------------------------------------------ prerequisites

/// Layout under a run directory: pretrain/encoder.ckpt, pretrain/lm.ckpt,
/// stage<k>/model.ckpt, stage<k>/state.ckpt, stage<k>/metrics.jsonl.
std::filesystem::path encoder_checkpoint(const std::filesystem::path& run_dir);
std::filesystem::path lm_checkpoint(const std::filesystem::path& run_dir);
std::filesystem::path stage_dir(const std::filesystem::path& run_dir, int stage);
std::filesystem::path stage_checkpoint(const std::filesystem::path& run_dir, int stage);

/// The checkpoint stage k starts from; throws MissingPrerequisite naming it.
std::filesystem::path require_prerequisite(const std::filesystem::path& run_dir, int stage);

// -------------------------------------------------------------- pretraining

/// Mean token embedding followed by a linear map into the joint space.
class TextTower {
public:
    TextTower() = default;
    TextTower(nn::ParameterSet& ps, Index vocab, Index width, Index out, Rng& rng);
    ag::Var operator()(std::span<const int> ids) const;

private:
    ag::ParamPtr embed_;
    nn::Linear proj_;
};

/// Symmetric InfoNCE over in-batch pairs. a and b are row-normalized B x D;
/// scale is the 1 x 1 logit scale (1 / temperature).
ag::Var info_nce(const ag::Var& a, const ag::Var& b, const ag::Var& scale);

struct ContrastiveOptions {
    int epochs = 20;
    int batch = 16;
    double lr = 1e-3;
    double temperature = 0.07;
    bool learn_temperature = true;
    Index joint_width = 32;
    std::uint64_t seed = 0;
};

/// ECG encoder plus projection head, text tower and learnable temperature.
class ContrastiveModel {
public:
    ContrastiveModel(const encoder::EncoderConfig& cfg, fusion::Tokenizer tokenizer, const ContrastiveOptions& opts);

    ag::Var ecg_embeddings(std::span<const records::CanonicalRecord> ecgs) const;  // B x D, unit rows
    ag::Var text_embeddings(std::span<const std::string> texts) const;             // B x D, unit rows
    ag::Var logit_scale() const;
    double temperature() const;

    nn::ParameterSet& params() { return ps_; }
    const encoder::EcgEncoder& encoder() const { return *encoder_; }

    /// Writes encoder tensors (named as in EcgChatModel) plus the heads.
    void save(const std::filesystem::path& path) const;

private:
    encoder::EncoderConfig cfg_;
    fusion::Tokenizer tokenizer_;
    nn::ParameterSet ps_;
    std::unique_ptr<encoder::EcgEncoder> encoder_;
    nn::Linear ecg_proj_;
    TextTower text_;
    ag::ParamPtr log_scale_;
};

struct ContrastivePair {
    records::CanonicalRecord ecg;
    std::string report;
};

/// Returns the per-step loss curve. Throws TrainError when batch < 2.
std::vector<double> contrastive_pretrain(ContrastiveModel& model, std::span<const ContrastivePair> pairs,
                                         const ContrastiveOptions& opts);

/// Fraction of ECGs whose nearest report embedding is their own.
double retrieval_recall_at_1(const ContrastiveModel& model, std::span<const ContrastivePair> pairs);

struct LmWarmupOptions {
    int epochs = 3;
    int batch = 8;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

/// Next-token training of the LM stand-in on plain text, lm group only.
std::vector<double> lm_warmup(fusion::EcgChatModel& model, std::span<const std::string> texts,
                              const LmWarmupOptions& opts);

}  // namespace ecgchat::train

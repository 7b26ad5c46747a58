// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation protocols: report-to-label macro-AUC, localization IoU with
// single-lead masking sweeps, exact match, and judge scoring.

#pragma once

#include "ecgchat/curriculum.hpp"
#include "ecgchat/llm_client.hpp"
#include "ecgchat/spans.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgchat::eval {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------- spans

inline spans::SpanSet parse_spans(std::string_view answer) { return spans::parse(answer); }
using spans::temporal_iou;

// -------------------------------------------------------------- embeddings

class Embedder {
public:
    virtual ~Embedder() = default;
    virtual RowVector embed(std::string_view text) const = 0;
    virtual std::string name() const = 0;
};

/// Lowercased word unigrams and character trigrams hashed into a fixed
/// number of signed buckets. Runs anywhere, needs no model files.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(int dim = 512) : dim_(dim) {}
    RowVector embed(std::string_view text) const override;
    std::string name() const override { return "hashing-" + std::to_string(dim_); }

private:
    int dim_;
};

/// Returns preset vectors; unknown text is an error.
class FixedEmbedder final : public Embedder {
public:
    void set(const std::string& text, RowVector v) { table_[text] = std::move(v); }
    RowVector embed(std::string_view text) const override;
    std::string name() const override { return "fixed"; }

private:
    std::map<std::string, RowVector, std::less<>> table_;
};

double cosine(const RowVector& a, const RowVector& b);

/// Cosine between the report embedding and each label embedding.
RowVector report_to_scores(std::string_view report, std::span<const std::string> labels, const Embedder& embedder);

// --------------------------------------------------------------------- AUC

struct LabelScoreMatrix {
    std::vector<std::string> labels;
    Matrix scores;  // samples x labels
    Matrix truth;   // 0 / 1, same shape
};

/// Rank statistic with tied pairs counted as one half. Returns nullopt when
/// either class is empty.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> truth);

struct AucResult {
    double macro = 0.0;
    std::vector<std::optional<double>> per_class;
    std::vector<std::string> skipped;
};

/// Mean of per-class AUC over classes with at least one positive and one
/// negative. Throws EvalError when no class qualifies.
AucResult macro_auc(const LabelScoreMatrix& m);

// ------------------------------------------------------------- exact match

/// Trim, collapse whitespace, lowercase.
std::string normalize_answer(std::string_view s);
/// Normalized equality; answers containing commas compare as sets of items.
bool exact_match(std::string_view pred, std::string_view truth);

// ------------------------------------------------------------------- judge

struct JudgeVerdict {
    int score = -1;  // 0..5, or -1 when invalid
    bool valid = false;
    std::string rationale;
    std::string model;
    int attempts = 0;
};

nlohmann::json to_json(const JudgeVerdict& v);

/// The scoring prompt. Only the question, the per-ECG reports and the
/// prediction go in.
std::string judge_prompt(std::string_view question, std::span<const std::string> reports, std::string_view prediction);

/// First integer in 0..5 that appears in the reply.
std::optional<int> extract_score(std::string_view reply);

struct JudgeOptions {
    double temperature = 0.0;
    std::string model;
};

/// Asks once, retries once on an unparseable reply, then marks invalid.
JudgeVerdict judge_score(std::string_view question, std::span<const std::string> reports, std::string_view prediction,
                         llm::Client& client, const JudgeOptions& opts = {});

// --------------------------------------------------------------- protocols

using Predictor = std::function<std::string(const train::TrainExample&)>;

/// Greedy (or sampled) generation from the model on the example's question.
Predictor model_predictor(const fusion::EcgChatModel& model, const fusion::DecodeOptions& opts);

enum class MaskMode { None, First, Second, Random };

std::string_view to_string(MaskMode m);
MaskMode parse_mask_mode(std::string_view s);

/// Zeroes one present lead (first or second in file order, or a random
/// one). Records with a single lead cannot be masked and throw.
records::CanonicalRecord apply_mask(const records::CanonicalRecord& rec, MaskMode mode, Rng& rng);

struct LocalizationRow {
    std::string id;
    std::string query_class;
    std::string truth;
    std::string prediction;
    double iou = 0.0;
    bool parse_failure = false;
};

struct LocalizationEval {
    MaskMode mode = MaskMode::None;
    std::vector<LocalizationRow> rows;
    double mean_iou = 0.0;  // mean over samples
    int parse_failures = 0;
};

LocalizationEval evaluate_localization(std::span<const train::TrainExample> examples, const Predictor& predict,
                                       MaskMode mode = MaskMode::None, std::uint64_t seed = 0);

std::vector<LocalizationEval> masking_sweep(std::span<const train::TrainExample> examples, const Predictor& predict,
                                            std::span<const MaskMode> modes, std::uint64_t seed = 0);

struct ReportGenEval {
    AucResult auc;
    std::vector<std::string> predictions;
};

/// Truth for label j is whether the reference answer mentions it.
ReportGenEval evaluate_reportgen(std::span<const train::TrainExample> examples, const Predictor& predict,
                                 std::span<const std::string> labels, const Embedder& embedder);

struct ExactMatchEval {
    double accuracy = 0.0;
    std::vector<std::pair<std::string, bool>> rows;
};

ExactMatchEval evaluate_exact_match(std::span<const train::TrainExample> examples, const Predictor& predict);

struct JudgeEval {
    double mean_score = 0.0;  // over valid verdicts
    int invalid = 0;
    std::vector<JudgeVerdict> verdicts;
};

/// reports maps record ids to their report text.
JudgeEval evaluate_judge(std::span<const datagen::QaSample> samples, std::span<const train::TrainExample> examples,
                         const Predictor& predict, const std::map<std::string, std::string>& reports,
                         llm::Client& client, const JudgeOptions& opts = {});

// ------------------------------------------------------------------ report

/// Per-mode mean IoU table, datasets as rows and modes as columns.
std::string format_masking_table(const std::map<std::string, std::vector<LocalizationEval>>& by_dataset);

/// Structured text document: per-sample rows then an aggregate block.
std::string format_localization_report(const LocalizationEval& e);

/// One JSON object per sample.
std::string localization_jsonl(const LocalizationEval& e);

}  // namespace ecgchat::eval

// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// QA dataset builders: report generation, abnormal-beat localization (short
// and long clips, with Not-Found negatives), multi-ECG QA through a
// generation client, and the ECG-QA subsetter.

#pragma once

#include "ecgchat/llm_client.hpp"
#include "ecgchat/records.hpp"
#include "ecgchat/spans.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecgchat::datagen {

class DatagenError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Subset { ReportGen, Localization, LocalizationLong, MultiEcg, EcgQa };
enum class Split { Train, Test };

std::string_view to_string(Subset s);
std::string_view to_string(Split s);
Subset parse_subset(std::string_view s);
Split parse_split(std::string_view s);

/// A record id, optionally restricted to the window [start, end) in seconds.
struct EcgRef {
    std::string record_id;
    std::optional<double> start;
    std::optional<double> end;

    bool operator==(const EcgRef&) const = default;
};

struct QaSample {
    std::string id;
    std::string question;
    std::string answer;
    std::vector<EcgRef> ecg_refs;
    std::vector<std::string> times;  // acquisition dates, multiecg only
    std::vector<int> relative_days;  // days since the first ECG
    Subset subset = Subset::ReportGen;
    Split split = Split::Train;
    std::string source;       // recording id (or patient id) used for splitting
    std::string query_class;  // localization only

    /// Throws DatagenError when an invariant is violated.
    void validate() const;
    bool operator==(const QaSample&) const = default;
};

void to_json(nlohmann::json& j, const QaSample& s);
void from_json(const nlohmann::json& j, QaSample& s);

inline constexpr std::string_view kDatasetSchema = "ecgchat.qa";
inline constexpr int kDatasetVersion = 1;

/// Header line then one sample object per line.
std::string serialize_dataset(std::span<const QaSample> samples);
std::vector<QaSample> parse_dataset(std::string_view text);
void write_dataset(const std::filesystem::path& path, std::span<const QaSample> samples);
std::vector<QaSample> read_dataset(const std::filesystem::path& path);

// ------------------------------------------------------------ record store

/// Canonical records by id, as referenced from QaSample::ecg_refs.
class RecordStore {
public:
    void add(records::CanonicalRecord rec);
    /// Ingests every record file in a directory (.ecgb, .hea, .csv).
    static RecordStore from_dir(const std::filesystem::path& dir,
                                const records::AliasTable& aliases = records::AliasTable::defaults());

    bool contains(const std::string& id) const { return records_.contains(id); }
    const records::CanonicalRecord& get(const std::string& id) const;
    /// The referenced window, sliced when the ref carries one.
    records::CanonicalRecord resolve(const EcgRef& ref) const;
    std::size_t size() const { return records_.size(); }
    std::vector<std::string> ids() const;

private:
    std::map<std::string, records::CanonicalRecord> records_;
};

/// Writes each record as <dir>/<record_id>.ecgb.
void write_record_dir(const std::filesystem::path& dir, std::span<const records::EcgRecord> recs);

// ---------------------------------------------------------------- templates

std::span<const std::string_view> reportgen_templates();
/// Each contains the "{abnormal}" slot.
std::span<const std::string_view> localization_templates();
/// Contains the {reports}, {acquisition_time} and {acquisition_time_relative} slots.
std::string_view multiecg_prompt_template();

// ---------------------------------------------------------------- ReportGen

struct ReportedRecord {
    std::string record_id;
    std::string report;
};

struct ReportGenOptions {
    std::vector<std::string> stop_phrases = {"no report", "see above", "test only"};
    std::uint64_t seed = 0;
};

struct ReportGenResult {
    std::vector<QaSample> samples;
    int dropped_empty = 0;
    int dropped_short = 0;
    int dropped_stop_phrase = 0;
};

/// Trims and collapses whitespace.
std::string clean_report(std::string_view report);
ReportGenResult build_reportgen(std::span<const ReportedRecord> records, const ReportGenOptions& opts = {});

// ------------------------------------------------------------- Localization

/// Maps annotation labels onto the abnormal classes that can be queried.
/// Labels registered as ignored (normal beats, rhythm marks) are skipped;
/// anything else is an error.
class ClassTable {
public:
    struct Class {
        std::string key;   // "PVC"
        std::string name;  // text substituted into questions
    };

    static ClassTable defaults();

    void add_class(const std::string& key, const std::string& name, const std::vector<std::string>& labels);
    void ignore(const std::string& label);

    /// Class key for a label, nullopt for ignored labels. Throws DatagenError
    /// for unknown labels.
    std::optional<std::string> classify(const std::string& label) const;
    const std::vector<Class>& classes() const { return classes_; }
    const Class& at(const std::string& key) const;

private:
    std::vector<Class> classes_;
    std::map<std::string, std::string> label_to_key_;
    std::vector<std::string> ignored_;
};

enum class ClipMode { Short, Long };

std::string_view to_string(ClipMode m);
ClipMode parse_clip_mode(std::string_view s);

struct LocalizationOptions {
    ClipMode mode = ClipMode::Short;
    int n_resample = 0;  // 0 selects 10 (short) or 5 (long)
    bool negatives = true;
    double negatives_per_positive = 0.25;
    /// Point annotations (single beats) become [t - before, t + after].
    double beat_before_s = 0.15;
    double beat_after_s = 0.35;
    ClassTable classes = ClassTable::defaults();
    std::uint64_t seed = 0;
};

struct LocalizationResult {
    std::vector<QaSample> samples;
    int positives = 0;
    int negatives = 0;
    int skipped_short_records = 0;
    int skipped_negative_attempts = 0;
};

/// Abnormal regions per class key, merged and sorted.
std::map<std::string, std::vector<spans::Span>> abnormal_regions(const records::CanonicalRecord& rec,
                                                                 const LocalizationOptions& opts);

/// Answer for one class inside the window [w0, w0 + length).
spans::SpanSet window_answer(const std::vector<spans::Span>& regions, double w0, double length);

LocalizationResult build_localization(std::span<const records::CanonicalRecord> records,
                                      const LocalizationOptions& opts = {});

// -------------------------------------------------------------------- split

/// Partitions distinct source ids; round(test_fraction * n) of them go to test.
void split_by_record(std::vector<QaSample>& samples, double test_fraction, std::uint64_t seed);

// ---------------------------------------------------------------- Multi-ECG

struct PatientEcg {
    std::string record_id;
    std::string report;       // comma-separated statements
    std::string acquired_at;  // "YYYY-MM-DD" or longer ISO timestamp
};

struct PatientGroup {
    std::string patient_id;
    std::vector<PatientEcg> ecgs;  // 2..6, chronological
};

struct MultiEcgOptions {
    std::string prompt_template = std::string(multiecg_prompt_template());
    int questions_per_patient = 8;
    double temperature = 0.7;
    std::string model;
    std::uint64_t seed = 0;
};

struct MultiEcgResult {
    std::vector<QaSample> samples;
    int malformed_lines = 0;
    int retried_calls = 0;
};

struct QaPair {
    std::string q;
    std::string a;
};

/// One {"q": ..., "a": ...} object per line. Blank lines and code fences are
/// ignored; any other line that does not parse counts as malformed.
std::vector<QaPair> parse_qa_lines(std::string_view reply, int* malformed = nullptr);

/// Days since the first date, from the leading "YYYY-MM-DD" of each stamp.
std::vector<int> relative_days(std::span<const std::string> stamps);

std::string fill_multiecg_prompt(const PatientGroup& group, std::string_view tmpl);

/// Calls the client once per patient and once more when fewer than
/// questions_per_patient pairs come back; the better attempt is kept.
MultiEcgResult build_multiecg(std::span<const PatientGroup> groups, llm::Client& client,
                              const MultiEcgOptions& opts = {});

// ------------------------------------------------------------------- ECG-QA

inline constexpr std::string_view kBriefSuffix = " Please answer briefly.";

struct EcgQaRow {
    std::string question;
    std::string answer;
    std::vector<std::string> ecg_ids;
    Split split = Split::Train;
};

/// JSON lines or a JSON array. Rows need "question", "answer" (string or
/// list of strings), "ecg_id" (string, number or list) and optionally "split".
std::vector<EcgQaRow> parse_ecgqa_source(std::string_view text);

/// Appends the suffix unless the question already ends with it.
std::string with_brief_suffix(std::string_view question);

/// round(fraction * n_train) train rows, uniformly without replacement, in
/// source order, suffixed; test rows unchanged.
std::vector<QaSample> subset_ecgqa(std::span<const EcgQaRow> rows, double fraction = 0.10, std::uint64_t seed = 0);

}  // namespace ecgchat::datagen

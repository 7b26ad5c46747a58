// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic ECG corpus: Gaussian-wave beats with PVC, LBBB and RBBB runs,
// reports derived from the generated rhythm, patient grouping, a scripted
// multi-ECG generator and an ECG-QA style source. Used by tests, the
// acceptance suite and the CLI demo pipeline.

#pragma once

#include "ecgchat/datagen.hpp"
#include "ecgchat/llm_client.hpp"
#include "ecgchat/records.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ecgchat::synth {

struct SynthOptions {
    double duration_s = 10.0;
    double fs = 100.0;
    std::vector<std::string> leads = {"I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};
    double abnormal_probability = 0.7;
    int max_runs = 3;
    int max_run_beats = 3;
    double noise = 0.02;
};

struct SynthRecord {
    records::EcgRecord record;
    std::string report;
    std::vector<std::string> labels;  // statements of the report
    double heart_rate = 0.0;
};

/// Statements that can appear in a synthetic report.
std::span<const std::string> label_vocabulary();

SynthRecord make_record(const std::string& id, const SynthOptions& opts, Rng& rng);

/// Record ids "syn0000", "syn0001", ...
std::vector<SynthRecord> make_corpus(int n, std::uint64_t seed, const SynthOptions& opts = {});

/// Groups consecutive records into patients of 2 to 6 ECGs and rewrites their
/// acquisition dates so each patient's ECGs are chronological.
std::vector<datagen::PatientGroup> group_patients(std::vector<SynthRecord>& corpus, std::uint64_t seed);

/// Responder for llm::ScriptedClient that answers the multi-ECG prompt with
/// eight well-formed lines built from the reports in the prompt.
llm::ScriptedClient::Responder multiecg_responder();

/// JSON-lines ECG-QA style source over the corpus: yes/no presence questions
/// with a "split" field.
std::string ecgqa_source(std::span<const SynthRecord> corpus, int rows, double test_fraction, std::uint64_t seed);

}  // namespace ecgchat::synth

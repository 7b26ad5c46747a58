// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Shared synthetic corpora and toy models for tests.

#pragma once

#include "ecgchat/curriculum.hpp"
#include "ecgchat/datagen.hpp"
#include "ecgchat/fusion.hpp"
#include "ecgchat/synth.hpp"

#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace fixture {

using namespace ecgchat;

struct Corpus {
    std::vector<synth::SynthRecord> synth;
    datagen::RecordStore store;
    std::vector<datagen::QaSample> samples;
};

inline fusion::Tokenizer tokenizer_for(const std::vector<datagen::QaSample>& samples) {
    std::vector<std::string> texts;
    for (const auto& s : samples) {
        texts.push_back(s.question);
        texts.push_back(s.answer);
    }
    for (auto t : datagen::reportgen_templates()) texts.emplace_back(t);
    for (auto t : datagen::localization_templates()) texts.emplace_back(t);
    return fusion::Tokenizer::train(texts);
}

inline std::vector<records::CanonicalRecord> canonical(const std::vector<synth::SynthRecord>& corpus) {
    std::vector<records::CanonicalRecord> out;
    for (const auto& s : corpus) out.push_back(records::canonicalize(s.record));
    return out;
}

/// All five subsets over one synthetic corpus, truncated to the given counts
/// with about test_fraction of each count taken from held-out rows.
inline Corpus mixed_corpus(int records, std::uint64_t seed, const std::map<datagen::Subset, std::size_t>& counts,
                           double test_fraction = 0.2) {
    Corpus c;
    c.synth = synth::make_corpus(records, seed);
    const auto groups = synth::group_patients(c.synth, seed);
    for (const auto& s : c.synth) c.store.add(records::canonicalize(s.record));
    const auto canon = canonical(c.synth);

    std::vector<datagen::ReportedRecord> reports;
    for (const auto& s : c.synth) reports.push_back({s.record.record_id, s.report});
    auto rg = datagen::build_reportgen(reports, {.seed = seed}).samples;
    datagen::split_by_record(rg, test_fraction, seed);

    datagen::LocalizationOptions lo;
    lo.seed = seed;
    auto loc = datagen::build_localization(canon, lo).samples;
    datagen::split_by_record(loc, test_fraction, seed);
    lo.mode = datagen::ClipMode::Long;
    auto loc_long = datagen::build_localization(canon, lo).samples;
    datagen::split_by_record(loc_long, test_fraction, seed);

    llm::ScriptedClient gen(synth::multiecg_responder());
    datagen::MultiEcgOptions mo;
    mo.seed = seed;
    auto multi = datagen::build_multiecg(groups, gen, mo).samples;
    datagen::split_by_record(multi, test_fraction, seed);

    const auto rows = datagen::parse_ecgqa_source(synth::ecgqa_source(c.synth, 20 * records, test_fraction, seed));
    auto qa = datagen::subset_ecgqa(rows, 0.1, seed);

    auto add = [&](datagen::Subset s, std::vector<datagen::QaSample> v) {
        const auto it = counts.find(s);
        if (it == counts.end()) return;
        std::vector<datagen::QaSample> train;
        std::vector<datagen::QaSample> test;
        for (auto& q : v) (q.split == datagen::Split::Train ? train : test).push_back(std::move(q));
        const std::size_t n_test = std::min(test.size(), static_cast<std::size_t>(it->second * test_fraction + 0.5));
        const std::size_t n_train = std::min(train.size(), it->second - n_test);
        for (std::size_t i = 0; i < n_train; ++i) c.samples.push_back(train[i]);
        for (std::size_t i = 0; i < n_test; ++i) c.samples.push_back(test[i]);
    };
    add(datagen::Subset::ReportGen, std::move(rg));
    add(datagen::Subset::Localization, std::move(loc));
    add(datagen::Subset::LocalizationLong, std::move(loc_long));
    add(datagen::Subset::MultiEcg, std::move(multi));
    add(datagen::Subset::EcgQa, std::move(qa));
    return c;
}

inline std::unique_ptr<fusion::EcgChatModel> toy_model(const fusion::Tokenizer& tok, std::uint64_t seed = 7) {
    return std::make_unique<fusion::EcgChatModel>(fusion::ModelConfig::toy(), tok, seed);
}

/// A fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ecgchat-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace fixture

// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Prints one PASS/FAIL line per acceptance criterion and exits nonzero when
// any criterion fails.

#include "ecgchat/chat.hpp"
#include "ecgchat/curriculum.hpp"
#include "ecgchat/evalkit.hpp"
#include "ecgchat/lora.hpp"
#include "ecgchat/record_io.hpp"
#include "ecgchat/server.hpp"
#include "ecgchat/spans.hpp"

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

#include <httplib.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

using namespace ecgchat;
using datagen::Subset;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, double a) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), f, a);
    return buf;
}

std::string fmt(const char* f, double a, double b) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), f, a, b);
    return buf;
}

double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

// ------------------------------------------------------------------ 1

Outcome patch_count() {
    const std::vector<datagen::QaSample> none;
    auto model = fixture::toy_model(fixture::tokenizer_for(none));
    const auto& enc = model->encoder();
    Rng rng(1);
    const auto p = enc.patchify(randn(12, 1000, 0.3, rng));
    const int patches = static_cast<int>(std::count_if(p.lead_index.begin(), p.lead_index.end(), [](int l) { return l >= 0; }));
    if (p.tokens.rows() != 61 || patches != 60)
        return {false, "clip gave " + std::to_string(p.tokens.rows()) + " tokens"};

    synth::SynthOptions so;
    so.duration_s = 20.0;
    Rng srng(2);
    const auto rec = records::canonicalize(synth::make_record("long20", so, srng).record);
    ag::NoGradGuard ng;
    const auto dyn = model->encode_dynamic(rec);
    const auto a = enc.encode_clip(enc.patchify(records::slice(rec, 0.0, 10.0))).cls.value();
    const auto b = enc.encode_clip(enc.patchify(records::slice(rec, 10.0, 20.0))).cls.value();
    const double err = max_abs(dyn.cls.value() - 0.5 * (a + b));
    const bool ok = dyn.patch_tokens.rows() == 120 && dyn.clips == 2 && err <= 1e-6;
    return {ok, "61 tokens per clip, 20 s -> " + std::to_string(dyn.patch_tokens.rows()) + " patch tokens, " +
                    fmt("cls err %.2e", err)};
}

// ------------------------------------------------------------------ 2

Outcome lora_identity() {
    fusion::LmConfig cfg;
    cfg.vocab = 48;
    cfg.width = 64;
    cfg.depth = 2;
    cfg.heads = 4;
    cfg.mlp_ratio = 2;
    cfg.max_context = 64;
    nn::ParameterSet ps;
    Rng rng(10);
    fusion::ToyDecoderLm lm(cfg, ps, rng);
    nn::ParameterSet ps_merged;
    Rng rng_merged(10);
    fusion::ToyDecoderLm merged(cfg, ps_merged, rng_merged);

    Rng inputs(11);
    std::vector<Matrix> xs;
    std::vector<Matrix> base;
    ag::NoGradGuard ng;
    for (int i = 0; i < 100; ++i) {
        const Index t = 1 + static_cast<Index>(inputs() % 32);
        xs.push_back(randn(t, cfg.width, 1.0, inputs));
        base.push_back(lm.forward(ag::Var(xs.back())).value());
    }
    Rng lora_rng(12);
    for (const auto& target : lm.adapter_targets()) lm.attach_lora(target, ps, lora_rng, 8, 16.0);
    int exact = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) exact += lm.forward(ag::Var(xs[i])).value() == base[i];

    for (const auto& p : ps.all())
        if (p->group == "lora") p->value = randn(p->value.rows(), p->value.cols(), 0.1, lora_rng);
    for (int l = 0; l < cfg.depth; ++l) {
        merged.block(l).query.weight->value = fusion::merged_weight(lm.block(l).query, *lm.block(l).query_lora);
        merged.block(l).key.weight->value = fusion::merged_weight(lm.block(l).key, *lm.block(l).key_lora);
    }
    double worst = 0.0;
    for (const auto& x : xs) {
        const Matrix a = lm.forward(ag::Var(x)).value();
        const Matrix m = merged.forward(ag::Var(x)).value();
        worst = std::max(worst, max_abs(a - m) / std::max(max_abs(a), 1e-12));
    }
    return {exact == 100 && worst <= 1e-5,
            std::to_string(exact) + "/100 exact with B=0, " + fmt("merged rel err %.2e", worst)};
}

// ------------------------------------------------------------------ 3

Outcome freeze_audit() {
    const auto c = fixture::mixed_corpus(16, 4, {{Subset::ReportGen, 64}}, 0.0);
    auto model = fixture::toy_model(fixture::tokenizer_for(c.samples));
    const auto before = model->params().hashes();
    auto spec = train::StageSpec::defaults(1);
    spec.batch = 4;
    spec.max_steps = 50;
    const auto res =
        train::run_stage(*model, spec, train::resolve_examples(c.samples, c.store, datagen::Split::Train), {.seed = 4});
    const auto after = model->params().hashes();
    int lm_changed = 0;
    int lm_total = 0;
    int trained_unchanged = 0;
    int trained_total = 0;
    for (const auto& p : model->params().all()) {
        const bool same = before.at(p->name) == after.at(p->name);
        if (p->group == "lm" || p->group == "lora") {
            ++lm_total;
            lm_changed += !same;
        } else if (p->group == "connector" || p->group == "encoder") {
            ++trained_total;
            trained_unchanged += same;
        }
    }
    const bool ok = res.losses.size() == 50 && lm_changed == 0 && trained_unchanged == 0 && res.audit.ok();
    return {ok, std::to_string(lm_total - lm_changed) + "/" + std::to_string(lm_total) + " LM tensors unchanged, " +
                    std::to_string(trained_total - trained_unchanged) + "/" + std::to_string(trained_total) +
                    " connector+encoder tensors changed"};
}

// ------------------------------------------------------------------ 4

std::vector<oracle::Interval> intervals(const spans::SpanSet& s) {
    std::vector<oracle::Interval> out;
    for (const auto& sp : s.spans) out.push_back({sp.start, sp.end});
    return out;
}

spans::SpanSet random_spans(Rng& rng, bool allow_not_found) {
    if (allow_not_found && rng() % 8 == 0) return spans::SpanSet::not_found();
    std::vector<spans::Span> v;
    const int n = 1 + static_cast<int>(rng() % 4);
    for (int i = 0; i < n; ++i) {
        const double a = static_cast<double>(rng() % 5900) / 100.0;
        const double len = 0.05 + static_cast<double>(rng() % 400) / 100.0;
        v.push_back({a, a + len});
    }
    return spans::SpanSet::of(v);
}

Outcome metric_oracles() {
    Rng rng(40);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto p = random_spans(rng, true);
        const auto t = random_spans(rng, true);
        const double got = spans::temporal_iou(p, t);
        const double want = oracle::raster_iou(intervals(p), !p.is_not_found(), intervals(t), !t.is_not_found());
        worst = std::max(worst, std::abs(got - want));
    }
    const double table_case =
        spans::temporal_iou(spans::parse("Duration: 1.9s-3.7s"), spans::parse("Duration: 2.0s-3.7s"));
    const double case_err = std::abs(table_case - 1.7 / 1.8);

    int auc_mismatch = 0;
    int fixtures = 0;
    for (int trial = 0; trial < 3000; ++trial) {
        const Index n = 2 + static_cast<Index>(rng() % 11);
        eval::LabelScoreMatrix m;
        m.labels = {"a", "b", "c"};
        m.scores = Matrix(n, 3);
        m.truth = Matrix(n, 3);
        for (Index r = 0; r < n; ++r)
            for (Index col = 0; col < 3; ++col) {
                m.scores(r, col) = static_cast<double>(rng() % 6) / 5.0;
                m.truth(r, col) = static_cast<double>(rng() % 2);
            }
        double total = 0.0;
        int valid = 0;
        for (Index col = 0; col < 3; ++col) {
            std::vector<double> s;
            std::vector<int> t;
            for (Index r = 0; r < n; ++r) {
                s.push_back(m.scores(r, col));
                t.push_back(static_cast<int>(m.truth(r, col)));
            }
            const int pos = static_cast<int>(std::count(t.begin(), t.end(), 1));
            if (pos == 0 || pos == static_cast<int>(n)) continue;
            total += oracle::pair_count_auc(s, t);
            ++valid;
        }
        if (valid == 0) continue;
        ++fixtures;
        auc_mismatch += eval::macro_auc(m).macro != total / valid;
    }
    eval::LabelScoreMatrix flat;
    flat.labels = {"a", "b"};
    flat.scores = Matrix::Constant(6, 2, 0.4);
    flat.truth = Matrix(6, 2);
    flat.truth << 1, 0, 0, 1, 1, 1, 0, 0, 1, 0, 0, 1;
    const double constant = eval::macro_auc(flat).macro;

    const bool ok = worst <= 2e-3 && case_err <= 1e-9 && auc_mismatch == 0 && constant == 0.5;
    return {ok, fmt("iou max err %.2e, ", worst) + fmt("case err %.1e, ", case_err) + std::to_string(auc_mismatch) +
                    "/" + std::to_string(fixtures) + " auc mismatches, " + fmt("constant %.3f", constant)};
}

// ------------------------------------------------------------------ 5

Outcome grammar_round_trip() {
    Rng rng(50);
    int bad = 0;
    for (int i = 0; i < 1000; ++i) {
        std::vector<spans::Span> v;
        const int n = 1 + static_cast<int>(rng() % 5);
        for (int k = 0; k < n; ++k) {
            const int a = static_cast<int>(rng() % 590);
            v.push_back({a / 10.0, (a + 1 + static_cast<int>(rng() % 40)) / 10.0});
        }
        const auto s = spans::SpanSet::of(v);
        bad += spans::parse(spans::render(s)) != s;
    }
    const bool literals = spans::parse("Duration: 1.9s-3.7s") == spans::SpanSet::of({{1.9, 3.7}}) &&
                          spans::parse("Duration: 2.0s-3.7s") == spans::SpanSet::of({{2.0, 3.7}}) &&
                          spans::parse("The PVC is located in the V1-V2 region").is_failure();
    const auto nf = spans::SpanSet::not_found();
    const bool not_found = spans::render(nf) == "Not Found" && spans::parse(spans::render(nf)) == nf;
    return {bad == 0 && literals && not_found, std::to_string(1000 - bad) + "/1000 round trips, literals " +
                                                   (literals ? "ok" : "wrong") + ", Not Found " +
                                                   (not_found ? "ok" : "wrong")};
}

// ------------------------------------------------------------------ 6

struct Built {
    std::string serialized;
    std::vector<datagen::QaSample> reportgen, short_loc, long_loc, multi;
};

Built build_all(const std::vector<synth::SynthRecord>& corpus, const std::vector<datagen::PatientGroup>& groups,
                std::uint64_t seed) {
    Built b;
    const auto canon = fixture::canonical(corpus);
    std::vector<datagen::ReportedRecord> reports;
    for (const auto& s : corpus) reports.push_back({s.record.record_id, s.report});
    b.reportgen = datagen::build_reportgen(reports, {.seed = seed}).samples;
    datagen::LocalizationOptions lo;
    lo.seed = seed;
    b.short_loc = datagen::build_localization(canon, lo).samples;
    lo.mode = datagen::ClipMode::Long;
    b.long_loc = datagen::build_localization(canon, lo).samples;
    llm::ScriptedClient gen(synth::multiecg_responder());
    datagen::MultiEcgOptions mo;
    mo.seed = seed;
    b.multi = datagen::build_multiecg(groups, gen, mo).samples;
    for (auto* v : {&b.reportgen, &b.short_loc, &b.long_loc, &b.multi}) {
        datagen::split_by_record(*v, 0.2, seed);
        b.serialized += datagen::serialize_dataset(*v);
    }
    return b;
}

Outcome dataset_properties() {
    synth::SynthOptions so;
    so.duration_s = 75.0;
    auto corpus = synth::make_corpus(20, 60, so);
    const auto groups = synth::group_patients(corpus, 60);
    const auto first = build_all(corpus, groups, 60);
    const auto again = build_all(corpus, groups, 60);

    std::map<std::string, const records::CanonicalRecord*> by_id;
    const auto canon = fixture::canonical(corpus);
    for (const auto& r : canon) by_id[r.record_id] = &r;
    const auto table = datagen::ClassTable::defaults();

    int leaks = 0;
    for (const auto* v : {&first.reportgen, &first.short_loc, &first.long_loc, &first.multi}) {
        std::set<std::string> train_ids;
        std::set<std::string> test_ids;
        for (const auto& s : *v)
            for (const auto& r : s.ecg_refs) (s.split == datagen::Split::Train ? train_ids : test_ids).insert(r.record_id);
        for (const auto& id : test_ids) leaks += train_ids.contains(id);
    }

    int short_bad = 0;
    for (const auto& s : first.short_loc) {
        const auto& r = s.ecg_refs.at(0);
        short_bad += !(r.start && r.end) || std::abs(*r.end - *r.start - 10.0) > 1e-9;
    }
    int long_bad = 0;
    for (const auto& s : first.long_loc) {
        const auto& r = s.ecg_refs.at(0);
        const double len = *r.end - *r.start;
        long_bad += len < 10.0 - 1e-9 || len > 60.0 + 1e-9;
    }

    int midpoint_bad = 0;
    int windows = 0;
    int negative_bad = 0;
    int negatives = 0;
    for (const auto* v : {&first.short_loc, &first.long_loc}) {
        for (const auto& s : *v) {
            const auto& ref = s.ecg_refs.at(0);
            const auto& rec = *by_id.at(ref.record_id);
            if (s.answer == "Not Found") {
                ++negatives;
                for (const auto& a : rec.annotations) {
                    const auto key = table.classify(a.label);
                    if (key && *key == s.query_class && a.offset >= *ref.start && a.onset <= *ref.end) ++negative_bad;
                }
                continue;
            }
            // Primary positives end in -<key>-<region>-<resample>.
            std::vector<std::string> parts;
            std::stringstream ss(s.id);
            for (std::string tok; std::getline(ss, tok, '-');) parts.push_back(tok);
            const auto& last = parts.back();
            if (last.empty() || !std::isdigit(static_cast<unsigned char>(last[0]))) continue;
            const std::string key = parts[parts.size() - 3];
            const auto region_index = static_cast<std::size_t>(std::stoul(parts[parts.size() - 2]));
            const auto regions = datagen::abnormal_regions(rec, {});
            const auto& reg = regions.at(key).at(region_index);
            const double mid = 0.5 * (reg.start + reg.end);
            ++windows;
            midpoint_bad += mid < *ref.start - 1e-9 || mid > *ref.end + 1e-9;
        }
    }
    const bool identical = first.serialized == again.serialized;
    const bool ok = leaks == 0 && short_bad == 0 && long_bad == 0 && midpoint_bad == 0 && negative_bad == 0 &&
                    identical && windows > 0 && negatives > 0 && !first.short_loc.empty() && !first.long_loc.empty();
    return {ok, std::to_string(leaks) + " leaks, " + std::to_string(short_bad) + "/" +
                    std::to_string(first.short_loc.size()) + " short off 10 s, " + std::to_string(long_bad) + "/" +
                    std::to_string(first.long_loc.size()) + " long outside [10,60], " + std::to_string(midpoint_bad) +
                    "/" + std::to_string(windows) + " windows miss midpoint, " + std::to_string(negative_bad) + "/" +
                    std::to_string(negatives) + " negatives hit class, rebuild " +
                    (identical ? "identical" : "differs")};
}

// ------------------------------------------------------------------ 7

Outcome ecgqa_subsetter() {
    std::string source;
    for (int i = 0; i < 200; ++i) {
        std::string q = "What is the rhythm of ecg number " + std::to_string(i) + "?";
        if (i % 10 == 0) q += std::string(datagen::kBriefSuffix);
        source += nlohmann::json{{"question", q}, {"answer", "yes"}, {"ecg_id", i}, {"split", "train"}}.dump() + "\n";
    }
    const auto rows = datagen::parse_ecgqa_source(source);
    const auto out = datagen::subset_ecgqa(rows, 0.10, 7);
    int bad = 0;
    const std::string suffix(datagen::kBriefSuffix);
    for (const auto& s : out) {
        std::size_t count = 0;
        for (auto pos = s.question.find(suffix); pos != std::string::npos; pos = s.question.find(suffix, pos + 1)) ++count;
        bad += count != 1 || !s.question.ends_with(suffix);
    }
    return {out.size() == 20 && bad == 0,
            std::to_string(out.size()) + " rows from 200, " + std::to_string(bad) + " with a wrong suffix count"};
}

// ------------------------------------------------------------------ 8

Outcome gradient_checks() {
    auto rec = synth::make_corpus(1, 5).front();
    train::TrainExample ex;
    ex.id = "grad";
    ex.task = Subset::Localization;
    ex.ecgs = {records::canonicalize(rec.record)};
    ex.question = "Please locate the Premature ventricular contraction";
    ex.answer = "Duration: 1.9s-3.7s";
    const std::vector<datagen::QaSample> none;
    auto model = fixture::toy_model(fixture::tokenizer_for(none), 3);
    model->params().zero_grad();
    ag::backward(train::example_loss(*model, ex));
    auto f = [&] {
        ag::NoGradGuard ng;
        return train::example_loss(*model, ex).item();
    };
    double worst = 0.0;
    int checked = 0;
    Rng rng(80);
    for (const char* name : {"connector.fc1.weight", "connector.fc1.bias", "connector.fc2.weight", "connector.fc2.bias",
                             "connector.special_embed", "encoder.signal_proj.weight", "encoder.signal_proj.bias"}) {
        auto p = model->params().find(name);
        if (!p) return {false, std::string("missing tensor ") + name};
        const Matrix analytic = p->grad;
        for (int i = 0; i < 8; ++i) {
            const auto r = static_cast<Index>(rng() % static_cast<std::uint64_t>(p->value.rows()));
            const auto c = static_cast<Index>(rng() % static_cast<std::uint64_t>(p->value.cols()));
            const double numeric = oracle::central_difference(*p, r, c, f);
            worst = std::max(worst, oracle::rel_err(analytic(r, c), numeric, 1e-7));
            ++checked;
        }
    }
    return {worst <= 1e-3, std::to_string(checked) + " entries, " + fmt("max rel err %.2e", worst)};
}

// ------------------------------------------------------------------ 9

Outcome curriculum_smoke() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto c = fixture::mixed_corpus(48, 9,
                                         {{Subset::ReportGen, 48},
                                          {Subset::Localization, 96},
                                          {Subset::LocalizationLong, 32},
                                          {Subset::MultiEcg, 48},
                                          {Subset::EcgQa, 32}});
    if (c.samples.size() != 256) return {false, "corpus has " + std::to_string(c.samples.size()) + " samples"};
    const auto tok = fixture::tokenizer_for(c.samples);
    const auto train_set = train::resolve_examples(c.samples, c.store, datagen::Split::Train);
    const auto test_set = train::resolve_examples(c.samples, c.store, datagen::Split::Test);
    const auto run = fixture::scratch_dir("acceptance-curriculum");

    // Pretraining: contrastive encoder on report pairs, then a short LM warmup.
    {
        std::vector<train::ContrastivePair> pairs;
        for (const auto& ex : train_set)
            if (ex.task == Subset::ReportGen) pairs.push_back({ex.ecgs.at(0), ex.answer});
        train::ContrastiveOptions co;
        co.epochs = 3;
        co.batch = 8;
        co.seed = 9;
        train::ContrastiveModel cm(fusion::ModelConfig::toy().encoder, tok, co);
        train::contrastive_pretrain(cm, pairs, co);
        std::filesystem::create_directories(run / "pretrain");
        cm.save(train::encoder_checkpoint(run));
        auto lm = fixture::toy_model(tok, 9);
        std::vector<std::string> texts;
        for (const auto& ex : train_set) texts.push_back(ex.answer);
        train::lm_warmup(*lm, texts, {.epochs = 1, .batch = 8, .lr = 1e-3, .seed = 9});
        lm->save(train::lm_checkpoint(run), {});
    }

    std::vector<std::string> spent;
    double held_before = 0.0;
    double held_after = 0.0;
    for (int stage = 1; stage <= 3; ++stage) {
        const auto from = train::require_prerequisite(run, stage);
        std::unique_ptr<fusion::EcgChatModel> model;
        if (stage == 1) {
            model = fusion::EcgChatModel::load(train::lm_checkpoint(run));
            const std::vector<std::string> enc = {"encoder"};
            model->load_weights(from, enc);
        } else {
            model = fusion::EcgChatModel::load(from);
        }
        auto spec = train::StageSpec::defaults(stage);
        spec.batch = 8;
        std::vector<train::TrainExample> held;
        for (const auto& ex : test_set)
            if (std::find(spec.tasks.begin(), spec.tasks.end(), ex.task) != spec.tasks.end()) held.push_back(ex);
        if (stage == 2) held_before = train::mean_loss(*model, held);
        const auto res = train::run_stage(*model, spec, train_set, {.seed = 9});
        if (!res.audit.ok()) return {false, "stage " + std::to_string(stage) + " changed frozen tensors"};
        if (stage == 2) held_after = train::mean_loss(*model, held);
        spent.push_back(std::to_string(res.losses.size()));
        std::filesystem::create_directories(train::stage_dir(run, stage));
        model->save(train::stage_checkpoint(run, stage), {{"stage", stage}});
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // Resume: stage 3 interrupted halfway and restored from disk.
    auto spec3 = train::StageSpec::defaults(3);
    spec3.batch = 8;
    auto full = fusion::EcgChatModel::load(train::stage_checkpoint(run, 2));
    train::StageRunner a(*full, spec3, train_set, {.seed = 13});
    a.run();
    const long half = a.total_steps() / 2;
    {
        auto part = fusion::EcgChatModel::load(train::stage_checkpoint(run, 2));
        train::StageRunner b(*part, spec3, train_set, {.seed = 13});
        b.run(half);
        b.save_state(run / "resume-state.ckpt");
        part->save(run / "resume-model.ckpt", {});
    }
    auto resumed = fusion::EcgChatModel::load(run / "resume-model.ckpt");
    train::StageRunner r(*resumed, spec3, train_set, {.seed = 13});
    r.load_state(run / "resume-state.ckpt");
    r.run();
    const bool same_losses = r.losses() == a.losses();
    const bool same_weights = resumed->params().hashes() == full->params().hashes();

    const bool ok = seconds < 1200.0 && held_after < held_before && same_losses && same_weights;
    return {ok, "steps " + spent[0] + "/" + spent[1] + "/" + spent[2] + fmt(" in %.0f s, ", seconds) +
                    fmt("held-out %.4f -> %.4f, ", held_before, held_after) + "resume " +
                    (same_losses && same_weights ? "bit-identical" : "differs")};
}

// ------------------------------------------------------------------ 10

Outcome overfit() {
    auto c = fixture::mixed_corpus(24, 1, {{Subset::Localization, 100000}}, 0.0);
    std::map<std::string, std::vector<datagen::QaSample>> by_source;
    for (const auto& s : c.samples) by_source[s.source].push_back(s);
    std::vector<datagen::QaSample> picked;
    for (std::size_t k = 0; picked.size() < 32; k += 7) {
        bool any = false;
        for (const auto& [src, v] : by_source)
            if (picked.size() < 32 && k < v.size()) {
                picked.push_back(v[k]);
                any = true;
            }
        if (!any) break;
    }
    if (picked.size() != 32) return {false, "only " + std::to_string(picked.size()) + " samples available"};
    const auto examples = train::resolve_examples(picked, c.store, datagen::Split::Train);

    auto model = fixture::toy_model(fixture::tokenizer_for(picked), 7);
    auto spec = train::StageSpec::defaults(2);
    spec.tasks = {Subset::Localization};
    spec.trainable = {"connector", "encoder", "lora", "lm"};
    spec.lr = 3e-3;
    spec.batch = 8;
    spec.max_steps = 200;
    spec.warmup_fraction = 0.05;
    spec.weight_decay = 0.0;
    train::run_stage(*model, spec, examples, {.seed = 3});
    fusion::DecodeOptions d;
    d.max_new = 48;
    const auto ev = eval::evaluate_localization(examples, eval::model_predictor(*model, d));
    return {ev.mean_iou >= 0.8, fmt("mean IoU %.3f on 32 samples, ", ev.mean_iou) + std::to_string(ev.parse_failures) +
                                    " parse failures"};
}

// ------------------------------------------------------------------ 11

Outcome judge_payload() {
    auto corpus = synth::make_corpus(12, 110);
    const auto groups = synth::group_patients(corpus, 110);
    llm::ScriptedClient gen(synth::multiecg_responder());
    auto samples = datagen::build_multiecg(groups, gen, {}).samples;
    datagen::RecordStore store;
    std::map<std::string, std::string> reports;
    for (const auto& s : corpus) {
        store.add(records::canonicalize(s.record));
        reports[s.record.record_id] = s.report;
    }
    for (std::size_t i = 0; i < samples.size(); ++i) samples[i].answer += " [reference " + std::to_string(i) + "]";
    const auto examples = train::resolve_examples(samples, store, datagen::Split::Train);
    if (examples.empty()) return {false, "no multi-ECG samples"};

    llm::ScriptedClient judge([](const llm::CompletionRequest&) { return std::string("Score: 4"); });
    const eval::Predictor predict = [](const train::TrainExample& ex) { return "prediction for " + ex.id; };
    eval::evaluate_judge(samples, examples, predict, reports, judge);
    const auto requests = judge.requests();
    if (requests.size() != examples.size()) return {false, "request count differs from sample count"};

    std::map<std::string, const datagen::QaSample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;
    int leaked = 0;
    int malformed = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& s = *by_id.at(examples[i].id);
        const std::string payload = requests[i].to_json().dump();
        std::vector<std::string> reps;
        for (const auto& r : s.ecg_refs) reps.push_back(reports.at(r.record_id));
        const auto& msgs = requests[i].messages;
        malformed += msgs.size() != 1 ||
                     msgs[0].content != eval::judge_prompt(s.question, reps, predict(examples[i]));
        leaked += payload.find("[reference ") != std::string::npos;
    }
    return {leaked == 0 && malformed == 0, std::to_string(requests.size()) + " requests, " + std::to_string(leaked) +
                                               " carry a reference answer, " + std::to_string(malformed) +
                                               " differ from question+reports+prediction"};
}

// ------------------------------------------------------------------ 12

Outcome serve_repl_parity() {
    auto corpus = synth::make_corpus(4, 120);
    std::vector<std::string> texts;
    for (const auto& s : corpus) texts.push_back(s.report);
    const auto tok = fusion::Tokenizer::train(texts);
    const auto model = fixture::toy_model(tok, 120);
    chat::EngineOptions opts;
    opts.decode.mode = fusion::DecodeMode::Greedy;
    opts.decode.max_new = 24;
    opts.decode.seed = 120;
    const std::vector<std::string> turns = {"describe this ecg", "is the rhythm regular?", "summarize briefly"};

    const auto dir = fixture::scratch_dir("acceptance-parity");
    records::write_interchange(corpus[1].record, dir / "rec.ecgb");
    chat::ChatService terminal(*model, opts);
    std::stringstream in;
    in << "/attach " << (dir / "rec.ecgb").string() << '\n';
    for (const auto& t : turns) in << t << '\n';
    std::stringstream out;
    const auto terminal_id = chat::run_repl(terminal, in, out, false);
    const auto terminal_session = terminal.session(terminal_id);

    chat::ChatService http(*model, opts);
    server::Server srv(http, {.host = "127.0.0.1", .port = 0, .workers = 2});
    const int port = srv.bind();
    if (port <= 0) return {false, "could not bind a port"};
    std::thread th([&] { srv.run(); });
    for (int i = 0; i < 400 && !srv.running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    chat::ChatSession http_session;
    std::string error;
    {
        httplib::Client cl("127.0.0.1", port);
        cl.set_read_timeout(120, 0);
        const auto s = cl.Post("/v1/session", "", "application/json");
        const auto up = cl.Post("/v1/ecg", records::encode_interchange(corpus[1].record), "application/octet-stream");
        if (!s || !up || s->status != 201 || up->status != 201) {
            error = "session or upload failed";
        } else {
            const auto id = nlohmann::json::parse(s->body).at("id").get<std::string>();
            const auto ref = nlohmann::json::parse(up->body).at("ref").get<std::string>();
            for (std::size_t i = 0; i < turns.size() && error.empty(); ++i) {
                nlohmann::json body = {{"text", turns[i]}, {"ecg_refs", i == 0 ? std::vector<std::string>{ref}
                                                                                : std::vector<std::string>{}}};
                const auto r = cl.Post("/v1/session/" + id + "/message", body.dump(), "application/json");
                if (!r || r->status != 200) error = "message failed";
            }
            if (error.empty()) http_session = nlohmann::json::parse(cl.Get("/v1/session/" + id)->body).get<chat::ChatSession>();
        }
    }
    srv.stop();
    th.join();
    if (!error.empty()) return {false, error};
    const bool same = terminal_session == http_session && terminal_session.history.size() == 6;
    return {same, std::to_string(terminal_session.history.size()) + " turns, transcripts " +
                      (same ? "identical" : "differ")};
}

}  // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"patch-count", patch_count},
        {"lora-identity", lora_identity},
        {"stage-freeze-audit", freeze_audit},
        {"metric-oracles", metric_oracles},
        {"grammar-round-trip", grammar_round_trip},
        {"dataset-builder-properties", dataset_properties},
        {"ecgqa-subsetter", ecgqa_subsetter},
        {"gradient-checks", gradient_checks},
        {"curriculum-smoke", curriculum_smoke},
        {"overfit", overfit},
        {"judge-payload-audit", judge_payload},
        {"serve-repl-parity", serve_repl_parity},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << criteria[i].first << ": " << o.detail
                  << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}

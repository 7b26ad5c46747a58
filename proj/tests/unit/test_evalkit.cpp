// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/evalkit.hpp"

#include "../support/fixtures.hpp"
#include "../support/oracles.hpp"

#include <gtest/gtest.h>

using namespace ecgchat;
using namespace ecgchat::eval;

TEST(Auc, MatchesPairCountingOnSmallFixtures) {
    Rng rng(5);
    int checked = 0;
    for (int trial = 0; trial < 2000; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 11);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> t(s.size());
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = static_cast<double>(rng() % 5) / 4.0;
            t[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
        }
        const auto got = roc_auc(s, t);
        const int pos = static_cast<int>(std::count(t.begin(), t.end(), 1));
        if (pos == 0 || pos == n) {
            EXPECT_FALSE(got.has_value());
            continue;
        }
        ASSERT_TRUE(got.has_value());
        EXPECT_EQ(*got, oracle::pair_count_auc(s, t));
        ++checked;
    }
    EXPECT_GT(checked, 1000);
}

TEST(Auc, ConstantAndPerfect) {
    const std::vector<double> c = {0.3, 0.3, 0.3, 0.3};
    const std::vector<int> t = {1, 0, 1, 0};
    EXPECT_EQ(*roc_auc(c, t), 0.5);
    const std::vector<double> p = {0.9, 0.1, 0.8, 0.2};
    EXPECT_EQ(*roc_auc(p, t), 1.0);
}

TEST(Auc, MacroSkipsSingleClassColumns) {
    LabelScoreMatrix m;
    m.labels = {"a", "b", "c"};
    m.scores = Matrix(4, 3);
    m.scores << 0.9, 0.5, 0.1, 0.1, 0.5, 0.2, 0.8, 0.5, 0.3, 0.3, 0.5, 0.4;
    m.truth = Matrix(4, 3);
    m.truth << 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0;
    const auto r = macro_auc(m);
    EXPECT_EQ(r.macro, 0.75);
    EXPECT_FALSE(r.per_class[2].has_value());
    EXPECT_EQ(r.skipped, std::vector<std::string>{"c"});
    m.truth.setZero();
    EXPECT_THROW(macro_auc(m), EvalError);
}

TEST(Embedding, CosineScores) {
    const HashingEmbedder h;
    const std::vector<std::string> labels = {"Sinus rhythm", "Left bundle branch block"};
    const auto row = report_to_scores("Sinus rhythm", labels, h);
    EXPECT_NEAR(row(0), 1.0, 1e-12);
    EXPECT_LT(row(1), 1.0);

    FixedEmbedder f;
    RowVector a(3), b(3), c(3), r(3);
    a << 1, 0, 0;
    b << 0, 1, 0;
    c << 1, 1, 1;
    r << 2, 0, 1;
    f.set("a", a);
    f.set("b", b);
    f.set("c", c);
    f.set("r", r);
    const std::vector<std::string> abc = {"a", "b", "c"};
    const auto s = report_to_scores("r", abc, f);
    EXPECT_NEAR(s(0), 2.0 / std::sqrt(5.0), 1e-12);
    EXPECT_NEAR(s(1), 0.0, 1e-12);
    EXPECT_NEAR(s(2), 3.0 / (std::sqrt(5.0) * std::sqrt(3.0)), 1e-12);
    EXPECT_THROW(f.embed("unknown"), EvalError);
}

TEST(ExactMatch, Rules) {
    EXPECT_TRUE(exact_match("sinus rhythm", "Sinus Rhythm "));
    EXPECT_FALSE(exact_match("yes", "no"));
    EXPECT_TRUE(exact_match("atrial fibrillation, PVC", "PVC, atrial fibrillation"));
    EXPECT_FALSE(exact_match("atrial fibrillation", "PVC, atrial fibrillation"));
    EXPECT_EQ(normalize_answer("  A   b\tC "), "a b c");
}

TEST(Judge, ScoresAndRetries) {
    const std::vector<std::string> reports = {"Sinus rhythm", "Sinus tachycardia"};
    llm::ScriptedClient c;
    c.push("4");
    EXPECT_EQ(judge_score("q", reports, "p", c).score, 4);
    c.push("Score: 5/5");
    EXPECT_EQ(judge_score("q", reports, "p", c).score, 5);
    c.push("great answer");
    c.push("great answer");
    const auto v = judge_score("q", reports, "p", c);
    EXPECT_FALSE(v.valid);
    EXPECT_EQ(v.score, -1);
    EXPECT_EQ(v.attempts, 2);
    c.push("hmm");
    c.push("3");
    EXPECT_EQ(judge_score("q", reports, "p", c).score, 3);
    EXPECT_EQ(extract_score("10 out of 10"), std::nullopt);
    EXPECT_EQ(extract_score("2.5"), std::nullopt);
    EXPECT_EQ(extract_score("(Score 0)"), 0);
}

TEST(Judge, PayloadCarriesNoReferenceAnswer) {
    const std::vector<std::string> reports = {"Sinus rhythm, Normal ECG", "Sinus bradycardia"};
    llm::ScriptedClient c;
    c.push("2");
    judge_score("Did the rate drop?", reports, "Yes it slowed.", c);
    const auto reqs = c.requests();
    ASSERT_EQ(reqs.size(), 1u);
    const auto body = reqs[0].to_json().dump();
    EXPECT_NE(body.find("Did the rate drop?"), std::string::npos);
    EXPECT_NE(body.find("Sinus rhythm, Normal ECG"), std::string::npos);
    EXPECT_NE(body.find("Sinus bradycardia"), std::string::npos);
    EXPECT_NE(body.find("Yes it slowed."), std::string::npos);
    EXPECT_DOUBLE_EQ(reqs[0].temperature, 0.0);
}

namespace {

train::TrainExample loc_example(const std::string& id, const records::CanonicalRecord& rec, const std::string& answer) {
    return {id, datagen::Subset::Localization, {rec}, "Please locate the PVC", answer};
}

records::CanonicalRecord two_lead() {
    records::EcgRecord r;
    r.record_id = "t";
    r.fs = 100.0;
    r.lead_names = {"MLII", "V1"};
    Rng rng(2);
    r.signal = randn(2, 1000, 1.0, rng);
    return records::canonicalize(r);
}

}  // namespace

TEST(Masking, Modes) {
    const auto rec = two_lead();
    Rng rng(1);
    EXPECT_TRUE(apply_mask(rec, MaskMode::None, rng) == rec);
    EXPECT_EQ(apply_mask(rec, MaskMode::First, rng).present_leads(), std::vector<std::string>{"V1"});
    EXPECT_EQ(apply_mask(rec, MaskMode::Second, rng).present_leads(), std::vector<std::string>{"II"});
    Rng r1(9);
    Rng r2(9);
    for (int i = 0; i < 5; ++i)
        EXPECT_EQ(apply_mask(rec, MaskMode::Random, r1).present_leads(), apply_mask(rec, MaskMode::Random, r2).present_leads());
    const auto one = apply_mask(rec, MaskMode::First, rng);
    EXPECT_THROW(apply_mask(one, MaskMode::First, rng), records::RecordError);
    EXPECT_EQ(parse_mask_mode("second"), MaskMode::Second);
    EXPECT_THROW(parse_mask_mode("third"), EvalError);
}

TEST(Localization, MeanOverSamples) {
    const auto rec = two_lead();
    const std::vector<train::TrainExample> ex = {loc_example("a", rec, "Duration: 2.0s-3.7s"),
                                                 loc_example("b", rec, "Not Found"),
                                                 loc_example("c", rec, "Duration: 1.0s-2.0s")};
    const std::map<std::string, std::string> preds = {
        {"a", "Duration: 1.9s-3.7s"}, {"b", "Not Found"}, {"c", "somewhere early"}};
    const Predictor p = [&](const train::TrainExample& e) { return preds.at(e.id); };
    const auto r = evaluate_localization(ex, p);
    EXPECT_NEAR(r.mean_iou, (1.7 / 1.8 + 1.0 + 0.0) / 3.0, 1e-12);
    EXPECT_EQ(r.parse_failures, 1);
    EXPECT_TRUE(r.rows[2].parse_failure);

    const std::vector<MaskMode> modes = {MaskMode::None, MaskMode::Second, MaskMode::Random};
    const auto sweep = masking_sweep(ex, p, modes, 3);
    EXPECT_EQ(sweep[0].mean_iou, r.mean_iou);
    const auto table = format_masking_table({{"localization", sweep}});
    EXPECT_NE(table.find("mask-second"), std::string::npos);
    EXPECT_NE(table.find("localization"), std::string::npos);
    EXPECT_NE(format_localization_report(r).find("mean_iou"), std::string::npos);
    const auto jsonl = localization_jsonl(r);
    EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 3);
}

TEST(Localization, RandomMaskIsReproducible) {
    const auto rec = two_lead();
    const std::vector<train::TrainExample> ex = {loc_example("a", rec, "Not Found"), loc_example("b", rec, "Not Found")};
    std::vector<std::string> seen1;
    std::vector<std::string> seen2;
    auto record_leads = [](std::vector<std::string>& out) {
        return Predictor([&out](const train::TrainExample& e) {
            out.push_back(e.ecgs[0].present_leads()[0]);
            return std::string("Not Found");
        });
    };
    evaluate_localization(ex, record_leads(seen1), MaskMode::Random, 4);
    evaluate_localization(ex, record_leads(seen2), MaskMode::Random, 4);
    EXPECT_EQ(seen1, seen2);
}

TEST(ReportGen, LabelTruthFromReference) {
    const auto rec = two_lead();
    std::vector<train::TrainExample> ex;
    ex.push_back({"1", datagen::Subset::ReportGen, {rec}, "q", "Report: Sinus rhythm, Normal ECG"});
    ex.push_back({"2", datagen::Subset::ReportGen, {rec}, "q", "Report: Sinus tachycardia, Abnormal ECG"});
    const std::vector<std::string> labels = {"Normal ECG", "Abnormal ECG"};
    const Predictor echo = [](const train::TrainExample& e) { return e.answer; };
    const auto r = evaluate_reportgen(ex, echo, labels, HashingEmbedder());
    EXPECT_EQ(r.auc.macro, 1.0);
}

TEST(ExactMatchEval, Accuracy) {
    const auto rec = two_lead();
    std::vector<train::TrainExample> ex;
    ex.push_back({"1", datagen::Subset::EcgQa, {rec}, "q", "yes"});
    ex.push_back({"2", datagen::Subset::EcgQa, {rec}, "q", "no"});
    const Predictor yes = [](const train::TrainExample&) { return std::string("Yes"); };
    EXPECT_DOUBLE_EQ(evaluate_exact_match(ex, yes).accuracy, 0.5);
}

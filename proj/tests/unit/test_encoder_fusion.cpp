// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/fusion.hpp"
#include "ecgchat/lora.hpp"
#include "ecgchat/records.hpp"
#include "ecgchat/transformer.hpp"

#include "../support/fixtures.hpp"

#include <gtest/gtest.h>

using namespace ecgchat;

namespace {

records::CanonicalRecord clip(Index samples, std::uint64_t seed, int leads = 12) {
    records::EcgRecord r;
    r.record_id = "c";
    r.fs = 100.0;
    for (int l = 0; l < leads; ++l) r.lead_names.emplace_back(records::kCanonicalLeads[static_cast<std::size_t>(l)]);
    Rng rng(seed);
    r.signal = randn(leads, samples, 1.0, rng);
    return records::canonicalize(r);
}

fusion::Tokenizer small_tokenizer() {
    const std::vector<std::string> corpus = {"Please locate the Premature ventricular contraction",
                                             "Report: Sinus rhythm, Normal ECG", "Duration: Not Found"};
    return fusion::Tokenizer::train(corpus);
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Encoder, SixtyPatchesPlusCls) {
    nn::ParameterSet ps;
    Rng rng(1);
    encoder::EcgEncoder enc(encoder::EncoderConfig::desk(), ps, rng);
    const auto p = enc.patchify(clip(1000, 2));
    EXPECT_EQ(p.n, 60);
    EXPECT_EQ(p.tokens.rows(), 61);
    const auto e = enc.encode_clip(p);
    EXPECT_EQ(e.cls.rows(), 1);
    EXPECT_EQ(e.patch_tokens.rows(), 60);
    EXPECT_EQ(e.cls.cols(), 64);
}

TEST(Encoder, PatchLocality) {
    nn::ParameterSet ps;
    Rng rng(1);
    encoder::EcgEncoder enc(encoder::EncoderConfig::desk(), ps, rng);
    auto a = clip(1000, 3);
    auto b = a;
    b.signal.row(11).setRandom();
    const auto pa = enc.patchify(a);
    const auto pb = enc.patchify(b);
    // CLS plus leads I..V5 (11 leads x 5 patches) are untouched by V6.
    EXPECT_EQ(max_abs_diff(pa.tokens.value().topRows(56), pb.tokens.value().topRows(56)), 0.0);
    EXPECT_GT(max_abs_diff(pa.tokens.value().bottomRows(5), pb.tokens.value().bottomRows(5)), 0.0);
}

TEST(Encoder, ZeroSignalGivesLeadPlusPosition) {
    nn::ParameterSet ps;
    Rng rng(1);
    encoder::EcgEncoder enc(encoder::EncoderConfig::desk(), ps, rng);
    enc.signal_projection().bias->value.setZero();
    const auto p = enc.patchify(Matrix::Zero(12, 1000));
    const auto [lead, pos] = enc.lead_position_tables();
    for (int i = 1; i <= 60; ++i) {
        const RowVector want = lead.row(p.lead_index[i]) + pos.row(p.pos_index[i]);
        EXPECT_EQ(max_abs_diff(p.tokens.value().row(i), want), 0.0);
    }
}

TEST(Encoder, SharedPositionAndLeadRows) {
    nn::ParameterSet ps;
    Rng rng(1);
    encoder::EcgEncoder enc(encoder::EncoderConfig::desk(), ps, rng);
    enc.signal_projection().weight->value.setZero();
    enc.signal_projection().bias->value.setZero();
    const auto p = enc.patchify(Matrix::Zero(12, 1000));
    const auto [lead, pos] = enc.lead_position_tables();
    auto row = [&](int l, int q) { return 1 + l * 5 + q; };
    const Matrix& t = p.tokens.value();
    EXPECT_LT(max_abs_diff(t.row(row(3, 2)) - lead.row(3), t.row(row(7, 2)) - lead.row(7)), 1e-15);
    EXPECT_LT(max_abs_diff(t.row(row(3, 1)) - pos.row(1), t.row(row(3, 4)) - pos.row(4)), 1e-15);

    enc.lead_table()->value.setZero();
    enc.pos_table()->value.setZero();
    EXPECT_TRUE(enc.patchify(Matrix::Zero(12, 1000)).tokens.value().bottomRows(60).isZero(0.0));
}

TEST(Encoder, DepthZeroClsIsNormalizedToken) {
    auto cfg = encoder::EncoderConfig::desk();
    cfg.depth = 0;
    nn::ParameterSet ps;
    Rng rng(1);
    encoder::EcgEncoder enc(cfg, ps, rng);
    const auto e = enc.encode_clip(enc.patchify(clip(1000, 4)));
    const RowVector c = enc.cls_token()->value;
    const double mean = c.mean();
    const double var = (c.array() - mean).square().mean();
    const RowVector want = ((c.array() - mean) / std::sqrt(var + 1e-5)).matrix();
    EXPECT_LT(max_abs_diff(e.cls.value(), want), 1e-9);
}

TEST(Encoder, RejectsWrongClipShape) {
    nn::ParameterSet ps;
    Rng rng(1);
    encoder::EcgEncoder enc(encoder::EncoderConfig::desk(), ps, rng);
    EXPECT_THROW(enc.patchify(Matrix::Zero(12, 999)), std::invalid_argument);
}

TEST(Dynamic, FifteenSecondsTwoLeadsPadsToTwoClips) {
    const auto model = fixture::toy_model(small_tokenizer());
    const auto rec = clip(1500, 5, 2);
    const auto d = model->encode_dynamic(rec);
    EXPECT_EQ(d.clips, 2);
    EXPECT_EQ(d.patch_tokens.rows(), 120);

    const auto padded = records::zero_pad(rec, 2000);
    const auto& enc = model->encoder();
    const auto e0 = enc.encode_clip(enc.patchify(records::slice(padded, 0.0, 10.0)));
    const auto e1 = enc.encode_clip(enc.patchify(records::slice(padded, 10.0, 20.0)));
    const RowVector mean = 0.5 * (e0.cls.value() + e1.cls.value());
    EXPECT_LT(max_abs_diff(d.cls.value(), mean), 1e-12);
    EXPECT_EQ(max_abs_diff(d.patch_tokens.value().topRows(60), e0.patch_tokens.value()), 0.0);
}

TEST(Dynamic, TenSecondsIsOneClip) {
    const auto model = fixture::toy_model(small_tokenizer());
    const auto rec = clip(1000, 6);
    const auto d = model->encode_dynamic(rec);
    const auto e = model->encoder().encode_clip(model->encoder().patchify(rec));
    EXPECT_EQ(d.clips, 1);
    EXPECT_EQ(max_abs_diff(d.cls.value(), e.cls.value()), 0.0);
}

TEST(Dynamic, SixtySecondsAndConnectorShapes) {
    const auto model = fixture::toy_model(small_tokenizer());
    ag::NoGradGuard ng;
    const auto d = model->encode_dynamic(clip(6000, 7, 1));
    EXPECT_EQ(d.clips, 6);
    EXPECT_EQ(d.patch_tokens.rows(), 360);
    EXPECT_EQ(model->project_ecg(clip(1000, 8)).rows(), 61);
    const auto p3 = model->project_ecg(clip(3000, 9));
    EXPECT_EQ(p3.rows(), 181);
    EXPECT_EQ(p3.cols(), model->lm().width());
}

TEST(Connector, ZeroWeightsGiveZeroTokens) {
    auto model = fixture::toy_model(small_tokenizer());
    for (auto& p : model->params().all())
        if (p->name.rfind("connector.fc", 0) == 0) p->value.setZero();
    EXPECT_TRUE(model->project_ecg(clip(1000, 10)).value().isZero(0.0));
}

TEST(Prompt, BlocksAndPlaceholders) {
    const auto model = fixture::toy_model(small_tokenizer());
    ag::NoGradGuard ng;
    std::vector<ag::Var> blocks;
    for (int i = 0; i < 3; ++i) blocks.push_back(model->project_ecg(clip(1000, 20 + i)));
    const std::vector<fusion::ChatMessage> msgs = {{"user", fusion::ecg_prompt(3, "compare these")}};
    const auto seq = model->assemble_prompt(blocks, msgs, true);
    EXPECT_EQ(seq.ecg_blocks, 3);
    const auto& tok = model->tokenizer();
    int starts = 0;
    int ends = 0;
    Index first_start = -1;
    for (Index i = 0; i < seq.length(); ++i) {
        if (seq.token_ids[static_cast<std::size_t>(i)] == tok.ecg_start()) {
            if (first_start < 0) first_start = i;
            ++starts;
        }
        ends += seq.token_ids[static_cast<std::size_t>(i)] == tok.ecg_end();
    }
    EXPECT_EQ(starts, 3);
    EXPECT_EQ(ends, 3);
    // The first block's rows are the projected tokens themselves.
    EXPECT_EQ(max_abs_diff(seq.embeddings.value().middleRows(first_start + 1, 61), blocks[0].value()), 0.0);

    const auto text_only = model->assemble_prompt({}, std::vector<fusion::ChatMessage>{{"user", "hello"}}, true);
    EXPECT_EQ(text_only.ecg_blocks, 0);
    for (int id : text_only.token_ids) EXPECT_NE(id, tok.ecg_start());

    const std::vector<fusion::ChatMessage> two = {{"user", "<ecg> <ecg> compare"}};
    EXPECT_THROW(model->assemble_prompt(std::span(blocks).first(1), two, true), fusion::PromptError);
}

TEST(Prompt, ContextOverflow) {
    const auto model = fixture::toy_model(small_tokenizer());
    ag::NoGradGuard ng;
    std::vector<ag::Var> blocks;
    std::string text;
    for (int i = 0; i < 9; ++i) {
        blocks.push_back(model->project_ecg(clip(1000, 30 + i)));
        text += "<ecg> ";
    }
    const std::vector<fusion::ChatMessage> msgs = {{"user", text}};
    EXPECT_THROW(model->assemble_prompt(blocks, msgs, true), fusion::ContextOverflow);
}

TEST(Lora, ScaleAndIdentity) {
    nn::ParameterSet ps;
    Rng rng(3);
    nn::Linear base(ps, "q", "lm", 16, 16, rng);
    fusion::LoraAdapter ad(ps, "q", 16, 16, rng);
    EXPECT_DOUBLE_EQ(ad.scaling(), 2.0);
    const ag::Var x(randn(5, 16, 1.0, rng));
    EXPECT_EQ(max_abs_diff(fusion::lora_apply(base, &ad, x).value(), base(x).value()), 0.0);

    ad.b->value = randn(ad.b->value.rows(), ad.b->value.cols(), 0.1, rng);
    const Matrix delta = x.value() * (ad.a->value.transpose() * ad.b->value.transpose()) * 2.0;
    EXPECT_LT(max_abs_diff(fusion::lora_apply(base, &ad, x).value(), base(x).value() + delta), 1e-12);
    const Matrix merged = x.value() * fusion::merged_weight(base, ad);
    const Matrix with_bias = merged.rowwise() + RowVector(base.bias->value);
    EXPECT_LT(max_abs_diff(fusion::lora_apply(base, &ad, x).value(), with_bias), 1e-12);
}

TEST(Lora, ShapeMismatchRejected) {
    nn::ParameterSet ps;
    Rng rng(3);
    nn::Linear base(ps, "q", "lm", 16, 8, rng);
    fusion::LoraAdapter ad(ps, "q", 16, 16, rng);
    EXPECT_THROW(ad.check_shapes(base), fusion::LoraError);
}

TEST(Lora, OnlyQueryAndKeyAdapted) {
    const auto model = fixture::toy_model(small_tokenizer());
    int lora = 0;
    for (const auto& p : model->params().all()) {
        if (p->group != "lora") continue;
        ++lora;
        EXPECT_TRUE(p->name.find("query") != std::string::npos || p->name.find("key") != std::string::npos) << p->name;
    }
    EXPECT_EQ(lora, 2 * 2 * fusion::ModelConfig::toy().lm.depth);
}

TEST(Tokenizer, ReservedIdsAndRoundTrip) {
    const auto tok = small_tokenizer();
    EXPECT_EQ(tok.encode("<ecg>"), std::vector<int>{fusion::Tokenizer::kEcgPlaceholder});
    const std::string text = "Duration: 1.9s-3.7s, 5.0s-5.6s zz\xc3\xa9";
    EXPECT_EQ(tok.decode(tok.encode(text)), text);
    EXPECT_EQ(tok.decode(tok.encode("a\xa7" "b\xc3")), "a\xef\xbf\xbd" "b\xef\xbf\xbd");
    EXPECT_LT(tok.encode("Please").size(), 2u);
    const auto back = fusion::Tokenizer::from_json(tok.to_json());
    EXPECT_EQ(back.encode(text), tok.encode(text));
}

TEST(Generate, GreedyIsDeterministicAndZeroLengthIsEmpty) {
    const auto model = fixture::toy_model(small_tokenizer());
    ag::NoGradGuard ng;
    const std::vector<ag::Var> blocks = {model->project_ecg(clip(1000, 40))};
    const std::vector<fusion::ChatMessage> msgs = {{"user", "<ecg> Please locate"}};
    const auto prompt = model->assemble_prompt(blocks, msgs, true);
    fusion::DecodeOptions o;
    o.max_new = 6;
    EXPECT_EQ(model->generate(prompt, o), model->generate(prompt, o));
    o.max_new = 0;
    EXPECT_EQ(model->generate(prompt, o), "");
    o.max_new = 6;
    o.mode = fusion::DecodeMode::Sampled;
    o.seed = 11;
    EXPECT_EQ(model->generate(prompt, o), model->generate(prompt, o));
}

TEST(Checkpoint, SaveLoadRoundTrip) {
    const auto dir = fixture::scratch_dir("ckpt");
    const auto model = fixture::toy_model(small_tokenizer());
    model->save(dir / "m.ckpt", {{"tag", "x"}});
    nlohmann::json meta;
    const auto back = fusion::EcgChatModel::load(dir / "m.ckpt", &meta);
    EXPECT_EQ(meta.at("tag"), "x");
    EXPECT_EQ(back->params().hashes(), model->params().hashes());
    ag::NoGradGuard ng;
    const std::vector<fusion::ChatMessage> msgs = {{"user", "Please locate"}};
    const auto a = model->logits(model->assemble_prompt({}, msgs, true)).value();
    const auto b = back->logits(back->assemble_prompt({}, msgs, true)).value();
    EXPECT_EQ(max_abs_diff(a, b), 0.0);
}

TEST(Checkpoint, LoadWeightsByGroup) {
    const auto dir = fixture::scratch_dir("ckpt-groups");
    const auto a = fixture::toy_model(small_tokenizer(), 1);
    auto b = fixture::toy_model(small_tokenizer(), 2);
    a->save(dir / "a.ckpt", {});
    const std::vector<std::string> groups = {"encoder"};
    EXPECT_TRUE(b->load_weights(dir / "a.ckpt", groups).empty());
    int differing = 0;
    for (const auto& p : b->params().all()) {
        const auto q = a->params().find(p->name);
        if (p->group == "encoder")
            EXPECT_EQ(max_abs_diff(p->value, q->value), 0.0) << p->name;
        else
            differing += max_abs_diff(p->value, q->value) > 0.0;
    }
    EXPECT_GT(differing, 0);
}

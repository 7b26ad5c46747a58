// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// ecgchat command line: synth, build, pretrain, train, eval, serve, chat.

#include "ecgchat/chat.hpp"
#include "ecgchat/curriculum.hpp"
#include "ecgchat/datagen.hpp"
#include "ecgchat/evalkit.hpp"
#include "ecgchat/record_io.hpp"
#include "ecgchat/server.hpp"
#include "ecgchat/synth.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ecgchat;

namespace {

struct Globals {
    std::string config_path;
    std::uint64_t seed = 0;
    std::string out = "run";
    bool deterministic = false;
    json config = json::object();
};

json read_json_file(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    return json::parse(in);
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << text;
}

fusion::ModelConfig model_config(const Globals& g) {
    const json m = g.config.value("model", json("toy"));
    if (m.is_string()) {
        if (m == "toy") return fusion::ModelConfig::toy();
        if (m == "desk") return fusion::ModelConfig::desk();
        throw std::runtime_error("unknown model preset: " + m.get<std::string>());
    }
    return m.get<fusion::ModelConfig>();
}

fs::path data_path(const Globals& g, datagen::Subset s) {
    return fs::path(g.out) / "data" / (std::string(datagen::to_string(s)) + ".jsonl");
}

fs::path records_dir(const Globals& g) { return g.config.value("records", (fs::path(g.out) / "records").string()); }

std::vector<datagen::ReportedRecord> read_reports(const fs::path& p) {
    std::vector<datagen::ReportedRecord> out;
    std::istringstream in(read_text(p));
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto j = json::parse(line);
        out.push_back({j.at("record_id").get<std::string>(), j.at("report").get<std::string>()});
    }
    return out;
}

std::vector<datagen::PatientGroup> read_patients(const fs::path& p) {
    std::vector<datagen::PatientGroup> out;
    for (const auto& g : read_json_file(p)) {
        datagen::PatientGroup pg;
        pg.patient_id = g.at("patient_id").get<std::string>();
        for (const auto& e : g.at("ecgs"))
            pg.ecgs.push_back({e.at("record_id").get<std::string>(), e.at("report").get<std::string>(),
                               e.at("acquired_at").get<std::string>()});
        out.push_back(std::move(pg));
    }
    return out;
}

std::unique_ptr<llm::Client> make_llm_client(const Globals& g) {
    return std::make_unique<llm::HttpClient>(llm::HttpClientConfig::from_json(g.config.value("llm", json::object())));
}

fusion::Tokenizer build_tokenizer(const Globals& g) {
    std::vector<std::string> corpus;
    for (auto s : {datagen::Subset::ReportGen, datagen::Subset::Localization, datagen::Subset::LocalizationLong,
                   datagen::Subset::MultiEcg, datagen::Subset::EcgQa}) {
        if (!fs::exists(data_path(g, s))) continue;
        for (const auto& q : datagen::read_dataset(data_path(g, s))) {
            corpus.push_back(q.question);
            corpus.push_back(q.answer);
        }
    }
    for (auto t : datagen::reportgen_templates()) corpus.emplace_back(t);
    for (auto t : datagen::localization_templates()) corpus.emplace_back(t);
    const json tc = g.config.value("tokenizer", json::object());
    return fusion::Tokenizer::train(corpus, tc.value("min_count", 1), tc.value("max_words", 4000));
}

std::vector<datagen::QaSample> read_subsets(const Globals& g, std::span<const datagen::Subset> subsets) {
    std::vector<datagen::QaSample> all;
    for (auto s : subsets) {
        const auto p = data_path(g, s);
        if (!fs::exists(p)) {
            std::cerr << "warning: " << p.string() << " not found, skipping " << datagen::to_string(s) << "\n";
            continue;
        }
        auto v = datagen::read_dataset(p);
        all.insert(all.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
    }
    return all;
}

fs::path latest_checkpoint(const Globals& g) {
    for (int k = 3; k >= 1; --k)
        if (fs::exists(train::stage_checkpoint(g.out, k))) return train::stage_checkpoint(g.out, k);
    throw train::MissingPrerequisite("no stage checkpoint under " + g.out + " (run `train --stage 1` first)");
}

// ------------------------------------------------------------------ synth

int cmd_synth(const Globals& g, int n, double test_fraction) {
    auto corpus = synth::make_corpus(n, g.seed);
    const auto groups = synth::group_patients(corpus, g.seed);
    std::vector<records::EcgRecord> recs;
    std::string reports;
    for (const auto& c : corpus) {
        recs.push_back(c.record);
        reports += json{{"record_id", c.record.record_id}, {"report", c.report}}.dump() + "\n";
    }
    datagen::write_record_dir(fs::path(g.out) / "records", recs);
    write_text(fs::path(g.out) / "reports.jsonl", reports);
    json pj = json::array();
    for (const auto& pg : groups) {
        json ecgs = json::array();
        for (const auto& e : pg.ecgs) ecgs.push_back({{"record_id", e.record_id}, {"report", e.report}, {"acquired_at", e.acquired_at}});
        pj.push_back({{"patient_id", pg.patient_id}, {"ecgs", ecgs}});
    }
    write_text(fs::path(g.out) / "patients.json", pj.dump(2) + "\n");
    write_text(fs::path(g.out) / "ecgqa_source.jsonl", synth::ecgqa_source(corpus, 10 * n, test_fraction, g.seed));
    std::cout << "records " << corpus.size() << "\npatients " << groups.size() << "\nout " << g.out << "\n";
    return 0;
}

// ------------------------------------------------------------------ build

struct BuildArgs {
    std::string subset;
    std::string mode = "short";
    std::string reports;
    std::string patients;
    std::string source;
    double test_fraction = 0.1;
    double fraction = 0.1;
    bool scripted = false;
    bool no_negatives = false;
};

int cmd_build(const Globals& g, const BuildArgs& a) {
    auto subset = datagen::parse_subset(a.subset);
    if (subset == datagen::Subset::Localization && datagen::parse_clip_mode(a.mode) == datagen::ClipMode::Long)
        subset = datagen::Subset::LocalizationLong;
    std::vector<datagen::QaSample> samples;
    json summary = {{"subset", datagen::to_string(subset)}};
    switch (subset) {
        case datagen::Subset::ReportGen: {
            const auto reports = read_reports(a.reports.empty() ? fs::path(g.out) / "reports.jsonl" : fs::path(a.reports));
            datagen::ReportGenOptions o;
            o.seed = g.seed;
            auto r = datagen::build_reportgen(reports, o);
            samples = std::move(r.samples);
            summary["dropped_empty"] = r.dropped_empty;
            summary["dropped_short"] = r.dropped_short;
            summary["dropped_stop_phrase"] = r.dropped_stop_phrase;
            datagen::split_by_record(samples, a.test_fraction, g.seed);
            break;
        }
        case datagen::Subset::Localization:
        case datagen::Subset::LocalizationLong: {
            const auto store = datagen::RecordStore::from_dir(records_dir(g));
            std::vector<records::CanonicalRecord> recs;
            for (const auto& id : store.ids()) recs.push_back(store.get(id));
            datagen::LocalizationOptions o;
            o.mode = subset == datagen::Subset::Localization ? datagen::ClipMode::Short : datagen::ClipMode::Long;
            o.negatives = !a.no_negatives;
            o.seed = g.seed;
            auto r = datagen::build_localization(recs, o);
            samples = std::move(r.samples);
            summary["positives"] = r.positives;
            summary["negatives"] = r.negatives;
            summary["skipped_short_records"] = r.skipped_short_records;
            summary["skipped_negative_attempts"] = r.skipped_negative_attempts;
            datagen::split_by_record(samples, a.test_fraction, g.seed);
            break;
        }
        case datagen::Subset::MultiEcg: {
            const auto groups = read_patients(a.patients.empty() ? fs::path(g.out) / "patients.json" : fs::path(a.patients));
            std::unique_ptr<llm::Client> client;
            if (a.scripted)
                client = std::make_unique<llm::ScriptedClient>(synth::multiecg_responder());
            else
                client = make_llm_client(g);
            datagen::MultiEcgOptions o;
            o.seed = g.seed;
            o.model = client->model();
            auto r = datagen::build_multiecg(groups, *client, o);
            samples = std::move(r.samples);
            summary["malformed_lines"] = r.malformed_lines;
            summary["retried_calls"] = r.retried_calls;
            datagen::split_by_record(samples, a.test_fraction, g.seed);
            break;
        }
        case datagen::Subset::EcgQa: {
            const auto rows = datagen::parse_ecgqa_source(
                read_text(a.source.empty() ? fs::path(g.out) / "ecgqa_source.jsonl" : fs::path(a.source)));
            samples = datagen::subset_ecgqa(rows, a.fraction, g.seed);
            break;
        }
    }
    int train = 0;
    for (const auto& s : samples) train += s.split == datagen::Split::Train;
    summary["samples"] = samples.size();
    summary["train"] = train;
    summary["test"] = static_cast<int>(samples.size()) - train;
    const auto path = data_path(g, subset);
    datagen::write_dataset(path, samples);
    summary["path"] = path.string();
    std::cout << summary.dump(2) << "\n";
    return 0;
}

// --------------------------------------------------------------- pretrain

int cmd_pretrain(const Globals& g, const std::string& target) {
    if (target != "all" && target != "encoder" && target != "lm")
        throw std::runtime_error("--target must be encoder, lm or all");
    const auto tok = build_tokenizer(g);
    const auto cfg = model_config(g);
    fs::create_directories(fs::path(g.out) / "pretrain");
    if (target == "all" || target == "encoder") {
        const json c = g.config.value("contrastive", json::object());
        train::ContrastiveOptions o;
        o.epochs = c.value("epochs", o.epochs);
        o.batch = c.value("batch", o.batch);
        o.lr = c.value("lr", o.lr);
        o.temperature = c.value("temperature", o.temperature);
        o.learn_temperature = c.value("learn_temperature", o.learn_temperature);
        o.joint_width = c.value("joint_width", o.joint_width);
        o.seed = g.seed;
        const auto store = datagen::RecordStore::from_dir(records_dir(g));
        std::vector<train::ContrastivePair> pairs;
        for (const auto& r : read_reports(fs::path(g.out) / "reports.jsonl"))
            if (store.contains(r.record_id)) pairs.push_back({store.get(r.record_id), r.report});
        train::ContrastiveModel m(cfg.encoder, tok, o);
        const auto losses = train::contrastive_pretrain(m, pairs, o);
        m.save(train::encoder_checkpoint(g.out));
        std::printf("encoder: %zu pairs, %zu steps, loss %.4f -> %.4f, recall@1 %.3f\n", pairs.size(), losses.size(),
                    losses.empty() ? 0.0 : losses.front(), losses.empty() ? 0.0 : losses.back(),
                    train::retrieval_recall_at_1(m, pairs));
    }
    if (target == "all" || target == "lm") {
        const json c = g.config.value("lm_warmup", json::object());
        train::LmWarmupOptions o;
        o.epochs = c.value("epochs", o.epochs);
        o.batch = c.value("batch", o.batch);
        o.lr = c.value("lr", o.lr);
        o.seed = g.seed;
        std::vector<std::string> texts;
        for (const auto& s : read_subsets(g, std::vector{datagen::Subset::ReportGen, datagen::Subset::Localization,
                                                         datagen::Subset::LocalizationLong, datagen::Subset::MultiEcg,
                                                         datagen::Subset::EcgQa}))
            if (s.split == datagen::Split::Train) texts.push_back(s.question + " " + s.answer);
        fusion::EcgChatModel model(cfg, tok, g.seed);
        const auto losses = train::lm_warmup(model, texts, o);
        model.save(train::lm_checkpoint(g.out), {{"kind", "lm_warmup"}, {"seed", g.seed}});
        std::printf("lm: %zu texts, %zu steps, loss %.4f -> %.4f\n", texts.size(), losses.size(),
                    losses.empty() ? 0.0 : losses.front(), losses.empty() ? 0.0 : losses.back());
    }
    return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    int stage = 1;
    long max_steps = -1;
    int batch = 0;
    bool resume = false;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
    const auto prereq = train::require_prerequisite(g.out, a.stage);
    train::StageSpec spec = train::StageSpec::defaults(a.stage);
    const json stages = g.config.value("stages", json::object());
    if (stages.contains(std::to_string(a.stage))) {
        json sj = stages.at(std::to_string(a.stage));
        sj["stage"] = a.stage;
        spec = sj.get<train::StageSpec>();
    }
    if (a.max_steps >= 0) spec.max_steps = a.max_steps;
    if (a.batch > 0) spec.batch = a.batch;
    spec.validate();

    const auto dir = train::stage_dir(g.out, a.stage);
    const auto state_path = dir / "state.ckpt";
    const bool resuming = a.resume && fs::exists(state_path) && fs::exists(train::stage_checkpoint(g.out, a.stage));
    std::unique_ptr<fusion::EcgChatModel> model;
    if (resuming) {
        model = fusion::EcgChatModel::load(train::stage_checkpoint(g.out, a.stage));
    } else if (a.stage == 1) {
        if (fs::exists(train::lm_checkpoint(g.out)))
            model = fusion::EcgChatModel::load(train::lm_checkpoint(g.out));
        else
            model = std::make_unique<fusion::EcgChatModel>(model_config(g), build_tokenizer(g), g.seed);
        const std::vector<std::string> groups = {"encoder"};
        const auto missing = model->load_weights(prereq, groups);
        if (!missing.empty()) std::cerr << "warning: " << missing.size() << " encoder tensors missing from " << prereq << "\n";
    } else {
        model = fusion::EcgChatModel::load(prereq);
    }

    const auto store = datagen::RecordStore::from_dir(records_dir(g));
    const auto samples = read_subsets(g, spec.tasks);
    auto examples = train::resolve_examples(samples, store, datagen::Split::Train);
    if (examples.empty()) throw train::TrainError("no training examples for stage " + std::to_string(a.stage));

    fs::create_directories(dir);
    train::TrainOptions opts;
    opts.seed = g.seed;
    opts.metrics_path = dir / "metrics.jsonl";
    if (!resuming && fs::exists(opts.metrics_path)) fs::remove(opts.metrics_path);
    opts.on_step = [](const train::StepLog& s) {
        if (s.step % 10 == 0) std::printf("stage %d step %ld loss %.4f lr %.2e |g| %.3f\n", s.stage, s.step, s.loss, s.lr, s.grad_norm);
    };
    train::StageRunner runner(*model, spec, std::move(examples), opts);
    if (resuming) runner.load_state(state_path);
    runner.run();
    const auto audit = runner.audit();
    const json meta = {{"stage", a.stage},
                       {"spec", spec},
                       {"seed", g.seed},
                       {"deterministic", g.deterministic},
                       {"steps", runner.step_index()},
                       {"audit", audit.to_json()}};
    model->save(train::stage_checkpoint(g.out, a.stage), meta);
    runner.save_state(state_path);
    std::printf("stage %d done: %ld steps, final loss %.4f, freeze audit %s\n", a.stage, runner.step_index(),
                runner.losses().empty() ? 0.0 : runner.losses().back(), audit.ok() ? "ok" : "VIOLATED");
    return audit.ok() ? 0 : 3;
}

// ------------------------------------------------------------------- eval

struct EvalArgs {
    std::string protocol;
    std::string mask = "none";
    std::string checkpoint;
    int limit = 0;
    int max_new = 48;
};

template <class T>
std::vector<T> head(std::vector<T> v, int limit) {
    if (limit > 0 && static_cast<int>(v.size()) > limit) v.resize(static_cast<std::size_t>(limit));
    return v;
}

int cmd_eval(const Globals& g, const EvalArgs& a) {
    const fs::path ckpt = a.checkpoint.empty() ? latest_checkpoint(g) : fs::path(a.checkpoint);
    const auto model = fusion::EcgChatModel::load(ckpt);
    fusion::DecodeOptions dec;
    dec.max_new = a.max_new;
    const auto predict = eval::model_predictor(*model, dec);
    const auto store = datagen::RecordStore::from_dir(records_dir(g));
    const fs::path out_dir = fs::path(g.out) / "eval";
    fs::create_directories(out_dir);
    auto test_examples = [&](datagen::Subset s) {
        const std::vector<datagen::Subset> one = {s};
        const auto samples = read_subsets(g, one);
        return head(train::resolve_examples(samples, store, datagen::Split::Test), a.limit);
    };

    if (a.protocol == "localization") {
        std::vector<eval::MaskMode> modes = {eval::MaskMode::None};
        if (a.mask == "all")
            modes = {eval::MaskMode::None, eval::MaskMode::First, eval::MaskMode::Second, eval::MaskMode::Random};
        else if (eval::parse_mask_mode(a.mask) != eval::MaskMode::None)
            modes.push_back(eval::parse_mask_mode(a.mask));
        std::map<std::string, std::vector<eval::LocalizationEval>> table;
        for (auto s : {datagen::Subset::Localization, datagen::Subset::LocalizationLong}) {
            if (!fs::exists(data_path(g, s))) continue;
            const auto ex = test_examples(s);
            if (ex.empty()) continue;
            auto evals = eval::masking_sweep(ex, predict, modes, g.seed);
            for (const auto& e : evals) {
                const std::string stem = std::string(datagen::to_string(s)) + "-" + std::string(eval::to_string(e.mode));
                write_text(out_dir / (stem + ".txt"), eval::format_localization_report(e));
                write_text(out_dir / (stem + ".jsonl"), eval::localization_jsonl(e));
            }
            table[std::string(datagen::to_string(s))] = std::move(evals);
        }
        if (table.empty()) throw eval::EvalError("no localization test samples");
        const auto text = eval::format_masking_table(table);
        write_text(out_dir / "localization-table.txt", text);
        std::cout << text;
        return 0;
    }
    if (a.protocol == "reportgen") {
        const auto ex = test_examples(datagen::Subset::ReportGen);
        const auto labels = synth::label_vocabulary();
        const std::vector<std::string> lv(labels.begin(), labels.end());
        const eval::HashingEmbedder emb;
        const auto r = eval::evaluate_reportgen(ex, predict, lv, emb);
        json per = json::object();
        for (std::size_t i = 0; i < lv.size(); ++i)
            per[lv[i]] = r.auc.per_class[i] ? json(*r.auc.per_class[i]) : json(nullptr);
        const json out = {{"macro_auc", r.auc.macro}, {"per_class", per}, {"skipped", r.auc.skipped},
                          {"embedder", emb.name()}, {"samples", ex.size()}};
        write_text(out_dir / "reportgen.json", out.dump(2) + "\n");
        std::cout << out.dump(2) << "\n";
        return 0;
    }
    if (a.protocol == "ecgqa") {
        const auto ex = test_examples(datagen::Subset::EcgQa);
        const auto r = eval::evaluate_exact_match(ex, predict);
        const json out = {{"exact_match", r.accuracy}, {"samples", ex.size()}};
        write_text(out_dir / "ecgqa.json", out.dump(2) + "\n");
        std::cout << out.dump(2) << "\n";
        return 0;
    }
    if (a.protocol == "multiecg") {
        const std::vector<datagen::Subset> one = {datagen::Subset::MultiEcg};
        const auto samples = read_subsets(g, one);
        const auto ex = head(train::resolve_examples(samples, store, datagen::Split::Test), a.limit);
        std::map<std::string, std::string> reports;
        for (const auto& r : read_reports(fs::path(g.out) / "reports.jsonl")) reports[r.record_id] = r.report;
        auto client = make_llm_client(g);
        const auto r = eval::evaluate_judge(samples, ex, predict, reports, *client);
        json verdicts = json::array();
        for (const auto& v : r.verdicts) verdicts.push_back(eval::to_json(v));
        const json out = {{"mean_score", r.mean_score}, {"invalid", r.invalid}, {"samples", ex.size()}, {"verdicts", verdicts}};
        write_text(out_dir / "multiecg.json", out.dump(2) + "\n");
        std::cout << json{{"mean_score", r.mean_score}, {"invalid", r.invalid}, {"samples", ex.size()}}.dump(2) << "\n";
        return 0;
    }
    throw eval::EvalError("unknown protocol: " + a.protocol + " (localization, reportgen, ecgqa, multiecg)");
}

// ------------------------------------------------------------ serve, chat

struct ServeArgs {
    std::string checkpoint;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string sessions;
    int max_new = 48;
};

chat::EngineOptions engine_options(const Globals& g, const ServeArgs& a, const fs::path& ckpt) {
    chat::EngineOptions o;
    o.decode.max_new = a.max_new;
    o.decode.seed = g.seed;
    o.checkpoint_tag = ckpt.string();
    return o;
}

server::Server* g_server = nullptr;

int cmd_serve(const Globals& g, const ServeArgs& a) {
    const fs::path ckpt = a.checkpoint.empty() ? latest_checkpoint(g) : fs::path(a.checkpoint);
    const auto model = fusion::EcgChatModel::load(ckpt);
    chat::ChatService service(*model, engine_options(g, a, ckpt), a.sessions);
    server::ServerOptions so;
    so.host = a.host;
    so.port = a.port;
    server::Server srv(service, so);
    const int port = srv.bind();
    if (port <= 0) throw std::runtime_error("cannot bind " + a.host + ":" + std::to_string(a.port));
    std::printf("serving %s on http://%s:%d\n", ckpt.string().c_str(), a.host.c_str(), port);
    std::fflush(stdout);
    g_server = &srv;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    srv.run();
    g_server = nullptr;
    return 0;
}

int cmd_chat(const Globals& g, const ServeArgs& a) {
    const fs::path ckpt = a.checkpoint.empty() ? latest_checkpoint(g) : fs::path(a.checkpoint);
    const auto model = fusion::EcgChatModel::load(ckpt);
    chat::ChatService service(*model, engine_options(g, a, ckpt), a.sessions);
    chat::run_repl(service, std::cin, std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ecgchat: ECG chat model toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--out", g.out, "Run directory");
    app.add_flag("--deterministic", g.deterministic, "Single-threaded, reproducible execution");

    int synth_n = 40;
    double synth_test = 0.1;
    auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic corpus into the run directory");
    synth_cmd->add_option("--records", synth_n, "Number of records");
    synth_cmd->add_option("--test-fraction", synth_test, "Test share of the ECG-QA source");

    BuildArgs ba;
    auto* build = app.add_subcommand("build", "Build a QA dataset");
    build->add_option("subset", ba.subset, "reportgen | localization | multiecg | ecgqa")->required();
    build->add_option("--mode", ba.mode, "Localization clip mode")->check(CLI::IsMember({"short", "long"}));
    build->add_option("--reports", ba.reports, "Reports JSONL (record_id, report)");
    build->add_option("--patients", ba.patients, "Patient groups JSON");
    build->add_option("--source", ba.source, "ECG-QA source file");
    build->add_option("--test-fraction", ba.test_fraction, "Share of recordings held out");
    build->add_option("--fraction", ba.fraction, "ECG-QA train share kept");
    build->add_flag("--scripted", ba.scripted, "Use the offline synthetic generator instead of the LLM endpoint");
    build->add_flag("--no-negatives", ba.no_negatives, "Skip Not-Found samples");

    std::string target = "all";
    auto* pretrain = app.add_subcommand("pretrain", "Contrastive encoder pretraining and LM warmup");
    pretrain->add_option("--target", target, "encoder | lm | all")->check(CLI::IsMember({"encoder", "lm", "all"}));

    TrainArgs ta;
    auto* trn = app.add_subcommand("train", "Run one curriculum stage");
    trn->add_option("--stage", ta.stage, "Stage")->required()->check(CLI::IsMember({1, 2, 3}));
    trn->add_option("--max-steps", ta.max_steps, "Override the step count");
    trn->add_option("--batch", ta.batch, "Override the batch size");
    trn->add_flag("--resume", ta.resume, "Continue from the saved stage state");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("protocol", ea.protocol, "localization | reportgen | ecgqa | multiecg")->required();
    ev->add_option("--mask", ea.mask, "none | first | second | random | all");
    ev->add_option("--checkpoint", ea.checkpoint, "Model checkpoint (default: latest stage)");
    ev->add_option("--limit", ea.limit, "Evaluate at most N samples");
    ev->add_option("--max-new", ea.max_new, "Generation length");

    ServeArgs sa;
    auto* serve = app.add_subcommand("serve", "HTTP chat service");
    serve->add_option("--checkpoint", sa.checkpoint, "Model checkpoint (default: latest stage)");
    serve->add_option("--host", sa.host, "Bind address");
    serve->add_option("--port", sa.port, "Port (0 picks one)");
    serve->add_option("--sessions", sa.sessions, "Session persistence directory");
    serve->add_option("--max-new", sa.max_new, "Generation length");

    ServeArgs ca;
    auto* chat_cmd = app.add_subcommand("chat", "Terminal chat");
    chat_cmd->add_option("--checkpoint", ca.checkpoint, "Model checkpoint (default: latest stage)");
    chat_cmd->add_option("--sessions", ca.sessions, "Session persistence directory");
    chat_cmd->add_option("--max-new", ca.max_new, "Generation length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() != 0) std::cerr << app.help() << "\n";
        return app.exit(e);
    }

    try {
        if (!g.config_path.empty()) g.config = read_json_file(g.config_path);
        if (!app.get_option("--seed")->count()) g.seed = g.config.value("seed", g.seed);
        if (!app.get_option("--out")->count()) g.out = g.config.value("out", g.out);
        g.deterministic = g.deterministic || g.config.value("deterministic", false);
        if (g.deterministic) Eigen::setNbThreads(1);

        if (*synth_cmd) return cmd_synth(g, synth_n, synth_test);
        if (*build) return cmd_build(g, ba);
        if (*pretrain) return cmd_pretrain(g, target);
        if (*trn) return cmd_train(g, ta);
        if (*ev) return cmd_eval(g, ea);
        if (*serve) return cmd_serve(g, sa);
        if (*chat_cmd) return cmd_chat(g, ca);
    } catch (const train::MissingPrerequisite& e) {
        std::cerr << "error: missing prerequisite: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

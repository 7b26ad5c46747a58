// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/curriculum.hpp"

#include "ecgchat/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace ecgchat::train {

using datagen::Subset;

// --------------------------------------------------------------- examples

std::vector<TrainExample> resolve_examples(std::span<const datagen::QaSample> samples,
                                           const datagen::RecordStore& store, datagen::Split split) {
    std::vector<TrainExample> out;
    for (const auto& s : samples) {
        if (s.split != split) continue;
        TrainExample ex{s.id, s.subset, {}, s.question, s.answer};
        for (const auto& r : s.ecg_refs) ex.ecgs.push_back(store.resolve(r));
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<fusion::ChatMessage> example_messages(const TrainExample& ex, bool with_answer) {
    std::vector<fusion::ChatMessage> msgs{{"user", fusion::ecg_prompt(ex.ecgs.size(), ex.question)}};
    if (with_answer) msgs.push_back({"assistant", ex.answer});
    return msgs;
}

ExampleGraph example_graph(const fusion::EcgChatModel& model, const TrainExample& ex) {
    std::vector<ag::Var> blocks;
    for (const auto& e : ex.ecgs) blocks.push_back(model.project_ecg(e));
    const auto msgs = example_messages(ex, true);
    ExampleGraph g;
    g.seq = model.assemble_prompt(blocks, msgs, false);
    g.logits = model.logits(g.seq);
    const auto n = static_cast<std::size_t>(g.seq.length());
    g.targets.assign(n, 0);
    g.mask.assign(n, 0);
    for (std::size_t t = 0; t + 1 < n; ++t) {
        g.targets[t] = std::max(0, g.seq.token_ids[t + 1]);
        g.mask[t] = g.seq.assistant[t + 1];
    }
    return g;
}

ag::Var example_loss(const fusion::EcgChatModel& model, const TrainExample& ex) {
    auto g = example_graph(model, ex);
    return ag::cross_entropy(g.logits, g.targets, g.mask);
}

double mean_loss(const fusion::EcgChatModel& model, std::span<const TrainExample> examples) {
    if (examples.empty()) return 0.0;
    ag::NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& ex : examples) total += example_loss(model, ex).item();
    return total / static_cast<double>(examples.size());
}

// ------------------------------------------------------------ task mixing

std::vector<std::vector<Draw>> mix_batches(std::span<const std::size_t> stream_sizes, std::size_t batch,
                                           std::uint64_t seed) {
    if (batch == 0) throw TrainError("batch size must be positive");
    std::size_t total = std::accumulate(stream_sizes.begin(), stream_sizes.end(), std::size_t{0});
    if (total == 0) throw TrainError("all task streams are empty");
    Rng rng(seed);
    std::vector<std::size_t> remaining(stream_sizes.begin(), stream_sizes.end());
    std::vector<std::vector<Draw>> out;
    std::vector<Draw> current;
    for (; total > 0; --total) {
        std::size_t r = std::uniform_int_distribution<std::size_t>(0, total - 1)(rng);
        std::size_t s = 0;
        while (r >= remaining[s]) r -= remaining[s++];
        const std::size_t taken = stream_sizes[s] - remaining[s];
        current.push_back({s, taken});
        --remaining[s];
        if (current.size() == batch) out.push_back(std::exchange(current, {}));
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

// ------------------------------------------------------------------ stages

StageSpec StageSpec::defaults(int stage) {
    StageSpec s;
    s.stage = stage;
    s.lr = 1e-4;
    switch (stage) {
        case 1:
            s.trainable = {"connector", "encoder"};
            s.tasks = {Subset::ReportGen};
            s.batch = 256;
            s.epochs = 2;
            break;
        case 2:
            s.trainable = {"connector", "encoder", "lora"};
            s.tasks = {Subset::ReportGen, Subset::Localization, Subset::LocalizationLong};
            s.batch = 64;
            s.epochs = 2;
            break;
        case 3:
            s.trainable = {"connector", "encoder", "lora"};
            s.tasks = {Subset::ReportGen, Subset::Localization, Subset::LocalizationLong, Subset::MultiEcg,
                       Subset::EcgQa};
            s.batch = 64;
            s.epochs = 1;
            break;
        default: throw TrainError("stage must be 1, 2 or 3");
    }
    return s;
}

void StageSpec::validate() const {
    if (stage < 1 || stage > 3) throw TrainError("stage must be 1, 2 or 3");
    if (stage == 1 && std::find(trainable.begin(), trainable.end(), "lora") != trainable.end())
        throw TrainError("stage 1 does not train LoRA adapters");
    if (trainable.empty()) throw TrainError("stage has no trainable groups");
    if (tasks.empty()) throw TrainError("stage has no tasks");
    if (batch < 1 || epochs < 1 || !(lr > 0.0)) throw TrainError("stage needs positive lr, batch and epochs");
}

void to_json(nlohmann::json& j, const StageSpec& s) {
    std::vector<std::string> tasks;
    for (auto t : s.tasks) tasks.emplace_back(datagen::to_string(t));
    j = {{"stage", s.stage},
         {"trainable", s.trainable},
         {"tasks", tasks},
         {"lr", s.lr},
         {"batch", s.batch},
         {"epochs", s.epochs},
         {"warmup_fraction", s.warmup_fraction},
         {"weight_decay", s.weight_decay},
         {"clip_norm", s.clip_norm},
         {"max_steps", s.max_steps}};
}

void from_json(const nlohmann::json& j, StageSpec& s) {
    s = StageSpec::defaults(j.value("stage", s.stage));
    s.trainable = j.value("trainable", s.trainable);
    if (j.contains("tasks")) {
        s.tasks.clear();
        for (const auto& t : j.at("tasks")) s.tasks.push_back(datagen::parse_subset(t.get<std::string>()));
    }
    s.lr = j.value("lr", s.lr);
    s.batch = j.value("batch", s.batch);
    s.epochs = j.value("epochs", s.epochs);
    s.warmup_fraction = j.value("warmup_fraction", s.warmup_fraction);
    s.weight_decay = j.value("weight_decay", s.weight_decay);
    s.clip_norm = j.value("clip_norm", s.clip_norm);
    s.max_steps = j.value("max_steps", s.max_steps);
}

nlohmann::json FreezeAudit::to_json() const {
    return {{"ok", ok()},
            {"frozen_changed", frozen_changed},
            {"trainable_unchanged", trainable_unchanged},
            {"changed_by_group", changed_by_group},
            {"unchanged_by_group", unchanged_by_group}};
}

FreezeAudit audit_freeze(const std::map<std::string, std::uint64_t>& before, const nn::ParameterSet& after,
                         std::span<const std::string> trainable_groups) {
    FreezeAudit a;
    for (const auto& p : after.all()) {
        const auto it = before.find(p->name);
        const bool changed = it == before.end() || it->second != hash_matrix(p->value);
        const bool trainable = std::find(trainable_groups.begin(), trainable_groups.end(), p->group) !=
                               trainable_groups.end();
        if (changed) {
            ++a.changed_by_group[p->group];
            if (!trainable) a.frozen_changed.push_back(p->name);
        } else {
            ++a.unchanged_by_group[p->group];
            if (trainable) a.trainable_unchanged.push_back(p->name);
        }
    }
    return a;
}

namespace {

std::vector<ag::ParamPtr> trainable_params(fusion::EcgChatModel& model, const StageSpec& spec) {
    spec.validate();
    model.params().set_trainable_groups(spec.trainable);
    std::vector<ag::ParamPtr> out;
    for (const auto& p : model.params().all())
        if (p->trainable) out.push_back(p);
    return out;
}

AdamWConfig adam_config(const StageSpec& spec) {
    AdamWConfig c;
    c.lr = spec.lr;
    c.weight_decay = spec.weight_decay;
    c.clip_norm = spec.clip_norm;
    return c;
}

std::string hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

StageRunner::StageRunner(fusion::EcgChatModel& model, StageSpec spec, std::vector<TrainExample> examples,
                         TrainOptions opts)
    : model_(model), spec_(std::move(spec)), opts_(std::move(opts)), opt_(trainable_params(model, spec_), adam_config(spec_)) {
    for (auto& ex : examples)
        if (std::find(spec_.tasks.begin(), spec_.tasks.end(), ex.task) != spec_.tasks.end())
            examples_.push_back(std::move(ex));
    if (examples_.empty()) throw TrainError("stage " + std::to_string(spec_.stage) + " has an empty dataset");

    std::vector<std::vector<std::size_t>> streams(spec_.tasks.size());
    for (std::size_t i = 0; i < examples_.size(); ++i) {
        const auto t = std::find(spec_.tasks.begin(), spec_.tasks.end(), examples_[i].task) - spec_.tasks.begin();
        streams[static_cast<std::size_t>(t)].push_back(i);
    }
    std::vector<std::size_t> sizes;
    for (const auto& s : streams) sizes.push_back(s.size());

    const auto per_epoch = static_cast<long>((examples_.size() + static_cast<std::size_t>(spec_.batch) - 1) /
                                             static_cast<std::size_t>(spec_.batch));
    const long wanted = spec_.max_steps > 0 ? spec_.max_steps : per_epoch * spec_.epochs;
    for (int epoch = 0; static_cast<long>(plan_.size()) < wanted; ++epoch) {
        const auto seed = derive_seed(opts_.seed, "stage" + std::to_string(spec_.stage) + "/epoch" + std::to_string(epoch));
        Rng shuffle_rng(derive_seed(seed, "shuffle"));
        auto order = streams;
        for (auto& s : order) std::shuffle(s.begin(), s.end(), shuffle_rng);
        for (const auto& batch : mix_batches(sizes, static_cast<std::size_t>(spec_.batch), seed)) {
            if (static_cast<long>(plan_.size()) >= wanted) break;
            std::vector<std::size_t> idx;
            for (const auto& d : batch) idx.push_back(order[d.stream][d.index]);
            plan_.push_back(std::move(idx));
        }
    }
    schedule_ = {spec_.lr, total_steps(), spec_.warmup_fraction, 0.0};
    start_hashes_ = model_.params().hashes();
}

double StageRunner::step() {
    if (done()) throw TrainError("stage already finished");
    const auto& batch = plan_[static_cast<std::size_t>(step_)];
    model_.params().zero_grad();
    double total = 0.0;
    std::map<Subset, int> counts;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t i : batch) {
        const auto& ex = examples_[i];
        ++counts[ex.task];
        const auto loss = example_loss(model_, ex);
        total += loss.item();
        ag::backward(ag::scale(loss, inv));
    }
    const double lr = schedule_.at(step_);
    const double gnorm = opt_.step(lr);
    const double mean = total * inv;
    losses_.push_back(mean);

    StepLog log{spec_.stage, step_, mean, lr, gnorm, ""};
    for (const auto& [task, n] : counts)
        log.tasks += (log.tasks.empty() ? "" : ",") + std::string(datagen::to_string(task)) + ":" + std::to_string(n);
    ++step_;
    if (!opts_.metrics_path.empty()) {
        std::ofstream f(opts_.metrics_path, std::ios::app);
        f << nlohmann::json{{"stage", log.stage}, {"step", log.step},   {"loss", log.loss},
                            {"lr", log.lr},       {"grad_norm", gnorm}, {"tasks", log.tasks}}
                 .dump()
          << '\n';
    }
    if (opts_.on_step) opts_.on_step(log);
    return mean;
}

void StageRunner::run(long until) {
    const long stop = until < 0 ? total_steps() : std::min(until, total_steps());
    while (step_ < stop) step();
}

FreezeAudit StageRunner::audit() const { return audit_freeze(start_hashes_, model_.params(), spec_.trainable); }

void StageRunner::save_state(const std::filesystem::path& path) const {
    checkpoint::Archive a;
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [name, h] : start_hashes_) hashes[name] = hex(h);
    a.config = {{"format", "ecgchat.trainstate"},
                {"version", 1},
                {"stage", spec_.stage},
                {"spec", spec_},
                {"step", step_},
                {"total_steps", total_steps()},
                {"seed", opts_.seed},
                {"losses", losses_},
                {"start_hashes", hashes}};
    opt_.save_state(a);
    checkpoint::save(path, a);
}

void StageRunner::load_state(const std::filesystem::path& path) {
    const auto a = checkpoint::load(path);
    if (a.config.value("format", "") != "ecgchat.trainstate")
        throw checkpoint::CheckpointError(path.string() + " is not a training state");
    if (a.config.at("stage").get<int>() != spec_.stage) throw TrainError("training state belongs to another stage");
    if (a.config.at("seed").get<std::uint64_t>() != opts_.seed) throw TrainError("training state was made with another seed");
    if (a.config.at("total_steps").get<long>() != total_steps())
        throw TrainError("training state was made with a different step plan");
    step_ = a.config.at("step").get<long>();
    losses_ = a.config.at("losses").get<std::vector<double>>();
    start_hashes_.clear();
    for (const auto& [name, h] : a.config.at("start_hashes").items())
        start_hashes_[name] = std::stoull(h.get<std::string>(), nullptr, 16);
    opt_.load_state(a);
}

StageResult run_stage(fusion::EcgChatModel& model, const StageSpec& spec, std::vector<TrainExample> examples,
                      const TrainOptions& opts) {
    StageRunner runner(model, spec, std::move(examples), opts);
    runner.run();
    return {runner.losses(), runner.audit()};
}

// ---------------------------------------------------------- prerequisites

std::filesystem::path encoder_checkpoint(const std::filesystem::path& run_dir) { return run_dir / "pretrain" / "encoder.ckpt"; }
std::filesystem::path lm_checkpoint(const std::filesystem::path& run_dir) { return run_dir / "pretrain" / "lm.ckpt"; }
std::filesystem::path stage_dir(const std::filesystem::path& run_dir, int stage) {
    return run_dir / ("stage" + std::to_string(stage));
}
std::filesystem::path stage_checkpoint(const std::filesystem::path& run_dir, int stage) {
    return stage_dir(run_dir, stage) / "model.ckpt";
}

std::filesystem::path require_prerequisite(const std::filesystem::path& run_dir, int stage) {
    if (stage < 1 || stage > 3) throw TrainError("stage must be 1, 2 or 3");
    const auto p = stage == 1 ? encoder_checkpoint(run_dir) : stage_checkpoint(run_dir, stage - 1);
    if (!std::filesystem::exists(p)) {
        const std::string what = stage == 1 ? "the contrastive encoder checkpoint (run `pretrain` first)"
                                            : "the stage " + std::to_string(stage - 1) + " checkpoint";
        throw MissingPrerequisite("stage " + std::to_string(stage) + " needs " + what + ": " + p.string() +
                                  " does not exist");
    }
    return p;
}

// ------------------------------------------------------------ pretraining

TextTower::TextTower(nn::ParameterSet& ps, Index vocab, Index width, Index out, Rng& rng)
    : embed_(ps.add("contrast.text_embed", "contrast", randn(vocab, width, 0.1, rng))),
      proj_(ps, "contrast.text_proj", "contrast", width, out, rng) {}

ag::Var TextTower::operator()(std::span<const int> ids) const {
    static const int kUnkId = fusion::Tokenizer::kUnk;
    const auto use = ids.empty() ? std::span<const int>(&kUnkId, 1) : ids;
    return proj_(ag::mean_rows(ag::gather_rows(ag::Var::leaf(*embed_), use)));
}

ag::Var info_nce(const ag::Var& a, const ag::Var& b, const ag::Var& scale) {
    if (a.rows() != b.rows() || a.rows() < 2) throw TrainError("InfoNCE needs matching batches of at least 2");
    const auto sim = ag::mul_scalar(ag::matmul(a, ag::transpose(b)), scale);
    std::vector<int> targets(static_cast<std::size_t>(a.rows()));
    std::iota(targets.begin(), targets.end(), 0);
    const std::vector<std::uint8_t> mask(targets.size(), 1);
    return ag::scale(ag::cross_entropy(sim, targets, mask) + ag::cross_entropy(ag::transpose(sim), targets, mask), 0.5);
}

ContrastiveModel::ContrastiveModel(const encoder::EncoderConfig& cfg, fusion::Tokenizer tokenizer,
                                   const ContrastiveOptions& opts)
    : cfg_(cfg), tokenizer_(std::move(tokenizer)) {
    Rng rng(derive_seed(opts.seed, "contrastive"));
    encoder_ = std::make_unique<encoder::EcgEncoder>(cfg_, ps_, rng);
    ecg_proj_ = nn::Linear(ps_, "contrast.ecg_proj", "contrast", cfg_.width, opts.joint_width, rng);
    text_ = TextTower(ps_, tokenizer_.base_size(), opts.joint_width, opts.joint_width, rng);
    log_scale_ = ps_.add("contrast.log_scale", "contrast", Matrix::Constant(1, 1, std::log(1.0 / opts.temperature)));
    log_scale_->trainable = opts.learn_temperature;
}

ag::Var ContrastiveModel::ecg_embeddings(std::span<const records::CanonicalRecord> ecgs) const {
    const Index clip = cfg_.clip_samples();
    std::vector<ag::Var> rows;
    for (const auto& e : ecgs) {
        Matrix m = Matrix::Zero(records::kNumLeads, clip);
        const Index n = std::min(clip, e.samples());
        m.leftCols(n) = e.signal.leftCols(n);
        rows.push_back(encoder_->encode_clip(encoder_->patchify(m)).cls);
    }
    return ag::l2_normalize_rows(ecg_proj_(ag::concat_rows(rows)));
}

ag::Var ContrastiveModel::text_embeddings(std::span<const std::string> texts) const {
    std::vector<ag::Var> rows;
    for (const auto& t : texts) rows.push_back(text_(tokenizer_.encode(t)));
    return ag::l2_normalize_rows(ag::concat_rows(rows));
}

ag::Var ContrastiveModel::logit_scale() const { return ag::exp(ag::Var::leaf(*log_scale_)); }

double ContrastiveModel::temperature() const { return std::exp(-log_scale_->value(0, 0)); }

void ContrastiveModel::save(const std::filesystem::path& path) const {
    checkpoint::Archive a;
    a.config = {{"format", "ecgchat.encoder"}, {"version", 1}, {"encoder", cfg_}, {"tokenizer", tokenizer_.to_json()},
                {"temperature", temperature()}};
    for (const auto& p : ps_.all()) a.tensors.emplace_back(p->name, p->value);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    checkpoint::save(path, a);
}

std::vector<double> contrastive_pretrain(ContrastiveModel& model, std::span<const ContrastivePair> pairs,
                                         const ContrastiveOptions& opts) {
    if (opts.batch < 2) throw TrainError("contrastive batch size must be at least 2");
    if (pairs.size() < 2) throw TrainError("contrastive pretraining needs at least 2 pairs");
    std::vector<ag::ParamPtr> params;
    for (const auto& p : model.params().all())
        if (p->trainable) params.push_back(p);
    AdamWConfig cfg;
    cfg.lr = opts.lr;
    cfg.weight_decay = 0.0;
    AdamW opt(params, cfg);

    const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(opts.batch), pairs.size());
    const long per_epoch = static_cast<long>(pairs.size() / batch);
    const WarmupCosine sched{opts.lr, per_epoch * opts.epochs, 0.03, 0.1};
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> losses;
    long step = 0;
    for (int e = 0; e < opts.epochs; ++e) {
        Rng rng(derive_seed(opts.seed, "contrastive/epoch" + std::to_string(e)));
        std::shuffle(order.begin(), order.end(), rng);
        for (long b = 0; b < per_epoch; ++b) {
            std::vector<records::CanonicalRecord> ecgs;
            std::vector<std::string> texts;
            for (std::size_t k = 0; k < batch; ++k) {
                const auto& p = pairs[order[static_cast<std::size_t>(b) * batch + k]];
                ecgs.push_back(p.ecg);
                texts.push_back(p.report);
            }
            model.params().zero_grad();
            const auto loss = info_nce(model.ecg_embeddings(ecgs), model.text_embeddings(texts), model.logit_scale());
            ag::backward(loss);
            opt.step(sched.at(step++));
            losses.push_back(loss.item());
        }
    }
    return losses;
}

double retrieval_recall_at_1(const ContrastiveModel& model, std::span<const ContrastivePair> pairs) {
    if (pairs.empty()) return 0.0;
    ag::NoGradGuard no_grad;
    std::vector<records::CanonicalRecord> ecgs;
    std::vector<std::string> texts;
    for (const auto& p : pairs) {
        ecgs.push_back(p.ecg);
        texts.push_back(p.report);
    }
    const Matrix sim = model.ecg_embeddings(ecgs).value() * model.text_embeddings(texts).value().transpose();
    int hits = 0;
    for (Index i = 0; i < sim.rows(); ++i) {
        Index best = 0;
        sim.row(i).maxCoeff(&best);
        hits += best == i;
    }
    return static_cast<double>(hits) / static_cast<double>(sim.rows());
}

std::vector<double> lm_warmup(fusion::EcgChatModel& model, std::span<const std::string> texts,
                              const LmWarmupOptions& opts) {
    if (texts.empty()) throw TrainError("LM warmup needs text");
    model.params().set_trainable_groups({"lm"});
    std::vector<ag::ParamPtr> params;
    for (const auto& p : model.params().all())
        if (p->trainable) params.push_back(p);
    AdamWConfig cfg;
    cfg.lr = opts.lr;
    AdamW opt(params, cfg);
    const auto& lm = model.lm();
    const std::size_t batch = static_cast<std::size_t>(std::max(1, opts.batch));
    const long per_epoch = static_cast<long>((texts.size() + batch - 1) / batch);
    const WarmupCosine sched{opts.lr, per_epoch * opts.epochs, 0.03, 0.1};
    std::vector<std::size_t> order(texts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> losses;
    long step = 0;
    for (int e = 0; e < opts.epochs; ++e) {
        Rng rng(derive_seed(opts.seed, "lm-warmup/epoch" + std::to_string(e)));
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            model.params().zero_grad();
            double total = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                std::vector<int> ids{fusion::Tokenizer::kBos};
                for (int id : model.tokenizer().encode(texts[order[k]])) ids.push_back(id);
                ids.push_back(fusion::Tokenizer::kEos);
                if (static_cast<Index>(ids.size()) > lm.max_context()) ids.resize(static_cast<std::size_t>(lm.max_context()));
                std::vector<int> targets(ids.size(), 0);
                std::vector<std::uint8_t> mask(ids.size(), 0);
                for (std::size_t t = 0; t + 1 < ids.size(); ++t) {
                    targets[t] = ids[t + 1];
                    mask[t] = 1;
                }
                const auto loss = ag::cross_entropy(lm.forward(lm.embed(ids)), targets, mask);
                total += loss.item();
                ag::backward(ag::scale(loss, 1.0 / static_cast<double>(end - start)));
            }
            opt.step(sched.at(step++));
            losses.push_back(total / static_cast<double>(end - start));
        }
    }
    return losses;
}

}  // namespace ecgchat::train

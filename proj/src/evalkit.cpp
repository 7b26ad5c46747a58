// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/evalkit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace ecgchat::eval {

namespace {

std::uint64_t fnv(std::string_view s, std::uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

// -------------------------------------------------------------- embeddings

RowVector HashingEmbedder::embed(std::string_view text) const {
    RowVector v = RowVector::Zero(dim_);
    const std::string low = lower(text);
    auto bump = [&](std::string_view piece, double w) {
        const auto h = fnv(piece);
        const auto bucket = static_cast<Index>(h % static_cast<std::uint64_t>(dim_));
        v(bucket) += (h >> 63) ? -w : w;
    };
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        bump("w:" + word, 1.0);
        const std::string padded = "#" + word + "#";
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) bump("c:" + padded.substr(i, 3), 0.5);
        word.clear();
    };
    for (char c : low) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            word += c;
        else
            flush();
    }
    flush();
    return v;
}

RowVector FixedEmbedder::embed(std::string_view text) const {
    const auto it = table_.find(text);
    if (it == table_.end()) throw EvalError("embedder has no vector for '" + std::string(text) + "'");
    return it->second;
}

double cosine(const RowVector& a, const RowVector& b) {
    const double na = a.norm();
    const double nb = b.norm();
    if (na == 0.0 || nb == 0.0) return 0.0;
    return a.dot(b) / (na * nb);
}

RowVector report_to_scores(std::string_view report, std::span<const std::string> labels, const Embedder& embedder) {
    const RowVector r = embedder.embed(report);
    RowVector out(static_cast<Index>(labels.size()));
    for (std::size_t j = 0; j < labels.size(); ++j) out(static_cast<Index>(j)) = cosine(r, embedder.embed(labels[j]));
    return out;
}

// --------------------------------------------------------------------- AUC

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> truth) {
    if (scores.size() != truth.size()) throw EvalError("score and truth lengths differ");
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[idx[k]] = mid;
        i = j + 1;
    }
    double pos = 0.0;
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (truth[i] != 0) {
            pos += 1.0;
            rank_sum += rank[i];
        }
    }
    const double neg = static_cast<double>(n) - pos;
    if (pos == 0.0 || neg == 0.0) return std::nullopt;
    return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

AucResult macro_auc(const LabelScoreMatrix& m) {
    if (m.scores.rows() != m.truth.rows() || m.scores.cols() != m.truth.cols())
        throw EvalError("score and truth matrices differ in shape");
    AucResult res;
    double total = 0.0;
    int valid = 0;
    for (Index c = 0; c < m.scores.cols(); ++c) {
        std::vector<double> s(static_cast<std::size_t>(m.scores.rows()));
        std::vector<int> t(s.size());
        for (Index r = 0; r < m.scores.rows(); ++r) {
            s[static_cast<std::size_t>(r)] = m.scores(r, c);
            t[static_cast<std::size_t>(r)] = m.truth(r, c) != 0.0;
        }
        const auto auc = roc_auc(s, t);
        res.per_class.push_back(auc);
        if (auc) {
            total += *auc;
            ++valid;
        } else {
            res.skipped.push_back(static_cast<std::size_t>(c) < m.labels.size() ? m.labels[static_cast<std::size_t>(c)]
                                                                                 : std::to_string(c));
        }
    }
    if (valid == 0) throw EvalError("no class has both positive and negative samples");
    res.macro = total / valid;
    return res;
}

// ------------------------------------------------------------- exact match

std::string normalize_answer(std::string_view s) {
    std::string out;
    bool space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

bool exact_match(std::string_view pred, std::string_view truth) {
    const std::string p = normalize_answer(pred);
    const std::string t = normalize_answer(truth);
    if (p.find(',') == std::string::npos && t.find(',') == std::string::npos) return p == t;
    auto items = [](const std::string& s) {
        std::set<std::string> out;
        std::size_t start = 0;
        while (true) {
            const auto comma = s.find(',', start);
            out.insert(normalize_answer(s.substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        out.erase("");
        return out;
    };
    return items(p) == items(t);
}

// ------------------------------------------------------------------- judge

nlohmann::json to_json(const JudgeVerdict& v) {
    return {{"score", v.score}, {"valid", v.valid}, {"rationale", v.rationale}, {"model", v.model}, {"attempts", v.attempts}};
}

std::string judge_prompt(std::string_view question, std::span<const std::string> reports, std::string_view prediction) {
    std::string rep;
    for (std::size_t i = 0; i < reports.size(); ++i)
        rep += (i ? " " : "") + std::to_string(i + 1) + ". " + reports[i];
    std::string out = "For the given question ";
    out += question;
    out += " about multiple ECG-QA, and the report ";
    out += rep;
    out += " corresponding to each ECG, score the answer below, where 0 means completely incorrect and 5 means "
           "completely correct. The answer is: <";
    out += prediction;
    out += ">.";
    return out;
}

std::optional<int> extract_score(std::string_view reply) {
    for (std::size_t i = 0; i < reply.size();) {
        if (!std::isdigit(static_cast<unsigned char>(reply[i]))) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < reply.size() && std::isdigit(static_cast<unsigned char>(reply[j]))) ++j;
        const bool decimal = j + 1 < reply.size() && reply[j] == '.' && std::isdigit(static_cast<unsigned char>(reply[j + 1]));
        if (j - i == 1 && !decimal && reply[i] <= '5') return reply[i] - '0';
        i = j;
        while (i < reply.size() && (std::isdigit(static_cast<unsigned char>(reply[i])) || reply[i] == '.')) ++i;
    }
    return std::nullopt;
}

JudgeVerdict judge_score(std::string_view question, std::span<const std::string> reports, std::string_view prediction,
                         llm::Client& client, const JudgeOptions& opts) {
    llm::CompletionRequest req;
    req.model = opts.model;
    req.temperature = opts.temperature;
    req.messages = {{"user", judge_prompt(question, reports, prediction)}};
    JudgeVerdict v;
    v.model = opts.model.empty() ? client.model() : opts.model;
    for (int attempt = 0; attempt < 2; ++attempt) {
        ++v.attempts;
        const std::string reply = client.complete(req);
        v.rationale = reply;
        if (const auto s = extract_score(reply)) {
            v.score = *s;
            v.valid = true;
            return v;
        }
    }
    return v;
}

// --------------------------------------------------------------- protocols

Predictor model_predictor(const fusion::EcgChatModel& model, const fusion::DecodeOptions& opts) {
    return [&model, opts](const train::TrainExample& ex) {
        ag::NoGradGuard no_grad;
        std::vector<ag::Var> blocks;
        for (const auto& e : ex.ecgs) blocks.push_back(model.project_ecg(e));
        const auto msgs = train::example_messages(ex, false);
        return model.generate(model.assemble_prompt(blocks, msgs, true), opts);
    };
}

std::string_view to_string(MaskMode m) {
    switch (m) {
        case MaskMode::None: return "none";
        case MaskMode::First: return "mask-first";
        case MaskMode::Second: return "mask-second";
        case MaskMode::Random: return "mask-random";
    }
    return "none";
}

MaskMode parse_mask_mode(std::string_view s) {
    if (s == "none") return MaskMode::None;
    if (s == "first" || s == "mask-first") return MaskMode::First;
    if (s == "second" || s == "mask-second") return MaskMode::Second;
    if (s == "random" || s == "mask-random") return MaskMode::Random;
    throw EvalError("unknown mask mode: " + std::string(s));
}

records::CanonicalRecord apply_mask(const records::CanonicalRecord& rec, MaskMode mode, Rng& rng) {
    if (mode == MaskMode::None) return rec;
    const auto& order = rec.source_order;
    if (order.size() < 2) throw records::RecordError("cannot mask a lead of a record with fewer than two leads");
    std::size_t drop = 0;
    if (mode == MaskMode::Second) drop = 1;
    if (mode == MaskMode::Random) drop = std::uniform_int_distribution<std::size_t>(0, order.size() - 1)(rng);
    std::set<std::string> keep;
    for (std::size_t i = 0; i < order.size(); ++i)
        if (i != drop) keep.insert(std::string(records::kCanonicalLeads[static_cast<std::size_t>(order[i])]));
    return records::mask_leads(rec, keep);
}

LocalizationEval evaluate_localization(std::span<const train::TrainExample> examples, const Predictor& predict,
                                       MaskMode mode, std::uint64_t seed) {
    LocalizationEval out;
    out.mode = mode;
    double total = 0.0;
    for (const auto& ex : examples) {
        train::TrainExample masked = ex;
        Rng rng(derive_seed(seed, "mask/" + ex.id));
        for (auto& e : masked.ecgs) e = apply_mask(e, mode, rng);
        LocalizationRow row;
        row.id = ex.id;
        row.truth = ex.answer;
        row.prediction = predict(masked);
        const auto pred = spans::parse(row.prediction);
        row.parse_failure = pred.is_failure();
        row.iou = spans::temporal_iou(pred, spans::parse(ex.answer));
        total += row.iou;
        out.parse_failures += row.parse_failure;
        out.rows.push_back(std::move(row));
    }
    out.mean_iou = examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
    return out;
}

std::vector<LocalizationEval> masking_sweep(std::span<const train::TrainExample> examples, const Predictor& predict,
                                            std::span<const MaskMode> modes, std::uint64_t seed) {
    std::vector<LocalizationEval> out;
    for (auto m : modes) out.push_back(evaluate_localization(examples, predict, m, seed));
    return out;
}

ReportGenEval evaluate_reportgen(std::span<const train::TrainExample> examples, const Predictor& predict,
                                 std::span<const std::string> labels, const Embedder& embedder) {
    LabelScoreMatrix m;
    m.labels.assign(labels.begin(), labels.end());
    m.scores = Matrix::Zero(static_cast<Index>(examples.size()), static_cast<Index>(labels.size()));
    m.truth = Matrix::Zero(m.scores.rows(), m.scores.cols());
    ReportGenEval out;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const std::string pred = predict(examples[i]);
        out.predictions.push_back(pred);
        m.scores.row(static_cast<Index>(i)) = report_to_scores(pred, labels, embedder);
        const std::string ref = lower(examples[i].answer);
        for (std::size_t j = 0; j < labels.size(); ++j)
            m.truth(static_cast<Index>(i), static_cast<Index>(j)) = ref.find(lower(labels[j])) != std::string::npos;
    }
    out.auc = macro_auc(m);
    return out;
}

ExactMatchEval evaluate_exact_match(std::span<const train::TrainExample> examples, const Predictor& predict) {
    ExactMatchEval out;
    int hits = 0;
    for (const auto& ex : examples) {
        const bool ok = exact_match(predict(ex), ex.answer);
        hits += ok;
        out.rows.emplace_back(ex.id, ok);
    }
    out.accuracy = examples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(examples.size());
    return out;
}

JudgeEval evaluate_judge(std::span<const datagen::QaSample> samples, std::span<const train::TrainExample> examples,
                         const Predictor& predict, const std::map<std::string, std::string>& reports,
                         llm::Client& client, const JudgeOptions& opts) {
    std::map<std::string, const datagen::QaSample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;
    JudgeEval out;
    double total = 0.0;
    int valid = 0;
    for (const auto& ex : examples) {
        const auto it = by_id.find(ex.id);
        if (it == by_id.end()) throw EvalError("no sample for example " + ex.id);
        std::vector<std::string> reps;
        for (const auto& r : it->second->ecg_refs) {
            const auto rep = reports.find(r.record_id);
            if (rep == reports.end()) throw EvalError("no report for record " + r.record_id);
            reps.push_back(rep->second);
        }
        auto v = judge_score(ex.question, reps, predict(ex), client, opts);
        if (v.valid) {
            total += v.score;
            ++valid;
        } else {
            ++out.invalid;
        }
        out.verdicts.push_back(std::move(v));
    }
    out.mean_score = valid ? total / valid : 0.0;
    return out;
}

// ------------------------------------------------------------------ report

std::string format_masking_table(const std::map<std::string, std::vector<LocalizationEval>>& by_dataset) {
    std::vector<MaskMode> modes;
    for (const auto& [name, evals] : by_dataset)
        for (const auto& e : evals)
            if (std::find(modes.begin(), modes.end(), e.mode) == modes.end()) modes.push_back(e.mode);
    std::ostringstream ss;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%-20s", "dataset");
    ss << buf;
    for (auto m : modes) {
        std::snprintf(buf, sizeof(buf), " %12s", std::string(to_string(m)).c_str());
        ss << buf;
    }
    ss << '\n';
    for (const auto& [name, evals] : by_dataset) {
        std::snprintf(buf, sizeof(buf), "%-20s", name.c_str());
        ss << buf;
        for (auto m : modes) {
            const auto it = std::find_if(evals.begin(), evals.end(), [&](const auto& e) { return e.mode == m; });
            if (it == evals.end())
                std::snprintf(buf, sizeof(buf), " %12s", "-");
            else
                std::snprintf(buf, sizeof(buf), " %12.4f", it->mean_iou);
            ss << buf;
        }
        ss << '\n';
    }
    return ss.str();
}

std::string format_localization_report(const LocalizationEval& e) {
    std::ostringstream ss;
    ss << "# localization (" << to_string(e.mode) << ")\n";
    char buf[64];
    for (const auto& r : e.rows) {
        std::snprintf(buf, sizeof(buf), "%.4f", r.iou);
        ss << r.id << "\tiou=" << buf << (r.parse_failure ? "\tparse-failure" : "") << "\ttruth=" << r.truth
           << "\tpred=" << r.prediction << '\n';
    }
    std::snprintf(buf, sizeof(buf), "%.4f", e.mean_iou);
    ss << "\n[aggregate]\nsamples = " << e.rows.size() << "\nmean_iou = " << buf << "\nparse_failures = " << e.parse_failures
       << '\n';
    return ss.str();
}

std::string localization_jsonl(const LocalizationEval& e) {
    std::string out;
    for (const auto& r : e.rows) {
        out += nlohmann::json{{"id", r.id},
                              {"mode", to_string(e.mode)},
                              {"truth", r.truth},
                              {"prediction", r.prediction},
                              {"iou", r.iou},
                              {"parse_failure", r.parse_failure}}
                   .dump();
        out += '\n';
    }
    return out;
}

}  // namespace ecgchat::eval

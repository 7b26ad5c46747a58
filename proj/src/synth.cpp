// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

namespace ecgchat::synth {

namespace {

enum class Beat { Normal, Pvc, Lbbb, Rbbb };

struct Wave {
    double at;     // seconds from the beat's R peak
    double amp;
    double width;  // gaussian sigma, seconds
};

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> v = {
        "Sinus rhythm",
        "Sinus bradycardia",
        "Sinus tachycardia",
        "Premature ventricular contractions",
        "Left bundle branch block",
        "Right bundle branch block",
        "Normal ECG",
        "Abnormal ECG",
    };
    return v;
}

std::vector<Wave> waves(Beat b) {
    switch (b) {
        case Beat::Normal:
            return {{-0.16, 0.15, 0.025}, {-0.025, -0.1, 0.010}, {0.0, 1.0, 0.012}, {0.03, -0.25, 0.012},
                    {0.30, 0.30, 0.050}};
        case Beat::Pvc:
            return {{0.0, 1.7, 0.045}, {0.09, -0.5, 0.035}, {0.36, -0.55, 0.070}};
        case Beat::Lbbb:
            return {{-0.16, 0.15, 0.025}, {-0.02, 0.8, 0.025}, {0.05, 0.9, 0.030}, {0.34, -0.40, 0.060}};
        case Beat::Rbbb:
            return {{-0.16, 0.15, 0.025}, {0.0, 0.55, 0.012}, {0.035, -0.45, 0.015}, {0.08, 1.1, 0.018},
                    {0.32, -0.25, 0.055}};
    }
    return {};
}

double lead_gain(const std::string& lead, Beat b) {
    static constexpr std::array<double, records::kNumLeads> kGain = {1.0, 1.2,  0.5, -0.9, 0.4, 0.8,
                                                                    -0.6, -0.2, 0.5, 1.0,  1.1, 0.9};
    const int slot = records::canonical_slot(lead);
    double g = slot >= 0 ? kGain[static_cast<std::size_t>(slot)] : 1.0;
    // bundle-branch blocks flip polarity in the right precordial leads
    if ((b == Beat::Lbbb || b == Beat::Rbbb) && (lead == "V1" || lead == "V2")) g = b == Beat::Rbbb ? 1.0 : -1.2;
    return g;
}

std::string class_label(Beat b) {
    switch (b) {
        case Beat::Pvc: return "PVC";
        case Beat::Lbbb: return "LBBB";
        case Beat::Rbbb: return "RBBB";
        case Beat::Normal: break;
    }
    return "N";
}

std::string date_string(std::chrono::sys_days d) {
    const std::chrono::year_month_day ymd{d};
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

}  // namespace

std::span<const std::string> label_vocabulary() { return vocabulary(); }

SynthRecord make_record(const std::string& id, const SynthOptions& opts, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double hr = 50.0 + 65.0 * u(rng);
    const double rr = 60.0 / hr;

    std::vector<double> times;
    for (double t = 0.25 + 0.4 * u(rng); t < opts.duration_s - 0.3; t += rr * (0.97 + 0.06 * u(rng))) times.push_back(t);
    std::vector<Beat> kinds(times.size(), Beat::Normal);

    Beat cls = Beat::Normal;
    if (u(rng) < opts.abnormal_probability && times.size() > 4) {
        cls = static_cast<Beat>(1 + std::uniform_int_distribution<int>(0, 2)(rng));
        const int runs = std::uniform_int_distribution<int>(1, opts.max_runs)(rng);
        for (int r = 0; r < runs; ++r) {
            const int len = std::uniform_int_distribution<int>(1, opts.max_run_beats)(rng);
            const auto first = std::uniform_int_distribution<std::size_t>(1, times.size() - 2)(rng);
            for (std::size_t k = first; k < std::min(times.size() - 1, first + static_cast<std::size_t>(len)); ++k)
                kinds[k] = cls;
        }
        if (cls == Beat::Pvc)
            for (std::size_t k = 1; k < times.size(); ++k)
                if (kinds[k] == Beat::Pvc && kinds[k - 1] != Beat::Pvc) times[k] -= 0.25 * rr;
    }

    const auto n = static_cast<Index>(std::llround(opts.duration_s * opts.fs));
    records::EcgRecord rec;
    rec.record_id = id;
    rec.fs = opts.fs;
    rec.lead_names = opts.leads;
    rec.signal = Matrix::Zero(static_cast<Index>(opts.leads.size()), n);
    std::normal_distribution<double> noise(0.0, opts.noise);
    const double wander_f = 0.15 + 0.2 * u(rng);
    const double wander_p = 2.0 * std::numbers::pi * u(rng);
    for (Index l = 0; l < rec.signal.rows(); ++l) {
        const auto& lead = opts.leads[static_cast<std::size_t>(l)];
        for (Index i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / opts.fs;
            double v = 0.05 * std::sin(2.0 * std::numbers::pi * wander_f * t + wander_p) + noise(rng);
            for (std::size_t b = 0; b < times.size(); ++b) {
                const double dt = t - times[b];
                if (dt < -0.4 || dt > 0.6) continue;
                const double g = lead_gain(lead, kinds[b]);
                for (const auto& w : waves(kinds[b])) {
                    const double z = (dt - w.at) / w.width;
                    v += g * w.amp * std::exp(-0.5 * z * z);
                }
            }
            rec.signal(l, i) = v;
        }
    }

    // one interval annotation per run of abnormal beats
    for (std::size_t b = 0; b < times.size();) {
        if (kinds[b] == Beat::Normal) {
            ++b;
            continue;
        }
        std::size_t e = b;
        while (e + 1 < times.size() && kinds[e + 1] == kinds[b]) ++e;
        const double on = std::max(0.0, std::round((times[b] - 0.12) * 100.0) / 100.0);
        const double off = std::min(opts.duration_s, std::round((times[e] + 0.45) * 100.0) / 100.0);
        rec.annotations.push_back({on, off, class_label(kinds[b])});
        b = e + 1;
    }

    SynthRecord out;
    out.heart_rate = hr;
    out.labels.push_back(hr < 60.0 ? "Sinus bradycardia" : hr > 100.0 ? "Sinus tachycardia" : "Sinus rhythm");
    if (cls == Beat::Pvc) out.labels.push_back("Premature ventricular contractions");
    if (cls == Beat::Lbbb) out.labels.push_back("Left bundle branch block");
    if (cls == Beat::Rbbb) out.labels.push_back("Right bundle branch block");
    const bool abnormal = cls != Beat::Normal || hr < 60.0 || hr > 100.0;
    out.labels.push_back(abnormal ? "Abnormal ECG" : "Normal ECG");
    for (std::size_t i = 0; i < out.labels.size(); ++i) out.report += (i ? ", " : "") + out.labels[i];
    rec.acquired_at = "2150-01-01";
    out.record = std::move(rec);
    return out;
}

std::vector<SynthRecord> make_corpus(int n, std::uint64_t seed, const SynthOptions& opts) {
    std::vector<SynthRecord> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "syn%04d", i);
        Rng rng(derive_seed(seed, id));
        out.push_back(make_record(id, opts, rng));
    }
    return out;
}

std::vector<datagen::PatientGroup> group_patients(std::vector<SynthRecord>& corpus, std::uint64_t seed) {
    using namespace std::chrono;
    Rng rng(derive_seed(seed, "patients"));
    std::vector<datagen::PatientGroup> out;
    std::size_t i = 0;
    while (corpus.size() - i >= 2) {
        const std::size_t left = corpus.size() - i;
        std::size_t k = std::uniform_int_distribution<std::size_t>(2, 6)(rng);
        k = std::min(k, left);
        if (left - k == 1) k = k == 6 ? 5 : k + 1;
        char pid[32];
        std::snprintf(pid, sizeof(pid), "patient%04zu", out.size());
        datagen::PatientGroup g{pid, {}};
        sys_days day = sys_days{year{2140} / January / 1} + days{std::uniform_int_distribution<int>(0, 3650)(rng)};
        for (std::size_t j = 0; j < k; ++j, ++i) {
            if (j > 0) day += days{std::uniform_int_distribution<int>(1, 900)(rng)};
            corpus[i].record.acquired_at = date_string(day);
            g.ecgs.push_back({corpus[i].record.record_id, corpus[i].report, *corpus[i].record.acquired_at});
        }
        out.push_back(std::move(g));
    }
    return out;
}

llm::ScriptedClient::Responder multiecg_responder() {
    return [](const llm::CompletionRequest& req) {
        const std::string& prompt = req.messages.back().content;
        const auto at = prompt.rfind("Given reports ");
        const auto end = prompt.find(", and acquisition time", at);
        std::string reports = at == std::string::npos ? "" : prompt.substr(at + 14, end - at - 14);
        std::erase(reports, '\'');
        std::erase(reports, '[');
        std::vector<std::string> per_ecg;
        std::size_t pos = 0;
        while (pos < reports.size()) {
            const auto close = reports.find(']', pos);
            std::string piece = reports.substr(pos, close == std::string::npos ? std::string::npos : close - pos);
            while (!piece.empty() && (piece.front() == ',' || piece.front() == ' ')) piece.erase(piece.begin());
            if (!piece.empty()) per_ecg.push_back(piece);
            if (close == std::string::npos) break;
            pos = close + 1;
        }
        std::string each;
        for (std::size_t i = 0; i < per_ecg.size(); ++i)
            each += (i ? " " : "") + std::string("ECG") + std::to_string(i + 1) + ": " + per_ecg[i] + ".";
        const std::string last = per_ecg.empty() ? "" : per_ecg.back();
        const std::string first = per_ecg.empty() ? "" : per_ecg.front();
        const std::vector<std::pair<std::string, std::string>> qa = {
            {"Provide a report for each electrocardiogram", each},
            {"What does the most recent ECG show", "The most recent ECG shows " + last + "."},
            {"What did the first ECG show", "The first ECG showed " + first + "."},
            {"How many ECGs were recorded", "There are " + std::to_string(per_ecg.size()) + " ECGs."},
            {"What changes occur in the ECGs", "The ECGs change from " + first + " to " + last + "."},
            {"What can be found by combining these ECGs", "Combined, the ECGs show " + each},
            {"Is the latest rhythm abnormal",
             last.find("Abnormal") != std::string::npos ? "Yes, the latest ECG is abnormal." : "No, the latest ECG is normal."},
            {"Possible trends in the future", "Future ECGs may resemble the latest one: " + last + "."},
        };
        std::string out;
        for (const auto& [q, a] : qa) out += nlohmann::json{{"q", q}, {"a", a}}.dump() + "\n";
        return out;
    };
}

std::string ecgqa_source(std::span<const SynthRecord> corpus, int rows, double test_fraction, std::uint64_t seed) {
    static const std::vector<std::pair<std::string, std::string>> kQuestions = {
        {"Does this ECG show premature ventricular contractions?", "Premature ventricular contractions"},
        {"Does this ECG show left bundle branch block?", "Left bundle branch block"},
        {"Does this ECG show right bundle branch block?", "Right bundle branch block"},
        {"Is this a normal ECG?", "Normal ECG"},
        {"Does this ECG show sinus tachycardia?", "Sinus tachycardia"},
        {"Does this ECG show sinus bradycardia?", "Sinus bradycardia"},
    };
    Rng rng(derive_seed(seed, "ecgqa-source"));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::string out;
    for (int i = 0; i < rows; ++i) {
        const auto& rec = corpus[std::uniform_int_distribution<std::size_t>(0, corpus.size() - 1)(rng)];
        const auto& [q, label] = kQuestions[std::uniform_int_distribution<std::size_t>(0, kQuestions.size() - 1)(rng)];
        const bool yes = std::find(rec.labels.begin(), rec.labels.end(), label) != rec.labels.end();
        nlohmann::json row{{"question", q},
                           {"answer", nlohmann::json::array({yes ? "yes" : "no"})},
                           {"ecg_id", nlohmann::json::array({rec.record.record_id})},
                           {"split", u(rng) < test_fraction ? "test" : "train"}};
        out += row.dump() + "\n";
    }
    return out;
}

}  // namespace ecgchat::synth

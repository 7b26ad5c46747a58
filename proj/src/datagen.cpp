// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/datagen.hpp"

#include "ecgchat/record_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace ecgchat::datagen {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) out.push_back(text.substr(start));
            break;
        }
        out.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return out;
}

std::size_t pick(Rng& rng, std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
    return s;
}

double round1(double x) { return std::round(x * 10.0) / 10.0; }

constexpr std::array<std::string_view, 10> kReportGenTemplates = {
    "Please provide the report for the following ECG.",
    "Give me the report of this ECG.",
    "I need a report on the following ECG.",
    "Could you send me the ECG report?",
    "Provide me with the report of this ECG.",
    "Please generate a report for the ECG below.",
    "I’d like to receive the report for this ECG.",
    "Can you share the report of the following ECG?",
    "Give me a detailed report on this ECG.",
    "May I have the official report for the ECG provided?",
};

constexpr std::array<std::string_view, 20> kLocalizationTemplates = {
    "Can you show me where the {abnormal} occurred on this ECG?",
    "Locate the {abnormal} on this ECG for me, please.",
    "Could you identify where the {abnormal} is on this ECG?",
    "Tell me where to find the {abnormal} on this ECG.",
    "Please locate the specific location of the {abnormal} on this ECG.",
    "Check this ECG and tell me where the {abnormal} appears.",
    "Determine where the {abnormal} is on this electrocardiogram.",
    "Help me find where the {abnormal} shows up on this ECG.",
    "Examine this ECG and point out where the {abnormal} is located.",
    "Assess this ECG and specify the location of the {abnormal}.",
    "Where does the {abnormal} appear in this ECG?",
    "On this ECG, where can I see the {abnormal}?",
    "Can you locate the {abnormal} on this ECG?",
    "Where is the {abnormal} located in this ECG?",
    "Locate the {abnormal} on this ECG for me, please.",
    "Could you point out where the {abnormal} is on this ECG?",
    "Where should I look to find the {abnormal} on this ECG?",
    "I need to find the {abnormal} on this ECG; where should I look?",
    "Help me locate the {abnormal} on this ECG.",
    "Determine where the {abnormal} is located on this electrocardiogram.",
};

constexpr std::string_view kMultiEcgPrompt =
    R"(Based on the following ECGs, generate 8 different types of complex open-ended questions that require step-by-step thinking, and corresponding step-by-step answers. The following information is provided: the reports of each ECG and acquisition time. Questions should be about the ECG, in the question, you can choose to indicate the collection time of ECG or not. I need you to ask more questions. The more complex and diverse the question, the better. When the question q or answer a involves time, you need to provide the absolute or relative acquisition time of the ECG in the question.

For example, given reports:
[['Sinus tachycardia with PACs', 'Possible inferior infarct - age undetermined', 'Abnormal ECG'], ['Sinus arrhythmia'], ['Sinus rhythm', 'Probable left ventricular hypertrophy']]
and acquisition time
['2148-11-12', '2149-06-06', '2149-12-24'],
[0, 205, 406] days,
generate the following questions:

# ECG acquisition times are not provided, but the ECGs are presented in sequential order.

q: Provide a report for each electrocardiogram

a: ECG1: Sinus tachycardia with PACs, possible inferior infarct - age undetermined, abnormal ECG. ECG2: Sinus arrhythmia. ECG3: Sinus rhythm, probable left ventricular hypertrophy.

q: What can be found by combining these ECGs

a: Combining these ECGs shows evolving cardiac patterns: initial tachycardia with possible infarct, followed by arrhythmia, then normalized rhythm with signs of left ventricular hypertrophy.

q: What changes occur in the ECGs

a: The ECGs show a shift from sinus tachycardia with PACs and possible infarct to sinus arrhythmia, then to normal sinus rhythm with probable left ventricular hypertrophy.

q: Possible trends in the future

a: Future ECGs may show progression of left ventricular hypertrophy or stabilization if underlying conditions are managed effectively.

# Absolute ECG acquisition times are provided.

q: These electrocardiograms were taken on 2148-11-12, 2149-06-06, and 2149-12-24. Please help me take a look

a: These ECGs from 2148-11-12 to 2149-12-24 show initial abnormalities, transient arrhythmia by mid-2149, and possible left ventricular hypertrophy by end of 2149.

# Relative ECG acquisition times are provided.

q: The first ECG was collected 400 days ago, the second was collected 200 days ago, and the third was collected most recently. What changes have occurred?

a: Over the past 400 days, ECGs show improvement from sinus tachycardia and possible infarct to normal rhythm, with recent signs of left ventricular hypertrophy.

Given reports {reports}, and acquisition time {acquisition_time}, {acquisition_time_relative}, generate 8 different types of complex open-ended questions that require step-by-step thinking, and corresponding step-by-step answers. Format each QA pair in a single line as a JSON dictionary (key "q" for question, and "a" for answer). Do not include any other explanation.)";

}  // namespace

// ------------------------------------------------------------------ enums

std::string_view to_string(Subset s) {
    switch (s) {
        case Subset::ReportGen: return "reportgen";
        case Subset::Localization: return "localization";
        case Subset::LocalizationLong: return "localization-long";
        case Subset::MultiEcg: return "multiecg";
        case Subset::EcgQa: return "ecgqa";
    }
    return "?";
}

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

Subset parse_subset(std::string_view s) {
    for (auto v : {Subset::ReportGen, Subset::Localization, Subset::LocalizationLong, Subset::MultiEcg, Subset::EcgQa})
        if (to_string(v) == s) return v;
    throw DatagenError("unknown subset: " + std::string(s));
}

Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "test") return Split::Test;
    throw DatagenError("unknown split: " + std::string(s));
}

std::string_view to_string(ClipMode m) { return m == ClipMode::Short ? "short" : "long"; }

ClipMode parse_clip_mode(std::string_view s) {
    if (s == "short") return ClipMode::Short;
    if (s == "long") return ClipMode::Long;
    throw DatagenError("unknown clip mode: " + std::string(s));
}

// --------------------------------------------------------------- QaSample

void QaSample::validate() const {
    if (ecg_refs.empty()) throw DatagenError(id + ": ecg_refs is empty");
    if (subset == Subset::MultiEcg && (ecg_refs.size() < 2 || ecg_refs.size() > 6))
        throw DatagenError(id + ": multi-ECG samples need 2 to 6 ECGs");
    if (subset == Subset::Localization || subset == Subset::LocalizationLong) {
        const auto parsed = spans::parse(answer);
        if (parsed.is_failure()) throw DatagenError(id + ": localization answer does not parse: " + answer);
        const auto& r = ecg_refs.front();
        if (r.start && r.end) {
            const double len = *r.end - *r.start;
            for (const auto& s : parsed.spans)
                if (s.start < 0.0 || s.end > len + 1e-9) throw DatagenError(id + ": span outside the clip");
        }
    }
}

void to_json(nlohmann::json& j, const QaSample& s) {
    j = nlohmann::json::object();
    j["id"] = s.id;
    j["subset"] = to_string(s.subset);
    j["split"] = to_string(s.split);
    j["source"] = s.source;
    j["question"] = s.question;
    j["answer"] = s.answer;
    auto refs = nlohmann::json::array();
    for (const auto& r : s.ecg_refs) {
        nlohmann::json o{{"record_id", r.record_id}};
        if (r.start) o["start"] = *r.start;
        if (r.end) o["end"] = *r.end;
        refs.push_back(std::move(o));
    }
    j["ecg_refs"] = std::move(refs);
    if (!s.times.empty()) j["times"] = s.times;
    if (!s.relative_days.empty()) j["relative_days"] = s.relative_days;
    if (!s.query_class.empty()) j["query_class"] = s.query_class;
}

void from_json(const nlohmann::json& j, QaSample& s) {
    s.id = j.at("id").get<std::string>();
    s.subset = parse_subset(j.at("subset").get<std::string>());
    s.split = parse_split(j.at("split").get<std::string>());
    s.source = j.value("source", "");
    s.question = j.at("question").get<std::string>();
    s.answer = j.at("answer").get<std::string>();
    s.ecg_refs.clear();
    for (const auto& r : j.at("ecg_refs")) {
        EcgRef ref{r.at("record_id").get<std::string>(), std::nullopt, std::nullopt};
        if (r.contains("start")) ref.start = r.at("start").get<double>();
        if (r.contains("end")) ref.end = r.at("end").get<double>();
        s.ecg_refs.push_back(std::move(ref));
    }
    s.times = j.value("times", std::vector<std::string>{});
    s.relative_days = j.value("relative_days", std::vector<int>{});
    s.query_class = j.value("query_class", "");
}

std::string serialize_dataset(std::span<const QaSample> samples) {
    std::string out = nlohmann::json{{"schema", kDatasetSchema}, {"version", kDatasetVersion}}.dump();
    out += '\n';
    for (const auto& s : samples) {
        out += nlohmann::json(s).dump();
        out += '\n';
    }
    return out;
}

std::vector<QaSample> parse_dataset(std::string_view text) {
    const auto lines = split_lines(text);
    if (lines.empty()) throw DatagenError("empty dataset file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(lines.front());
    } catch (const nlohmann::json::exception&) {
        throw DatagenError("dataset header is not JSON");
    }
    if (header.value("schema", "") != kDatasetSchema) throw DatagenError("not an ecgchat QA dataset");
    if (header.value("version", 0) != kDatasetVersion)
        throw DatagenError("unsupported dataset version " + header.value("version", nlohmann::json()).dump());
    std::vector<QaSample> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(lines[i]).get<QaSample>());
        } catch (const nlohmann::json::exception& e) {
            throw DatagenError("dataset line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return out;
}

void write_dataset(const std::filesystem::path& path, std::span<const QaSample> samples) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DatagenError("cannot write " + path.string());
    f << serialize_dataset(samples);
}

std::vector<QaSample> read_dataset(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DatagenError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_dataset(ss.str());
}

// ----------------------------------------------------------- RecordStore

void RecordStore::add(records::CanonicalRecord rec) {
    const std::string id = rec.record_id;
    records_.insert_or_assign(id, std::move(rec));
}

RecordStore RecordStore::from_dir(const std::filesystem::path& dir, const records::AliasTable& aliases) {
    if (!std::filesystem::is_directory(dir)) throw DatagenError("record directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        const auto ext = e.path().extension();
        if (ext == ".ecgb" || ext == ".hea" || ext == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    RecordStore store;
    for (const auto& f : files)
        store.add(records::canonicalize(records::ingest_record(f, records::format_from_path(f), aliases), aliases));
    return store;
}

const records::CanonicalRecord& RecordStore::get(const std::string& id) const {
    const auto it = records_.find(id);
    if (it == records_.end()) throw DatagenError("unknown record id: " + id);
    return it->second;
}

records::CanonicalRecord RecordStore::resolve(const EcgRef& ref) const {
    const auto& rec = get(ref.record_id);
    if (!ref.start && !ref.end) return rec;
    return records::slice(rec, ref.start.value_or(0.0), ref.end.value_or(rec.duration()));
}

std::vector<std::string> RecordStore::ids() const {
    std::vector<std::string> out;
    for (const auto& [id, r] : records_) out.push_back(id);
    return out;
}

void write_record_dir(const std::filesystem::path& dir, std::span<const records::EcgRecord> recs) {
    std::filesystem::create_directories(dir);
    for (const auto& r : recs) records::write_interchange(r, dir / (r.record_id + ".ecgb"));
}

std::span<const std::string_view> reportgen_templates() { return kReportGenTemplates; }
std::span<const std::string_view> localization_templates() { return kLocalizationTemplates; }
std::string_view multiecg_prompt_template() { return kMultiEcgPrompt; }

// -------------------------------------------------------------- ReportGen

std::string clean_report(std::string_view report) {
    std::string out;
    bool space = false;
    for (char c : trim(report)) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            space = true;
            continue;
        }
        if (space && !out.empty()) out += ' ';
        space = false;
        out += c;
    }
    return out;
}

ReportGenResult build_reportgen(std::span<const ReportedRecord> records, const ReportGenOptions& opts) {
    ReportGenResult res;
    Rng rng(derive_seed(opts.seed, "reportgen"));
    for (const auto& r : records) {
        const std::string report = clean_report(r.report);
        if (report.empty()) {
            ++res.dropped_empty;
            continue;
        }
        if (std::count(report.begin(), report.end(), ' ') + 1 < 3) {
            ++res.dropped_short;
            continue;
        }
        const std::string low = lower(report);
        if (std::any_of(opts.stop_phrases.begin(), opts.stop_phrases.end(),
                        [&](const std::string& p) { return low.find(lower(p)) != std::string::npos; })) {
            ++res.dropped_stop_phrase;
            continue;
        }
        QaSample s;
        s.id = "reportgen-" + r.record_id;
        s.subset = Subset::ReportGen;
        s.question = std::string(kReportGenTemplates[pick(rng, kReportGenTemplates.size())]);
        s.answer = "Report: " + report;
        s.ecg_refs = {{r.record_id, std::nullopt, std::nullopt}};
        s.source = r.record_id;
        res.samples.push_back(std::move(s));
    }
    return res;
}

// ------------------------------------------------------------ ClassTable

ClassTable ClassTable::defaults() {
    ClassTable t;
    t.add_class("PVC", "Premature ventricular contraction", {"PVC", "V", "pvc"});
    t.add_class("LBBB", "Left bundle branch block beat", {"LBBB", "L", "lbbb"});
    t.add_class("RBBB", "Right bundle branch block beat", {"RBBB", "R", "rbbb"});
    for (const char* l : {"N", "NORMAL", "normal", "+", "~", "|", "Q", "/", "f", "A", "a", "J", "S", "E", "j", "e",
                          "F", "x", "!", "\"", "[", "]", "p", "t", "u", "(", ")"})
        t.ignore(l);
    return t;
}

void ClassTable::add_class(const std::string& key, const std::string& name, const std::vector<std::string>& labels) {
    classes_.push_back({key, name});
    label_to_key_[key] = key;
    for (const auto& l : labels) label_to_key_[l] = key;
}

void ClassTable::ignore(const std::string& label) { ignored_.push_back(label); }

std::optional<std::string> ClassTable::classify(const std::string& label) const {
    if (auto it = label_to_key_.find(label); it != label_to_key_.end()) return it->second;
    if (std::find(ignored_.begin(), ignored_.end(), label) != ignored_.end()) return std::nullopt;
    throw DatagenError("annotation label '" + label + "' is not in the class table");
}

const ClassTable::Class& ClassTable::at(const std::string& key) const {
    for (const auto& c : classes_)
        if (c.key == key) return c;
    throw DatagenError("unknown abnormal class: " + key);
}

// ---------------------------------------------------------- Localization

std::map<std::string, std::vector<spans::Span>> abnormal_regions(const records::CanonicalRecord& rec,
                                                                 const LocalizationOptions& opts) {
    std::map<std::string, std::vector<spans::Span>> raw;
    const double dur = rec.duration();
    for (const auto& a : rec.annotations) {
        const auto key = opts.classes.classify(a.label);
        if (!key) continue;
        spans::Span s{a.onset, a.offset};
        if (a.offset <= a.onset) s = {a.onset - opts.beat_before_s, a.onset + opts.beat_after_s};
        s.start = std::max(0.0, s.start);
        s.end = std::min(dur, s.end);
        if (s.end > s.start) raw[*key].push_back(s);
    }
    std::map<std::string, std::vector<spans::Span>> out;
    for (auto& [k, v] : raw) out[k] = spans::merge(std::move(v));
    return out;
}

spans::SpanSet window_answer(const std::vector<spans::Span>& regions, double w0, double length) {
    std::vector<spans::Span> inside;
    for (const auto& r : regions) {
        const double on = std::max(r.start, w0);
        const double off = std::min(r.end, w0 + length);
        if (off <= on) continue;
        const bool clipped = on != r.start || off != r.end;
        if (clipped && off - on < records::kMinClippedAnnotation) continue;
        spans::Span s{round1(on - w0), round1(off - w0)};
        s.start = std::max(0.0, s.start);
        s.end = std::min(round1(length), s.end);
        if (s.end > s.start) inside.push_back(s);
    }
    if (inside.empty()) return spans::SpanSet::not_found();
    return spans::SpanSet::of(std::move(inside));
}

namespace {

Index draw_length_samples(ClipMode mode, Index total, Rng& rng) {
    constexpr Index kShort = 1000;
    if (mode == ClipMode::Short) return kShort;
    const Index hi_tenths = std::min<Index>(600, total / 10);
    const Index tenths = std::uniform_int_distribution<Index>(100, hi_tenths)(rng);
    return tenths * 10;
}

QaSample localization_sample(const records::CanonicalRecord& rec, const ClassTable::Class& cls, ClipMode mode,
                             Index start, Index len, const spans::SpanSet& answer, Rng& rng, std::string id) {
    QaSample s;
    s.id = std::move(id);
    s.subset = mode == ClipMode::Short ? Subset::Localization : Subset::LocalizationLong;
    s.question = replace_all(std::string(kLocalizationTemplates[pick(rng, kLocalizationTemplates.size())]),
                             "{abnormal}", cls.name);
    s.answer = spans::render(answer);
    const double w0 = static_cast<double>(start) / records::kCanonicalFs;
    const double w1 = static_cast<double>(start + len) / records::kCanonicalFs;
    s.ecg_refs = {{rec.record_id, w0, w1}};
    s.source = rec.record_id;
    s.query_class = cls.key;
    return s;
}

}  // namespace

LocalizationResult build_localization(std::span<const records::CanonicalRecord> records,
                                      const LocalizationOptions& opts) {
    const int n_resample = opts.n_resample > 0 ? opts.n_resample : (opts.mode == ClipMode::Short ? 10 : 5);
    const std::string tag(to_string(opts.mode));
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return records[a].record_id < records[b].record_id; });

    LocalizationResult res;
    std::vector<std::size_t> eligible;
    std::map<std::size_t, std::map<std::string, std::vector<spans::Span>>> regions_of;

    for (std::size_t idx : order) {
        const auto& rec = records[idx];
        if (rec.samples() < 1000) {
            ++res.skipped_short_records;
            continue;
        }
        eligible.push_back(idx);
        const auto regions = abnormal_regions(rec, opts);
        regions_of[idx] = regions;
        Rng rng(derive_seed(opts.seed, "localization/" + tag + "/" + rec.record_id));
        for (const auto& [key, list] : regions) {
            for (std::size_t r = 0; r < list.size(); ++r) {
                const double mid = 0.5 * (list[r].start + list[r].end) * records::kCanonicalFs;
                for (int k = 0; k < n_resample; ++k) {
                    const Index len = draw_length_samples(opts.mode, rec.samples(), rng);
                    const Index lo = std::max<Index>(0, static_cast<Index>(std::ceil(mid - static_cast<double>(len))));
                    const Index hi = std::min<Index>(rec.samples() - len, static_cast<Index>(std::floor(mid)));
                    const Index start = std::uniform_int_distribution<Index>(lo, hi)(rng);
                    const double w0 = static_cast<double>(start) / records::kCanonicalFs;
                    const double wl = static_cast<double>(len) / records::kCanonicalFs;
                    const std::string base = "localization-" + tag + "-" + rec.record_id + "-" + key + "-" +
                                             std::to_string(r) + "-" + std::to_string(k);
                    for (const auto& cls : opts.classes.classes()) {
                        const auto it = regions.find(cls.key);
                        if (it == regions.end()) continue;
                        const auto answer = window_answer(it->second, w0, wl);
                        if (answer.is_not_found()) continue;
                        const std::string id = cls.key == key ? base : base + "-" + cls.key;
                        res.samples.push_back(localization_sample(rec, cls, opts.mode, start, len, answer, rng, id));
                        ++res.positives;
                    }
                }
            }
        }
    }

    if (opts.negatives && !eligible.empty() && !opts.classes.classes().empty()) {
        const int wanted = static_cast<int>(std::llround(res.positives * opts.negatives_per_positive));
        Rng rng(derive_seed(opts.seed, "localization/" + tag + "/negatives"));
        std::vector<std::size_t> pool = eligible;
        std::shuffle(pool.begin(), pool.end(), rng);
        const auto& classes = opts.classes.classes();
        for (int n = 0; n < wanted; ++n) {
            const std::size_t idx = pool[static_cast<std::size_t>(n) % pool.size()];
            const auto& rec = records[idx];
            bool placed = false;
            for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
                const auto& cls = classes[pick(rng, classes.size())];
                const Index len = draw_length_samples(opts.mode, rec.samples(), rng);
                const Index start = std::uniform_int_distribution<Index>(0, rec.samples() - len)(rng);
                const double w0 = static_cast<double>(start) / records::kCanonicalFs;
                const double w1 = static_cast<double>(start + len) / records::kCanonicalFs;
                bool clear = true;
                if (auto it = regions_of[idx].find(cls.key); it != regions_of[idx].end())
                    for (const auto& s : it->second)
                        if (s.end >= w0 && s.start <= w1) clear = false;
                if (!clear) continue;
                res.samples.push_back(localization_sample(rec, cls, opts.mode, start, len, spans::SpanSet::not_found(),
                                                          rng,
                                                          "localization-" + tag + "-" + rec.record_id + "-neg" +
                                                              std::to_string(n) + "-" + cls.key));
                ++res.negatives;
                placed = true;
            }
            if (!placed) ++res.skipped_negative_attempts;
        }
    }
    return res;
}

// ------------------------------------------------------------------ split

void split_by_record(std::vector<QaSample>& samples, double test_fraction, std::uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction > 1.0) throw DatagenError("test fraction must lie in [0, 1]");
    std::vector<std::string> ids;
    for (const auto& s : samples) {
        if (s.source.empty()) throw DatagenError(s.id + ": sample has no source recording id");
        ids.push_back(s.source);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    Rng rng(derive_seed(seed, "split"));
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
    std::set<std::string> test(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
    for (auto& s : samples) s.split = test.contains(s.source) ? Split::Test : Split::Train;
}

// -------------------------------------------------------------- Multi-ECG

std::vector<QaPair> parse_qa_lines(std::string_view reply, int* malformed) {
    std::vector<QaPair> out;
    int bad = 0;
    for (auto raw : split_lines(reply)) {
        const auto line = trim(raw);
        if (line.empty() || line.starts_with("```")) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object() || !j.contains("q") || !j.contains("a") || !j["q"].is_string() || !j["a"].is_string())
                throw DatagenError("missing q/a");
            QaPair p{j["q"].get<std::string>(), j["a"].get<std::string>()};
            if (trim(p.q).empty() || trim(p.a).empty()) throw DatagenError("empty q/a");
            out.push_back(std::move(p));
        } catch (const std::exception&) {
            ++bad;
        }
    }
    if (malformed) *malformed = bad;
    return out;
}

std::vector<int> relative_days(std::span<const std::string> stamps) {
    using namespace std::chrono;
    std::vector<sys_days> days;
    for (const auto& s : stamps) {
        int y = 0;
        unsigned m = 0;
        unsigned d = 0;
        char dash1 = 0;
        char dash2 = 0;
        std::istringstream ss(s.substr(0, 10));
        ss >> y >> dash1 >> m >> dash2 >> d;
        const year_month_day ymd{year{y}, month{m}, day{d}};
        if (!ss || dash1 != '-' || dash2 != '-' || !ymd.ok()) throw DatagenError("bad acquisition date: " + s);
        days.push_back(sys_days{ymd});
    }
    std::vector<int> out;
    for (const auto& d : days) out.push_back(static_cast<int>((d - days.front()).count()));
    return out;
}

namespace {

std::string py_quote(std::string_view s) { return "'" + replace_all(std::string(s), "'", "\\'") + "'"; }

std::string py_list(const std::vector<std::string>& items) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
    return out + "]";
}

}  // namespace

std::string fill_multiecg_prompt(const PatientGroup& group, std::string_view tmpl) {
    std::vector<std::string> reports;
    std::vector<std::string> dates;
    std::vector<std::string> stamps;
    for (const auto& e : group.ecgs) {
        std::vector<std::string> statements;
        std::string_view rest = e.report;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto piece = trim(rest.substr(0, comma));
            if (!piece.empty()) statements.push_back(py_quote(piece));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        reports.push_back(py_list(statements));
        dates.push_back(py_quote(e.acquired_at.substr(0, 10)));
        stamps.push_back(e.acquired_at);
    }
    std::vector<std::string> rel;
    for (int d : relative_days(stamps)) rel.push_back(std::to_string(d));
    std::string out(tmpl);
    out = replace_all(out, "{reports}", py_list(reports));
    out = replace_all(out, "{acquisition_time_relative}", py_list(rel) + " days");
    out = replace_all(out, "{acquisition_time}", py_list(dates));
    return out;
}

MultiEcgResult build_multiecg(std::span<const PatientGroup> groups, llm::Client& client, const MultiEcgOptions& opts) {
    MultiEcgResult res;
    std::vector<const PatientGroup*> order;
    for (const auto& g : groups) order.push_back(&g);
    std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->patient_id < b->patient_id; });
    for (const auto* g : order) {
        if (g->ecgs.size() < 2 || g->ecgs.size() > 6)
            throw DatagenError("patient " + g->patient_id + " has " + std::to_string(g->ecgs.size()) +
                               " ECGs; 2 to 6 required");
        llm::CompletionRequest req;
        req.model = opts.model;
        req.temperature = opts.temperature;
        req.seed = derive_seed(opts.seed, "multiecg/" + g->patient_id);
        req.messages = {{"user", fill_multiecg_prompt(*g, opts.prompt_template)}};

        int bad = 0;
        auto pairs = parse_qa_lines(client.complete(req), &bad);
        if (static_cast<int>(pairs.size()) < opts.questions_per_patient) {
            ++res.retried_calls;
            int bad2 = 0;
            auto again = parse_qa_lines(client.complete(req), &bad2);
            if (again.size() > pairs.size()) {
                pairs = std::move(again);
                bad = bad2;
            }
        }
        if (pairs.empty()) throw DatagenError("no parseable QA pairs for patient " + g->patient_id);
        res.malformed_lines += bad;
        if (static_cast<int>(pairs.size()) > opts.questions_per_patient)
            pairs.resize(static_cast<std::size_t>(opts.questions_per_patient));

        std::vector<std::string> dates;
        std::vector<std::string> stamps;
        for (const auto& e : g->ecgs) {
            dates.push_back(e.acquired_at.substr(0, 10));
            stamps.push_back(e.acquired_at);
        }
        const auto rel = relative_days(stamps);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            QaSample s;
            s.id = "multiecg-" + g->patient_id + "-" + std::to_string(i);
            s.subset = Subset::MultiEcg;
            s.question = std::string(trim(pairs[i].q));
            s.answer = std::string(trim(pairs[i].a));
            for (const auto& e : g->ecgs) s.ecg_refs.push_back({e.record_id, std::nullopt, std::nullopt});
            s.times = dates;
            s.relative_days = rel;
            s.source = g->patient_id;
            res.samples.push_back(std::move(s));
        }
    }
    return res;
}

// ----------------------------------------------------------------- ECG-QA

std::vector<EcgQaRow> parse_ecgqa_source(std::string_view text) {
    std::vector<nlohmann::json> rows;
    const auto body = trim(text);
    if (body.starts_with("[")) {
        try {
            for (auto& r : nlohmann::json::parse(body)) rows.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DatagenError(std::string("malformed ECG-QA source: ") + e.what());
        }
    } else {
        std::size_t n = 0;
        for (auto line : split_lines(text)) {
            ++n;
            if (trim(line).empty()) continue;
            try {
                rows.push_back(nlohmann::json::parse(line));
            } catch (const nlohmann::json::exception&) {
                throw DatagenError("malformed ECG-QA row at line " + std::to_string(n));
            }
        }
    }
    std::vector<EcgQaRow> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        auto fail = [&](const std::string& what) {
            return DatagenError("ECG-QA row " + std::to_string(i + 1) + ": " + what);
        };
        if (!r.is_object()) throw fail("not an object");
        if (!r.contains("question") || !r["question"].is_string()) throw fail("missing question");
        if (!r.contains("answer")) throw fail("missing answer");
        EcgQaRow row;
        row.question = r["question"].get<std::string>();
        const auto& a = r["answer"];
        if (a.is_string()) {
            row.answer = a.get<std::string>();
        } else if (a.is_array()) {
            for (std::size_t k = 0; k < a.size(); ++k) {
                if (!a[k].is_string()) throw fail("answer list holds a non-string");
                row.answer += (k ? ", " : "") + a[k].get<std::string>();
            }
        } else {
            throw fail("answer must be a string or a list");
        }
        const auto& ids = r.contains("ecg_id") ? r["ecg_id"] : r.value("ecg_ids", nlohmann::json());
        auto id_text = [&](const nlohmann::json& v) {
            if (v.is_string()) return v.get<std::string>();
            if (v.is_number_integer()) return std::to_string(v.get<long long>());
            throw fail("ecg id must be a string or integer");
        };
        if (ids.is_array()) {
            for (const auto& v : ids) row.ecg_ids.push_back(id_text(v));
        } else if (!ids.is_null()) {
            row.ecg_ids.push_back(id_text(ids));
        }
        if (row.ecg_ids.empty()) throw fail("missing ecg_id");
        if (r.contains("split")) row.split = parse_split(r["split"].get<std::string>());
        out.push_back(std::move(row));
    }
    return out;
}

std::string with_brief_suffix(std::string_view question) {
    std::string q(question);
    if (!q.ends_with(kBriefSuffix)) q += kBriefSuffix;
    return q;
}

std::vector<QaSample> subset_ecgqa(std::span<const EcgQaRow> rows, double fraction, std::uint64_t seed) {
    if (fraction < 0.0 || fraction > 1.0) throw DatagenError("fraction must lie in [0, 1]");
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (rows[i].split == Split::Train) train.push_back(i);
    const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
    Rng rng(derive_seed(seed, "ecgqa"));
    std::shuffle(train.begin(), train.end(), rng);
    std::set<std::size_t> chosen(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(keep));

    std::vector<QaSample> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.split == Split::Train && !chosen.contains(i)) continue;
        QaSample s;
        s.id = "ecgqa-" + std::to_string(i);
        s.subset = Subset::EcgQa;
        s.split = r.split;
        s.question = r.split == Split::Train ? with_brief_suffix(r.question) : r.question;
        s.answer = r.answer;
        for (const auto& id : r.ecg_ids) s.ecg_refs.push_back({id, std::nullopt, std::nullopt});
        s.source = r.ecg_ids.front();
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace ecgchat::datagen

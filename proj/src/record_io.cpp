// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/record_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace ecgchat::records {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw RecordError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_ws(std::string_view line) {
    std::vector<std::string> out;
    std::istringstream ss{std::string(line)};
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

double to_double(std::string_view s, const char* what) {
    s = trim(s);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw RecordError(std::string("malformed ") + what + ": '" + std::string(s) + "'");
    return v;
}

long long to_int(std::string_view s, const char* what) {
    s = trim(s);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw RecordError(std::string("malformed ") + what + ": '" + std::string(s) + "'");
    return v;
}

std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        if (nl == std::string_view::npos) break;
        text.remove_prefix(nl + 1);
    }
    return out;
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
    return v;
}

fs::path sidecar_for(const fs::path& path) {
    fs::path p = path;
    if (p.extension() == ".hea") return p.replace_extension(".ann");
    return fs::path(path.string() + ".ann");
}

void attach_sidecar(EcgRecord& rec, const fs::path& path) {
    const fs::path ann = sidecar_for(path);
    if (fs::exists(ann)) rec.annotations = parse_annotation_sidecar(read_file(ann), rec.fs);
}

EcgRecord read_waveform_db(const fs::path& header_path, const AliasTable& aliases) {
    const std::string header = read_file(header_path);
    EcgRecord rec;
    std::vector<std::pair<double, double>> calib;  // gain, baseline
    long long n_leads = -1;
    long long n_samples = -1;
    for (std::string_view raw : lines_of(header)) {
        std::string_view line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            line.remove_prefix(1);
            line = trim(line);
            if (line.starts_with("acquired_at=")) rec.acquired_at = std::string(line.substr(12));
            continue;
        }
        const auto tok = split_ws(line);
        if (n_leads < 0) {
            if (tok.size() != 4) throw RecordError("malformed header: expected '<id> <leads> <fs> <samples>'");
            rec.record_id = tok[0];
            n_leads = to_int(tok[1], "lead count");
            rec.fs = to_double(tok[2], "sampling rate");
            n_samples = to_int(tok[3], "sample count");
            if (n_leads < 1 || n_samples < 1 || !(rec.fs > 0.0)) throw RecordError("malformed header: non-positive size");
            continue;
        }
        if (tok.size() != 3) throw RecordError("malformed header: expected '<lead> <gain> <baseline>'");
        rec.lead_names.push_back(tok[0]);
        const double gain = to_double(tok[1], "gain");
        if (!(gain > 0.0)) throw RecordError("malformed header: gain must be positive");
        calib.emplace_back(gain, to_double(tok[2], "baseline"));
    }
    if (n_leads < 0) throw RecordError("malformed header: empty");
    if (static_cast<long long>(rec.lead_names.size()) != n_leads)
        throw RecordError("malformed header: declared " + std::to_string(n_leads) + " leads, found " +
                          std::to_string(rec.lead_names.size()));
    for (const auto& name : rec.lead_names)
        if (!aliases.known(name)) throw RecordError("unknown lead name: " + name);

    fs::path dat = header_path;
    dat.replace_extension(".dat");
    const std::string raw = read_file(dat);
    const auto expected = static_cast<std::size_t>(n_leads * n_samples * 2);
    if (raw.size() != expected)
        throw RecordError("signal length mismatch: " + dat.string() + " has " + std::to_string(raw.size()) +
                          " bytes, header implies " + std::to_string(expected));
    rec.signal.resize(n_leads, n_samples);
    for (long long t = 0; t < n_samples; ++t) {
        for (long long l = 0; l < n_leads; ++l) {
            const std::size_t at = static_cast<std::size_t>((t * n_leads + l) * 2);
            const auto lo = static_cast<std::uint16_t>(static_cast<unsigned char>(raw[at]));
            const auto hi = static_cast<std::uint16_t>(static_cast<unsigned char>(raw[at + 1]));
            const auto digital = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
            const auto& [gain, base] = calib[static_cast<std::size_t>(l)];
            rec.signal(l, t) = (static_cast<double>(digital) - base) / gain;
        }
    }
    attach_sidecar(rec, header_path);
    rec.validate(aliases);
    return rec;
}

}  // namespace

RecordFormat parse_format(std::string_view name) {
    if (name == "waveform-db") return RecordFormat::WaveformDb;
    if (name == "columnar-text") return RecordFormat::ColumnarText;
    if (name == "interchange-binary") return RecordFormat::InterchangeBinary;
    throw RecordError("unknown record format: " + std::string(name));
}

std::string_view format_name(RecordFormat f) {
    switch (f) {
        case RecordFormat::WaveformDb: return "waveform-db";
        case RecordFormat::ColumnarText: return "columnar-text";
        case RecordFormat::InterchangeBinary: return "interchange-binary";
    }
    return "?";
}

RecordFormat format_from_path(const fs::path& path) {
    const auto ext = path.extension().string();
    if (ext == ".hea") return RecordFormat::WaveformDb;
    if (ext == ".csv" || ext == ".txt") return RecordFormat::ColumnarText;
    if (ext == ".ecgb") return RecordFormat::InterchangeBinary;
    throw RecordError("cannot infer record format from " + path.string());
}

std::vector<Annotation> parse_annotation_sidecar(std::string_view text, double fs) {
    std::vector<Annotation> out;
    for (std::string_view raw : lines_of(text)) {
        std::string_view line = trim(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = trim(line.substr(0, hash));
        if (line.empty()) continue;
        const auto tok = split_ws(line);
        if (tok.size() == 2) {
            const double t = static_cast<double>(to_int(tok[0], "annotation sample")) / fs;
            out.push_back({t, t, tok[1]});
        } else if (tok.size() == 3) {
            out.push_back({static_cast<double>(to_int(tok[0], "annotation onset")) / fs,
                           static_cast<double>(to_int(tok[1], "annotation offset")) / fs, tok[2]});
        } else {
            throw RecordError("malformed annotation line: '" + std::string(line) + "'");
        }
    }
    return out;
}

std::string format_annotation_sidecar(const std::vector<Annotation>& annotations, double fs) {
    std::ostringstream ss;
    for (const auto& a : annotations) {
        const long long on = std::llround(a.onset * fs);
        const long long off = std::llround(a.offset * fs);
        if (on == off)
            ss << on << ' ' << a.label << '\n';
        else
            ss << on << ' ' << off << ' ' << a.label << '\n';
    }
    return ss.str();
}

void write_waveform_db(const EcgRecord& rec, const fs::path& header_path, double gain) {
    rec.validate();
    std::ofstream hea(header_path);
    if (!hea) throw RecordError("cannot write " + header_path.string());
    hea << rec.record_id << ' ' << rec.leads() << ' ' << rec.fs << ' ' << rec.samples() << '\n';
    for (const auto& name : rec.lead_names) hea << name << ' ' << gain << " 0\n";
    if (rec.acquired_at) hea << "# acquired_at=" << *rec.acquired_at << '\n';

    fs::path dat = header_path;
    dat.replace_extension(".dat");
    std::string raw;
    raw.reserve(static_cast<std::size_t>(rec.signal.size() * 2));
    for (Index t = 0; t < rec.samples(); ++t) {
        for (Index l = 0; l < rec.leads(); ++l) {
            const double d = std::clamp(std::round(rec.signal(l, t) * gain), -32768.0, 32767.0);
            const auto v = static_cast<std::uint16_t>(static_cast<std::int16_t>(d));
            raw.push_back(static_cast<char>(v & 0xFF));
            raw.push_back(static_cast<char>(v >> 8));
        }
    }
    std::ofstream(dat, std::ios::binary).write(raw.data(), static_cast<std::streamsize>(raw.size()));
    fs::path ann = header_path;
    ann.replace_extension(".ann");
    if (!rec.annotations.empty()) std::ofstream(ann) << format_annotation_sidecar(rec.annotations, rec.fs);
}

EcgRecord parse_columnar_text(std::string_view text, std::string_view annotation_sidecar, const AliasTable& aliases) {
    EcgRecord rec;
    bool have_header = false;
    int time_col = -1;
    std::vector<std::vector<double>> cols;
    for (std::string_view raw : lines_of(text)) {
        std::string_view line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            line = trim(line.substr(1));
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) continue;
            const auto key = trim(line.substr(0, eq));
            const auto val = trim(line.substr(eq + 1));
            if (key == "fs") rec.fs = to_double(val, "sampling rate");
            else if (key == "record_id") rec.record_id = std::string(val);
            else if (key == "acquired_at") rec.acquired_at = std::string(val);
            continue;
        }
        std::vector<std::string_view> fields;
        std::string_view rest = line;
        while (true) {
            const auto comma = rest.find(',');
            fields.push_back(trim(rest.substr(0, comma)));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (!have_header) {
            for (std::size_t i = 0; i < fields.size(); ++i) {
                if (fields[i] == "time") {
                    time_col = static_cast<int>(i);
                    continue;
                }
                if (!aliases.known(fields[i])) throw RecordError("unknown lead name: " + std::string(fields[i]));
                rec.lead_names.emplace_back(fields[i]);
            }
            cols.resize(rec.lead_names.size());
            have_header = true;
            continue;
        }
        if (fields.size() != rec.lead_names.size() + (time_col >= 0 ? 1 : 0))
            throw RecordError("signal length mismatch: row has " + std::to_string(fields.size()) + " fields");
        std::size_t c = 0;
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (static_cast<int>(i) == time_col) continue;
            cols[c++].push_back(to_double(fields[i], "sample"));
        }
    }
    if (!have_header) throw RecordError("malformed header: no lead row");
    if (!(rec.fs > 0.0)) throw RecordError("malformed header: missing fs");
    if (cols.empty() || cols.front().empty()) throw RecordError("record has no samples");
    rec.signal.resize(static_cast<Index>(cols.size()), static_cast<Index>(cols.front().size()));
    for (std::size_t l = 0; l < cols.size(); ++l)
        for (std::size_t t = 0; t < cols[l].size(); ++t) rec.signal(static_cast<Index>(l), static_cast<Index>(t)) = cols[l][t];
    if (!annotation_sidecar.empty()) rec.annotations = parse_annotation_sidecar(annotation_sidecar, rec.fs);
    rec.validate(aliases);
    return rec;
}

void write_columnar_text(const EcgRecord& rec, const fs::path& path) {
    rec.validate();
    std::ofstream out(path);
    if (!out) throw RecordError("cannot write " + path.string());
    out << "# record_id=" << rec.record_id << "\n# fs=" << rec.fs << '\n';
    if (rec.acquired_at) out << "# acquired_at=" << *rec.acquired_at << '\n';
    for (std::size_t i = 0; i < rec.lead_names.size(); ++i) out << (i ? "," : "") << rec.lead_names[i];
    out << '\n';
    out.precision(std::numeric_limits<double>::max_digits10);
    for (Index t = 0; t < rec.samples(); ++t) {
        for (Index l = 0; l < rec.leads(); ++l) out << (l ? "," : "") << rec.signal(l, t);
        out << '\n';
    }
    if (!rec.annotations.empty())
        std::ofstream(path.string() + ".ann") << format_annotation_sidecar(rec.annotations, rec.fs);
}

std::string encode_interchange(const EcgRecord& rec) {
    rec.validate();
    json header = {{"record_id", rec.record_id},
                   {"fs", rec.fs},
                   {"lead_names", rec.lead_names},
                   {"samples", rec.samples()},
                   {"annotations", json::array()}};
    if (rec.acquired_at) header["acquired_at"] = *rec.acquired_at;
    for (const auto& a : rec.annotations)
        header["annotations"].push_back({{"onset", a.onset}, {"offset", a.offset}, {"label", a.label}});
    const std::string h = header.dump();
    std::string out = "ECGB";
    put_u32(out, kInterchangeVersion);
    put_u32(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    for (Index l = 0; l < rec.leads(); ++l) {
        for (Index t = 0; t < rec.samples(); ++t) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(rec.signal(l, t)));
            put_u32(out, bits);
        }
    }
    return out;
}

EcgRecord decode_interchange(std::string_view bytes, const AliasTable& aliases) {
    if (bytes.size() < 12 || bytes.substr(0, 4) != "ECGB") throw RecordError("malformed header: bad magic");
    const auto version = get_u32(bytes, 4);
    if (version != kInterchangeVersion) throw RecordError("unsupported interchange version " + std::to_string(version));
    const auto hlen = get_u32(bytes, 8);
    if (bytes.size() < 12 + static_cast<std::size_t>(hlen)) throw RecordError("malformed header: truncated");
    json header;
    try {
        header = json::parse(bytes.substr(12, hlen));
    } catch (const json::exception& e) {
        throw RecordError(std::string("malformed header: ") + e.what());
    }
    EcgRecord rec;
    try {
        rec.record_id = header.at("record_id").get<std::string>();
        rec.fs = header.at("fs").get<double>();
        rec.lead_names = header.at("lead_names").get<std::vector<std::string>>();
        const auto samples = header.at("samples").get<long long>();
        if (header.contains("acquired_at")) rec.acquired_at = header["acquired_at"].get<std::string>();
        for (const auto& a : header.value("annotations", json::array()))
            rec.annotations.push_back({a.at("onset").get<double>(), a.at("offset").get<double>(), a.at("label").get<std::string>()});
        const auto leads = static_cast<long long>(rec.lead_names.size());
        if (leads < 1 || samples < 1) throw RecordError("malformed header: empty record");
        const std::size_t body = 12 + hlen;
        if (bytes.size() - body != static_cast<std::size_t>(leads * samples * 4))
            throw RecordError("signal length mismatch: body has " + std::to_string(bytes.size() - body) + " bytes");
        rec.signal.resize(leads, samples);
        for (long long l = 0; l < leads; ++l)
            for (long long t = 0; t < samples; ++t)
                rec.signal(l, t) = std::bit_cast<float>(get_u32(bytes, body + static_cast<std::size_t>((l * samples + t) * 4)));
    } catch (const json::exception& e) {
        throw RecordError(std::string("malformed header: ") + e.what());
    }
    rec.validate(aliases);
    return rec;
}

void write_interchange(const EcgRecord& rec, const fs::path& path) {
    const std::string bytes = encode_interchange(rec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RecordError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

EcgRecord ingest_record(const fs::path& path, RecordFormat format, const AliasTable& aliases) {
    if (!fs::exists(path)) throw RecordError("no such file: " + path.string());
    switch (format) {
        case RecordFormat::WaveformDb: return read_waveform_db(path, aliases);
        case RecordFormat::ColumnarText: {
            const fs::path ann = sidecar_for(path);
            const std::string sidecar = fs::exists(ann) ? read_file(ann) : std::string();
            return parse_columnar_text(read_file(path), sidecar, aliases);
        }
        case RecordFormat::InterchangeBinary: return decode_interchange(read_file(path), aliases);
    }
    throw RecordError("unhandled format");
}

}  // namespace ecgchat::records

// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Record ingestion and export. Byte layouts are described in docs/formats.md.

#pragma once

#include "ecgchat/records.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace ecgchat::records {

enum class RecordFormat { WaveformDb, ColumnarText, InterchangeBinary };

RecordFormat parse_format(std::string_view name);
std::string_view format_name(RecordFormat f);
/// Guess from the file extension (.hea, .csv/.txt, .ecgb).
RecordFormat format_from_path(const std::filesystem::path& path);

/// Loads a record, attaching annotations from a sidecar when one exists.
/// Throws RecordError on malformed input, length mismatches and unknown leads.
EcgRecord ingest_record(const std::filesystem::path& path, RecordFormat format,
                        const AliasTable& aliases = AliasTable::defaults());

// waveform-db: <base>.hea text header, <base>.dat int16 LE interleaved samples,
// optional <base>.ann annotation sidecar.
void write_waveform_db(const EcgRecord& rec, const std::filesystem::path& header_path, double gain = 200.0);

// columnar-text: "# key=value" preamble, a header row of lead names, one row
// per sample; optional "<path>.ann" sidecar.
void write_columnar_text(const EcgRecord& rec, const std::filesystem::path& path);
EcgRecord parse_columnar_text(std::string_view text, std::string_view annotation_sidecar = {},
                              const AliasTable& aliases = AliasTable::defaults());

// interchange-binary: magic, version, JSON header, float32 LE samples.
std::string encode_interchange(const EcgRecord& rec);
EcgRecord decode_interchange(std::string_view bytes, const AliasTable& aliases = AliasTable::defaults());
void write_interchange(const EcgRecord& rec, const std::filesystem::path& path);

/// Sidecar lines are "<onset_sample> <offset_sample> <label>" or
/// "<sample> <label>" (a point mark); '#' starts a comment.
std::vector<Annotation> parse_annotation_sidecar(std::string_view text, double fs);
std::string format_annotation_sidecar(const std::vector<Annotation>& annotations, double fs);

inline constexpr std::uint32_t kInterchangeVersion = 1;

}  // namespace ecgchat::records

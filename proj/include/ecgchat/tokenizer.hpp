// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nlohmann/json_fwd.hpp>

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ecgchat::fusion {

/// Word-level tokenizer with byte fallback.
///
/// Text is split into pieces: a letter run, a single digit, or a single other
/// byte, each optionally carrying one leading space. Pieces found in the
/// learned word table become one token; everything else falls back to
/// single-byte tokens, so decode(encode(s)) == s for any valid UTF-8 string.
/// decode replaces ill-formed byte sequences with U+FFFD.
/// Digits are always single tokens, which keeps numbers compositional.
///
/// Reserved literals (<pad>, <user>, <ecg>, ...) are recognized verbatim in
/// input text. <ECG_start> and <ECG_end> are appended after the base
/// vocabulary; they never appear as LM output classes.
class Tokenizer {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kBos = 2;
    static constexpr int kEos = 3;
    static constexpr int kUser = 4;
    static constexpr int kAssistant = 5;
    static constexpr int kEcgPlaceholder = 6;
    static constexpr std::string_view kEcgPlaceholderText = "<ecg>";
    static constexpr std::string_view kEcgStartText = "<ECG_start>";
    static constexpr std::string_view kEcgEndText = "<ECG_end>";

    Tokenizer();

    /// Learns the word table from a corpus; words seen at least min_count
    /// times are kept, most frequent first, up to max_words.
    static Tokenizer train(std::span<const std::string> corpus, int min_count = 1, int max_words = 4000);

    std::vector<int> encode(std::string_view text) const;
    std::string decode(std::span<const int> ids) const;
    std::string token_text(int id) const;

    /// LM vocabulary (embedding rows and output classes).
    int base_size() const { return static_cast<int>(pieces_.size()); }
    /// base_size() plus the two ECG delimiters.
    int size() const { return base_size() + 2; }
    int ecg_start() const { return base_size(); }
    int ecg_end() const { return base_size() + 1; }
    bool is_reserved(int id) const { return id < kReservedCount || id >= base_size(); }

    nlohmann::json to_json() const;
    static Tokenizer from_json(const nlohmann::json& j);

private:
    static constexpr int kReservedCount = 7;
    void add_piece(const std::string& piece);
    void append_piece_tokens(std::string_view piece, std::vector<int>& out) const;

    std::vector<std::string> pieces_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace ecgchat::fusion

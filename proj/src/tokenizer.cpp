// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/tokenizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <stdexcept>

namespace ecgchat::fusion {

namespace {

constexpr std::array<std::string_view, 7> kReservedText = {"<pad>", "<unk>", "<bos>", "<eos>",
                                                          "<user>", "<assistant>", "<ecg>"};

bool is_alpha(unsigned char c) { return std::isalpha(c) != 0 && c < 128; }

/// Length of a reserved literal starting at text[i], or 0.
std::size_t literal_at(std::string_view text, std::size_t i, int& id, int ecg_start, int ecg_end) {
    if (text[i] != '<') return 0;
    for (std::size_t k = 0; k < kReservedText.size(); ++k) {
        if (text.substr(i).starts_with(kReservedText[k])) {
            id = static_cast<int>(k);
            return kReservedText[k].size();
        }
    }
    if (text.substr(i).starts_with(Tokenizer::kEcgStartText)) {
        id = ecg_start;
        return Tokenizer::kEcgStartText.size();
    }
    if (text.substr(i).starts_with(Tokenizer::kEcgEndText)) {
        id = ecg_end;
        return Tokenizer::kEcgEndText.size();
    }
    return 0;
}

/// Splits text into pieces, calling emit(piece) for ordinary pieces and
/// emit_id(id) for reserved literals.
template <typename EmitPiece, typename EmitId>
void pretokenize(std::string_view text, int ecg_start, int ecg_end, EmitPiece emit, EmitId emit_id) {
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        int id = -1;
        if (const auto len = literal_at(text, i, id, ecg_start, ecg_end)) {
            emit_id(id);
            i += len;
            continue;
        }
        std::size_t start = i;
        if (text[i] == ' ' && i + 1 < n && text[i + 1] != ' ' && text[i + 1] != '\n' && text[i + 1] != '\t') {
            int dummy = -1;
            if (literal_at(text, i + 1, dummy, ecg_start, ecg_end) == 0) ++i;
        }
        if (i < n && is_alpha(static_cast<unsigned char>(text[i]))) {
            while (i < n && is_alpha(static_cast<unsigned char>(text[i]))) ++i;
        } else {
            ++i;
        }
        emit(text.substr(start, i - start));
    }
}

}  // namespace

Tokenizer::Tokenizer() {
    for (auto lit : kReservedText) add_piece(std::string(lit));
    for (int b = 0; b < 256; ++b) add_piece(std::string(1, static_cast<char>(b)));
    for (int c = 33; c < 127; ++c) add_piece(std::string(" ") + static_cast<char>(c));
}

void Tokenizer::add_piece(const std::string& piece) {
    if (index_.contains(piece)) return;
    index_.emplace(piece, static_cast<int>(pieces_.size()));
    pieces_.push_back(piece);
}

Tokenizer Tokenizer::train(std::span<const std::string> corpus, int min_count, int max_words) {
    Tokenizer tok;
    std::map<std::string, int> counts;
    for (const auto& text : corpus) {
        pretokenize(
            text, -1, -1,
            [&](std::string_view piece) {
                const std::string_view core = piece.front() == ' ' ? piece.substr(1) : piece;
                if (core.size() > 1 && is_alpha(static_cast<unsigned char>(core.front())))
                    ++counts[std::string(piece)];
            },
            [](int) {});
    }
    std::vector<std::pair<std::string, int>> ranked(counts.begin(), counts.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    int added = 0;
    for (const auto& [piece, count] : ranked) {
        if (count < min_count || added >= max_words) break;
        tok.add_piece(piece);
        ++added;
    }
    return tok;
}

void Tokenizer::append_piece_tokens(std::string_view piece, std::vector<int>& out) const {
    if (auto it = index_.find(std::string(piece)); it != index_.end()) {
        out.push_back(it->second);
        return;
    }
    std::size_t i = 0;
    if (piece.size() > 1 && piece.front() == ' ') {
        if (auto it = index_.find(std::string(piece.substr(0, 2))); it != index_.end()) {
            out.push_back(it->second);
            i = 2;
        }
    }
    for (; i < piece.size(); ++i) out.push_back(index_.at(std::string(1, piece[i])));
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
    std::vector<int> out;
    pretokenize(
        text, ecg_start(), ecg_end(), [&](std::string_view piece) { append_piece_tokens(piece, out); },
        [&](int id) { out.push_back(id); });
    return out;
}

std::string Tokenizer::token_text(int id) const {
    if (id >= 0 && id < base_size()) return pieces_[static_cast<std::size_t>(id)];
    if (id == ecg_start()) return std::string(kEcgStartText);
    if (id == ecg_end()) return std::string(kEcgEndText);
    throw std::out_of_range("token id out of range: " + std::to_string(id));
}

namespace {

// Length of the well-formed UTF-8 sequence starting at s[i], or 0.
std::size_t utf8_sequence(const std::string& s, std::size_t i) {
    const auto b = static_cast<unsigned char>(s[i]);
    std::size_t n = 0;
    unsigned lo = 0x80;
    unsigned hi = 0xbf;
    if (b < 0x80) return 1;
    if (b >= 0xc2 && b <= 0xdf) n = 2;
    else if (b >= 0xe0 && b <= 0xef) {
        n = 3;
        if (b == 0xe0) lo = 0xa0;
        if (b == 0xed) hi = 0x9f;
    } else if (b >= 0xf0 && b <= 0xf4) {
        n = 4;
        if (b == 0xf0) lo = 0x90;
        if (b == 0xf4) hi = 0x8f;
    } else {
        return 0;
    }
    if (i + n > s.size()) return 0;
    for (std::size_t k = 1; k < n; ++k) {
        const auto c = static_cast<unsigned char>(s[i + k]);
        if (c < (k == 1 ? lo : 0x80) || c > (k == 1 ? hi : 0xbf)) return 0;
    }
    return n;
}

}  // namespace

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string raw;
    for (int id : ids) raw += token_text(id);
    // Stray fallback bytes become U+FFFD so the text is always valid UTF-8.
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size();) {
        const std::size_t n = utf8_sequence(raw, i);
        if (n == 0) {
            out += "\xef\xbf\xbd";
            ++i;
        } else {
            out.append(raw, i, n);
            i += n;
        }
    }
    return out;
}

nlohmann::json Tokenizer::to_json() const {
    const std::size_t builtin = kReservedText.size() + 256 + 94;
    std::vector<std::string> words(pieces_.begin() + static_cast<std::ptrdiff_t>(builtin), pieces_.end());
    return {{"kind", "word-byte-fallback"}, {"version", 1}, {"words", words}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "word-byte-fallback") throw std::invalid_argument("unsupported tokenizer kind");
    Tokenizer tok;
    for (const auto& w : j.at("words")) tok.add_piece(w.get<std::string>());
    return tok;
}

}  // namespace ecgchat::fusion

// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/spans.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace ecgchat::spans {

std::vector<Span> merge(std::vector<Span> spans) {
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) {
        return a.start < b.start || (a.start == b.start && a.end < b.end);
    });
    std::vector<Span> out;
    for (const auto& s : spans) {
        if (!out.empty() && s.start < out.back().end)
            out.back().end = std::max(out.back().end, s.end);
        else
            out.push_back(s);
    }
    return out;
}

SpanSet SpanSet::of(std::vector<Span> s) { return {SpanStatus::Spans, merge(std::move(s))}; }

double SpanSet::total_length() const {
    double t = 0.0;
    for (const auto& s : spans) t += s.length();
    return t;
}

std::string render(const SpanSet& s) {
    if (s.is_not_found()) return std::string(kNotFound);
    if (s.is_failure()) throw std::invalid_argument("cannot render a parse failure");
    if (s.spans.empty()) throw std::invalid_argument("cannot render an empty span set");
    std::string out(kDurationPrefix);
    char buf[64];
    for (std::size_t i = 0; i < s.spans.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s%.1fs-%.1fs", i ? ", " : "", s.spans[i].start, s.spans[i].end);
        out += buf;
    }
    return out;
}

namespace {

class Cursor {
public:
    explicit Cursor(std::string_view s) : s_(s) {}

    void skip_ws() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    }
    bool eat(char c) {
        skip_ws();
        if (i_ < s_.size() && std::tolower(static_cast<unsigned char>(s_[i_])) == std::tolower(static_cast<unsigned char>(c))) {
            ++i_;
            return true;
        }
        return false;
    }
    bool eat_word(std::string_view w) {
        skip_ws();
        if (s_.size() - i_ < w.size()) return false;
        for (std::size_t k = 0; k < w.size(); ++k)
            if (std::tolower(static_cast<unsigned char>(s_[i_ + k])) != std::tolower(static_cast<unsigned char>(w[k])))
                return false;
        i_ += w.size();
        return true;
    }
    bool number(double& out) {
        skip_ws();
        std::size_t j = i_;
        while (j < s_.size() && std::isdigit(static_cast<unsigned char>(s_[j]))) ++j;
        if (j == i_) return false;
        if (j < s_.size() && s_[j] == '.') {
            ++j;
            const std::size_t frac = j;
            while (j < s_.size() && std::isdigit(static_cast<unsigned char>(s_[j]))) ++j;
            if (j == frac) return false;
        }
        auto [ptr, ec] = std::from_chars(s_.data() + i_, s_.data() + j, out);
        if (ec != std::errc() || ptr != s_.data() + j) return false;
        i_ = j;
        return true;
    }
    bool done() {
        skip_ws();
        return i_ == s_.size();
    }

private:
    std::string_view s_;
    std::size_t i_ = 0;
};

}  // namespace

SpanSet parse(std::string_view text) {
    {
        Cursor c(text);
        if (c.eat_word("not") && c.eat_word("found")) {
            c.eat('.');
            if (c.done()) return SpanSet::not_found();
        }
    }
    Cursor c(text);
    if (!c.eat_word("duration") || !c.eat(':')) return SpanSet::failure();
    std::vector<Span> out;
    do {
        Span s;
        if (!c.number(s.start) || !c.eat('s') || !c.eat('-') || !c.number(s.end) || !c.eat('s')) return SpanSet::failure();
        if (!(s.end > s.start)) return SpanSet::failure();
        out.push_back(s);
    } while (c.eat(','));
    c.eat('.');
    if (!c.done()) return SpanSet::failure();
    return SpanSet::of(std::move(out));
}

double temporal_iou(const SpanSet& pred, const SpanSet& truth) {
    if (truth.is_failure()) return 0.0;
    const bool pred_empty = pred.is_not_found() || pred.is_failure() || pred.spans.empty();
    const bool truth_empty = truth.is_not_found() || truth.spans.empty();
    if (pred_empty && truth_empty) return 1.0;
    if (pred_empty || truth_empty) return 0.0;

    const auto a = merge(pred.spans);
    const auto b = merge(truth.spans);
    double inter = 0.0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.size() && j < b.size()) {
        const double lo = std::max(a[i].start, b[j].start);
        const double hi = std::min(a[i].end, b[j].end);
        if (hi > lo) inter += hi - lo;
        if (a[i].end < b[j].end)
            ++i;
        else
            ++j;
    }
    double total = 0.0;
    for (const auto& s : a) total += s.length();
    for (const auto& s : b) total += s.length();
    const double uni = total - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace ecgchat::spans

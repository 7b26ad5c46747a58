// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

// Localization answers: "Duration: 1.9s-3.1s, 6.8s-8.1s" or "Not Found".

#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ecgchat::spans {

struct Span {
    double start = 0.0;
    double end = 0.0;

    double length() const { return end - start; }
    bool operator==(const Span&) const = default;
};

enum class SpanStatus { Spans, NotFound, ParseFailure };

/// Sorted, non-overlapping intervals in seconds; or the Not-Found value; or
/// (only as a parse result) a failure marker.
struct SpanSet {
    SpanStatus status = SpanStatus::Spans;
    std::vector<Span> spans;

    static SpanSet not_found() { return {SpanStatus::NotFound, {}}; }
    static SpanSet failure() { return {SpanStatus::ParseFailure, {}}; }
    static SpanSet of(std::vector<Span> s);  // sorts and merges overlaps

    bool is_not_found() const { return status == SpanStatus::NotFound; }
    bool is_failure() const { return status == SpanStatus::ParseFailure; }
    double total_length() const;

    bool operator==(const SpanSet&) const = default;
};

inline constexpr std::string_view kNotFound = "Not Found";
inline constexpr std::string_view kDurationPrefix = "Duration: ";

/// Canonical rendering: one decimal, "s" suffix, "-" inside, ", " between.
/// Throws std::invalid_argument for a failure marker or an empty span list.
std::string render(const SpanSet& s);

/// Total: never throws. Case-insensitive "Not Found"; whitespace tolerant;
/// overlapping spans merge; anything else yields SpanSet::failure().
SpanSet parse(std::string_view text);

/// Length of intersection over length of union of the merged span sets.
/// Both Not-Found gives 1. Exactly one Not-Found gives 0. A parse failure
/// scores 0 against spans and counts as "nothing located" against Not-Found.
double temporal_iou(const SpanSet& pred, const SpanSet& truth);

/// Sort and merge overlapping intervals.
std::vector<Span> merge(std::vector<Span> spans);

}  // namespace ecgchat::spans

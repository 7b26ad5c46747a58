// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ecgchat/tensor.hpp"

#include <array>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ecgchat::records {

class RecordError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kNumLeads = 12;
inline constexpr double kCanonicalFs = 100.0;
inline constexpr std::array<std::string_view, kNumLeads> kCanonicalLeads = {
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6"};

/// Slot of a canonical lead name, or -1.
int canonical_slot(std::string_view name);

/// Times are seconds from record start.
struct Annotation {
    double onset = 0.0;
    double offset = 0.0;
    std::string label;

    bool operator==(const Annotation&) const = default;
};

/// Maps source lead names onto canonical slots.
///
/// Canonical names map to themselves. Registered auxiliary names either carry
/// an explicit slot or, when registered without one, fall back to slots I and
/// II in file order (then the next free slot). Anything else is unknown.
class AliasTable {
public:
    static AliasTable defaults();

    void add(const std::string& name, std::optional<int> slot);
    bool known(std::string_view name) const;
    /// Slot assignment for one record's lead list. Throws RecordError on
    /// unknown names or when two leads land on the same slot.
    std::vector<int> assign_slots(const std::vector<std::string>& lead_names) const;

private:
    std::map<std::string, std::optional<int>, std::less<>> aliases_;
};

struct EcgRecord {
    std::string record_id;
    double fs = 0.0;
    std::vector<std::string> lead_names;
    Matrix signal;  // leads x samples
    std::vector<Annotation> annotations;
    std::optional<std::string> acquired_at;

    Index leads() const { return signal.rows(); }
    Index samples() const { return signal.cols(); }
    double duration() const { return static_cast<double>(samples()) / fs; }

    /// Throws RecordError when an invariant is violated.
    void validate(const AliasTable& aliases = AliasTable::defaults()) const;
};

/// A record at 100 Hz with every lead in [-1, 1] and the 12 canonical slots
/// materialized. Absent leads are zero rows with lead_mask false.
struct CanonicalRecord {
    std::string record_id;
    Matrix signal;  // 12 x samples
    std::array<bool, kNumLeads> lead_mask{};
    std::vector<int> source_order;  // present slots in original file order
    std::vector<Annotation> annotations;
    std::optional<std::string> acquired_at;

    Index samples() const { return signal.cols(); }
    double duration() const { return static_cast<double>(samples()) / kCanonicalFs; }
    int present_count() const;
    std::vector<std::string> present_leads() const;

    /// Back to a plain record carrying only the present leads, in file order.
    EcgRecord to_record() const;

    bool operator==(const CanonicalRecord& other) const;
};

/// Resample to 100 Hz (linear interpolation), min-max each lead to [-1, 1]
/// (constant leads become zeros) and place leads in canonical slots.
CanonicalRecord canonicalize(const EcgRecord& rec, const AliasTable& aliases = AliasTable::defaults());

/// Sub-window [start, end) in seconds, rounded to whole samples. Annotations
/// are clipped to the window and re-based; clipped pieces under 0.05 s drop.
CanonicalRecord slice(const CanonicalRecord& rec, double start, double end);

/// Zero every lead not named in keep. keep must be a non-empty subset of the
/// present leads.
CanonicalRecord mask_leads(const CanonicalRecord& rec, const std::set<std::string>& keep);

/// Right-pad with zeros to the given sample count (no-op when already long enough).
CanonicalRecord zero_pad(const CanonicalRecord& rec, Index samples);

/// Minimum length of an annotation fragment that survives clipping.
inline constexpr double kMinClippedAnnotation = 0.05;

}  // namespace ecgchat::records

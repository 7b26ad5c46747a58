// Copyright 2026 The ecgchat Authors
// SPDX-License-Identifier: Apache-2.0

#include "ecgchat/records.hpp"

#include <algorithm>
#include <cmath>

namespace ecgchat::records {

int canonical_slot(std::string_view name) {
    for (int i = 0; i < kNumLeads; ++i)
        if (kCanonicalLeads[static_cast<std::size_t>(i)] == name) return i;
    return -1;
}

AliasTable AliasTable::defaults() {
    AliasTable t;
    // Modified limb leads used by ambulatory databases.
    t.add("MLI", 0);
    t.add("MLII", 1);
    t.add("MLIII", 2);
    t.add("ML2", 1);
    // Modified chest leads keep their precordial position.
    for (int v = 1; v <= 6; ++v) t.add("MV" + std::to_string(v), 5 + v);
    // Bipolar and miscellaneous ambulatory leads have no canonical position.
    for (const char* name : {"D3", "CM5", "CC5", "CM2", "CM4", "ECG1", "ECG2", "MLIII'", "ML1"})
        t.add(name, std::nullopt);
    return t;
}

void AliasTable::add(const std::string& name, std::optional<int> slot) {
    if (slot && (*slot < 0 || *slot >= kNumLeads)) throw RecordError("alias slot out of range for " + name);
    aliases_[name] = slot;
}

bool AliasTable::known(std::string_view name) const {
    return canonical_slot(name) >= 0 || aliases_.find(name) != aliases_.end();
}

std::vector<int> AliasTable::assign_slots(const std::vector<std::string>& lead_names) const {
    std::vector<int> slots(lead_names.size(), -1);
    std::array<bool, kNumLeads> used{};
    for (std::size_t i = 0; i < lead_names.size(); ++i) {
        int slot = canonical_slot(lead_names[i]);
        if (slot < 0) {
            auto it = aliases_.find(lead_names[i]);
            if (it == aliases_.end()) throw RecordError("unknown lead name: " + lead_names[i]);
            if (it->second) slot = *it->second;
        }
        if (slot >= 0) {
            if (used[static_cast<std::size_t>(slot)])
                throw RecordError("two leads map to slot " + std::string(kCanonicalLeads[static_cast<std::size_t>(slot)]));
            used[static_cast<std::size_t>(slot)] = true;
            slots[i] = slot;
        }
    }
    // Unplaced auxiliaries fill I, II, then whatever is free.
    for (std::size_t i = 0; i < lead_names.size(); ++i) {
        if (slots[i] >= 0) continue;
        int slot = 0;
        while (slot < kNumLeads && used[static_cast<std::size_t>(slot)]) ++slot;
        if (slot == kNumLeads) throw RecordError("no free canonical slot for " + lead_names[i]);
        used[static_cast<std::size_t>(slot)] = true;
        slots[i] = slot;
    }
    return slots;
}

void EcgRecord::validate(const AliasTable& aliases) const {
    if (signal.rows() < 1) throw RecordError(record_id + ": record has no leads");
    if (signal.cols() < 1) throw RecordError(record_id + ": record has no samples");
    if (!(fs > 0.0)) throw RecordError(record_id + ": sampling rate must be positive");
    if (static_cast<Index>(lead_names.size()) != signal.rows())
        throw RecordError(record_id + ": lead name count does not match signal rows");
    std::set<std::string> seen;
    for (const auto& name : lead_names) {
        if (!aliases.known(name)) throw RecordError(record_id + ": unknown lead name: " + name);
        if (!seen.insert(name).second) throw RecordError(record_id + ": duplicate lead name: " + name);
    }
    const double dur = duration();
    for (const auto& a : annotations) {
        if (a.onset < 0.0 || a.offset < a.onset || a.offset > dur + 1e-9)
            throw RecordError(record_id + ": annotation [" + std::to_string(a.onset) + ", " +
                              std::to_string(a.offset) + "] outside signal of " + std::to_string(dur) + " s");
    }
}

int CanonicalRecord::present_count() const {
    return static_cast<int>(std::count(lead_mask.begin(), lead_mask.end(), true));
}

std::vector<std::string> CanonicalRecord::present_leads() const {
    std::vector<std::string> out;
    for (int slot : source_order)
        if (lead_mask[static_cast<std::size_t>(slot)]) out.emplace_back(kCanonicalLeads[static_cast<std::size_t>(slot)]);
    return out;
}

EcgRecord CanonicalRecord::to_record() const {
    EcgRecord r;
    r.record_id = record_id;
    r.fs = kCanonicalFs;
    r.annotations = annotations;
    r.acquired_at = acquired_at;
    std::vector<int> slots;
    for (int slot : source_order)
        if (lead_mask[static_cast<std::size_t>(slot)]) slots.push_back(slot);
    r.signal.resize(static_cast<Index>(slots.size()), samples());
    for (std::size_t i = 0; i < slots.size(); ++i) {
        r.signal.row(static_cast<Index>(i)) = signal.row(slots[i]);
        r.lead_names.emplace_back(kCanonicalLeads[static_cast<std::size_t>(slots[i])]);
    }
    return r;
}

bool CanonicalRecord::operator==(const CanonicalRecord& other) const {
    return record_id == other.record_id && signal.rows() == other.signal.rows() &&
           signal.cols() == other.signal.cols() && signal == other.signal && lead_mask == other.lead_mask &&
           source_order == other.source_order && annotations == other.annotations &&
           acquired_at == other.acquired_at;
}

namespace {

RowVector resample_linear(const RowVector& x, double fs, Index n_out) {
    const Index n_in = x.size();
    RowVector out(n_out);
    const double step = fs / kCanonicalFs;
    for (Index j = 0; j < n_out; ++j) {
        const double pos = static_cast<double>(j) * step;
        const auto lo = static_cast<Index>(std::floor(pos));
        if (lo >= n_in - 1) {
            out(j) = x(n_in - 1);
        } else {
            const double frac = pos - static_cast<double>(lo);
            out(j) = frac == 0.0 ? x(lo) : x(lo) + frac * (x(lo + 1) - x(lo));
        }
    }
    return out;
}

void normalize_lead(Eigen::Ref<RowVector> x) {
    const double lo = x.minCoeff();
    const double hi = x.maxCoeff();
    if (hi == lo) {
        x.setZero();
        return;
    }
    if (lo == -1.0 && hi == 1.0) return;  // already spans [-1, 1]; the affine map is the identity
    const double span = hi - lo;
    for (Index i = 0; i < x.size(); ++i) x(i) = std::clamp(2.0 * (x(i) - lo) / span - 1.0, -1.0, 1.0);
}

}  // namespace

CanonicalRecord canonicalize(const EcgRecord& rec, const AliasTable& aliases) {
    rec.validate(aliases);
    const std::vector<int> slots = aliases.assign_slots(rec.lead_names);

    Index n_out = rec.fs == kCanonicalFs ? rec.samples()
                                         : static_cast<Index>(std::llround(rec.duration() * kCanonicalFs));
    n_out = std::max<Index>(n_out, 1);

    CanonicalRecord out;
    out.record_id = rec.record_id;
    out.acquired_at = rec.acquired_at;
    out.signal = Matrix::Zero(kNumLeads, n_out);
    out.source_order = slots;
    for (Index l = 0; l < rec.leads(); ++l) {
        RowVector lead = rec.fs == kCanonicalFs ? RowVector(rec.signal.row(l)) : resample_linear(rec.signal.row(l), rec.fs, n_out);
        normalize_lead(lead);
        const int slot = slots[static_cast<std::size_t>(l)];
        out.signal.row(slot) = lead;
        out.lead_mask[static_cast<std::size_t>(slot)] = true;
    }
    const double dur = out.duration();
    for (const auto& a : rec.annotations) {
        Annotation c = a;
        c.offset = std::min(c.offset, dur);
        c.onset = std::min(c.onset, c.offset);
        out.annotations.push_back(std::move(c));
    }
    return out;
}

CanonicalRecord slice(const CanonicalRecord& rec, double start, double end) {
    const double dur = rec.duration();
    if (!(start >= 0.0) || !(end > start) || end > dur + 1e-9)
        throw RecordError("slice window [" + std::to_string(start) + ", " + std::to_string(end) +
                          ") outside record of " + std::to_string(dur) + " s");
    const Index s0 = std::llround(start * kCanonicalFs);
    const Index s1 = std::min<Index>(std::llround(end * kCanonicalFs), rec.samples());
    if (s1 <= s0) throw RecordError("slice window shorter than one sample");

    CanonicalRecord out;
    out.record_id = rec.record_id;
    out.acquired_at = rec.acquired_at;
    out.lead_mask = rec.lead_mask;
    out.source_order = rec.source_order;
    out.signal = rec.signal.middleCols(s0, s1 - s0);
    const double w0 = static_cast<double>(s0) / kCanonicalFs;
    const double w1 = static_cast<double>(s1) / kCanonicalFs;
    for (const auto& a : rec.annotations) {
        if (a.offset < w0 || a.onset > w1) continue;
        const double on = std::max(a.onset, w0);
        const double off = std::min(a.offset, w1);
        const bool clipped = on != a.onset || off != a.offset;
        if (clipped && off - on < kMinClippedAnnotation) continue;
        out.annotations.push_back({on - w0, off - w0, a.label});
    }
    return out;
}

CanonicalRecord mask_leads(const CanonicalRecord& rec, const std::set<std::string>& keep) {
    if (keep.empty()) throw RecordError("mask_leads: at least one lead must be kept");
    std::array<bool, kNumLeads> keep_slot{};
    for (const auto& name : keep) {
        const int slot = canonical_slot(name);
        if (slot < 0 || !rec.lead_mask[static_cast<std::size_t>(slot)])
            throw RecordError("mask_leads: lead " + name + " is not present in " + rec.record_id);
        keep_slot[static_cast<std::size_t>(slot)] = true;
    }
    CanonicalRecord out = rec;
    for (int s = 0; s < kNumLeads; ++s) {
        if (out.lead_mask[static_cast<std::size_t>(s)] && !keep_slot[static_cast<std::size_t>(s)]) {
            out.signal.row(s).setZero();
            out.lead_mask[static_cast<std::size_t>(s)] = false;
        }
    }
    std::erase_if(out.source_order, [&](int s) { return !keep_slot[static_cast<std::size_t>(s)]; });
    return out;
}

CanonicalRecord zero_pad(const CanonicalRecord& rec, Index samples) {
    if (rec.samples() >= samples) return rec;
    CanonicalRecord out = rec;
    out.signal = Matrix::Zero(kNumLeads, samples);
    out.signal.leftCols(rec.samples()) = rec.signal;
    return out;
}

}  // namespace ecgchat::records

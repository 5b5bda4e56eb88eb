#include "respbin/scan.hpp"

#include <set>
#include <sstream>
#include <unordered_set>

namespace respbin {

int ScanProtocol::b_index(double b) const {
    for (std::size_t i = 0; i < b_values.size(); ++i) {
        if (b_values[i] == b) return static_cast<int>(i);
    }
    return -1;
}

void ScanProtocol::validate() const {
    if (slice_count < 1) throw ValidationError("protocol: slice_count must be >= 1");
    if (b_values.empty()) throw ValidationError("protocol: b_values must be non-empty");
    std::set<double> seen;
    for (double b : b_values) {
        if (!(b > 0.0)) throw ValidationError("protocol: b-values must be positive");
        if (!seen.insert(b).second) throw ValidationError("protocol: b-values must be distinct");
    }
    if (averages_per_b.size() != b_values.size())
        throw ValidationError("protocol: averages_per_b must have one entry per b-value");
    for (int a : averages_per_b) {
        if (a < 1) throw ValidationError("protocol: averages must be positive");
    }
    if (n_directions < 1) throw ValidationError("protocol: n_directions must be >= 1");
    if (!(tr_ms > 0.0)) throw ValidationError("protocol: tr_ms must be positive");
    if (rows < 0 || cols < 0) throw ValidationError("protocol: pixel grid must be non-negative");
}

bool Scan::has_pixels() const {
    if (slices.empty()) return false;
    for (const auto& sl : slices) {
        if (!sl.pixels) return false;
    }
    return true;
}

std::vector<std::string> validate_scan(const Scan& scan) {
    std::vector<std::string> violations;
    auto add = [&](const std::string& msg) { violations.push_back(msg); };

    try {
        scan.protocol.validate();
    } catch (const ValidationError& e) {
        add(e.what());
    }

    std::unordered_set<long long> acq_seen;
    for (std::size_t i = 0; i < scan.slices.size(); ++i) {
        const SliceRecord& sl = scan.slices[i];
        std::ostringstream where;
        where << "slice[" << i << "] (acq " << sl.acq_index << "): ";
        if (sl.acq_index < 0) add(where.str() + "acq_index must be non-negative");
        if (!acq_seen.insert(sl.acq_index).second)
            add(where.str() + "duplicate acq_index");
        if (!is_finite(sl.t)) add(where.str() + "non-finite t");
        if (sl.s < 0 || sl.s >= scan.protocol.slice_count)
            add(where.str() + "slice position out of [0, S-1]");
        if (scan.protocol.b_index(sl.b) < 0)
            add(where.str() + "b-value not in protocol set");
        if (sl.pixels) {
            if (sl.pixels->rows != scan.protocol.rows || sl.pixels->cols != scan.protocol.cols)
                add(where.str() + "pixel dimensions do not match protocol");
        }
    }
    return violations;
}

std::string provenance_to_string(const SliceProvenance& p) {
    switch (p.kind) {
        case Provenance::acquired: return "acquired";
        case Provenance::averaged: return "averaged(" + std::to_string(p.count) + ")";
        case Provenance::interpolated: return "interpolated";
        case Provenance::missing: return "missing";
    }
    throw ValidationError("unknown provenance kind");
}

SliceProvenance provenance_from_string(const std::string& text) {
    if (text == "acquired") return {Provenance::acquired, 1};
    if (text == "interpolated") return {Provenance::interpolated, 1};
    if (text == "missing") return {Provenance::missing, 0};
    if (text.rfind("averaged(", 0) == 0 && text.back() == ')') {
        const std::string inner = text.substr(9, text.size() - 10);
        try {
            return {Provenance::averaged, std::stoi(inner)};
        } catch (const std::exception&) {
            throw IoError("malformed provenance: " + text);
        }
    }
    throw IoError("malformed provenance: " + text);
}

} // namespace respbin

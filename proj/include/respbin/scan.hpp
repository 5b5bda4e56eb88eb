#pragma once

#include <compare>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "respbin/common.hpp"

namespace respbin {

/// Acquisition geometry and timing for one scan.
struct ScanProtocol {
    int slice_count = 0;              ///< S, slice positions along the SI axis
    std::vector<double> b_values;     ///< ordered, distinct, positive
    std::vector<int> averages_per_b;  ///< one entry per b-value
    int n_directions = 1;
    double tr_ms = 0.0;
    int rows = 0;  ///< pixel grid; 0 means metadata-only workflow
    int cols = 0;

    int n_b() const { return static_cast<int>(b_values.size()); }

    /// Exact-match index of a b-value in the protocol set, -1 if absent.
    /// b-values are enumerated members, never compared with a tolerance.
    int b_index(double b) const;

    /// Throws ValidationError when a structural invariant fails.
    void validate() const;
};

/// One acquired 2D slice: metadata plus optional pixel payload.
struct SliceRecord {
    long long acq_index = 0;  ///< acquisition order, unique within a scan
    double t = 0.0;           ///< PT navigator value, arbitrary units
    double b = 0.0;           ///< diffusion weighting, member of the protocol set
    int s = 0;                ///< slice position in [0, S-1]
    std::optional<Image2D> pixels;
};

/// (b-value, slice position) combination.
struct SliceKey {
    double b = 0.0;
    int s = 0;

    bool operator==(const SliceKey&) const = default;
};

struct Scan {
    ScanProtocol protocol;
    std::vector<SliceRecord> slices;

    int size() const { return static_cast<int>(slices.size()); }  ///< N

    bool has_pixels() const;
};

/// Returns human-readable descriptions of every invariant violation,
/// empty when the scan is fully valid. Never throws.
std::vector<std::string> validate_scan(const Scan& scan);

/// How a stored (bin, b, s) slice came to exist.
enum class Provenance { acquired, averaged, interpolated, missing };

struct SliceProvenance {
    Provenance kind = Provenance::acquired;
    int count = 1;  ///< number of averaged members when kind == averaged

    bool operator==(const SliceProvenance&) const = default;
};

std::string provenance_to_string(const SliceProvenance& p);
SliceProvenance provenance_from_string(const std::string& text);

/// Key into a binned volume stack. b is carried as a protocol index so the
/// map ordering stays exact.
struct VolKey {
    int bin = 0;
    int b_index = 0;
    int s = 0;

    auto operator<=>(const VolKey&) const = default;
};

/// Per-(bin, b-value) volumes assembled from slice data.
struct VolumeStack {
    ScanProtocol protocol;
    int k = 1;
    std::map<VolKey, Image2D> data;
    std::map<VolKey, SliceProvenance> provenance;
};

} // namespace respbin

#pragma once

#include <filesystem>
#include <vector>

#include "respbin/binning.hpp"
#include "respbin/scan.hpp"
#include "respbin/sharing.hpp"
#include "respbin/threads.hpp"

namespace respbin {

enum class Orientation {
    expiration_low_t,   ///< end-expiration sits at the low end of the PT axis
    expiration_high_t,  ///< end-expiration sits at the high end
};

Orientation orientation_from_string(const std::string& name);
std::string orientation_to_string(Orientation orientation);

/// Per-(bin, b) volumes after averaging members and patching residual gaps.
struct AssembledVolumes {
    VolumeStack stack;
    int reference_bin = 0;
    /// Slots flagged infeasible by sharing: stored as zero images with
    /// `missing` provenance and skipped by the cross-bin average.
    std::vector<VolKey> irrecoverable;
    /// Applied SI shift per (bin, b_index) after alignment; empty before.
    std::vector<int> si_shifts;
};

/// Averages every (bin, b, s)'s member slices (primary members plus shared
/// slices whose secondary bin is this bin), then patches residual missing
/// slots: interior slots take the pixelwise mean of s-1 and s+1, edge slots
/// replicate the single nearest neighbor. Adjacent residual pairs are an
/// error unless sharing flagged them infeasible (then: zeros + `missing`).
AssembledVolumes assemble(const Scan& scan, const BinningResult& binning,
                          const SharingResult& sharing, Exec exec = Exec::parallel);

/// 0 or k-1 depending on which end of the PT axis is end-expiration.
int pick_reference_bin(const BinningResult& binning, Orientation orientation);

/// Rigid integer shift along s per (bin, b) volume, maximizing normalized
/// cross-correlation with the reference bin's same-b volume over
/// [-s_max, s_max]; ties prefer the smaller |shift|, then the negative one.
/// Vacated slices replicate the nearest retained slice.
AssembledVolumes align_bins_si_shift(const AssembledVolumes& vols, int s_max = 5);

/// Equal-weight pixelwise mean over bins, one volume per b-value.
/// Slices with `missing` provenance (irrecoverable) are left out of the mean.
struct PerBVolumes {
    int rows = 0;
    int cols = 0;
    int slice_count = 0;
    std::vector<double> b_values;
    std::vector<Image2D> images;  ///< b-major: images[b_index * slice_count + s]

    const Image2D& at(int b_index, int s) const {
        return images[static_cast<std::size_t>(b_index) * slice_count + s];
    }
    Image2D& at(int b_index, int s) {
        return images[static_cast<std::size_t>(b_index) * slice_count + s];
    }
};

PerBVolumes average_bins(const AssembledVolumes& vols);

/// Voxelwise mono-exponential fit S(b) = S0 * exp(-b * ADC) via linear least
/// squares on log signal. Voxels with any signal <= 1e-9 are invalid; fitted
/// ADC is clamped at 0 with the raw value kept for diagnostics.
struct AdcMap {
    int rows = 0;
    int cols = 0;
    int slice_count = 0;
    std::vector<double> adc;      ///< clamped, mm^2/s; slice-major
    std::vector<double> s0;
    std::vector<double> adc_raw;  ///< pre-clamp fit result
    std::vector<char> valid;

    std::size_t index(int s, int r, int c) const {
        return (static_cast<std::size_t>(s) * rows + r) * cols + c;
    }
};

AdcMap fit_adc(const PerBVolumes& signals, Exec exec = Exec::parallel);

/// Writes the ADC (and S0) maps in the volume container format; invalid
/// voxels are stored as NaN.
void save_adc_map(const AdcMap& map, const std::filesystem::path& adc_path,
                  const std::filesystem::path& s0_path);

} // namespace respbin

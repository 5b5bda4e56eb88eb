#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "respbin/common.hpp"
#include "respbin/threads.hpp"

namespace respbin {

/// Multi-channel Pilot Tone stream, row-major (sample-major).
struct MultiChannelSignal {
    int n_samples = 0;
    int n_channels = 0;
    std::vector<double> samples;  ///< n_samples * n_channels
    double sample_rate_hz = 1.0;  ///< informational

    double at(int sample, int channel) const {
        return samples[static_cast<std::size_t>(sample) * n_channels + channel];
    }
    double& at(int sample, int channel) {
        return samples[static_cast<std::size_t>(sample) * n_channels + channel];
    }

    std::vector<double> channel(int index) const;

    /// Throws ValidationError when n_samples < 2 or any value is non-finite.
    void validate() const;
};

/// One processed channel: C (detrended, min-shifted to 0), D (median-denoised)
/// and the SNR ranking score.
struct ChannelScore {
    int channel_index = 0;
    double snr = 0.0;
    std::vector<double> detrended;
    std::vector<double> denoised;
};

/// Subtracts the least-squares regression line (unit-spaced abscissa) and
/// shifts the result so its minimum is exactly 0.
std::vector<double> detrend_and_shift(std::span<const double> signal);

/// Median filter with out-of-range samples taken as 0. Kernel must be odd.
std::vector<double> median_filter_zero_padded(std::span<const double> signal, int kernel = 5);

/// log10(mean(c) / max(mean(|c - d|), 1e-12)). Returns -infinity when
/// mean(c) <= 0 (undefined channel, ranked last).
double channel_snr(std::span<const double> c, std::span<const double> d);

/// Detrends, denoises and scores every channel.
std::vector<ChannelScore> score_channels(const MultiChannelSignal& multi,
                                         Exec exec = Exec::parallel);

/// Channel with the highest SNR; ties break to the lowest channel index.
ChannelScore select_best_channel(const MultiChannelSignal& multi, Exec exec = Exec::parallel);

// --- PT CSV: header `sample_index,ch0,ch1,...`, one row per sample ---

MultiChannelSignal load_pt_csv(const std::filesystem::path& path, double sample_rate_hz = 1.0);
void save_pt_csv(const std::filesystem::path& path, const MultiChannelSignal& multi);

} // namespace respbin

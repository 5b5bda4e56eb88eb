#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "respbin/metrics.hpp"
#include "respbin/pt_navigator.hpp"
#include "respbin/simulator.hpp"
#include "respbin/volume_pipeline.hpp"

namespace respbin {

/// Replaces each slice's t with the processed navigator (detrended, shifted,
/// denoised) sampled nearest to the slice's acquisition time.
Scan rebind_slice_t(const Scan& scan, const std::vector<double>& event_times_ms,
                    const std::vector<double>& navigator, double sample_rate_hz);

/// Plot-ready assignment data: one CSV row per slice with its PT value,
/// primary bin, and (when shared) secondary bin.
void emit_assignment_trace(const Scan& scan, const BinningResult& binning,
                           const SharingResult& sharing, const std::filesystem::path& path);

struct ReproduceConfig {
    std::string preset = "synchronized";
    std::uint64_t seed = 42;
    int k_max = 8;
    double threshold = 0.1;          ///< share-metric threshold T
    double missing_threshold = 0.02; ///< auto-k residual bound
    Orientation orientation = Orientation::expiration_low_t;
    bool align = true;
    std::filesystem::path out_dir;   ///< empty: no files written
    bool trace = false;
    Exec exec = Exec::parallel;
};

struct RoiEval {
    std::string label;
    double true_adc = 0.0;
    double mean_adc_corrected = 0.0;
    double mean_adc_uncorrected = 0.0;
    double cov_corrected = 0.0;
    double cov_uncorrected = 0.0;
    double w1_truth_corrected = 0.0;
    double w1_truth_uncorrected = 0.0;
    double rmse_truth_corrected = 0.0;
    double rmse_truth_uncorrected = 0.0;
};

struct ReproduceReport {
    int selected_channel = 0;
    double channel_snr = 0.0;
    int k = 1;
    bool auto_k_fallback = false;
    MissingReport standard;
    MissingReport phase1;
    MissingReport phase2;
    double reduction_pct_standard_to_phase2 = 0.0;
    ZTestResult ztest_standard_vs_phase2;
    std::vector<RoiEval> rois;
    double mean_cov_corrected = 0.0;
    double mean_cov_uncorrected = 0.0;
};

/// End-to-end synthetic benchmark: simulate the preset, select the PT
/// channel, re-derive per-slice navigator values, auto-select K, compare the
/// equal-count baseline against both optimization phases, and evaluate ADC
/// stability of the corrected (K bins + alignment) vs uncorrected (single
/// bin) reconstructions over the phantom ROIs.
ReproduceReport run_reproduce(const ReproduceConfig& config);

void save_report(const ReproduceReport& report, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path);

} // namespace respbin

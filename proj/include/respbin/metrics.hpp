#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "respbin/binning.hpp"
#include "respbin/scan.hpp"

namespace respbin {

/// Missing-slice accounting over the expected B*k*S combination grid.
struct MissingReport {
    long long expected_total = 0;
    long long missing_count = 0;
    double missing_pct = 0.0;
    std::vector<long long> per_bin;
};

MissingReport missing_report(const std::vector<MissingSlot>& missing,
                             const ScanProtocol& protocol, int k);

/// 100 * (before - after) / before.
double reduction_pct(long long before, long long after);

struct ZTestResult {
    double z = 0.0;
    double p = 0.5;  ///< one-sided upper tail, H1: p1 > p2
};

/// Pooled two-proportion z statistic with the one-sided upper-tail p-value.
/// Degenerate pooled proportion (0 or 1): z = 0 when the proportions are
/// equal, +-infinity otherwise.
ZTestResult two_proportion_ztest_one_sided(long long x1, long long n1, long long x2,
                                           long long n2);

/// Population std / mean, in percent.
double cov(const std::vector<double>& values);

/// cov over per-subject ROI means; requires at least two subjects.
double inter_subject_cov(const std::vector<double>& roi_means);

/// 1-D Wasserstein distance between two empirical distributions.
double wasserstein_1d(const std::vector<double>& a, const std::vector<double>& b);

double rmse(const std::vector<double>& a, const std::vector<double>& b);

/// One ROI's voxel values (e.g. ADC in mm^2/s) under a tissue label.
struct RoiSample {
    std::string label;
    std::vector<double> values;
};

std::vector<RoiSample> load_roi_csv(const std::filesystem::path& path);
void save_roi_csv(const std::vector<RoiSample>& samples, const std::filesystem::path& path);

} // namespace respbin

#include "respbin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "respbin/common.hpp"
#include "respbin/scan_io.hpp"

namespace respbin {

MissingReport missing_report(const std::vector<MissingSlot>& missing,
                             const ScanProtocol& protocol, int k) {
    if (k < 1) {
        throw ValidationError("missing_report: k must be >= 1");
    }
    MissingReport report;
    report.expected_total = static_cast<long long>(protocol.n_b()) * k * protocol.slice_count;
    report.missing_count = static_cast<long long>(missing.size());
    report.per_bin.assign(k, 0);
    for (const MissingSlot& slot : missing) {
        if (slot.bin < 0 || slot.bin >= k) {
            throw ValidationError("missing_report: slot bin out of range");
        }
        report.per_bin[slot.bin] += 1;
    }
    if (report.missing_count > report.expected_total) {
        throw ValidationError("missing_report: more missing slots than combinations");
    }
    report.missing_pct =
        100.0 * static_cast<double>(report.missing_count) / report.expected_total;
    return report;
}

double reduction_pct(long long before, long long after) {
    if (before <= 0) {
        throw ValidationError("reduction_pct: before-count must be positive");
    }
    if (after < 0 || after > before) {
        throw ValidationError("reduction_pct: require 0 <= after <= before");
    }
    return 100.0 * static_cast<double>(before - after) / static_cast<double>(before);
}

ZTestResult two_proportion_ztest_one_sided(long long x1, long long n1, long long x2,
                                           long long n2) {
    if (n1 <= 0 || n2 <= 0 || x1 < 0 || x1 > n1 || x2 < 0 || x2 > n2) {
        throw ValidationError("two_proportion_ztest: require 0 <= xi <= ni, ni > 0");
    }
    ZTestResult result;
    const bool equal_props = (x1 * n2 == x2 * n1);  // exact rational comparison
    const long long pooled_num = x1 + x2;
    const long long pooled_den = n1 + n2;
    if (pooled_num == 0 || pooled_num == pooled_den) {
        // Pooled variance degenerates to zero.
        if (equal_props) {
            result.z = 0.0;
        } else {
            result.z = (x1 * n2 > x2 * n1) ? std::numeric_limits<double>::infinity()
                                           : -std::numeric_limits<double>::infinity();
        }
    } else {
        const double p_hat = static_cast<double>(pooled_num) / static_cast<double>(pooled_den);
        const double se =
            std::sqrt(p_hat * (1.0 - p_hat) * (1.0 / static_cast<double>(n1) +
                                               1.0 / static_cast<double>(n2)));
        const double p1 = static_cast<double>(x1) / static_cast<double>(n1);
        const double p2 = static_cast<double>(x2) / static_cast<double>(n2);
        result.z = equal_props ? 0.0 : (p1 - p2) / se;
    }
    // Upper tail of the standard normal; erfc keeps ~1e-15 relative accuracy
    // out to |z| ~ 38 and saturates to 0/1 beyond.
    result.p = 0.5 * std::erfc(result.z / std::sqrt(2.0));
    return result;
}

namespace {

double population_std(const std::vector<double>& values, double mean) {
    double var = 0.0;
    for (double v : values) {
        const double d = v - mean;
        var += d * d;
    }
    return std::sqrt(var / static_cast<double>(values.size()));
}

} // namespace

double cov(const std::vector<double>& values) {
    if (values.empty()) {
        throw ValidationError("cov: empty input");
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (mean == 0.0) {
        throw ValidationError("cov: undefined for zero mean");
    }
    return 100.0 * population_std(values, mean) / mean;
}

double inter_subject_cov(const std::vector<double>& roi_means) {
    if (roi_means.size() < 2) {
        throw ValidationError("inter_subject_cov: need at least two subjects");
    }
    return cov(roi_means);
}

double wasserstein_1d(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) {
        throw ValidationError("wasserstein_1d: empty input");
    }
    std::vector<double> sa = a;
    std::vector<double> sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());

    const std::size_t na = sa.size();
    const std::size_t nb = sb.size();
    if (na == nb) {
        double total = 0.0;
        for (std::size_t i = 0; i < na; ++i) total += std::abs(sa[i] - sb[i]);
        return total / static_cast<double>(na);
    }

    // Integrate |Qa(u) - Qb(u)| du over the merged quantile grid
    // {i/na} U {j/nb}; breakpoints compared as exact integer rationals.
    double total = 0.0;
    double u_prev = 0.0;
    std::size_t ia = 0;
    std::size_t ib = 0;
    while (ia < na && ib < nb) {
        const unsigned long long lhs = static_cast<unsigned long long>(ia + 1) * nb;
        const unsigned long long rhs = static_cast<unsigned long long>(ib + 1) * na;
        double u_next;
        if (lhs <= rhs) {
            u_next = static_cast<double>(ia + 1) / static_cast<double>(na);
        } else {
            u_next = static_cast<double>(ib + 1) / static_cast<double>(nb);
        }
        total += (u_next - u_prev) * std::abs(sa[ia] - sb[ib]);
        u_prev = u_next;
        if (lhs <= rhs) ++ia;
        if (rhs <= lhs) ++ib;
    }
    return total;
}

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw ValidationError("rmse: length mismatch");
    }
    if (a.empty()) {
        throw ValidationError("rmse: empty input");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        total += d * d;
    }
    return std::sqrt(total / static_cast<double>(a.size()));
}

std::vector<RoiSample> load_roi_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open ROI CSV: " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != "label,value") {
        throw IoError("ROI CSV must start with header 'label,value': " + path.string());
    }
    std::vector<RoiSample> samples;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos) {
            throw IoError("ROI CSV line " + std::to_string(line_no) + ": missing comma");
        }
        const std::string label = line.substr(0, comma);
        double value = 0.0;
        try {
            value = parse_double(line.substr(comma + 1));
        } catch (const IoError& e) {
            throw IoError("ROI CSV line " + std::to_string(line_no) + ": " + e.what());
        }
        auto it = std::find_if(samples.begin(), samples.end(),
                               [&](const RoiSample& s) { return s.label == label; });
        if (it == samples.end()) {
            samples.push_back({label, {value}});
        } else {
            it->values.push_back(value);
        }
    }
    for (const RoiSample& s : samples) {
        for (double v : s.values) {
            if (!std::isfinite(v)) {
                throw ValidationError("ROI sample '" + s.label + "' contains non-finite value");
            }
        }
    }
    return samples;
}

void save_roi_csv(const std::vector<RoiSample>& samples, const std::filesystem::path& path) {
    std::ostringstream out;
    out << "label,value\n";
    for (const RoiSample& s : samples) {
        for (double v : s.values) {
            out << s.label << ',' << format_double(v) << '\n';
        }
    }
    atomic_write_text(path, out.str());
}

} // namespace respbin

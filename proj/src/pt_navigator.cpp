#include "respbin/pt_navigator.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "respbin/scan_io.hpp"

namespace respbin {

std::vector<double> MultiChannelSignal::channel(int index) const {
    std::vector<double> out(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) out[static_cast<std::size_t>(i)] = at(i, index);
    return out;
}

void MultiChannelSignal::validate() const {
    if (n_samples < 2) throw ValidationError("PT signal needs at least 2 samples");
    if (n_channels < 1) throw ValidationError("PT signal needs at least 1 channel");
    if (samples.size() != static_cast<std::size_t>(n_samples) * n_channels)
        throw ValidationError("PT sample buffer size mismatch");
    for (double v : samples) {
        if (!is_finite(v)) throw ValidationError("PT signal contains non-finite values");
    }
}

std::vector<double> detrend_and_shift(std::span<const double> signal) {
    const std::size_t n = signal.size();
    if (n < 2) throw ValidationError("detrend requires at least 2 samples");

    // least squares line over x = 0..n-1
    const double nn = static_cast<double>(n);
    const double mean_x = (nn - 1.0) / 2.0;
    double mean_y = 0.0;
    for (double v : signal) mean_y += v;
    mean_y /= nn;

    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = static_cast<double>(i) - mean_x;
        sxx += dx * dx;
        sxy += dx * (signal[i] - mean_y);
    }
    const double slope = sxy / sxx;
    const double intercept = mean_y - slope * mean_x;

    std::vector<double> out(n);
    double min_v = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = signal[i] - (slope * static_cast<double>(i) + intercept);
        min_v = std::min(min_v, out[i]);
    }
    for (double& v : out) v -= min_v;
    return out;
}

std::vector<double> median_filter_zero_padded(std::span<const double> signal, int kernel) {
    if (kernel < 1 || kernel % 2 == 0)
        throw ValidationError("median filter kernel must be odd and positive");

    const int n = static_cast<int>(signal.size());
    const int half = kernel / 2;
    std::vector<double> out(static_cast<std::size_t>(n));
    std::vector<double> window(static_cast<std::size_t>(kernel));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < kernel; ++j) {
            const int idx = i - half + j;
            window[static_cast<std::size_t>(j)] =
                (idx >= 0 && idx < n) ? signal[static_cast<std::size_t>(idx)] : 0.0;
        }
        auto mid = window.begin() + half;
        std::nth_element(window.begin(), mid, window.end());
        out[static_cast<std::size_t>(i)] = *mid;
    }
    return out;
}

double channel_snr(std::span<const double> c, std::span<const double> d) {
    if (c.empty() || c.size() != d.size())
        throw ValidationError("channel_snr requires equal non-empty signals");

    double mean_c = 0.0, mean_abs_resid = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        mean_c += c[i];
        mean_abs_resid += std::abs(c[i] - d[i]);
    }
    mean_c /= static_cast<double>(c.size());
    mean_abs_resid /= static_cast<double>(c.size());

    if (mean_c <= 0.0) return -std::numeric_limits<double>::infinity();
    constexpr double kNoiseFloor = 1e-12;
    return std::log10(mean_c / std::max(mean_abs_resid, kNoiseFloor));
}

std::vector<ChannelScore> score_channels(const MultiChannelSignal& multi, Exec exec) {
    multi.validate();
    std::vector<ChannelScore> scores(static_cast<std::size_t>(multi.n_channels));

    const int nt = exec == Exec::parallel ? thread_count() : 1;
#pragma omp parallel for schedule(static) num_threads(nt)
    for (int ch = 0; ch < multi.n_channels; ++ch) {
        ChannelScore score;
        score.channel_index = ch;
        const auto raw = multi.channel(ch);
        score.detrended = detrend_and_shift(raw);
        score.denoised = median_filter_zero_padded(score.detrended, 5);
        score.snr = channel_snr(score.detrended, score.denoised);
        scores[static_cast<std::size_t>(ch)] = std::move(score);
    }
    return scores;
}

ChannelScore select_best_channel(const MultiChannelSignal& multi, Exec exec) {
    auto scores = score_channels(multi, exec);
    // deterministic argmax: strictly greater wins, ties keep the lower index
    std::size_t best = 0;
    for (std::size_t ch = 1; ch < scores.size(); ++ch) {
        if (scores[ch].snr > scores[best].snr) best = ch;
    }
    return scores[best];
}

MultiChannelSignal load_pt_csv(const std::filesystem::path& path, double sample_rate_hz) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());

    std::string line;
    if (!std::getline(in, line)) throw IoError("empty PT file: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("sample_index,", 0) != 0)
        throw IoError("unexpected PT CSV header in " + path.string());
    const int n_channels = static_cast<int>(std::count(line.begin(), line.end(), ',')) ;

    MultiChannelSignal multi;
    multi.n_channels = n_channels;
    multi.sample_rate_hz = sample_rate_hz;

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            fields.push_back(field);
        }
        if (static_cast<int>(fields.size()) != n_channels + 1)
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": field count mismatch");
        for (int ch = 0; ch < n_channels; ++ch) {
            multi.samples.push_back(parse_double(fields[static_cast<std::size_t>(ch) + 1]));
        }
        ++multi.n_samples;
    }
    multi.validate();
    return multi;
}

void save_pt_csv(const std::filesystem::path& path, const MultiChannelSignal& multi) {
    std::ostringstream out;
    out << "sample_index";
    for (int ch = 0; ch < multi.n_channels; ++ch) out << ",ch" << ch;
    out << "\n";
    for (int i = 0; i < multi.n_samples; ++i) {
        out << i;
        for (int ch = 0; ch < multi.n_channels; ++ch) out << ',' << format_double(multi.at(i, ch));
        out << "\n";
    }
    atomic_write_text(path, out.str());
}

} // namespace respbin

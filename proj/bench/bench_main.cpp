// Wall-clock comparison of the serial reference implementations against the
// OpenMP kernels, verifying bit-identical results along the way.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "respbin/binning.hpp"
#include "respbin/sharing.hpp"
#include "respbin/threads.hpp"
#include "respbin/volume_pipeline.hpp"

using namespace respbin;

namespace {

double time_of(const std::function<void()>& body) {
    const auto start = std::chrono::steady_clock::now();
    body();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void row(const char* name, double serial_s, double parallel_s, bool identical) {
    std::printf("%-28s %10.3fs %10.3fs %9.2fx   %s\n", name, serial_s, parallel_s,
                serial_s / parallel_s, identical ? "identical" : "MISMATCH");
}

Scan make_scan(std::uint64_t seed, int n, int n_s, int n_b) {
    Scan scan;
    scan.protocol.slice_count = n_s;
    const std::vector<double> all_b = {50.0, 400.0, 800.0};
    scan.protocol.b_values.assign(all_b.begin(), all_b.begin() + n_b);
    scan.protocol.averages_per_b.assign(n_b, 1);
    scan.protocol.tr_ms = 1000.0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> t_dist(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        scan.slices.push_back({i, t_dist(rng), scan.protocol.b_values[rng() % n_b],
                               static_cast<int>(rng() % n_s), {}});
    }
    return scan;
}

} // namespace

int main() {
    std::printf("threads available: %d\n\n", thread_count());
    std::printf("%-28s %11s %11s %10s\n", "kernel", "serial", "parallel", "speedup");

    // --- dynamic-programming bin optimization: N=3000, k=10, B=3, S=47 ---
    {
        const Scan scan = make_scan(1, 3000, 47, 3);
        const SortedScanView view = sort_by_pt(scan);
        const PrefixCoverage prefix = build_prefix(view, scan.protocol);
        DpTables serial, parallel;
        const double ts = time_of([&] { serial = dp_optimal_bins(view, prefix, 10, Exec::serial); });
        const double tp =
            time_of([&] { parallel = dp_optimal_bins(view, prefix, 10, Exec::parallel); });
        row("dp_optimal_bins 3000x10", ts, tp,
            serial.cost == parallel.cost && serial.arg == parallel.arg);
    }

    // --- membership evaluation: N=20000 slices, k=10 bins ---
    {
        const Scan scan = make_scan(2, 20000, 47, 3);
        const SortedScanView view = sort_by_pt(scan);
        const PrefixCoverage prefix = build_prefix(view, scan.protocol);
        const DpTables tables = dp_optimal_bins(view, prefix, 10);
        const BinningResult binning = reconstruct_partition(tables, 10, scan, view);
        const auto models = fit_bin_gaussians(view, binning);
        Membership serial, parallel;
        const double ts = time_of([&] { serial = membership(view, models, Exec::serial); });
        const double tp = time_of([&] { parallel = membership(view, models, Exec::parallel); });
        row("membership 20000x10", ts, tp, serial.probs == parallel.probs);
    }

    // --- voxelwise ADC fit: 128x128x32, 3 b-values ---
    {
        PerBVolumes signals;
        signals.rows = 128;
        signals.cols = 128;
        signals.slice_count = 32;
        signals.b_values = {50.0, 400.0, 800.0};
        signals.images.assign(3 * 32, Image2D(128, 128));
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> dist(1.0, 1000.0);
        for (auto& img : signals.images) {
            for (double& v : img.data) v = dist(rng);
        }
        AdcMap serial, parallel;
        const double ts = time_of([&] { serial = fit_adc(signals, Exec::serial); });
        const double tp = time_of([&] { parallel = fit_adc(signals, Exec::parallel); });
        row("fit_adc 128x128x32", ts, tp,
            serial.adc == parallel.adc && serial.s0 == parallel.s0 &&
                serial.valid == parallel.valid);
    }

    // --- volume assembly: N=4704 slices with 32x32 pixels ---
    {
        Scan scan = make_scan(4, 4704, 21, 3);
        scan.protocol.rows = 32;
        scan.protocol.cols = 32;
        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> dist(0.0, 500.0);
        for (auto& sl : scan.slices) {
            Image2D img(32, 32);
            for (double& v : img.data) v = dist(rng);
            sl.pixels = std::move(img);
        }
        const SortedScanView view = sort_by_pt(scan);
        const PrefixCoverage prefix = build_prefix(view, scan.protocol);
        const DpTables tables = dp_optimal_bins(view, prefix, 6);
        const BinningResult binning = reconstruct_partition(tables, 6, scan, view);
        const auto models = fit_bin_gaussians(view, binning);
        const Membership probs = membership(view, models);
        const SharingResult sharing = fill_missing(scan, binning, probs, 0.1);
        AssembledVolumes serial, parallel;
        const double ts = time_of([&] { serial = assemble(scan, binning, sharing, Exec::serial); });
        const double tp =
            time_of([&] { parallel = assemble(scan, binning, sharing, Exec::parallel); });
        row("assemble 4704x32x32", ts, tp,
            serial.stack.data == parallel.stack.data &&
                serial.stack.provenance == parallel.stack.provenance);
    }

    return 0;
}

// Acceptance gate: ten end-to-end checks with hard numeric tolerances and
// runtime bounds. Each prints one [PASS]/[FAIL] line; the exit code is the
// number of failures.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "respbin/binning.hpp"
#include "respbin/metrics.hpp"
#include "respbin/pt_navigator.hpp"
#include "respbin/reproduce.hpp"
#include "respbin/sharing.hpp"
#include "respbin/simulator.hpp"
#include "respbin/volume_pipeline.hpp"

using namespace respbin;

namespace {

int g_failures = 0;

void report(int index, const std::string& name, bool ok, double seconds,
            const std::string& detail) {
    std::printf("[%s] %2d. %-34s (%.2fs)%s%s\n", ok ? "PASS" : "FAIL", index, name.c_str(),
                seconds, detail.empty() ? "" : " ", detail.c_str());
    if (!ok) ++g_failures;
}

void run(int index, const std::string& name, double time_limit_s,
         const std::function<bool(std::string&)>& body) {
    std::string detail;
    bool ok = false;
    const auto start = std::chrono::steady_clock::now();
    try {
        ok = body(detail);
    } catch (const std::exception& e) {
        ok = false;
        detail = std::string("exception: ") + e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (ok && seconds >= time_limit_s) {
        ok = false;
        detail = "over time limit of " + std::to_string(time_limit_s) + "s";
    }
    report(index, name, ok, seconds, detail);
}

// Random binning instance shared by the optimality/dominance/sharing checks.
struct Instance {
    Scan scan;
    int k_max = 1;
};

Instance make_instance(std::uint64_t seed, int max_n, int max_k, int max_b, int max_s) {
    std::mt19937_64 rng(seed);
    const int n = 1 + static_cast<int>(rng() % max_n);
    const int n_b = 1 + static_cast<int>(rng() % max_b);
    const int n_s = 1 + static_cast<int>(rng() % max_s);

    Instance inst;
    ScanProtocol& p = inst.scan.protocol;
    p.slice_count = n_s;
    const std::vector<double> all_b = {50.0, 400.0, 800.0, 1000.0, 1500.0,
                                       2000.0, 2500.0, 3000.0, 3500.0};
    p.b_values.assign(all_b.begin(), all_b.begin() + n_b);
    p.averages_per_b.assign(n_b, 1);
    p.n_directions = 1;
    p.tr_ms = 1000.0;

    std::uniform_real_distribution<double> t_dist(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        SliceRecord rec;
        rec.acq_index = i;
        rec.t = t_dist(rng);
        rec.b = p.b_values[rng() % n_b];
        rec.s = static_cast<int>(rng() % n_s);
        inst.scan.slices.push_back(rec);
    }
    inst.k_max = std::min(1 + static_cast<int>(rng() % max_k), n);
    return inst;
}

// Exhaustive minimum missing count over all contiguous k-partitions,
// recounted from scratch (independent of PrefixCoverage).
long long partition_cost(const Instance& inst, const SortedScanView& view,
                         const std::vector<int>& starts) {
    const int n_b = inst.scan.protocol.n_b();
    const int n_s = inst.scan.protocol.slice_count;
    long long cost = 0;
    for (std::size_t j = 0; j + 1 < starts.size(); ++j) {
        std::set<std::pair<int, int>> seen;
        for (int r = starts[j]; r < starts[j + 1]; ++r) {
            const SliceRecord& rec = inst.scan.slices[view.order[r]];
            seen.insert({inst.scan.protocol.b_index(rec.b), rec.s});
        }
        cost += static_cast<long long>(n_b) * n_s - static_cast<long long>(seen.size());
    }
    return cost;
}

long long exhaustive_min_cost(const Instance& inst, const SortedScanView& view, int k) {
    const int n = view.size();
    std::vector<int> cuts(k - 1);
    long long best = -1;
    std::function<void(int, int)> rec = [&](int idx, int from) {
        if (idx == k - 1) {
            std::vector<int> starts{0};
            starts.insert(starts.end(), cuts.begin(), cuts.end());
            starts.push_back(n);
            const long long c = partition_cost(inst, view, starts);
            if (best < 0 || c < best) best = c;
            return;
        }
        for (int cut = from; cut <= n - (k - 1 - idx); ++cut) {
            cuts[idx] = cut;
            rec(idx + 1, cut + 1);
        }
    };
    if (k == 1) {
        return partition_cost(inst, view, {0, n});
    }
    rec(0, 1);
    return best;
}

bool check_dp_optimality(std::string& detail) {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const Instance inst = make_instance(seed, 12, 4, 2, 3);
        const SortedScanView view = sort_by_pt(inst.scan);
        const PrefixCoverage prefix = build_prefix(view, inst.scan.protocol);
        const DpTables tables = dp_optimal_bins(view, prefix, inst.k_max);
        for (int k = 1; k <= inst.k_max; ++k) {
            const long long dp_cost = tables.cost_at(k, view.size());
            const long long oracle = exhaustive_min_cost(inst, view, k);
            if (dp_cost != oracle) {
                detail = "seed " + std::to_string(seed) + " k=" + std::to_string(k) + ": dp " +
                         std::to_string(dp_cost) + " != exhaustive " + std::to_string(oracle);
                return false;
            }
            const BinningResult rec = reconstruct_partition(tables, k, inst.scan, view);
            if (rec.total_cost != oracle) {
                detail = "seed " + std::to_string(seed) + ": reconstruction cost mismatch";
                return false;
            }
        }
    }
    return true;
}

bool check_dominance(std::string& detail) {
    bool strict_seen = false;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const Instance inst = make_instance(seed, 500, 9, 3, 8);
        const SortedScanView view = sort_by_pt(inst.scan);
        const PrefixCoverage prefix = build_prefix(view, inst.scan.protocol);
        const DpTables tables = dp_optimal_bins(view, prefix, inst.k_max);
        for (int k = 1; k <= inst.k_max; ++k) {
            const BinningResult dp = reconstruct_partition(tables, k, inst.scan, view);
            const BinningResult std_bins = standard_equal_count_bins(view, inst.scan, k);
            if (dp.total_cost > std_bins.total_cost) {
                detail = "seed " + std::to_string(seed) + " k=" + std::to_string(k) +
                         ": dp cost above equal-count";
                return false;
            }
            if (dp.total_cost < std_bins.total_cost) strict_seen = true;
        }
    }

    // Constructed strict case: positions [0,0,1,1], one b-value, k=2.
    Instance inst;
    inst.scan.protocol.slice_count = 2;
    inst.scan.protocol.b_values = {50.0};
    inst.scan.protocol.averages_per_b = {1};
    inst.scan.protocol.n_directions = 1;
    inst.scan.protocol.tr_ms = 1000.0;
    const int positions[] = {0, 0, 1, 1};
    for (int i = 0; i < 4; ++i) {
        inst.scan.slices.push_back({i, static_cast<double>(i), 50.0, positions[i], {}});
    }
    const SortedScanView view = sort_by_pt(inst.scan);
    const PrefixCoverage prefix = build_prefix(view, inst.scan.protocol);
    const DpTables tables = dp_optimal_bins(view, prefix, 2);
    const BinningResult dp = reconstruct_partition(tables, 2, inst.scan, view);
    const BinningResult std_bins = standard_equal_count_bins(view, inst.scan, 2);
    if (dp.total_cost != 1 || std_bins.total_cost != 2) {
        detail = "constructed case expected costs 1 and 2, got " +
                 std::to_string(dp.total_cost) + " and " + std::to_string(std_bins.total_cost);
        return false;
    }
    if (!strict_seen) {
        detail = "no strict dominance instance among random draws";
        return false;
    }
    return true;
}

bool check_sharing(std::string& detail) {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const Instance inst = make_instance(seed, 500, 9, 3, 8);
        const SortedScanView view = sort_by_pt(inst.scan);
        const PrefixCoverage prefix = build_prefix(view, inst.scan.protocol);
        const DpTables tables = dp_optimal_bins(view, prefix, inst.k_max);
        const BinningResult binning =
            reconstruct_partition(tables, inst.k_max, inst.scan, view);
        const auto models = fit_bin_gaussians(view, binning);
        const Membership probs = membership(view, models);
        const SharingResult sharing = fill_missing(inst.scan, binning, probs, 0.1);

        if (sharing.residual_missing.size() > binning.missing.size()) {
            detail = "seed " + std::to_string(seed) + ": residual above phase-1 missing";
            return false;
        }
        std::set<int> used;
        for (const SharedAssignment& a : sharing.assignments) {
            if (!used.insert(a.acq_index).second) {
                detail = "seed " + std::to_string(seed) + ": candidate used twice";
                return false;
            }
        }
        // Any surviving adjacent missing pair must have exhausted every
        // candidate of both members.
        std::set<MissingSlot> residual(sharing.residual_missing.begin(),
                                       sharing.residual_missing.end());
        for (const MissingSlot& slot : sharing.residual_missing) {
            const MissingSlot up{slot.bin, slot.b_index, slot.s + 1};
            if (!residual.count(up)) continue;
            for (const MissingSlot& member : {slot, up}) {
                for (int acq : find_candidates(inst.scan, binning, member)) {
                    if (!used.count(acq)) {
                        detail = "seed " + std::to_string(seed) +
                                 ": adjacent residual pair with a free candidate";
                        return false;
                    }
                }
            }
        }
    }
    return true;
}

bool check_reproduce_benchmark(std::string& detail) {
    ReproduceConfig config;  // synchronized preset, seed 42, T = 0.1
    const ReproduceReport r = run_reproduce(config);
    char buf[160];
    std::snprintf(buf, sizeof buf, "k=%d standard=%lld phase1=%lld phase2=%lld reduction=%.1f%%",
                  r.k, r.standard.missing_count, r.phase1.missing_count, r.phase2.missing_count,
                  r.reduction_pct_standard_to_phase2);
    detail = buf;
    if (!(r.phase2.missing_count < r.phase1.missing_count &&
          r.phase1.missing_count < r.standard.missing_count)) {
        detail += " -- ordering violated";
        return false;
    }
    if (!(r.reduction_pct_standard_to_phase2 >= 50.0)) {
        detail += " -- reduction below 50%";
        return false;
    }
    return true;
}

bool check_arithmetic(std::string& detail) {
    const double r1 = reduction_pct(44, 4);
    const double r2 = reduction_pct(68, 10);
    if (std::abs(r1 - 90.909) > 0.005) {
        detail = "reduction_pct(44,4) = " + std::to_string(r1);
        return false;
    }
    if (std::abs(r2 - 85.294) > 0.005) {
        detail = "reduction_pct(68,10) = " + std::to_string(r2);
        return false;
    }

    ScanProtocol p;
    p.slice_count = 42;
    p.b_values = {50.0, 400.0, 800.0};
    p.averages_per_b = {1, 1, 1};
    p.n_directions = 1;
    p.tr_ms = 1000.0;
    const std::vector<MissingSlot> missing = {{0, 0, 0}, {1, 1, 3}, {2, 2, 7}, {3, 0, 11}};
    const MissingReport rep = missing_report(missing, p, 6);
    if (rep.expected_total != 756 || std::abs(rep.missing_pct - 0.529) > 0.005) {
        detail = "missing_pct = " + std::to_string(rep.missing_pct) + " of " +
                 std::to_string(rep.expected_total);
        return false;
    }
    return true;
}

AdcMap fit_phantom_scan(double image_noise, std::uint64_t seed) {
    SimConfig config = preset_config("calm", seed);
    config.options.max_displacement_slices = 0.0;  // motionless acquisition
    config.options.image_noise_sigma = image_noise;
    const SimulatedScan sim = run_simulation(config);

    const SortedScanView view = sort_by_pt(sim.scan);
    const BinningResult binning = standard_equal_count_bins(view, sim.scan, 1);
    const auto models = fit_bin_gaussians(view, binning);
    const Membership probs = membership(view, models);
    const SharingResult sharing = fill_missing(sim.scan, binning, probs, 0.1);
    const AssembledVolumes vols = assemble(sim.scan, binning, sharing);
    return fit_adc(average_bins(vols));
}

bool check_adc_recovery(std::string& detail) {
    const Phantom phantom = default_phantom(48, 48, 16);
    {
        const AdcMap map = fit_phantom_scan(0.0, 5);
        double worst = 0.0;
        for (int s = 0; s < 16; ++s) {
            for (int r = 0; r < 48; ++r) {
                for (int c = 0; c < 48; ++c) {
                    const int shape = phantom.shape_at(r, c, s);
                    if (shape < 0) continue;
                    const double truth = phantom.shapes[shape].adc;
                    const std::size_t idx = map.index(s, r, c);
                    if (!map.valid[idx]) {
                        detail = "noiseless fit invalid inside tissue";
                        return false;
                    }
                    worst = std::max(worst, std::abs(map.adc[idx] - truth) / truth);
                }
            }
        }
        if (worst >= 1e-6) {
            detail = "noiseless worst relative error " + std::to_string(worst);
            return false;
        }
    }
    {
        const AdcMap map = fit_phantom_scan(10.0, 5);  // sigma = 1% of nominal S0
        const std::vector<RoiMask> rois = default_roi_masks(phantom);
        for (const RoiMask& mask : rois) {
            double truth = 0.0;
            for (const Phantom::Shape& sh : phantom.shapes) {
                if (sh.label == mask.label) truth = sh.adc;
            }
            double sum = 0.0;
            int n = 0;
            for (const auto& [r, c] : mask.pixels) {
                const std::size_t idx = map.index(mask.s, r, c);
                if (!map.valid[idx]) continue;
                sum += map.adc[idx];
                ++n;
            }
            if (n == 0) {
                detail = mask.label + ": no valid voxels";
                return false;
            }
            const double rel = std::abs(sum / n - truth) / truth;
            if (rel >= 0.05) {
                detail = mask.label + ": ROI-mean off truth by " + std::to_string(100 * rel) +
                         "%";
                return false;
            }
        }
    }
    return true;
}

bool check_cov_ordering(std::string& detail) {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        ReproduceConfig config;
        config.preset = "deep";
        config.seed = seed;
        const ReproduceReport r = run_reproduce(config);
        char buf[96];
        std::snprintf(buf, sizeof buf, "seed %llu: corrected %.2f%% vs uncorrected %.2f%%; ",
                      static_cast<unsigned long long>(seed), r.mean_cov_corrected,
                      r.mean_cov_uncorrected);
        detail += buf;
        if (!(r.mean_cov_corrected < r.mean_cov_uncorrected)) return false;
    }
    return true;
}

bool check_statistics(std::string& detail) {
    {
        const ZTestResult res = two_proportion_ztest_one_sided(8, 100, 2, 100);
        const double pool = (8.0 + 2.0) / 200.0;
        const double se = std::sqrt(pool * (1.0 - pool) * (1.0 / 100 + 1.0 / 100));
        const double z = (0.08 - 0.02) / se;
        const double p = 0.5 * std::erfc(z / std::sqrt(2.0));
        if (std::abs(res.z - z) > 1e-9 || std::abs(res.p - p) > 1e-9) {
            detail = "z-test mismatch vs closed form";
            return false;
        }
    }
    if (two_proportion_ztest_one_sided(5, 50, 10, 100).p != 0.5) {
        detail = "equal proportions must give p = 0.5 exactly";
        return false;
    }

    // Quantile-integral oracle: both inverse CDFs are step functions with
    // breakpoints at i/na and j/nb; integrate |difference| stepwise.
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> dist(-5.0, 5.0);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> a(1 + rng() % 50), b(1 + rng() % 50);
        for (double& v : a) v = dist(rng);
        for (double& v : b) v = dist(rng);
        std::vector<double> sa = a, sb = b;
        std::sort(sa.begin(), sa.end());
        std::sort(sb.begin(), sb.end());
        std::vector<double> cuts{0.0, 1.0};
        for (std::size_t i = 1; i < sa.size(); ++i)
            cuts.push_back(static_cast<double>(i) / sa.size());
        for (std::size_t j = 1; j < sb.size(); ++j)
            cuts.push_back(static_cast<double>(j) / sb.size());
        std::sort(cuts.begin(), cuts.end());
        double oracle = 0.0;
        for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
            const double width = cuts[i + 1] - cuts[i];
            if (width <= 0.0) continue;
            const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
            const double qa = sa[std::min(sa.size() - 1,
                                          static_cast<std::size_t>(mid * sa.size()))];
            const double qb = sb[std::min(sb.size() - 1,
                                          static_cast<std::size_t>(mid * sb.size()))];
            oracle += width * std::abs(qa - qb);
        }
        const double got = wasserstein_1d(a, b);
        if (std::abs(got - oracle) > 1e-12) {
            detail = "wasserstein mismatch on trial " + std::to_string(trial) + ": got " +
                     std::to_string(got) + " oracle " + std::to_string(oracle);
            return false;
        }
    }
    return true;
}

bool check_performance(std::string& detail) {
    std::mt19937_64 rng(2024);
    Instance inst;
    ScanProtocol& p = inst.scan.protocol;
    p.slice_count = 47;
    p.b_values = {50.0, 400.0, 800.0};
    p.averages_per_b = {1, 1, 1};
    p.n_directions = 1;
    p.tr_ms = 1000.0;
    std::uniform_real_distribution<double> t_dist(0.0, 1.0);
    for (int i = 0; i < 3000; ++i) {
        inst.scan.slices.push_back({i, t_dist(rng), p.b_values[rng() % 3],
                                    static_cast<int>(rng() % 47), {}});
    }
    const SortedScanView view = sort_by_pt(inst.scan);
    const PrefixCoverage prefix = build_prefix(view, inst.scan.protocol);
    const DpTables tables = dp_optimal_bins(view, prefix, 10);
    const BinningResult result = reconstruct_partition(tables, 10, inst.scan, view);
    detail = "cost=" + std::to_string(result.total_cost);
    return result.k == 10;
}

bool check_navigator(std::string& detail) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        const int n = 400;
        MultiChannelSignal multi;
        multi.n_samples = n;
        multi.n_channels = 4;
        multi.sample_rate_hz = 20.0;
        multi.samples.resize(static_cast<std::size_t>(n) * 4);
        for (int i = 0; i < n; ++i) {
            const double t = i / 20.0;
            const double breath = std::sin(2.0 * 3.14159265358979 * t / 4.0);
            multi.samples[static_cast<std::size_t>(i) * 4 + 0] =
                breath + 0.02 * gauss(rng);
            for (int ch = 1; ch < 4; ++ch) {
                multi.samples[static_cast<std::size_t>(i) * 4 + ch] =
                    0.4 * breath + 0.8 * gauss(rng);
            }
        }
        const ChannelScore best = select_best_channel(multi);
        if (best.channel_index != 0) {
            detail = "seed " + std::to_string(seed) + " picked channel " +
                     std::to_string(best.channel_index);
            return false;
        }
    }

    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-100.0, 100.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> x(2 + rng() % 200);
        for (double& v : x) v = dist(rng);
        const std::vector<double> once = detrend_and_shift(x);
        const double min_v = *std::min_element(once.begin(), once.end());
        if (std::abs(min_v) > 1e-12) {
            detail = "detrended minimum " + std::to_string(min_v) + " not zero";
            return false;
        }
        const std::vector<double> twice = detrend_and_shift(once);
        for (std::size_t i = 0; i < once.size(); ++i) {
            if (std::abs(twice[i] - once[i]) > 1e-9) {
                detail = "detrend not idempotent at trial " + std::to_string(trial);
                return false;
            }
        }
    }
    return true;
}

} // namespace

int main() {
    run(1, "dp-vs-exhaustive-optimality", 10.0, check_dp_optimality);
    run(2, "dp-dominates-equal-count", 600.0, check_dominance);
    run(3, "sharing-monotone-no-adjacent", 600.0, check_sharing);
    run(4, "synthetic-benchmark-reduction", 120.0, check_reproduce_benchmark);
    run(5, "reduction-arithmetic", 1.0, check_arithmetic);
    run(6, "adc-recovery", 30.0, check_adc_recovery);
    run(7, "cov-ordering-corrected-vs-raw", 180.0, check_cov_ordering);
    run(8, "statistics-oracles", 60.0, check_statistics);
    run(9, "dp-performance-3000x10", 60.0, check_performance);
    run(10, "navigator-selection-detrend", 10.0, check_navigator);

    if (g_failures == 0) {
        std::printf("all acceptance checks passed\n");
    } else {
        std::printf("%d acceptance check(s) failed\n", g_failures);
    }
    return g_failures;
}

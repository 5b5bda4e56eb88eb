#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "respbin/sharing.hpp"
#include "respbin/scan_io.hpp"
#include "test_util.hpp"

using namespace respbin;
using testutil::TempDir;

namespace {

// Scan from explicit (t, s) pairs, one b-value.
Scan scan_from_ts(const std::vector<std::pair<double, int>>& rows, int slice_count) {
    Scan scan;
    scan.protocol = testutil::small_protocol(slice_count, 1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        scan.slices.push_back({static_cast<long long>(i), rows[i].first, 50.0,
                               rows[i].second, {}});
    }
    return scan;
}

struct Prepared {
    Scan scan;
    SortedScanView view;
    BinningResult binning;
    std::vector<BinGaussianModel> models;
    Membership probs;
};

Prepared prepare(Scan scan, int k) {
    Prepared p;
    p.scan = std::move(scan);
    p.view = sort_by_pt(p.scan);
    const PrefixCoverage prefix = build_prefix(p.view, p.scan.protocol);
    const DpTables tables = dp_optimal_bins(p.view, prefix, k);
    p.binning = reconstruct_partition(tables, k, p.scan, p.view);
    p.models = fit_bin_gaussians(p.view, p.binning);
    p.probs = membership(p.view, p.models);
    return p;
}

Prepared prepare_cuts(Scan scan, const std::vector<int>& cuts) {
    Prepared p;
    p.scan = std::move(scan);
    p.view = sort_by_pt(p.scan);
    p.binning = result_from_cuts(cuts, p.scan, p.view);
    p.models = fit_bin_gaussians(p.view, p.binning);
    p.probs = membership(p.view, p.models);
    return p;
}

} // namespace

TEST_SUITE_BEGIN("sharing");

TEST_CASE("gaussian fit: constant bin gets the sigma floor") {
    // one bin, t = [2,2,2]: global range 0 -> absolute floor 1e-12
    const Prepared p = prepare(scan_from_ts({{2.0, 0}, {2.0, 1}, {2.0, 2}}, 3), 1);
    REQUIRE(p.models.size() == 1);
    CHECK(p.models[0].mean == 2.0);
    CHECK(p.models[0].std == 1e-12);
    CHECK(p.models[0].weight == 3);
}

TEST_CASE("gaussian fit: population std and relative sigma floor") {
    // two bins: [1,2,3] and [11]; global t range 10 -> floor 1e-5
    const Prepared p =
        prepare_cuts(scan_from_ts({{1.0, 0}, {2.0, 1}, {3.0, 2}, {11.0, 0}}, 3), {3});
    REQUIRE(p.models.size() == 2);
    CHECK(p.models[0].mean == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(p.models[0].std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-14));
    CHECK(p.models[0].weight == 3);
    CHECK(p.models[1].mean == 11.0);
    CHECK(p.models[1].std == 1e-6 * 10.0);  // single-member bin floored
    CHECK(p.models[1].weight == 1);
}

TEST_CASE("membership with one bin is identically 1") {
    const Prepared p = prepare(scan_from_ts({{0.1, 0}, {0.5, 1}, {0.9, 2}}, 3), 1);
    for (int row = 0; row < 3; ++row) CHECK(p.probs.at(row, 0) == 1.0);
}

TEST_CASE("membership is symmetric at the midpoint of two equal bins") {
    // hand-built models: equal weight and std, means 2 and 8; a slice at
    // t = 5 is equidistant, so both memberships are exactly one half
    Scan scan = scan_from_ts({{5.0, 0}}, 1);
    const SortedScanView view = sort_by_pt(scan);
    const std::vector<BinGaussianModel> models = {{2.0, 1.0, 2}, {8.0, 1.0, 2}};
    const Membership probs = membership(view, models);
    CHECK(probs.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(probs.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("membership matches direct linear-space evaluation") {
    const Scan scan = testutil::random_scan(40, 80, 4, 2);
    const Prepared p = prepare(scan, 4);
    for (int row = 0; row < p.scan.size(); ++row) {
        const double t = p.scan.slices[row].t;
        std::vector<double> dens(4);
        double total = 0.0;
        for (int j = 0; j < 4; ++j) {
            const double z = (t - p.models[j].mean) / p.models[j].std;
            dens[j] = p.models[j].weight / p.models[j].std * std::exp(-0.5 * z * z);
            total += dens[j];
        }
        double row_sum = 0.0;
        for (int j = 0; j < 4; ++j) {
            CHECK(p.probs.at(row, j) == doctest::Approx(dens[j] / total).epsilon(1e-12));
            row_sum += p.probs.at(row, j);
        }
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("membership depends on relative, not absolute, bin weights") {
    const Scan scan = testutil::random_scan(41, 30, 3, 1);
    const Prepared p = prepare(scan, 3);
    std::vector<BinGaussianModel> doubled = p.models;
    for (auto& m : doubled) m.weight *= 2;
    const Membership scaled = membership(p.view, doubled);
    for (int row = 0; row < scan.size(); ++row) {
        for (int j = 0; j < 3; ++j) {
            CHECK(scaled.at(row, j) == doctest::Approx(p.probs.at(row, j)).epsilon(1e-12));
        }
    }
}

TEST_CASE("membership is serial/parallel identical") {
    const Scan scan = testutil::random_scan(42, 200, 5, 3);
    const Prepared p = prepare(scan, 5);
    const Membership serial = membership(p.view, p.models, Exec::serial);
    CHECK(serial.probs == p.probs.probs);
}

TEST_CASE("find_candidates returns adjacent-bin slices with the missing key") {
    // k = 3 bins of positions: bin0 {s0, s1}, bin1 {s0}, bin2 {s0, s1}
    const Scan scan = scan_from_ts(
        {{0.0, 0}, {0.1, 1}, {1.0, 0}, {2.0, 0}, {2.1, 1}}, 2);
    const Prepared p = prepare_cuts(scan, {2, 3});
    // bin 1 misses s = 1; candidates: acq 1 (bin 0) and acq 4 (bin 2)
    REQUIRE(p.binning.missing.size() == 1);
    CHECK(p.binning.missing[0] == MissingSlot{1, 0, 1});
    CHECK(find_candidates(p.scan, p.binning, p.binning.missing[0]) ==
          std::vector<int>{1, 4});
    // bin 0 can only draw from bin 1 (there is no bin -1), which has no s=1
    CHECK(find_candidates(p.scan, p.binning, {0, 0, 1}).empty());
    // bin 2 draws s=0 from bin 1: acq 2
    CHECK(find_candidates(p.scan, p.binning, {2, 0, 0}) == std::vector<int>{2});
}

TEST_CASE("share_metric is the gap/own probability ratio with a zero guard") {
    const Scan scan = testutil::random_scan(43, 40, 3, 2);
    const Prepared p = prepare(scan, 3);
    for (int row = 0; row < 40; ++row) {
        const int own = p.binning.labels[row];
        for (int gap : {own - 1, own + 1}) {  // only adjacent bins are legal
            if (gap < 0 || gap >= 3) continue;
            const double expected =
                p.probs.at(row, gap) / std::max(p.probs.at(row, own), 1e-300);
            CHECK(share_metric(p.probs, row, own, gap) == expected);
        }
    }
    CHECK_THROWS_AS(share_metric(p.probs, 0, 0, 2), ValidationError);
}

TEST_CASE("share_metric guard handles exactly-zero own probability") {
    // two bins 38.6+ sigmas apart: the far bin's probability underflows to 0
    const Scan scan = scan_from_ts(
        {{0.0, 0}, {1.0, 1}, {2.0, 2}, {1000.0, 0}, {1001.0, 1}, {1002.0, 2}}, 3);
    const Prepared p = prepare_cuts(scan, {3});
    // slice at t = 0 (row 0): own bin 1 (the far one) has probability 0
    REQUIRE(p.probs.at(0, 1) == 0.0);
    CHECK(share_metric(p.probs, 0, 1, 0) == p.probs.at(0, 0) / 1e-300);
    CHECK(share_metric(p.probs, 0, 0, 1) == 0.0);
}

TEST_CASE("fill happens only above the threshold, strictly") {
    // S = 3; bin 0 covers s0, s2 and misses interior s1 (isolated, non-edge);
    // bin 1 has an s1 slice close to bin 0's range
    const Scan scan = scan_from_ts(
        {{0.0, 0}, {0.2, 2}, {0.4, 1}, {0.6, 0}, {0.8, 2}}, 3);
    const Prepared p = prepare_cuts(scan, {2});
    REQUIRE(p.binning.missing.size() == 1);  // bin 0 misses s1; bin 1 is complete
    const MissingSlot slot{0, 0, 1};
    REQUIRE(std::count(p.binning.missing.begin(), p.binning.missing.end(), slot) == 1);
    const double sm = share_metric(p.probs, 2, p.binning.labels[2], 0);

    const SharingResult granted = fill_missing(p.scan, p.binning, p.probs, sm * 0.999);
    bool filled = false;
    for (const SharedAssignment& a : granted.assignments) {
        if (a.secondary_bin == 0 && a.acq_index == 2) {
            filled = true;
            CHECK(a.primary_bin == 1);
            CHECK(a.sm == sm);
            CHECK_FALSE(a.forced);
        }
    }
    CHECK(filled);

    // at T = sm the strict comparison refuses; the slot is interior and
    // isolated, so no force phase touches it
    const SharingResult refused = fill_missing(p.scan, p.binning, p.probs, sm);
    for (const SharedAssignment& a : refused.assignments) {
        CHECK_FALSE((a.secondary_bin == 0 && a.acq_index == 2));
    }
    CHECK(std::count(refused.residual_missing.begin(), refused.residual_missing.end(), slot) ==
          1);
    CHECK(refused.infeasible.empty());
}

TEST_CASE("edge slots are force-filled regardless of threshold") {
    // bin 0 misses s = 0 (an edge); candidate exists in bin 1
    const Scan scan = scan_from_ts(
        {{0.0, 1}, {0.2, 2}, {0.5, 0}, {0.7, 1}, {0.9, 2}}, 3);
    const Prepared p = prepare_cuts(scan, {2});
    const MissingSlot slot{0, 0, 0};
    REQUIRE(std::count(p.binning.missing.begin(), p.binning.missing.end(), slot) == 1);
    const SharingResult r = fill_missing(p.scan, p.binning, p.probs, 1e12);
    bool filled = false;
    for (const SharedAssignment& a : r.assignments) {
        if (a.secondary_bin == 0 && a.acq_index == 2) {
            filled = true;
            CHECK(a.forced);
        }
    }
    CHECK(filled);
    CHECK(std::count(r.residual_missing.begin(), r.residual_missing.end(), slot) == 0);
}

TEST_CASE("adjacent missing pairs are broken even below threshold") {
    // S = 4; bin 0 covers s0, s3 and misses the interior pair (s1, s2);
    // bin 1 has slices at both s1 and s2
    const Scan scan = scan_from_ts(
        {{0.0, 0}, {0.1, 3}, {0.5, 1}, {0.6, 2}, {0.9, 0}, {1.0, 3}}, 4);
    const Prepared p = prepare_cuts(scan, {2});
    REQUIRE(std::count(p.binning.missing.begin(), p.binning.missing.end(),
                       MissingSlot{0, 0, 1}) == 1);
    REQUIRE(std::count(p.binning.missing.begin(), p.binning.missing.end(),
                       MissingSlot{0, 0, 2}) == 1);

    const SharingResult r = fill_missing(p.scan, p.binning, p.probs, 1e12);
    // at least one member of the pair is force-filled, leaving no adjacent
    // residual pair inside bin 0
    std::set<int> residual_s;
    for (const MissingSlot& m : r.residual_missing) {
        if (m.bin == 0) residual_s.insert(m.s);
    }
    CHECK_FALSE((residual_s.count(1) && residual_s.count(2)));
    CHECK(r.infeasible.empty());
    bool forced_fill = false;
    for (const SharedAssignment& a : r.assignments) {
        if (a.secondary_bin == 0 && a.forced) forced_fill = true;
    }
    CHECK(forced_fill);
}

TEST_CASE("unbreakable adjacent pairs are flagged infeasible") {
    // bin 0 misses interior pair (s1, s2) and bin 1 has no slice at either
    // position, so no candidate exists for either member
    const Scan scan = scan_from_ts(
        {{0.0, 0}, {0.1, 3}, {0.5, 0}, {0.6, 3}, {0.9, 0}, {1.0, 3}}, 4);
    const Prepared p = prepare_cuts(scan, {2});
    const SharingResult r = fill_missing(p.scan, p.binning, p.probs, 0.1);
    for (const MissingSlot& slot : {MissingSlot{0, 0, 1}, MissingSlot{0, 0, 2}}) {
        CHECK(std::count(r.residual_missing.begin(), r.residual_missing.end(), slot) == 1);
        CHECK(std::count(r.infeasible.begin(), r.infeasible.end(), slot) == 1);
    }
}

TEST_CASE("each candidate slice fills at most one slot") {
    for (std::uint64_t seed = 50; seed < 70; ++seed) {
        std::mt19937_64 rng(seed);
        const Scan scan = testutil::random_scan(seed, 30 + static_cast<int>(rng() % 120),
                                                2 + static_cast<int>(rng() % 6),
                                                1 + static_cast<int>(rng() % 3));
        const int k = std::min<int>(2 + static_cast<int>(rng() % 6), scan.size());
        const Prepared p = prepare(scan, k);
        const SharingResult r = fill_missing(p.scan, p.binning, p.probs, 0.1);
        std::set<int> used;
        for (const SharedAssignment& a : r.assignments) {
            CHECK(used.insert(a.acq_index).second);
        }
    }
}

TEST_CASE("assignments are structurally consistent with scan and binning") {
    const Scan scan = testutil::random_scan(71, 150, 6, 3);
    const Prepared p = prepare(scan, 6);
    const SharingResult r = fill_missing(p.scan, p.binning, p.probs, 0.1);
    const std::set<MissingSlot> phase1(p.binning.missing.begin(), p.binning.missing.end());
    std::set<MissingSlot> filled;
    for (const SharedAssignment& a : r.assignments) {
        CHECK(std::abs(a.primary_bin - a.secondary_bin) == 1);
        // the donating slice's primary bin matches its binning label
        int row = -1;
        for (int i = 0; i < scan.size(); ++i) {
            if (scan.slices[i].acq_index == a.acq_index) row = i;
        }
        REQUIRE(row >= 0);
        CHECK(p.binning.labels[row] == a.primary_bin);
        // the filled slot was indeed missing in phase 1
        const MissingSlot slot{a.secondary_bin,
                               scan.protocol.b_index(scan.slices[row].b),
                               scan.slices[row].s};
        CHECK(phase1.count(slot) == 1);
        CHECK(filled.insert(slot).second);  // one fill per slot
    }
    // residual = phase1 minus filled
    std::set<MissingSlot> residual(r.residual_missing.begin(), r.residual_missing.end());
    CHECK(residual.size() + filled.size() == phase1.size());
    for (const MissingSlot& slot : residual) CHECK(phase1.count(slot) == 1);
    CHECK(std::is_sorted(r.residual_missing.begin(), r.residual_missing.end()));
}

TEST_CASE("raising the threshold never fills more slots") {
    for (std::uint64_t seed = 80; seed < 90; ++seed) {
        const Scan scan = testutil::random_scan(seed, 100, 5, 2);
        const Prepared p = prepare(scan, 5);
        std::size_t prev_assignments = std::numeric_limits<std::size_t>::max();
        std::size_t prev_residual = 0;
        for (double t : {0.0, 0.05, 0.1, 0.5, 1.0, 10.0}) {
            const SharingResult r = fill_missing(p.scan, p.binning, p.probs, t);
            CHECK(r.assignments.size() <= prev_assignments);
            CHECK(r.residual_missing.size() >= prev_residual);
            prev_assignments = r.assignments.size();
            prev_residual = r.residual_missing.size();
        }
    }
}

TEST_CASE("select_optimal_k picks the largest k under the residual bound") {
    const Scan scan = testutil::random_scan(91, 400, 8, 3);
    const int k_max = 8;
    const OptimalKResult chosen = select_optimal_k(scan, k_max, 0.1, 0.02);
    REQUIRE(!chosen.fallback);

    // oracle: recompute the residual fraction for every k independently
    const SortedScanView view = sort_by_pt(scan);
    const PrefixCoverage prefix = build_prefix(view, scan.protocol);
    const DpTables tables = dp_optimal_bins(view, prefix, k_max);
    int expected = -1;
    for (int k = 1; k <= k_max; ++k) {
        const BinningResult binning = reconstruct_partition(tables, k, scan, view);
        const auto models = fit_bin_gaussians(view, binning);
        const Membership probs = membership(view, models);
        const SharingResult sharing = fill_missing(scan, binning, probs, 0.1);
        const double frac =
            static_cast<double>(sharing.residual_missing.size()) /
            (static_cast<double>(scan.protocol.n_b()) * k * scan.protocol.slice_count);
        if (frac < 0.02) expected = k;
    }
    REQUIRE(expected >= 1);
    CHECK(chosen.k == expected);
    CHECK(chosen.binning.k == expected);
    CHECK(chosen.sharing.threshold == 0.1);
}

TEST_CASE("select_optimal_k falls back to k = 1 when nothing qualifies") {
    // 3 slices over S = 4: every k leaves most combinations missing
    const Scan scan = scan_from_ts({{0.0, 0}, {0.5, 1}, {1.0, 2}}, 4);
    const OptimalKResult r = select_optimal_k(scan, 3, 0.1, 0.02);
    CHECK(r.fallback);
    CHECK(r.k == 1);
    CHECK(r.binning.k == 1);
}

TEST_CASE("select_optimal_k rejects invalid k_max") {
    const Scan scan = testutil::random_scan(92, 10, 2, 1);
    CHECK_THROWS_AS(select_optimal_k(scan, 0, 0.1), ValidationError);
    CHECK_THROWS_AS(select_optimal_k(scan, 11, 0.1), ValidationError);
}

TEST_CASE("sharing result JSON round-trips") {
    TempDir dir;
    const Scan scan = testutil::random_scan(93, 120, 5, 3);
    const Prepared p = prepare(scan, 5);
    const SharingResult r = fill_missing(p.scan, p.binning, p.probs, 0.1);
    const auto path = dir / "sharing.json";
    save_sharing_result(r, scan.protocol, path);
    const SharingResult back = load_sharing_result(path, scan.protocol);
    CHECK(back.threshold == r.threshold);
    CHECK(back.assignments == r.assignments);
    CHECK(back.residual_missing == r.residual_missing);
    CHECK(back.infeasible == r.infeasible);
}

TEST_SUITE_END();

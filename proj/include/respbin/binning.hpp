#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include "respbin/scan.hpp"
#include "respbin/threads.hpp"

namespace respbin {

/// Slices reordered by ascending PT value (stable on ties by acq_index).
/// `order[r]` is the row index into Scan::slices of the r-th sorted slice.
struct SortedScanView {
    std::vector<int> order;
    std::vector<double> t_sorted;
    std::vector<SliceKey> keys_sorted;
    std::vector<int> b_index_sorted;  ///< protocol b index per sorted slice

    int size() const { return static_cast<int>(order.size()); }
};

SortedScanView sort_by_pt(const Scan& scan);

/// counts[i][b][s] = number of slices among the first i sorted slices with
/// key (b, s). Stored flat with stride B*S per i.
struct PrefixCoverage {
    int n = 0;    ///< slice count N
    int n_b = 0;  ///< B
    int n_s = 0;  ///< S
    std::vector<std::int32_t> counts;  ///< (n+1) * n_b * n_s

    int combos() const { return n_b * n_s; }
    const std::int32_t* row(int i) const {
        return counts.data() + static_cast<std::size_t>(i) * combos();
    }
    std::int32_t count(int i, int b_index, int s) const {
        return row(i)[b_index * n_s + s];
    }
};

PrefixCoverage build_prefix(const SortedScanView& view, const ScanProtocol& protocol);

/// Number of (b, s) combinations with zero coverage in the sorted range [i, n).
int range_missing(const PrefixCoverage& prefix, int i, int n);

/// Bottom-up cost/argmin tables. Row k answers "k non-empty bins"; cells
/// where no such partition exists hold kInfeasible.
struct DpTables {
    static constexpr std::int32_t kInfeasible = std::numeric_limits<std::int32_t>::max() / 2;

    int k_max = 0;
    int n = 0;
    std::vector<std::int32_t> cost;  ///< (k_max+1) * (n+1), row 0 is the empty-partition sentinel
    std::vector<std::int32_t> arg;   ///< optimal last partition point i, -1 where undefined

    std::int32_t cost_at(int k, int n_slices) const {
        return cost[static_cast<std::size_t>(k) * (n + 1) + n_slices];
    }
    std::int32_t arg_at(int k, int n_slices) const {
        return arg[static_cast<std::size_t>(k) * (n + 1) + n_slices];
    }
};

/// Fills cost/arg for every k in [1, k_max] and every prefix length n.
/// cost(k, N) is the exact minimum number of missing (bin, b, s) combinations
/// over all contiguous partitions into k non-empty bins; argmin ties break to
/// the smallest last partition point.
DpTables dp_optimal_bins(const SortedScanView& view, const PrefixCoverage& prefix, int k_max,
                         Exec exec = Exec::parallel);

/// A (bin, b, s) combination with zero coverage. b carried as protocol index.
struct MissingSlot {
    int bin = 0;
    int b_index = 0;
    int s = 0;

    auto operator<=>(const MissingSlot&) const = default;
};

struct BinningResult {
    int k = 0;
    std::vector<int> boundaries;      ///< k-1 strictly increasing cuts in sorted-index space
    std::vector<int> labels;          ///< primary bin per slice row (acquisition order)
    std::vector<MissingSlot> missing; ///< sorted by (bin, b_index, s)
    long long total_cost = 0;         ///< == missing.size()
};

/// Walks the arg table backwards from (k, N) and materializes the partition.
BinningResult reconstruct_partition(const DpTables& tables, int k, const Scan& scan,
                                    const SortedScanView& view);

/// Equal-count baseline: contiguous sorted runs of size floor(N/k) or
/// ceil(N/k), the first (N mod k) bins taking the larger size.
BinningResult standard_equal_count_bins(const SortedScanView& view, const Scan& scan, int k);

/// Shared ledger construction: labels + missing list + cost for a cut set.
BinningResult result_from_cuts(const std::vector<int>& cuts, const Scan& scan,
                               const SortedScanView& view);

/// JSON round-trip. The file stores b-values (not indices) for missing slots,
/// so loading needs the protocol to map them back.
void save_binning_result(const BinningResult& result, const ScanProtocol& protocol,
                         const std::filesystem::path& path);
BinningResult load_binning_result(const std::filesystem::path& path, const ScanProtocol& protocol);

} // namespace respbin

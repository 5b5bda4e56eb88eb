#pragma once

#include <filesystem>
#include <vector>

#include "respbin/binning.hpp"
#include "respbin/scan.hpp"
#include "respbin/threads.hpp"

namespace respbin {

/// Gaussian over the PT values of one bin's members.
struct BinGaussianModel {
    double mean = 0.0;
    double std = 0.0;    ///< population std, floored at sigma_min
    int weight = 0;      ///< member count w_j
};

/// Row-stochastic membership matrix; rows follow Scan::slices order.
struct Membership {
    int n = 0;
    int k = 0;
    std::vector<double> probs;  ///< n * k, row-major

    double at(int slice_row, int bin) const {
        return probs[static_cast<std::size_t>(slice_row) * k + bin];
    }
};

/// One slice granted a secondary bin to fill a missing combination.
struct SharedAssignment {
    int acq_index = 0;
    int primary_bin = 0;
    int secondary_bin = 0;
    double sm = 0.0;    ///< share metric of this fill
    bool forced = false; ///< filled under a consecutive/edge guarantee, not the threshold

    auto operator<=>(const SharedAssignment&) const = default;
};

struct SharingResult {
    double threshold = 0.0;
    std::vector<SharedAssignment> assignments;
    std::vector<MissingSlot> residual_missing;  ///< sorted by (bin, b_index, s)
    /// Residual slots in an adjacent missing pair that no candidate could
    /// break. Downstream assembly zero-fills exactly these (they defeat
    /// two-neighbor interpolation) instead of erroring; isolated residual
    /// slots stay out — interpolation or edge replication recovers them.
    std::vector<MissingSlot> infeasible;
};

/// Per-bin Gaussians over member t values. sigma floor: 1e-6 x global t range
/// (1e-12 absolute when the range is zero) so single-value bins stay finite.
std::vector<BinGaussianModel> fit_bin_gaussians(const SortedScanView& view,
                                                const BinningResult& result);

/// Weighted membership p(i, j) = w_j PD(i, j) / sum_a w_a PD(i, a), evaluated
/// in log space. Rows are indexed by slice row (Scan::slices order).
Membership membership(const SortedScanView& view, const std::vector<BinGaussianModel>& models,
                      Exec exec = Exec::parallel);

/// Slices with the missing slot's (b, s) key whose primary bin is bin +- 1.
/// Returned as acq_index values in ascending order.
std::vector<int> find_candidates(const Scan& scan, const BinningResult& result,
                                 const MissingSlot& missing);

/// SM(i) = p(i, gap bin) / p(i, own bin), with a 1e-300 division guard.
double share_metric(const Membership& probs, int slice_row, int own_bin, int gap_bin);

/// Greedy fill of the phase-1 missing ledger:
///  (b) slots in descending order of their initially-best candidate's SM
///      (ties by (bin, b, s)); a slot fills only if that SM > T strictly and
///      its initially-best candidate is still unused;
///  (c) remaining adjacent missing pairs within a (bin, b) volume are broken
///      by force-filling the member whose best still-available candidate has
///      the higher SM (tie: lower s), repeated to fixpoint;
///  (d) remaining edge slots (s = 0 or S-1) are force-filled when any
///      candidate is still available, regardless of T.
/// Each candidate slice fills at most one slot across all phases.
SharingResult fill_missing(const Scan& scan, const BinningResult& result, const Membership& probs,
                           double threshold);

struct OptimalKResult {
    int k = 1;
    bool fallback = false;  ///< no k met the residual bound; k = 1 returned
    BinningResult binning;
    SharingResult sharing;
};

/// One DP fill to k_max, then per-k reconstruction + sharing; picks the
/// largest k whose residual missing fraction over B*k*S is strictly below
/// `missing_threshold`. Falls back to k = 1 with a warning flag if none is.
OptimalKResult select_optimal_k(const Scan& scan, int k_max, double threshold,
                                double missing_threshold = 0.02, Exec exec = Exec::parallel);

void save_sharing_result(const SharingResult& result, const ScanProtocol& protocol,
                         const std::filesystem::path& path);
SharingResult load_sharing_result(const std::filesystem::path& path,
                                  const ScanProtocol& protocol);

} // namespace respbin

#include "respbin/binning.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "respbin/common.hpp"
#include "respbin/scan_io.hpp"

namespace respbin {

SortedScanView sort_by_pt(const Scan& scan) {
    const int n = scan.size();
    if (n == 0) {
        throw ValidationError("sort_by_pt: scan has no slices");
    }
    SortedScanView view;
    view.order.resize(n);
    std::iota(view.order.begin(), view.order.end(), 0);
    std::sort(view.order.begin(), view.order.end(), [&](int lhs, int rhs) {
        const SliceRecord& a = scan.slices[lhs];
        const SliceRecord& b = scan.slices[rhs];
        if (a.t != b.t) return a.t < b.t;
        return a.acq_index < b.acq_index;
    });
    view.t_sorted.reserve(n);
    view.keys_sorted.reserve(n);
    view.b_index_sorted.reserve(n);
    for (int row : view.order) {
        const SliceRecord& rec = scan.slices[row];
        view.t_sorted.push_back(rec.t);
        view.keys_sorted.push_back({rec.b, rec.s});
        const int bi = scan.protocol.b_index(rec.b);
        if (bi < 0) {
            throw ValidationError("sort_by_pt: slice b-value not in protocol");
        }
        view.b_index_sorted.push_back(bi);
    }
    return view;
}

PrefixCoverage build_prefix(const SortedScanView& view, const ScanProtocol& protocol) {
    PrefixCoverage prefix;
    prefix.n = view.size();
    prefix.n_b = protocol.n_b();
    prefix.n_s = protocol.slice_count;
    const int combos = prefix.combos();
    prefix.counts.assign(static_cast<std::size_t>(prefix.n + 1) * combos, 0);
    for (int i = 0; i < prefix.n; ++i) {
        const std::int32_t* prev = prefix.counts.data() + static_cast<std::size_t>(i) * combos;
        std::int32_t* next = prefix.counts.data() + static_cast<std::size_t>(i + 1) * combos;
        std::copy(prev, prev + combos, next);
        const int slot = view.b_index_sorted[i] * prefix.n_s + view.keys_sorted[i].s;
        next[slot] += 1;
    }
    return prefix;
}

int range_missing(const PrefixCoverage& prefix, int i, int n) {
    if (i < 0 || n > prefix.n || i > n) {
        throw ValidationError("range_missing: require 0 <= i <= n <= N");
    }
    const std::int32_t* lo = prefix.row(i);
    const std::int32_t* hi = prefix.row(n);
    const int combos = prefix.combos();
    int zeros = 0;
    for (int c = 0; c < combos; ++c) {
        zeros += (hi[c] == lo[c]);
    }
    return zeros;
}

namespace {

// One DP cell: cost(k, n) = min over i in [k-1, n-1] of prev[i] + R(i, n),
// ties to the smallest i. Two exact prunes keep the scan cheap:
//  - prev[i] >= best can never strictly improve (R >= 0), skip;
//  - R(i, n) is non-decreasing in i (shrinking [i, n) only loses coverage),
//    so once the zero count reaches best no later i can win either — stop.
void dp_cell(const PrefixCoverage& prefix, const std::int32_t* prev, int k, int n,
             std::int32_t& out_cost, std::int32_t& out_arg) {
    const int combos = prefix.combos();
    std::int32_t best = DpTables::kInfeasible;
    std::int32_t best_i = -1;
    const std::int32_t* hi = prefix.row(n);
    for (int i = k - 1; i < n; ++i) {
        if (prev[i] >= best) continue;
        const std::int32_t* lo = prefix.row(i);
        std::int32_t zeros = 0;
        for (int c = 0; c < combos; ++c) {
            zeros += (hi[c] == lo[c]);
        }
        const std::int32_t total = prev[i] + zeros;
        if (total < best) {
            best = total;
            best_i = i;
        }
        if (zeros >= best) break;
    }
    out_cost = best;
    out_arg = best_i;
}

} // namespace

DpTables dp_optimal_bins(const SortedScanView& view, const PrefixCoverage& prefix, int k_max,
                         Exec exec) {
    const int n_total = view.size();
    if (k_max < 1 || k_max > n_total) {
        throw ValidationError("dp_optimal_bins: require 1 <= k_max <= N (non-empty bins)");
    }
    if (prefix.n != n_total) {
        throw ValidationError("dp_optimal_bins: prefix/view size mismatch");
    }

    DpTables tables;
    tables.k_max = k_max;
    tables.n = n_total;
    const std::size_t stride = static_cast<std::size_t>(n_total) + 1;
    tables.cost.assign(static_cast<std::size_t>(k_max + 1) * stride, DpTables::kInfeasible);
    tables.arg.assign(static_cast<std::size_t>(k_max + 1) * stride, -1);

    // Row 0 is the empty-partition sentinel: zero slices in zero bins costs 0.
    tables.cost[0] = 0;

    for (int k = 1; k <= k_max; ++k) {
        const std::int32_t* prev = tables.cost.data() + static_cast<std::size_t>(k - 1) * stride;
        std::int32_t* cost_row = tables.cost.data() + static_cast<std::size_t>(k) * stride;
        std::int32_t* arg_row = tables.arg.data() + static_cast<std::size_t>(k) * stride;
        if (exec == Exec::parallel) {
            const int nt = thread_count();
#pragma omp parallel for schedule(dynamic, 16) num_threads(nt)
            for (int n = k; n <= n_total; ++n) {
                dp_cell(prefix, prev, k, n, cost_row[n], arg_row[n]);
            }
        } else {
            for (int n = k; n <= n_total; ++n) {
                dp_cell(prefix, prev, k, n, cost_row[n], arg_row[n]);
            }
        }
    }
    return tables;
}

BinningResult result_from_cuts(const std::vector<int>& cuts, const Scan& scan,
                               const SortedScanView& view) {
    const int n = view.size();
    const int k = static_cast<int>(cuts.size()) + 1;
    // Bin j spans sorted positions [starts[j], starts[j+1]).
    std::vector<int> starts;
    starts.reserve(k + 1);
    starts.push_back(0);
    starts.insert(starts.end(), cuts.begin(), cuts.end());
    starts.push_back(n);
    for (int j = 0; j < k; ++j) {
        if (starts[j] >= starts[j + 1]) {
            throw ValidationError("result_from_cuts: cuts must leave every bin non-empty");
        }
    }

    BinningResult result;
    result.k = k;
    result.boundaries = cuts;
    result.labels.assign(n, -1);

    const int n_b = scan.protocol.n_b();
    const int n_s = scan.protocol.slice_count;
    std::vector<char> covered(static_cast<std::size_t>(k) * n_b * n_s, 0);
    for (int j = 0; j < k; ++j) {
        for (int r = starts[j]; r < starts[j + 1]; ++r) {
            result.labels[view.order[r]] = j;
            const int slot = (j * n_b + view.b_index_sorted[r]) * n_s + view.keys_sorted[r].s;
            covered[slot] = 1;
        }
    }
    for (int j = 0; j < k; ++j) {
        for (int bi = 0; bi < n_b; ++bi) {
            for (int s = 0; s < n_s; ++s) {
                if (!covered[(static_cast<std::size_t>(j) * n_b + bi) * n_s + s]) {
                    result.missing.push_back({j, bi, s});
                }
            }
        }
    }
    result.total_cost = static_cast<long long>(result.missing.size());
    return result;
}

BinningResult reconstruct_partition(const DpTables& tables, int k, const Scan& scan,
                                    const SortedScanView& view) {
    const int n = view.size();
    if (k < 1 || k > tables.k_max || k > n) {
        throw ValidationError("reconstruct_partition: require 1 <= k <= min(k_max, N)");
    }
    if (tables.n != n) {
        throw ValidationError("reconstruct_partition: tables built for a different N");
    }
    if (tables.cost_at(k, n) >= DpTables::kInfeasible) {
        throw ValidationError("reconstruct_partition: no feasible partition recorded");
    }

    std::vector<int> cuts;
    cuts.reserve(k - 1);
    int right = n;
    for (int kk = k; kk >= 2; --kk) {
        const int i = tables.arg_at(kk, right);
        if (i < 0) {
            throw ValidationError("reconstruct_partition: arg table has no entry on the walk");
        }
        cuts.push_back(i);
        right = i;
    }
    std::reverse(cuts.begin(), cuts.end());

    BinningResult result = result_from_cuts(cuts, scan, view);
    if (result.total_cost != tables.cost_at(k, n)) {
        throw ValidationError("reconstruct_partition: recounted cost disagrees with DP table");
    }
    return result;
}

BinningResult standard_equal_count_bins(const SortedScanView& view, const Scan& scan, int k) {
    const int n = view.size();
    if (k < 1 || k > n) {
        throw ValidationError("standard_equal_count_bins: require 1 <= k <= N");
    }
    const int base = n / k;
    const int remainder = n % k;
    std::vector<int> cuts;
    cuts.reserve(k - 1);
    int pos = 0;
    for (int j = 0; j < k - 1; ++j) {
        pos += base + (j < remainder ? 1 : 0);
        cuts.push_back(pos);
    }
    return result_from_cuts(cuts, scan, view);
}

void save_binning_result(const BinningResult& result, const ScanProtocol& protocol,
                         const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["k"] = result.k;
    doc["boundaries"] = result.boundaries;
    doc["labels"] = result.labels;
    nlohmann::json missing = nlohmann::json::array();
    for (const MissingSlot& slot : result.missing) {
        missing.push_back({{"bin", slot.bin},
                           {"b", protocol.b_values[slot.b_index]},
                           {"s", slot.s}});
    }
    doc["missing"] = std::move(missing);
    doc["total_cost"] = result.total_cost;
    atomic_write_text(path, doc.dump(2) + "\n");
}

BinningResult load_binning_result(const std::filesystem::path& path,
                                  const ScanProtocol& protocol) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open binning result: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed binning result JSON in " + path.string() + ": " + e.what());
    }
    BinningResult result;
    try {
        result.k = doc.at("k").get<int>();
        result.boundaries = doc.at("boundaries").get<std::vector<int>>();
        result.labels = doc.at("labels").get<std::vector<int>>();
        for (const nlohmann::json& slot : doc.at("missing")) {
            const double b = slot.at("b").get<double>();
            const int bi = protocol.b_index(b);
            if (bi < 0) {
                throw ValidationError("binning result references b-value absent from protocol");
            }
            result.missing.push_back({slot.at("bin").get<int>(), bi, slot.at("s").get<int>()});
        }
        result.total_cost = doc.at("total_cost").get<long long>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("binning result missing fields in " + path.string() + ": " + e.what());
    }
    return result;
}

} // namespace respbin

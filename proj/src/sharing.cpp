#include "respbin/sharing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "respbin/common.hpp"
#include "respbin/scan_io.hpp"

namespace respbin {

namespace {

constexpr double kSmGuard = 1e-300;

double sigma_floor(const SortedScanView& view) {
    const double range = view.t_sorted.back() - view.t_sorted.front();
    return range > 0.0 ? 1e-6 * range : 1e-12;
}

std::vector<int> bin_starts(const BinningResult& result, int n) {
    std::vector<int> starts;
    starts.reserve(result.k + 1);
    starts.push_back(0);
    starts.insert(starts.end(), result.boundaries.begin(), result.boundaries.end());
    starts.push_back(n);
    return starts;
}

} // namespace

std::vector<BinGaussianModel> fit_bin_gaussians(const SortedScanView& view,
                                                const BinningResult& result) {
    const int n = view.size();
    const std::vector<int> starts = bin_starts(result, n);
    const double sigma_min = sigma_floor(view);

    std::vector<BinGaussianModel> models;
    models.reserve(result.k);
    for (int j = 0; j < result.k; ++j) {
        const int lo = starts[j];
        const int hi = starts[j + 1];
        if (lo >= hi) {
            throw ValidationError("fit_bin_gaussians: empty bin " + std::to_string(j));
        }
        const int count = hi - lo;
        double mean = 0.0;
        for (int r = lo; r < hi; ++r) mean += view.t_sorted[r];
        mean /= count;
        double var = 0.0;
        for (int r = lo; r < hi; ++r) {
            const double d = view.t_sorted[r] - mean;
            var += d * d;
        }
        var /= count;  // population variance
        models.push_back({mean, std::max(std::sqrt(var), sigma_min), count});
    }
    return models;
}

Membership membership(const SortedScanView& view, const std::vector<BinGaussianModel>& models,
                      Exec exec) {
    const int n = view.size();
    const int k = static_cast<int>(models.size());
    if (k < 1) {
        throw ValidationError("membership: need at least one bin model");
    }

    // Per-model constants of the log-density.
    std::vector<double> log_w(k), inv_std(k), mean(k);
    for (int j = 0; j < k; ++j) {
        if (!(models[j].std > 0.0) || models[j].weight < 1) {
            throw ValidationError("membership: degenerate bin model");
        }
        log_w[j] = std::log(static_cast<double>(models[j].weight)) - std::log(models[j].std);
        inv_std[j] = 1.0 / models[j].std;
        mean[j] = models[j].mean;
    }

    Membership result;
    result.n = n;
    result.k = k;
    result.probs.assign(static_cast<std::size_t>(n) * k, 0.0);

    auto fill_row = [&](int r) {
        const double t = view.t_sorted[r];
        double* row = result.probs.data() + static_cast<std::size_t>(view.order[r]) * k;
        double max_log = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) {
            const double z = (t - mean[j]) * inv_std[j];
            row[j] = log_w[j] - 0.5 * z * z;  // shared constants cancel in the ratio
            max_log = std::max(max_log, row[j]);
        }
        if (!std::isfinite(max_log)) {
            // Unreachable for finite t and positive std; assign the nearest-mean bin.
            int nearest = 0;
            for (int j = 1; j < k; ++j) {
                if (std::abs(t - mean[j]) < std::abs(t - mean[nearest])) nearest = j;
            }
            for (int j = 0; j < k; ++j) row[j] = (j == nearest) ? 1.0 : 0.0;
            return;
        }
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(row[j] - max_log);
        for (int j = 0; j < k; ++j) row[j] = std::exp(row[j] - max_log) / denom;
    };

    if (exec == Exec::parallel) {
        const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int r = 0; r < n; ++r) fill_row(r);
    } else {
        for (int r = 0; r < n; ++r) fill_row(r);
    }
    return result;
}

std::vector<int> find_candidates(const Scan& scan, const BinningResult& result,
                                 const MissingSlot& missing) {
    if (static_cast<int>(result.labels.size()) != scan.size()) {
        throw ValidationError("find_candidates: labels do not match the scan");
    }
    std::vector<int> acqs;
    for (int row = 0; row < scan.size(); ++row) {
        const SliceRecord& rec = scan.slices[row];
        if (rec.s != missing.s) continue;
        if (scan.protocol.b_index(rec.b) != missing.b_index) continue;
        const int bin = result.labels[row];
        if (bin == missing.bin - 1 || bin == missing.bin + 1) {
            acqs.push_back(rec.acq_index);
        }
    }
    std::sort(acqs.begin(), acqs.end());
    return acqs;
}

double share_metric(const Membership& probs, int slice_row, int own_bin, int gap_bin) {
    if (std::abs(own_bin - gap_bin) != 1) {
        throw ValidationError("share_metric: bins must be adjacent");
    }
    return probs.at(slice_row, gap_bin) / std::max(probs.at(slice_row, own_bin), kSmGuard);
}

namespace {

struct Candidate {
    double sm = 0.0;
    int acq = 0;
    int row = 0;
};

struct SlotState {
    MissingSlot slot;
    std::vector<Candidate> candidates;  ///< acq-ascending
    double initial_best_sm = -1.0;
    int initial_best_pos = -1;          ///< index into candidates
};

// Highest-SM candidate not yet consumed; ties go to the lowest acq_index
// (candidates are stored acq-ascending, so strict > keeps the first).
int best_available(const SlotState& state, const std::vector<char>& used_row) {
    int best = -1;
    for (int c = 0; c < static_cast<int>(state.candidates.size()); ++c) {
        if (used_row[state.candidates[c].row]) continue;
        if (best < 0 || state.candidates[c].sm > state.candidates[best].sm) best = c;
    }
    return best;
}

} // namespace

SharingResult fill_missing(const Scan& scan, const BinningResult& result, const Membership& probs,
                           double threshold) {
    if (threshold < 0.0) {
        throw ValidationError("fill_missing: threshold must be >= 0");
    }
    if (probs.n != scan.size() || probs.k != result.k) {
        throw ValidationError("fill_missing: membership shape does not match scan/binning");
    }

    std::unordered_map<int, int> acq_to_row;
    acq_to_row.reserve(scan.size());
    for (int row = 0; row < scan.size(); ++row) {
        acq_to_row.emplace(scan.slices[row].acq_index, row);
    }

    const int n_b = scan.protocol.n_b();
    const int n_s = scan.protocol.slice_count;
    auto flat = [&](int bin, int b_index, int s) {
        return (static_cast<std::size_t>(bin) * n_b + b_index) * n_s + s;
    };

    // Per-slot candidate pools with share metrics, plus a (bin,b,s) -> slot map.
    std::vector<SlotState> slots(result.missing.size());
    std::vector<int> slot_at(static_cast<std::size_t>(result.k) * n_b * n_s, -1);
    for (std::size_t m = 0; m < result.missing.size(); ++m) {
        SlotState& state = slots[m];
        state.slot = result.missing[m];
        slot_at[flat(state.slot.bin, state.slot.b_index, state.slot.s)] = static_cast<int>(m);
        for (int acq : find_candidates(scan, result, state.slot)) {
            const int row = acq_to_row.at(acq);
            const double sm = share_metric(probs, row, result.labels[row], state.slot.bin);
            state.candidates.push_back({sm, acq, row});
            const int pos = static_cast<int>(state.candidates.size()) - 1;
            if (state.initial_best_pos < 0 || sm > state.initial_best_sm) {
                state.initial_best_sm = sm;
                state.initial_best_pos = pos;
            }
        }
    }

    SharingResult out;
    out.threshold = threshold;
    std::vector<char> used_row(scan.size(), 0);
    std::vector<char> still_missing(slot_at.size(), 0);
    for (const MissingSlot& slot : result.missing) {
        still_missing[flat(slot.bin, slot.b_index, slot.s)] = 1;
    }

    auto fill = [&](SlotState& state, int candidate_pos, bool forced) {
        const Candidate& cand = state.candidates[candidate_pos];
        used_row[cand.row] = 1;
        out.assignments.push_back(
            {cand.acq, result.labels[cand.row], state.slot.bin, cand.sm, forced});
        still_missing[flat(state.slot.bin, state.slot.b_index, state.slot.s)] = 0;
    };

    // Phase (b): threshold fills in descending order of the slot's initially
    // best SM; a slot is bound to that one candidate — if an earlier slot
    // consumed it, the slot waits for the guarantee phases.
    std::vector<int> order(slots.size());
    for (std::size_t m = 0; m < slots.size(); ++m) order[m] = static_cast<int>(m);
    std::sort(order.begin(), order.end(), [&](int lhs, int rhs) {
        if (slots[lhs].initial_best_sm != slots[rhs].initial_best_sm) {
            return slots[lhs].initial_best_sm > slots[rhs].initial_best_sm;
        }
        return slots[lhs].slot < slots[rhs].slot;
    });
    for (int m : order) {
        SlotState& state = slots[m];
        if (state.initial_best_pos < 0) continue;
        if (state.initial_best_sm <= threshold) continue;
        if (used_row[state.candidates[state.initial_best_pos].row]) continue;
        fill(state, state.initial_best_pos, false);
    }

    // Phase (c): break every remaining adjacent missing pair within a (bin,b)
    // volume by force-filling the member whose best available candidate has
    // the higher SM (tie: lower s). Candidates only get consumed, so a pair
    // with no candidates on either side is permanently unbreakable.
    bool progress = true;
    while (progress) {
        progress = false;
        for (int bin = 0; bin < result.k; ++bin) {
            for (int bi = 0; bi < n_b; ++bi) {
                for (int s = 0; s + 1 < n_s; ++s) {
                    if (!still_missing[flat(bin, bi, s)] || !still_missing[flat(bin, bi, s + 1)]) {
                        continue;
                    }
                    SlotState& lo = slots[slot_at[flat(bin, bi, s)]];
                    SlotState& hi = slots[slot_at[flat(bin, bi, s + 1)]];
                    const int lo_best = best_available(lo, used_row);
                    const int hi_best = best_available(hi, used_row);
                    if (lo_best < 0 && hi_best < 0) continue;
                    bool pick_lo;
                    if (lo_best < 0) {
                        pick_lo = false;
                    } else if (hi_best < 0) {
                        pick_lo = true;
                    } else {
                        pick_lo = lo.candidates[lo_best].sm >= hi.candidates[hi_best].sm;
                    }
                    if (pick_lo) {
                        fill(lo, lo_best, true);
                    } else {
                        fill(hi, hi_best, true);
                    }
                    progress = true;
                }
            }
        }
    }

    // Phase (d): edge slots are guaranteed a fill whenever any candidate is
    // still available, regardless of the threshold.
    for (SlotState& state : slots) {
        const int s = state.slot.s;
        if (s != 0 && s != n_s - 1) continue;
        if (!still_missing[flat(state.slot.bin, state.slot.b_index, s)]) continue;
        const int best = best_available(state, used_row);
        if (best >= 0) fill(state, best, true);
    }

    // Residual ledger, plus the slots whose guarantees could not be honored.
    for (int bin = 0; bin < result.k; ++bin) {
        for (int bi = 0; bi < n_b; ++bi) {
            for (int s = 0; s < n_s; ++s) {
                if (!still_missing[flat(bin, bi, s)]) continue;
                if (slot_at[flat(bin, bi, s)] < 0) continue;  // was never missing
                out.residual_missing.push_back({bin, bi, s});
                // An isolated residual slot (even at an edge) is recoverable
                // downstream; only members of unbreakable adjacent pairs are
                // flagged for the zero-fill path.
                const bool paired = (s > 0 && still_missing[flat(bin, bi, s - 1)]) ||
                                    (s + 1 < n_s && still_missing[flat(bin, bi, s + 1)]);
                if (paired) {
                    out.infeasible.push_back({bin, bi, s});
                }
            }
        }
    }
    return out;
}

OptimalKResult select_optimal_k(const Scan& scan, int k_max, double threshold,
                                double missing_threshold, Exec exec) {
    if (k_max < 1 || k_max > scan.size()) {
        throw ValidationError("select_optimal_k: require 1 <= k_max <= N");
    }
    const SortedScanView view = sort_by_pt(scan);
    const PrefixCoverage prefix = build_prefix(view, scan.protocol);
    const DpTables tables = dp_optimal_bins(view, prefix, k_max, exec);

    const double expected_per_k = static_cast<double>(scan.protocol.n_b()) *
                                  scan.protocol.slice_count;
    OptimalKResult out;
    bool found = false;
    for (int k = 1; k <= k_max; ++k) {
        BinningResult binning = reconstruct_partition(tables, k, scan, view);
        const std::vector<BinGaussianModel> models = fit_bin_gaussians(view, binning);
        const Membership probs = membership(view, models, exec);
        SharingResult sharing = fill_missing(scan, binning, probs, threshold);
        const double ratio =
            static_cast<double>(sharing.residual_missing.size()) / (expected_per_k * k);
        if (ratio < missing_threshold) {
            out.k = k;
            out.binning = std::move(binning);
            out.sharing = std::move(sharing);
            found = true;
        } else if (!found && k == 1) {
            // Provisional fallback; replaced if any k qualifies.
            out.binning = std::move(binning);
            out.sharing = std::move(sharing);
        }
    }
    out.fallback = !found;
    if (out.fallback) out.k = 1;
    return out;
}

void save_sharing_result(const SharingResult& result, const ScanProtocol& protocol,
                         const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["threshold"] = result.threshold;
    nlohmann::json assignments = nlohmann::json::array();
    for (const SharedAssignment& a : result.assignments) {
        assignments.push_back({{"acq_index", a.acq_index},
                               {"primary_bin", a.primary_bin},
                               {"secondary_bin", a.secondary_bin},
                               {"sm", a.sm},
                               {"forced", a.forced}});
    }
    doc["assignments"] = std::move(assignments);
    auto slot_array = [&](const std::vector<MissingSlot>& slots) {
        nlohmann::json arr = nlohmann::json::array();
        for (const MissingSlot& slot : slots) {
            arr.push_back({{"bin", slot.bin},
                           {"b", protocol.b_values[slot.b_index]},
                           {"s", slot.s}});
        }
        return arr;
    };
    doc["residual_missing"] = slot_array(result.residual_missing);
    doc["infeasible"] = slot_array(result.infeasible);
    atomic_write_text(path, doc.dump(2) + "\n");
}

SharingResult load_sharing_result(const std::filesystem::path& path,
                                  const ScanProtocol& protocol) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open sharing result: " + path.string());
    }
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed sharing result JSON in " + path.string() + ": " + e.what());
    }
    SharingResult result;
    try {
        result.threshold = doc.at("threshold").get<double>();
        for (const nlohmann::json& a : doc.at("assignments")) {
            result.assignments.push_back({a.at("acq_index").get<int>(),
                                          a.at("primary_bin").get<int>(),
                                          a.at("secondary_bin").get<int>(),
                                          a.at("sm").get<double>(),
                                          a.at("forced").get<bool>()});
        }
        auto read_slots = [&](const char* key, std::vector<MissingSlot>& target) {
            for (const nlohmann::json& slot : doc.at(key)) {
                const int bi = protocol.b_index(slot.at("b").get<double>());
                if (bi < 0) {
                    throw ValidationError("sharing result references b-value absent from protocol");
                }
                target.push_back({slot.at("bin").get<int>(), bi, slot.at("s").get<int>()});
            }
        };
        read_slots("residual_missing", result.residual_missing);
        read_slots("infeasible", result.infeasible);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("sharing result missing fields in " + path.string() + ": " + e.what());
    }
    return result;
}

} // namespace respbin

#include "respbin/volume_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "respbin/common.hpp"
#include "respbin/scan_io.hpp"

namespace respbin {

Orientation orientation_from_string(const std::string& name) {
    if (name == "expiration_low_t") return Orientation::expiration_low_t;
    if (name == "expiration_high_t") return Orientation::expiration_high_t;
    throw ValidationError("unknown orientation: '" + name + "'");
}

std::string orientation_to_string(Orientation orientation) {
    return orientation == Orientation::expiration_low_t ? "expiration_low_t"
                                                        : "expiration_high_t";
}

int pick_reference_bin(const BinningResult& binning, Orientation orientation) {
    if (binning.k < 1) {
        throw ValidationError("pick_reference_bin: k must be >= 1");
    }
    return orientation == Orientation::expiration_low_t ? 0 : binning.k - 1;
}

namespace {

Image2D mean_of(const std::vector<const Image2D*>& members) {
    Image2D out(members.front()->rows, members.front()->cols);
    for (const Image2D* img : members) {
        for (std::size_t p = 0; p < out.data.size(); ++p) out.data[p] += img->data[p];
    }
    const double inv = 1.0 / static_cast<double>(members.size());
    for (double& v : out.data) v *= inv;
    return out;
}

} // namespace

AssembledVolumes assemble(const Scan& scan, const BinningResult& binning,
                          const SharingResult& sharing, Exec exec) {
    if (!scan.has_pixels()) {
        throw ValidationError("assemble: every slice needs a pixel payload");
    }
    if (static_cast<int>(binning.labels.size()) != scan.size()) {
        throw ValidationError("assemble: labels do not match the scan");
    }
    if (scan.protocol.rows < 1 || scan.protocol.cols < 1) {
        throw ValidationError("assemble: protocol has no pixel grid");
    }

    const int k = binning.k;
    const int n_b = scan.protocol.n_b();
    const int n_s = scan.protocol.slice_count;
    auto flat = [&](int bin, int bi, int s) {
        return (static_cast<std::size_t>(bin) * n_b + bi) * n_s + s;
    };
    const std::size_t n_slots = static_cast<std::size_t>(k) * n_b * n_s;

    // Member rows per (bin, b, s): primary bin members plus shared slices
    // granted this bin as their secondary (shared slices land in both bins).
    std::vector<std::vector<int>> members(n_slots);
    for (int row = 0; row < scan.size(); ++row) {
        const SliceRecord& rec = scan.slices[row];
        const int bi = scan.protocol.b_index(rec.b);
        const int bin = binning.labels[row];
        if (bin < 0 || bin >= k) {
            throw ValidationError("assemble: slice label out of range");
        }
        members[flat(bin, bi, rec.s)].push_back(row);
    }
    std::unordered_map<int, int> acq_to_row;
    acq_to_row.reserve(scan.size());
    for (int row = 0; row < scan.size(); ++row) {
        acq_to_row.emplace(scan.slices[row].acq_index, row);
    }
    for (const SharedAssignment& a : sharing.assignments) {
        const auto it = acq_to_row.find(a.acq_index);
        if (it == acq_to_row.end()) {
            throw ValidationError("assemble: shared assignment references unknown acq_index");
        }
        const SliceRecord& rec = scan.slices[it->second];
        if (a.secondary_bin < 0 || a.secondary_bin >= k) {
            throw ValidationError("assemble: shared assignment bin out of range");
        }
        members[flat(a.secondary_bin, scan.protocol.b_index(rec.b), rec.s)].push_back(it->second);
    }

    std::vector<char> residual(n_slots, 0);
    std::vector<char> infeasible(n_slots, 0);
    for (const MissingSlot& slot : sharing.residual_missing) {
        residual[flat(slot.bin, slot.b_index, slot.s)] = 1;
    }
    for (const MissingSlot& slot : sharing.infeasible) {
        infeasible[flat(slot.bin, slot.b_index, slot.s)] = 1;
    }

    // Input consistency: a slot must have members exactly when it is not a
    // residual-missing slot.
    for (int bin = 0; bin < k; ++bin) {
        for (int bi = 0; bi < n_b; ++bi) {
            bool any_member = false;
            for (int s = 0; s < n_s; ++s) {
                const std::size_t idx = flat(bin, bi, s);
                if (members[idx].empty() != static_cast<bool>(residual[idx])) {
                    throw ValidationError(
                        "assemble: sharing result inconsistent with slice coverage");
                }
                any_member = any_member || !members[idx].empty();
            }
            if (!any_member) {
                throw ValidationError("assemble: an entire (bin, b) volume is empty");
            }
        }
    }

    // Average members; slots are disjoint, so the loop parallelizes cleanly.
    std::vector<Image2D> averaged(n_slots);
    const int total = static_cast<int>(n_slots);
    auto average_slot = [&](int idx) {
        if (members[idx].empty()) return;
        std::vector<const Image2D*> imgs;
        imgs.reserve(members[idx].size());
        for (int row : members[idx]) imgs.push_back(&*scan.slices[row].pixels);
        averaged[idx] = mean_of(imgs);
    };
    if (exec == Exec::parallel) {
        const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int idx = 0; idx < total; ++idx) average_slot(idx);
    } else {
        for (int idx = 0; idx < total; ++idx) average_slot(idx);
    }

    AssembledVolumes out;
    out.stack.protocol = scan.protocol;
    out.stack.k = k;

    // Patch residual slots first: they read their neighbors out of
    // `averaged`, which the member pass below moves from.
    for (int bin = 0; bin < k; ++bin) {
        for (int bi = 0; bi < n_b; ++bi) {
            for (int s = 0; s < n_s; ++s) {
                const std::size_t idx = flat(bin, bi, s);
                const VolKey key{bin, bi, s};
                if (!members[idx].empty()) continue;
                if (infeasible[idx]) {
                    // Sharing could not honor the fill guarantee here; keep a
                    // zero slice so the stack stays complete, and let the
                    // cross-bin average skip it.
                    out.stack.data[key] = Image2D(scan.protocol.rows, scan.protocol.cols);
                    out.stack.provenance[key] = {Provenance::missing, 0};
                    out.irrecoverable.push_back(key);
                    continue;
                }
                const bool lo_ok = s > 0 && !residual[flat(bin, bi, s - 1)];
                const bool hi_ok = s + 1 < n_s && !residual[flat(bin, bi, s + 1)];
                if (s > 0 && s + 1 < n_s) {
                    if (!lo_ok || !hi_ok) {
                        throw ValidationError(
                            "assemble: adjacent residual-missing slices violate the sharing "
                            "guarantee");
                    }
                    std::vector<const Image2D*> nb{&averaged[flat(bin, bi, s - 1)],
                                                   &averaged[flat(bin, bi, s + 1)]};
                    out.stack.data[key] = mean_of(nb);
                } else {
                    // Edge slot: replicate the single nearest neighbor.
                    const int src = (s == 0) ? s + 1 : s - 1;
                    const bool src_ok = (s == 0) ? hi_ok : lo_ok;
                    if (n_s < 2 || !src_ok) {
                        throw ValidationError(
                            "assemble: adjacent residual-missing slices violate the sharing "
                            "guarantee");
                    }
                    out.stack.data[key] = averaged[flat(bin, bi, src)];
                }
                out.stack.provenance[key] = {Provenance::interpolated, 1};
            }
        }
    }

    for (int bin = 0; bin < k; ++bin) {
        for (int bi = 0; bi < n_b; ++bi) {
            for (int s = 0; s < n_s; ++s) {
                const std::size_t idx = flat(bin, bi, s);
                if (members[idx].empty()) continue;
                const VolKey key{bin, bi, s};
                const int n = static_cast<int>(members[idx].size());
                out.stack.data[key] = std::move(averaged[idx]);
                out.stack.provenance[key] = n == 1
                                                ? SliceProvenance{Provenance::acquired, 1}
                                                : SliceProvenance{Provenance::averaged, n};
            }
        }
    }
    return out;
}

namespace {

// Normalized cross-correlation of the overlap when `floating` is shifted by
// d along s; -2 marks an undefined (zero-variance) window.
double shifted_ncc(const std::vector<const Image2D*>& floating,
                   const std::vector<const Image2D*>& reference, int d) {
    const int n_s = static_cast<int>(floating.size());
    double sum_x = 0.0, sum_y = 0.0;
    std::size_t count = 0;
    for (int s = 0; s < n_s; ++s) {
        const int src = s - d;
        if (src < 0 || src >= n_s) continue;
        const Image2D& x = *floating[src];
        const Image2D& y = *reference[s];
        for (std::size_t p = 0; p < x.data.size(); ++p) {
            sum_x += x.data[p];
            sum_y += y.data[p];
        }
        count += x.data.size();
    }
    if (count == 0) return -2.0;
    const double mean_x = sum_x / static_cast<double>(count);
    const double mean_y = sum_y / static_cast<double>(count);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (int s = 0; s < n_s; ++s) {
        const int src = s - d;
        if (src < 0 || src >= n_s) continue;
        const Image2D& x = *floating[src];
        const Image2D& y = *reference[s];
        for (std::size_t p = 0; p < x.data.size(); ++p) {
            const double dx = x.data[p] - mean_x;
            const double dy = y.data[p] - mean_y;
            sxy += dx * dy;
            sxx += dx * dx;
            syy += dy * dy;
        }
    }
    if (sxx <= 0.0 || syy <= 0.0) return -2.0;
    return sxy / std::sqrt(sxx * syy);
}

} // namespace

AssembledVolumes align_bins_si_shift(const AssembledVolumes& vols, int s_max) {
    if (s_max < 0) {
        throw ValidationError("align_bins_si_shift: s_max must be >= 0");
    }
    const int k = vols.stack.k;
    const int n_b = vols.stack.protocol.n_b();
    const int n_s = vols.stack.protocol.slice_count;
    const int ref = vols.reference_bin;
    if (ref < 0 || ref >= k) {
        throw ValidationError("align_bins_si_shift: reference bin out of range");
    }

    auto collect = [&](int bin, int bi) {
        std::vector<const Image2D*> imgs(n_s, nullptr);
        for (int s = 0; s < n_s; ++s) {
            const auto it = vols.stack.data.find({bin, bi, s});
            if (it == vols.stack.data.end()) {
                throw ValidationError("align_bins_si_shift: incomplete volume stack");
            }
            imgs[s] = &it->second;
        }
        return imgs;
    };

    AssembledVolumes out;
    out.stack.protocol = vols.stack.protocol;
    out.stack.k = k;
    out.reference_bin = ref;
    out.irrecoverable = vols.irrecoverable;
    out.si_shifts.assign(static_cast<std::size_t>(k) * n_b, 0);

    for (int bin = 0; bin < k; ++bin) {
        for (int bi = 0; bi < n_b; ++bi) {
            int best_d = 0;
            if (bin != ref) {
                const auto floating = collect(bin, bi);
                const auto reference = collect(ref, bi);
                double best_ncc = -2.0;
                // Candidate order encodes the tie-break: smaller |d| first,
                // negative before positive; strict > keeps the first best.
                for (int mag = 0; mag <= s_max; ++mag) {
                    for (int sign = -1; sign <= 1; sign += 2) {
                        if (mag == 0 && sign > 0) continue;
                        const int d = sign * mag;
                        const double ncc = shifted_ncc(floating, reference, d);
                        if (ncc > best_ncc) {
                            best_ncc = ncc;
                            best_d = d;
                        }
                    }
                }
                if (best_ncc <= -2.0) best_d = 0;  // fully degenerate volume
            }
            out.si_shifts[static_cast<std::size_t>(bin) * n_b + bi] = best_d;
            for (int s = 0; s < n_s; ++s) {
                const int src = std::clamp(s - best_d, 0, n_s - 1);
                const VolKey dst_key{bin, bi, s};
                const VolKey src_key{bin, bi, src};
                out.stack.data[dst_key] = vols.stack.data.at(src_key);
                out.stack.provenance[dst_key] = vols.stack.provenance.at(src_key);
            }
        }
    }
    return out;
}

PerBVolumes average_bins(const AssembledVolumes& vols) {
    const int k = vols.stack.k;
    const int n_b = vols.stack.protocol.n_b();
    const int n_s = vols.stack.protocol.slice_count;

    PerBVolumes out;
    out.rows = vols.stack.protocol.rows;
    out.cols = vols.stack.protocol.cols;
    out.slice_count = n_s;
    out.b_values = vols.stack.protocol.b_values;
    out.images.assign(static_cast<std::size_t>(n_b) * n_s, Image2D(out.rows, out.cols));

    for (int bi = 0; bi < n_b; ++bi) {
        for (int s = 0; s < n_s; ++s) {
            std::vector<const Image2D*> usable;
            for (int bin = 0; bin < k; ++bin) {
                const VolKey key{bin, bi, s};
                const auto prov = vols.stack.provenance.find(key);
                const auto img = vols.stack.data.find(key);
                if (prov == vols.stack.provenance.end() || img == vols.stack.data.end()) {
                    throw ValidationError("average_bins: incomplete volume stack");
                }
                if (prov->second.kind == Provenance::missing) continue;
                usable.push_back(&img->second);
            }
            if (usable.empty()) {
                throw ValidationError("average_bins: no usable slice at a (b, s) position");
            }
            out.at(bi, s) = mean_of(usable);
        }
    }
    return out;
}

AdcMap fit_adc(const PerBVolumes& signals, Exec exec) {
    const int n_b = static_cast<int>(signals.b_values.size());
    if (n_b < 2) {
        throw ValidationError("fit_adc: need at least two b-values");
    }
    {
        std::vector<double> sorted_b = signals.b_values;
        std::sort(sorted_b.begin(), sorted_b.end());
        if (std::adjacent_find(sorted_b.begin(), sorted_b.end()) != sorted_b.end()) {
            throw ValidationError("fit_adc: b-values must be distinct");
        }
    }

    constexpr double kSignalFloor = 1e-9;
    const double n = static_cast<double>(n_b);
    double sum_b = 0.0, sum_bb = 0.0;
    for (double b : signals.b_values) {
        sum_b += b;
        sum_bb += b * b;
    }
    const double denom = n * sum_bb - sum_b * sum_b;

    AdcMap map;
    map.rows = signals.rows;
    map.cols = signals.cols;
    map.slice_count = signals.slice_count;
    const std::size_t voxels =
        static_cast<std::size_t>(map.slice_count) * map.rows * map.cols;
    map.adc.assign(voxels, 0.0);
    map.s0.assign(voxels, 0.0);
    map.adc_raw.assign(voxels, 0.0);
    map.valid.assign(voxels, 0);

    auto fit_slice = [&](int s) {
        const std::size_t per_slice = static_cast<std::size_t>(map.rows) * map.cols;
        const std::size_t base = static_cast<std::size_t>(s) * per_slice;
        for (std::size_t p = 0; p < per_slice; ++p) {
            double sum_y = 0.0, sum_by = 0.0;
            bool ok = true;
            for (int bi = 0; bi < n_b; ++bi) {
                const double sig = signals.at(bi, s).data[p];
                if (!(sig > kSignalFloor)) {
                    ok = false;
                    break;
                }
                const double y = std::log(sig);
                sum_y += y;
                sum_by += signals.b_values[bi] * y;
            }
            if (!ok) continue;
            const double slope = (n * sum_by - sum_b * sum_y) / denom;
            const double intercept = (sum_y - slope * sum_b) / n;
            map.adc_raw[base + p] = -slope;
            map.adc[base + p] = std::max(0.0, -slope);
            map.s0[base + p] = std::exp(intercept);
            map.valid[base + p] = 1;
        }
    };
    if (exec == Exec::parallel) {
        const int nt = thread_count();
#pragma omp parallel for schedule(static) num_threads(nt)
        for (int s = 0; s < map.slice_count; ++s) fit_slice(s);
    } else {
        for (int s = 0; s < map.slice_count; ++s) fit_slice(s);
    }
    return map;
}

namespace {

void save_scalar_volume(const AdcMap& map, const std::vector<double>& values,
                        const std::string& quantity, const std::filesystem::path& base) {
    nlohmann::json j;
    j["rows"] = map.rows;
    j["cols"] = map.cols;
    j["S"] = map.slice_count;
    j["k"] = 1;
    j["b_values"] = nlohmann::json::array({0.0});
    j["quantity"] = quantity;
    nlohmann::json keys = nlohmann::json::array();
    std::vector<float> blob;
    blob.reserve(values.size());
    const std::size_t per_slice = static_cast<std::size_t>(map.rows) * map.cols;
    for (int s = 0; s < map.slice_count; ++s) {
        keys.push_back({{"bin", 0}, {"b", 0.0}, {"s", s}, {"provenance", "acquired"}});
        for (std::size_t p = 0; p < per_slice; ++p) {
            const std::size_t idx = static_cast<std::size_t>(s) * per_slice + p;
            blob.push_back(map.valid[idx] ? static_cast<float>(values[idx])
                                          : std::numeric_limits<float>::quiet_NaN());
        }
    }
    j["keys"] = std::move(keys);
    atomic_write_text(std::filesystem::path(base).concat(".json"), j.dump(2) + "\n");
    atomic_write_binary(std::filesystem::path(base).concat(".bin"), blob.data(),
                        blob.size() * sizeof(float));
}

} // namespace

void save_adc_map(const AdcMap& map, const std::filesystem::path& adc_path,
                  const std::filesystem::path& s0_path) {
    save_scalar_volume(map, map.adc, "adc_mm2_per_s", adc_path);
    save_scalar_volume(map, map.s0, "s0_signal", s0_path);
}

} // namespace respbin

#include "respbin/reproduce.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "respbin/common.hpp"
#include "respbin/scan_io.hpp"
#include "respbin/sharing.hpp"

namespace respbin {

Scan rebind_slice_t(const Scan& scan, const std::vector<double>& event_times_ms,
                    const std::vector<double>& navigator, double sample_rate_hz) {
    if (event_times_ms.size() != scan.slices.size()) {
        throw ValidationError("rebind_slice_t: one timestamp per slice required");
    }
    if (navigator.empty() || !(sample_rate_hz > 0.0)) {
        throw ValidationError("rebind_slice_t: invalid navigator stream");
    }
    Scan out = scan;
    const double interval_ms = 1000.0 / sample_rate_hz;
    const int last = static_cast<int>(navigator.size()) - 1;
    for (std::size_t i = 0; i < out.slices.size(); ++i) {
        const int idx = std::clamp(
            static_cast<int>(std::lround(event_times_ms[i] / interval_ms)), 0, last);
        out.slices[i].t = navigator[idx];
    }
    return out;
}

void emit_assignment_trace(const Scan& scan, const BinningResult& binning,
                           const SharingResult& sharing, const std::filesystem::path& path) {
    if (static_cast<int>(binning.labels.size()) != scan.size()) {
        throw ValidationError("emit_assignment_trace: labels do not match the scan");
    }
    std::ostringstream out;
    out << "acq_index,t,primary_bin,secondary_bin\n";
    for (int row = 0; row < scan.size(); ++row) {
        const SliceRecord& rec = scan.slices[row];
        out << rec.acq_index << ',' << format_double(rec.t) << ',' << binning.labels[row] << ',';
        const SharedAssignment* shared = nullptr;
        for (const SharedAssignment& a : sharing.assignments) {
            if (a.acq_index == rec.acq_index) {
                shared = &a;
                break;
            }
        }
        if (shared) {
            out << shared->secondary_bin;
        }
        out << '\n';
    }
    atomic_write_text(path, out.str());
}

namespace {

std::vector<double> roi_values(const AdcMap& map, const RoiMask& mask) {
    std::vector<double> values;
    values.reserve(mask.pixels.size());
    for (const auto& [r, c] : mask.pixels) {
        const std::size_t idx = map.index(mask.s, r, c);
        if (map.valid[idx]) values.push_back(map.adc[idx]);
    }
    return values;
}

AdcMap pipeline_adc(const Scan& scan, const BinningResult& binning, const SharingResult& sharing,
                    Orientation orientation, bool align, Exec exec) {
    AssembledVolumes vols = assemble(scan, binning, sharing, exec);
    vols.reference_bin = pick_reference_bin(binning, orientation);
    if (align && binning.k > 1) {
        vols = align_bins_si_shift(vols);
    }
    return fit_adc(average_bins(vols), exec);
}

} // namespace

ReproduceReport run_reproduce(const ReproduceConfig& config) {
    namespace fs = std::filesystem;
    const bool emit = !config.out_dir.empty();
    if (emit) fs::create_directories(config.out_dir);

    const SimConfig sim_config = preset_config(config.preset, config.seed);
    const SimulatedScan sim = run_simulation(sim_config);
    const AcquisitionSchedule schedule =
        gen_schedule(sim_config.protocol, sim_config.slice_order);

    // PT channel selection, then per-slice navigator re-derivation from the
    // winning channel's processed signal.
    const ChannelScore channel = select_best_channel(sim.pt, config.exec);
    const Scan scan = rebind_slice_t(sim.scan, schedule.event_times_ms(), channel.denoised,
                                     sim.pt.sample_rate_hz);

    ReproduceReport report;
    report.selected_channel = channel.channel_index;
    report.channel_snr = channel.snr;

    // Phase 1 + 2 at the auto-selected K, equal-count baseline at the same K.
    const int k_max = std::min(config.k_max, scan.size());
    const OptimalKResult opt =
        select_optimal_k(scan, k_max, config.threshold, config.missing_threshold, config.exec);
    report.k = opt.k;
    report.auto_k_fallback = opt.fallback;

    const SortedScanView view = sort_by_pt(scan);
    const BinningResult standard = standard_equal_count_bins(view, scan, opt.k);

    report.standard = missing_report(standard.missing, scan.protocol, opt.k);
    report.phase1 = missing_report(opt.binning.missing, scan.protocol, opt.k);
    report.phase2 = missing_report(opt.sharing.residual_missing, scan.protocol, opt.k);
    report.reduction_pct_standard_to_phase2 =
        report.standard.missing_count > 0
            ? reduction_pct(report.standard.missing_count, report.phase2.missing_count)
            : 0.0;
    report.ztest_standard_vs_phase2 = two_proportion_ztest_one_sided(
        report.standard.missing_count, report.standard.expected_total,
        report.phase2.missing_count, report.phase2.expected_total);

    // Corrected reconstruction (K bins, sharing, SI alignment) vs the
    // uncorrected single-bin average of everything.
    const AdcMap corrected = pipeline_adc(scan, opt.binning, opt.sharing, config.orientation,
                                          config.align, config.exec);

    const BinningResult single_bin = standard_equal_count_bins(view, scan, 1);
    const std::vector<BinGaussianModel> single_models = fit_bin_gaussians(view, single_bin);
    const Membership single_probs = membership(view, single_models, config.exec);
    const SharingResult single_sharing =
        fill_missing(scan, single_bin, single_probs, config.threshold);
    const AdcMap uncorrected = pipeline_adc(scan, single_bin, single_sharing,
                                            config.orientation, false, config.exec);

    double cov_sum_corr = 0.0;
    double cov_sum_unc = 0.0;
    int cov_count = 0;
    for (const RoiMask& mask : sim.rois) {
        double true_adc = 0.0;
        for (const Phantom::Shape& sh : sim.phantom.shapes) {
            if (sh.label == mask.label) {
                true_adc = sh.adc;
                break;
            }
        }
        const std::vector<double> corr = roi_values(corrected, mask);
        const std::vector<double> unc = roi_values(uncorrected, mask);
        if (corr.empty() || unc.empty()) continue;
        const std::vector<double> truth_corr(corr.size(), true_adc);
        const std::vector<double> truth_unc(unc.size(), true_adc);

        RoiEval eval;
        eval.label = mask.label;
        eval.true_adc = true_adc;
        eval.mean_adc_corrected =
            std::accumulate(corr.begin(), corr.end(), 0.0) / static_cast<double>(corr.size());
        eval.mean_adc_uncorrected =
            std::accumulate(unc.begin(), unc.end(), 0.0) / static_cast<double>(unc.size());
        eval.cov_corrected = cov(corr);
        eval.cov_uncorrected = cov(unc);
        eval.w1_truth_corrected = wasserstein_1d(corr, truth_corr);
        eval.w1_truth_uncorrected = wasserstein_1d(unc, truth_unc);
        eval.rmse_truth_corrected = rmse(corr, truth_corr);
        eval.rmse_truth_uncorrected = rmse(unc, truth_unc);
        report.rois.push_back(eval);

        cov_sum_corr += eval.cov_corrected;
        cov_sum_unc += eval.cov_uncorrected;
        ++cov_count;
    }
    if (cov_count > 0) {
        report.mean_cov_corrected = cov_sum_corr / cov_count;
        report.mean_cov_uncorrected = cov_sum_unc / cov_count;
    }

    if (emit) {
        save_slices(config.out_dir / "slices.csv", scan);
        save_protocol(config.out_dir / "protocol.json", scan.protocol);
        save_pt_csv(config.out_dir / "pt.csv", sim.pt);
        save_truth(sim, config.out_dir / "truth.json");
        save_binning_result(opt.binning, scan.protocol, config.out_dir / "binning.json");
        save_sharing_result(opt.sharing, scan.protocol, config.out_dir / "sharing.json");
        save_binning_result(standard, scan.protocol, config.out_dir / "standard_binning.json");
        save_adc_map(corrected, config.out_dir / "adc_corrected",
                     config.out_dir / "s0_corrected");
        save_adc_map(uncorrected, config.out_dir / "adc_uncorrected",
                     config.out_dir / "s0_uncorrected");
        save_report(report, config.out_dir / "report.json", config.out_dir / "report.csv");
        if (config.trace) {
            emit_assignment_trace(scan, opt.binning, opt.sharing,
                                  config.out_dir / "trace.csv");
        }
    }
    return report;
}

void save_report(const ReproduceReport& report, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path) {
    nlohmann::json doc;
    doc["selected_channel"] = report.selected_channel;
    doc["channel_snr"] = report.channel_snr;
    doc["k"] = report.k;
    doc["auto_k_fallback"] = report.auto_k_fallback;
    auto missing_json = [](const MissingReport& m) {
        return nlohmann::json{{"expected_total", m.expected_total},
                              {"missing_count", m.missing_count},
                              {"missing_pct", m.missing_pct},
                              {"per_bin", m.per_bin}};
    };
    doc["standard"] = missing_json(report.standard);
    doc["phase1"] = missing_json(report.phase1);
    doc["phase2"] = missing_json(report.phase2);
    doc["reduction_pct_standard_to_phase2"] = report.reduction_pct_standard_to_phase2;
    doc["ztest"] = {{"z", report.ztest_standard_vs_phase2.z},
                    {"p", report.ztest_standard_vs_phase2.p}};
    nlohmann::json rois = nlohmann::json::array();
    for (const RoiEval& roi : report.rois) {
        rois.push_back({{"label", roi.label},
                        {"true_adc", roi.true_adc},
                        {"mean_adc_corrected", roi.mean_adc_corrected},
                        {"mean_adc_uncorrected", roi.mean_adc_uncorrected},
                        {"cov_corrected_pct", roi.cov_corrected},
                        {"cov_uncorrected_pct", roi.cov_uncorrected},
                        {"w1_truth_corrected", roi.w1_truth_corrected},
                        {"w1_truth_uncorrected", roi.w1_truth_uncorrected},
                        {"rmse_truth_corrected", roi.rmse_truth_corrected},
                        {"rmse_truth_uncorrected", roi.rmse_truth_uncorrected}});
    }
    doc["rois"] = std::move(rois);
    doc["mean_cov_corrected_pct"] = report.mean_cov_corrected;
    doc["mean_cov_uncorrected_pct"] = report.mean_cov_uncorrected;
    atomic_write_text(json_path, doc.dump(2) + "\n");

    std::ostringstream csv;
    csv << "metric,value\n";
    csv << "selected_channel," << report.selected_channel << "\n";
    csv << "k," << report.k << "\n";
    csv << "standard_missing," << report.standard.missing_count << "\n";
    csv << "standard_missing_pct," << format_double(report.standard.missing_pct) << "\n";
    csv << "phase1_missing," << report.phase1.missing_count << "\n";
    csv << "phase1_missing_pct," << format_double(report.phase1.missing_pct) << "\n";
    csv << "phase2_missing," << report.phase2.missing_count << "\n";
    csv << "phase2_missing_pct," << format_double(report.phase2.missing_pct) << "\n";
    csv << "reduction_pct," << format_double(report.reduction_pct_standard_to_phase2) << "\n";
    csv << "ztest_z," << format_double(report.ztest_standard_vs_phase2.z) << "\n";
    csv << "ztest_p," << format_double(report.ztest_standard_vs_phase2.p) << "\n";
    csv << "mean_cov_corrected_pct," << format_double(report.mean_cov_corrected) << "\n";
    csv << "mean_cov_uncorrected_pct," << format_double(report.mean_cov_uncorrected) << "\n";
    for (const RoiEval& roi : report.rois) {
        csv << "cov_corrected_pct_" << roi.label << "," << format_double(roi.cov_corrected)
            << "\n";
        csv << "cov_uncorrected_pct_" << roi.label << "," << format_double(roi.cov_uncorrected)
            << "\n";
    }
    atomic_write_text(csv_path, csv.str());
}

} // namespace respbin

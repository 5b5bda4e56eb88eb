#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "respbin/binning.hpp"
#include "respbin/common.hpp"
#include "respbin/metrics.hpp"
#include "respbin/pt_navigator.hpp"
#include "respbin/reproduce.hpp"
#include "respbin/scan_io.hpp"
#include "respbin/sharing.hpp"
#include "respbin/simulator.hpp"
#include "respbin/volume_pipeline.hpp"

namespace {

namespace fs = std::filesystem;

constexpr const char* kVersion = "1.0.0";

/// Every run records what it read, what it wrote, and every knob, so the
/// result can be regenerated from the manifest alone.
class Manifest {
public:
    Manifest(const std::string& subcommand, const std::vector<std::string>& argv) {
        doc_["tool"] = "respbin";
        doc_["version"] = kVersion;
        doc_["command"] = subcommand;
        doc_["argv"] = argv;
        const char* threads = std::getenv("RESPBIN_THREADS");
        doc_["threads"] = threads ? threads : "auto";
        doc_["inputs"] = nlohmann::json::object();
        doc_["outputs"] = nlohmann::json::object();
        doc_["config"] = nlohmann::json::object();
    }

    void input(const std::string& name, const fs::path& p) { doc_["inputs"][name] = p.string(); }
    void output(const std::string& name, const fs::path& p) { doc_["outputs"][name] = p.string(); }
    template <typename T>
    void config(const std::string& key, const T& value) {
        doc_["config"][key] = value;
    }

    void write(const fs::path& path) const {
        respbin::atomic_write_text(path, doc_.dump(2) + "\n");
    }

private:
    nlohmann::json doc_;
};

fs::path manifest_beside(const fs::path& primary_output) {
    return fs::path(primary_output).concat(".manifest.json");
}

respbin::ScanProtocol resolve_protocol(const std::string& protocol_path,
                                       const std::string& slices_path) {
    if (!protocol_path.empty()) return respbin::load_protocol(protocol_path);
    if (!slices_path.empty()) return respbin::infer_protocol_from_slices(slices_path);
    throw respbin::ValidationError("need --protocol or --slices to resolve the protocol");
}

void require(bool given, const std::string& flag) {
    if (!given) throw respbin::ValidationError("missing required " + flag);
}

// ---------------------------------------------------------------- commands

struct SelectChannelOpts {
    std::string pt;
    double rate = 20.0;
    std::string out = "channel_scores.json";
    std::string out_denoised;
};

void run_select_channel(const SelectChannelOpts& o, Manifest& manifest) {
    require(!o.pt.empty(), "--pt");
    const respbin::MultiChannelSignal multi = respbin::load_pt_csv(o.pt, o.rate);
    const std::vector<respbin::ChannelScore> scores = respbin::score_channels(multi);
    std::size_t best = 0;
    for (std::size_t ch = 1; ch < scores.size(); ++ch) {
        if (scores[ch].snr > scores[best].snr) best = ch;
    }

    nlohmann::json doc;
    doc["selected_channel"] = scores[best].channel_index;
    doc["sample_rate_hz"] = o.rate;
    nlohmann::json rows = nlohmann::json::array();
    for (const respbin::ChannelScore& s : scores) {
        rows.push_back({{"channel", s.channel_index}, {"snr", s.snr}});
    }
    doc["scores"] = std::move(rows);
    respbin::atomic_write_text(o.out, doc.dump(2) + "\n");

    if (!o.out_denoised.empty()) {
        std::string csv = "sample_index,value\n";
        for (std::size_t i = 0; i < scores[best].denoised.size(); ++i) {
            csv += std::to_string(i) + "," + respbin::format_double(scores[best].denoised[i]) +
                   "\n";
        }
        respbin::atomic_write_text(o.out_denoised, csv);
        manifest.output("denoised", o.out_denoised);
    }

    manifest.input("pt", o.pt);
    manifest.config("rate", o.rate);
    manifest.output("scores", o.out);
    manifest.write(manifest_beside(o.out));
    std::cout << "selected channel " << scores[best].channel_index << " (snr "
              << scores[best].snr << ") -> " << o.out << "\n";
}

struct BinOpts {
    std::string slices;
    std::string protocol;
    int k = 0;
    std::string method = "dp";
    std::string out = "binning.json";
};

void run_bin(const BinOpts& o, Manifest& manifest) {
    if (o.k < 1) throw respbin::ValidationError("k must be ≥ 1");
    require(!o.slices.empty(), "--slices");

    const respbin::ScanProtocol protocol = resolve_protocol(o.protocol, o.slices);
    const respbin::Scan scan = respbin::load_slices(o.slices, protocol);
    const respbin::SortedScanView view = respbin::sort_by_pt(scan);

    respbin::BinningResult result;
    if (o.method == "standard") {
        result = respbin::standard_equal_count_bins(view, scan, o.k);
    } else if (o.method == "dp") {
        const respbin::PrefixCoverage prefix = respbin::build_prefix(view, protocol);
        const respbin::DpTables tables = respbin::dp_optimal_bins(view, prefix, o.k);
        result = respbin::reconstruct_partition(tables, o.k, scan, view);
    } else {
        throw respbin::ValidationError("unknown --method: '" + o.method +
                                       "' (expected dp or standard)");
    }
    respbin::save_binning_result(result, protocol, o.out);

    manifest.input("slices", o.slices);
    if (!o.protocol.empty()) manifest.input("protocol", o.protocol);
    manifest.config("k", o.k);
    manifest.config("method", o.method);
    manifest.output("binning", o.out);
    manifest.write(manifest_beside(o.out));
    std::cout << "k=" << result.k << " missing=" << result.total_cost << " -> " << o.out << "\n";
}

struct ShareOpts {
    std::string slices;
    std::string protocol;
    std::string binning;
    double t = 0.1;
    std::string out = "sharing.json";
    std::string trace;
};

void run_share(const ShareOpts& o, Manifest& manifest) {
    require(!o.slices.empty(), "--slices");
    require(!o.binning.empty(), "--binning");

    const respbin::ScanProtocol protocol = resolve_protocol(o.protocol, o.slices);
    const respbin::Scan scan = respbin::load_slices(o.slices, protocol);
    const respbin::BinningResult binning = respbin::load_binning_result(o.binning, protocol);
    const respbin::SortedScanView view = respbin::sort_by_pt(scan);
    const std::vector<respbin::BinGaussianModel> models =
        respbin::fit_bin_gaussians(view, binning);
    const respbin::Membership probs = respbin::membership(view, models);
    const respbin::SharingResult sharing = respbin::fill_missing(scan, binning, probs, o.t);
    respbin::save_sharing_result(sharing, protocol, o.out);
    if (!o.trace.empty()) {
        respbin::emit_assignment_trace(scan, binning, sharing, o.trace);
        manifest.output("trace", o.trace);
    }

    manifest.input("slices", o.slices);
    manifest.input("binning", o.binning);
    if (!o.protocol.empty()) manifest.input("protocol", o.protocol);
    manifest.config("t", o.t);
    manifest.output("sharing", o.out);
    manifest.write(manifest_beside(o.out));
    std::cout << "shared=" << sharing.assignments.size()
              << " residual=" << sharing.residual_missing.size()
              << " infeasible=" << sharing.infeasible.size() << " -> " << o.out << "\n";
}

struct AutoKOpts {
    std::string slices;
    std::string protocol;
    int max_k = 12;
    double t = 0.1;
    double threshold = 0.02;
    std::string out_binning = "binning.json";
    std::string out_sharing = "sharing.json";
    std::string trace;
};

void run_auto_k(const AutoKOpts& o, Manifest& manifest) {
    require(!o.slices.empty(), "--slices");
    if (o.max_k < 1) throw respbin::ValidationError("max-k must be ≥ 1");

    const respbin::ScanProtocol protocol = resolve_protocol(o.protocol, o.slices);
    const respbin::Scan scan = respbin::load_slices(o.slices, protocol);
    const respbin::OptimalKResult opt =
        respbin::select_optimal_k(scan, std::min(o.max_k, scan.size()), o.t, o.threshold);
    respbin::save_binning_result(opt.binning, protocol, o.out_binning);
    respbin::save_sharing_result(opt.sharing, protocol, o.out_sharing);
    if (!o.trace.empty()) {
        respbin::emit_assignment_trace(scan, opt.binning, opt.sharing, o.trace);
        manifest.output("trace", o.trace);
    }

    manifest.input("slices", o.slices);
    if (!o.protocol.empty()) manifest.input("protocol", o.protocol);
    manifest.config("max_k", o.max_k);
    manifest.config("t", o.t);
    manifest.config("threshold", o.threshold);
    manifest.output("binning", o.out_binning);
    manifest.output("sharing", o.out_sharing);
    manifest.write(manifest_beside(o.out_binning));
    std::cout << "k=" << opt.k << (opt.fallback ? " (fallback: no k met the residual bound)" : "")
              << " residual=" << opt.sharing.residual_missing.size() << " -> " << o.out_binning
              << ", " << o.out_sharing << "\n";
}

struct AssembleOpts {
    std::string slices;
    std::string protocol;
    std::string pixels;
    std::string binning;
    std::string sharing;
    std::string orientation = "expiration_low_t";
    std::string align = "si_shift";
    int s_max = 5;
    std::string out_dir = "assembled";
};

void run_assemble(const AssembleOpts& o, Manifest& manifest) {
    require(!o.slices.empty(), "--slices");
    require(!o.pixels.empty(), "--pixels");
    require(!o.binning.empty(), "--binning");
    require(!o.sharing.empty(), "--sharing");
    if (o.align != "si_shift" && o.align != "none") {
        throw respbin::ValidationError("--align must be si_shift or none");
    }

    const respbin::ScanProtocol protocol = resolve_protocol(o.protocol, o.slices);
    respbin::Scan scan = respbin::load_slices(o.slices, protocol);
    respbin::load_pixels_into(scan, o.pixels);
    const respbin::BinningResult binning = respbin::load_binning_result(o.binning, protocol);
    const respbin::SharingResult sharing = respbin::load_sharing_result(o.sharing, protocol);

    respbin::AssembledVolumes vols = respbin::assemble(scan, binning, sharing);
    vols.reference_bin =
        respbin::pick_reference_bin(binning, respbin::orientation_from_string(o.orientation));
    if (o.align == "si_shift" && binning.k > 1) {
        vols = respbin::align_bins_si_shift(vols, o.s_max);
    }

    fs::create_directories(o.out_dir);
    const fs::path volumes_base = fs::path(o.out_dir) / "binned";
    respbin::save_volumes(volumes_base, vols.stack);

    nlohmann::json align_doc;
    align_doc["reference_bin"] = vols.reference_bin;
    align_doc["orientation"] = o.orientation;
    align_doc["align"] = o.align;
    if (o.align == "si_shift") {
        nlohmann::json shifts = nlohmann::json::array();
        const int n_b = static_cast<int>(scan.protocol.b_values.size());
        for (int bin = 0; bin < vols.stack.k; ++bin) {
            nlohmann::json row = nlohmann::json::array();
            for (int bi = 0; bi < n_b; ++bi) {
                row.push_back(vols.si_shifts[static_cast<std::size_t>(bin) * n_b + bi]);
            }
            shifts.push_back(std::move(row));
        }
        align_doc["si_shifts"] = std::move(shifts);
    }
    nlohmann::json irrecoverable = nlohmann::json::array();
    for (const respbin::VolKey& key : vols.irrecoverable) {
        irrecoverable.push_back({{"bin", key.bin},
                                 {"b", scan.protocol.b_values[static_cast<std::size_t>(
                                           key.b_index)]},
                                 {"s", key.s}});
    }
    align_doc["irrecoverable"] = std::move(irrecoverable);
    const fs::path align_path = fs::path(o.out_dir) / "alignment.json";
    respbin::atomic_write_text(align_path, align_doc.dump(2) + "\n");

    manifest.input("slices", o.slices);
    manifest.input("pixels", o.pixels);
    manifest.input("binning", o.binning);
    manifest.input("sharing", o.sharing);
    if (!o.protocol.empty()) manifest.input("protocol", o.protocol);
    manifest.config("orientation", o.orientation);
    manifest.config("align", o.align);
    manifest.config("s_max", o.s_max);
    manifest.output("volumes", volumes_base.string());
    manifest.output("alignment", align_path);
    manifest.write(fs::path(o.out_dir) / "run_manifest.json");
    std::cout << "assembled " << vols.stack.data.size() << " slices into " << o.out_dir
              << " (reference bin " << vols.reference_bin << ", " << vols.irrecoverable.size()
              << " irrecoverable)\n";
}

struct AdcFitOpts {
    std::string volumes;
    std::string out_adc = "adc";
    std::string out_s0 = "s0";
};

void run_adc_fit(const AdcFitOpts& o, Manifest& manifest) {
    require(!o.volumes.empty(), "--volumes");

    respbin::AssembledVolumes vols;
    vols.stack = respbin::load_volumes(o.volumes);
    const respbin::PerBVolumes averaged = respbin::average_bins(vols);
    const respbin::AdcMap map = respbin::fit_adc(averaged);
    respbin::save_adc_map(map, o.out_adc, o.out_s0);

    const long long valid =
        std::count(map.valid.begin(), map.valid.end(), static_cast<char>(1));
    manifest.input("volumes", o.volumes);
    manifest.output("adc", o.out_adc);
    manifest.output("s0", o.out_s0);
    manifest.write(manifest_beside(o.out_adc));
    std::cout << "fitted " << valid << "/" << map.valid.size() << " voxels -> " << o.out_adc
              << ", " << o.out_s0 << "\n";
}

struct EvaluateOpts {
    std::string before;
    std::string after;
    std::string protocol;
    std::string slices;
    std::string out = "evaluate.csv";
};

void run_evaluate(const EvaluateOpts& o, Manifest& manifest) {
    require(!o.before.empty(), "--before");
    require(!o.after.empty(), "--after");

    const respbin::ScanProtocol protocol = resolve_protocol(o.protocol, o.slices);
    const respbin::BinningResult binning = respbin::load_binning_result(o.before, protocol);
    const respbin::SharingResult sharing = respbin::load_sharing_result(o.after, protocol);
    const respbin::MissingReport before =
        respbin::missing_report(binning.missing, protocol, binning.k);
    const respbin::MissingReport after =
        respbin::missing_report(sharing.residual_missing, protocol, binning.k);
    const double reduction =
        before.missing_count > 0
            ? respbin::reduction_pct(before.missing_count, after.missing_count)
            : 0.0;
    const respbin::ZTestResult ztest = respbin::two_proportion_ztest_one_sided(
        before.missing_count, before.expected_total, after.missing_count, after.expected_total);

    std::string csv = "metric,value\n";
    csv += "expected_total," + std::to_string(before.expected_total) + "\n";
    csv += "before_missing," + std::to_string(before.missing_count) + "\n";
    csv += "before_missing_pct," + respbin::format_double(before.missing_pct) + "\n";
    csv += "after_missing," + std::to_string(after.missing_count) + "\n";
    csv += "after_missing_pct," + respbin::format_double(after.missing_pct) + "\n";
    csv += "reduction_pct," + respbin::format_double(reduction) + "\n";
    csv += "ztest_z," + respbin::format_double(ztest.z) + "\n";
    csv += "ztest_p," + respbin::format_double(ztest.p) + "\n";
    for (std::size_t bin = 0; bin < before.per_bin.size(); ++bin) {
        csv += "before_missing_bin_" + std::to_string(bin) + "," +
               std::to_string(before.per_bin[bin]) + "\n";
    }
    for (std::size_t bin = 0; bin < after.per_bin.size(); ++bin) {
        csv += "after_missing_bin_" + std::to_string(bin) + "," +
               std::to_string(after.per_bin[bin]) + "\n";
    }
    respbin::atomic_write_text(o.out, csv);

    manifest.input("before", o.before);
    manifest.input("after", o.after);
    if (!o.protocol.empty()) manifest.input("protocol", o.protocol);
    if (!o.slices.empty()) manifest.input("slices", o.slices);
    manifest.output("report", o.out);
    manifest.write(manifest_beside(o.out));
    std::cout << "missing " << before.missing_count << " -> " << after.missing_count << " of "
              << before.expected_total << " (reduction " << reduction << "%, p=" << ztest.p
              << ") -> " << o.out << "\n";
}

struct EvaluateAdcOpts {
    std::string roi;
    std::string ref;
    std::string out = "adc_metrics.csv";
};

void run_evaluate_adc(const EvaluateAdcOpts& o, Manifest& manifest) {
    require(!o.roi.empty(), "--roi");

    const std::vector<respbin::RoiSample> samples = respbin::load_roi_csv(o.roi);
    std::map<std::string, std::vector<double>> refs;
    if (!o.ref.empty()) {
        for (const respbin::RoiSample& r : respbin::load_roi_csv(o.ref)) {
            refs[r.label] = r.values;
        }
    }

    std::string csv = "label,n,mean,cov_pct,w1,rmse\n";
    for (const respbin::RoiSample& sample : samples) {
        const double mean =
            std::accumulate(sample.values.begin(), sample.values.end(), 0.0) /
            static_cast<double>(sample.values.size());
        csv += sample.label + "," + std::to_string(sample.values.size()) + "," +
               respbin::format_double(mean) + "," + respbin::format_double(respbin::cov(sample.values));
        const auto it = refs.find(sample.label);
        if (it != refs.end()) {
            csv += "," + respbin::format_double(respbin::wasserstein_1d(sample.values, it->second));
            // rmse is pairwise; a singleton reference broadcasts as the truth value
            std::vector<double> ref_values = it->second;
            if (ref_values.size() == 1 && sample.values.size() > 1) {
                ref_values.assign(sample.values.size(), ref_values[0]);
            }
            if (ref_values.size() == sample.values.size()) {
                csv += "," + respbin::format_double(respbin::rmse(sample.values, ref_values));
            } else {
                csv += ",";
            }
        } else {
            csv += ",,";
        }
        csv += "\n";
    }
    respbin::atomic_write_text(o.out, csv);

    manifest.input("roi", o.roi);
    if (!o.ref.empty()) manifest.input("ref", o.ref);
    manifest.output("table", o.out);
    manifest.write(manifest_beside(o.out));
    std::cout << "evaluated " << samples.size() << " ROI groups -> " << o.out << "\n";
}

struct SimulateOpts {
    std::string preset = "calm";
    std::uint64_t seed = 0;
    std::string out_dir = "sim_out";
};

void run_simulate(const SimulateOpts& o, Manifest& manifest) {
    const respbin::SimConfig config = respbin::preset_config(o.preset, o.seed);
    const respbin::SimulatedScan sim = respbin::run_simulation(config);

    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    respbin::save_slices(dir / "slices.csv", sim.scan);
    respbin::save_protocol(dir / "protocol.json", sim.scan.protocol);
    respbin::save_pixels(dir / "pixels", sim.scan);
    respbin::save_pt_csv(dir / "pt.csv", sim.pt);
    respbin::save_truth(sim, dir / "truth.json");

    manifest.config("preset", o.preset);
    manifest.config("seed", o.seed);
    manifest.output("slices", dir / "slices.csv");
    manifest.output("protocol", dir / "protocol.json");
    manifest.output("pixels", (dir / "pixels").string());
    manifest.output("pt", dir / "pt.csv");
    manifest.output("truth", dir / "truth.json");
    manifest.write(dir / "run_manifest.json");
    std::cout << "simulated " << sim.scan.size() << " slices (preset " << o.preset << ", seed "
              << o.seed << ") -> " << o.out_dir << "\n";
}

struct ReproduceOpts {
    std::string preset = "synchronized";
    std::uint64_t seed = 42;
    int max_k = 8;
    double t = 0.1;
    double threshold = 0.02;
    std::string orientation = "expiration_low_t";
    bool no_align = false;
    std::string out_dir = "reproduce_out";
    bool trace = false;
};

void print_missing_row(const char* name, const respbin::MissingReport& rep) {
    std::cout << "  " << std::left << std::setw(9) << name << std::right << std::setw(6)
              << rep.missing_count << " / " << rep.expected_total << "  (" << std::fixed
              << std::setprecision(2) << rep.missing_pct << "%)\n"
              << std::defaultfloat;
}

void run_reproduce_cmd(const ReproduceOpts& o, Manifest& manifest) {
    if (o.max_k < 1) throw respbin::ValidationError("max-k must be ≥ 1");

    respbin::ReproduceConfig config;
    config.preset = o.preset;
    config.seed = o.seed;
    config.k_max = o.max_k;
    config.threshold = o.t;
    config.missing_threshold = o.threshold;
    config.orientation = respbin::orientation_from_string(o.orientation);
    config.align = !o.no_align;
    config.out_dir = o.out_dir;
    config.trace = o.trace;

    const respbin::ReproduceReport report = respbin::run_reproduce(config);

    std::cout << "preset=" << o.preset << " seed=" << o.seed << " channel="
              << report.selected_channel << " k=" << report.k
              << (report.auto_k_fallback ? " (fallback)" : "") << "\n";
    std::cout << "missing (bin, b, s) combinations:\n";
    print_missing_row("standard", report.standard);
    print_missing_row("phase1", report.phase1);
    print_missing_row("phase2", report.phase2);
    std::cout << std::fixed << std::setprecision(2);
    std::cout << "reduction standard -> phase2: " << report.reduction_pct_standard_to_phase2
              << "%  (z=" << std::setprecision(3) << report.ztest_standard_vs_phase2.z
              << ", p=" << std::scientific << report.ztest_standard_vs_phase2.p << ")\n"
              << std::defaultfloat;
    std::cout << "ROI ADC (x1e-3 mm^2/s) and CoV%, corrected vs uncorrected:\n";
    std::cout << std::fixed;
    for (const respbin::RoiEval& roi : report.rois) {
        std::cout << "  " << std::left << std::setw(8) << roi.label << std::right
                  << " true=" << std::setprecision(3) << roi.true_adc * 1e3
                  << " mean=" << roi.mean_adc_corrected * 1e3 << "/"
                  << roi.mean_adc_uncorrected * 1e3 << " cov=" << std::setprecision(2)
                  << roi.cov_corrected << "%/" << roi.cov_uncorrected << "%\n";
    }
    std::cout << "mean CoV: corrected " << std::setprecision(2) << report.mean_cov_corrected
              << "%  uncorrected " << report.mean_cov_uncorrected << "%\n"
              << std::defaultfloat;

    manifest.config("preset", o.preset);
    manifest.config("seed", o.seed);
    manifest.config("max_k", o.max_k);
    manifest.config("t", o.t);
    manifest.config("threshold", o.threshold);
    manifest.config("orientation", o.orientation);
    manifest.config("align", !o.no_align);
    manifest.output("report", fs::path(o.out_dir) / "report.json");
    manifest.write(fs::path(o.out_dir) / "run_manifest.json");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Respiratory-phase binning and slice sharing for free-breathing DW-MRI"};
    app.set_version_flag("--version", std::string("respbin ") + kVersion);
    app.require_subcommand(1);

    std::vector<std::string> raw_args;
    for (int i = 1; i < argc; ++i) raw_args.emplace_back(argv[i]);

    SelectChannelOpts sel;
    CLI::App* sel_cmd =
        app.add_subcommand("select-channel", "Score PT channels by SNR and pick the best");
    sel_cmd->add_option("--pt", sel.pt, "PT multi-channel CSV");
    sel_cmd->add_option("--rate", sel.rate, "PT sample rate in Hz");
    sel_cmd->add_option("--out", sel.out, "Output scores JSON");
    sel_cmd->add_option("--out-denoised", sel.out_denoised,
                        "Also write the selected channel's processed signal as CSV");

    BinOpts bin;
    CLI::App* bin_cmd = app.add_subcommand("bin", "Partition slices into respiratory-phase bins");
    bin_cmd->add_option("--slices", bin.slices, "Slice metadata CSV");
    bin_cmd->add_option("--protocol", bin.protocol, "Protocol JSON (else inferred from slices)");
    bin_cmd->add_option("--k", bin.k, "Number of bins")->required();
    bin_cmd->add_option("--method", bin.method, "dp (optimal) or standard (equal count)");
    bin_cmd->add_option("--out", bin.out, "Output binning JSON");

    ShareOpts share;
    CLI::App* share_cmd =
        app.add_subcommand("share", "Fill missing slots by sharing slices from adjacent bins");
    share_cmd->add_option("--slices", share.slices, "Slice metadata CSV");
    share_cmd->add_option("--protocol", share.protocol, "Protocol JSON");
    share_cmd->add_option("--binning", share.binning, "Binning result JSON");
    share_cmd->add_option("--t", share.t, "Share-metric threshold");
    share_cmd->add_option("--out", share.out, "Output sharing JSON");
    share_cmd->add_option("--trace", share.trace, "Also write a per-slice assignment CSV");

    AutoKOpts autok;
    CLI::App* autok_cmd =
        app.add_subcommand("auto-k", "Pick the largest bin count with low residual missing");
    autok_cmd->add_option("--slices", autok.slices, "Slice metadata CSV");
    autok_cmd->add_option("--protocol", autok.protocol, "Protocol JSON");
    autok_cmd->add_option("--max-k", autok.max_k, "Largest bin count to try");
    autok_cmd->add_option("--t", autok.t, "Share-metric threshold");
    autok_cmd->add_option("--threshold", autok.threshold, "Residual missing fraction bound");
    autok_cmd->add_option("--out-binning", autok.out_binning, "Output binning JSON");
    autok_cmd->add_option("--out-sharing", autok.out_sharing, "Output sharing JSON");
    autok_cmd->add_option("--trace", autok.trace, "Also write a per-slice assignment CSV");

    AssembleOpts assemble;
    CLI::App* assemble_cmd =
        app.add_subcommand("assemble", "Average members per (bin, b, s) and align bins");
    assemble_cmd->add_option("--slices", assemble.slices, "Slice metadata CSV");
    assemble_cmd->add_option("--protocol", assemble.protocol, "Protocol JSON");
    assemble_cmd->add_option("--pixels", assemble.pixels, "Pixel payload base path");
    assemble_cmd->add_option("--binning", assemble.binning, "Binning result JSON");
    assemble_cmd->add_option("--sharing", assemble.sharing, "Sharing result JSON");
    assemble_cmd->add_option("--orientation", assemble.orientation,
                             "expiration_low_t or expiration_high_t");
    assemble_cmd->add_option("--align", assemble.align, "si_shift or none");
    assemble_cmd->add_option("--s-max", assemble.s_max, "Maximum SI shift magnitude");
    assemble_cmd->add_option("--out-dir", assemble.out_dir, "Output directory");

    AdcFitOpts adcfit;
    CLI::App* adcfit_cmd =
        app.add_subcommand("adc-fit", "Fit a mono-exponential ADC map from binned volumes");
    adcfit_cmd->add_option("--volumes", adcfit.volumes, "Volume container base path");
    adcfit_cmd->add_option("--out-adc", adcfit.out_adc, "Output ADC container base path");
    adcfit_cmd->add_option("--out-s0", adcfit.out_s0, "Output S0 container base path");

    EvaluateOpts evaluate;
    CLI::App* evaluate_cmd =
        app.add_subcommand("evaluate", "Missing-slot report and reduction for a binning pair");
    evaluate_cmd->add_option("--before", evaluate.before, "Binning result JSON");
    evaluate_cmd->add_option("--after", evaluate.after, "Sharing result JSON");
    evaluate_cmd->add_option("--protocol", evaluate.protocol, "Protocol JSON");
    evaluate_cmd->add_option("--slices", evaluate.slices, "Slice CSV (protocol fallback)");
    evaluate_cmd->add_option("--out", evaluate.out, "Output CSV");

    EvaluateAdcOpts evaladc;
    CLI::App* evaladc_cmd =
        app.add_subcommand("evaluate-adc", "Per-label CoV/W1/RMSE table from ROI samples");
    evaladc_cmd->add_option("--roi", evaladc.roi, "ROI samples CSV (label,value)");
    evaladc_cmd->add_option("--ref", evaladc.ref,
                            "Reference samples CSV for W1/RMSE (singleton = truth value)");
    evaladc_cmd->add_option("--out", evaladc.out, "Output CSV");

    SimulateOpts simulate;
    CLI::App* simulate_cmd =
        app.add_subcommand("simulate", "Generate a synthetic free-breathing scan");
    simulate_cmd->add_option("--preset", simulate.preset,
                             "calm, deep, irregular, or synchronized");
    simulate_cmd->add_option("--seed", simulate.seed, "Simulation seed");
    simulate_cmd->add_option("--out-dir", simulate.out_dir, "Output directory");

    ReproduceOpts reproduce;
    CLI::App* reproduce_cmd = app.add_subcommand(
        "reproduce", "One-shot synthetic benchmark: simulate, bin, share, reconstruct, evaluate");
    reproduce_cmd->add_option("--preset", reproduce.preset, "Simulation preset");
    reproduce_cmd->add_option("--seed", reproduce.seed, "Simulation seed");
    reproduce_cmd->add_option("--max-k", reproduce.max_k, "Largest bin count to try");
    reproduce_cmd->add_option("--t", reproduce.t, "Share-metric threshold");
    reproduce_cmd->add_option("--threshold", reproduce.threshold,
                              "Residual missing fraction bound");
    reproduce_cmd->add_option("--orientation", reproduce.orientation,
                              "expiration_low_t or expiration_high_t");
    reproduce_cmd->add_flag("--no-align", reproduce.no_align, "Skip SI-shift alignment");
    reproduce_cmd->add_option("--out-dir", reproduce.out_dir, "Output directory");
    reproduce_cmd->add_flag("--trace", reproduce.trace, "Also write a per-slice assignment CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "run 'respbin --help' or 'respbin <subcommand> --help' for usage\n";
        return 64;
    }

    try {
        if (sel_cmd->parsed()) {
            Manifest m("select-channel", raw_args);
            run_select_channel(sel, m);
        } else if (bin_cmd->parsed()) {
            Manifest m("bin", raw_args);
            run_bin(bin, m);
        } else if (share_cmd->parsed()) {
            Manifest m("share", raw_args);
            run_share(share, m);
        } else if (autok_cmd->parsed()) {
            Manifest m("auto-k", raw_args);
            run_auto_k(autok, m);
        } else if (assemble_cmd->parsed()) {
            Manifest m("assemble", raw_args);
            run_assemble(assemble, m);
        } else if (adcfit_cmd->parsed()) {
            Manifest m("adc-fit", raw_args);
            run_adc_fit(adcfit, m);
        } else if (evaluate_cmd->parsed()) {
            Manifest m("evaluate", raw_args);
            run_evaluate(evaluate, m);
        } else if (evaladc_cmd->parsed()) {
            Manifest m("evaluate-adc", raw_args);
            run_evaluate_adc(evaladc, m);
        } else if (simulate_cmd->parsed()) {
            Manifest m("simulate", raw_args);
            run_simulate(simulate, m);
        } else if (reproduce_cmd->parsed()) {
            Manifest m("reproduce", raw_args);
            run_reproduce_cmd(reproduce, m);
        }
    } catch (const respbin::IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return 2;
    } catch (const respbin::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

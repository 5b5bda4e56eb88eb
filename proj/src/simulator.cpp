#include "respbin/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "respbin/common.hpp"
#include "respbin/scan_io.hpp"

namespace respbin {

void BreathingModel::validate() const {
    if (!(period_s > 0.0)) throw ValidationError("breathing model: period must be positive");
    if (!(amplitude > 0.0)) throw ValidationError("breathing model: amplitude must be positive");
    if (irregularity < 0.0 || irregularity >= 1.0) {
        throw ValidationError("breathing model: irregularity must be in [0, 1)");
    }
    if (noise_sigma < 0.0) throw ValidationError("breathing model: noise must be >= 0");
}

namespace {

// Per-cycle jittered durations covering [0, t_max_s]. Jitters are drawn in
// cycle order from a dedicated stream, so a longer trace extends a shorter
// one rather than reshuffling it.
std::vector<double> cycle_durations(const BreathingModel& model, double t_max_s) {
    std::mt19937_64 rng(model.seed);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    std::vector<double> durations;
    double covered = 0.0;
    while (covered <= t_max_s) {
        double dur = model.period_s;
        if (model.irregularity > 0.0) {
            dur *= 1.0 + model.irregularity * jitter(rng);
        } else {
            jitter(rng);  // keep the stream position independent of irregularity
        }
        durations.push_back(dur);
        covered += dur;
    }
    return durations;
}

} // namespace

NavigatorSignals gen_navigator_signals(const BreathingModel& model,
                                       const std::vector<double>& times_ms) {
    model.validate();
    if (!std::is_sorted(times_ms.begin(), times_ms.end())) {
        throw ValidationError("gen_navigator: timestamps must be sorted");
    }

    NavigatorSignals out;
    out.motion.reserve(times_ms.size());
    out.measured.reserve(times_ms.size());
    if (times_ms.empty()) return out;

    const std::vector<double> durations = cycle_durations(model, times_ms.back() / 1000.0);
    std::mt19937_64 noise_rng(model.seed ^ 0x6e6f697365ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::size_t cycle = 0;
    double cycle_start = 0.0;
    for (double t_ms : times_ms) {
        const double t_s = t_ms / 1000.0;
        while (cycle + 1 < durations.size() && t_s >= cycle_start + durations[cycle]) {
            cycle_start += durations[cycle];
            ++cycle;
        }
        const double phase = 2.0 * std::numbers::pi * (t_s - cycle_start) / durations[cycle];
        const double motion = model.amplitude * std::sin(phase);
        double measured = motion + model.drift_per_min * (t_ms / 60000.0);
        if (model.noise_sigma > 0.0) measured += model.noise_sigma * gauss(noise_rng);
        out.motion.push_back(motion);
        out.measured.push_back(measured);
    }
    return out;
}

std::vector<double> gen_navigator(const BreathingModel& model,
                                  const std::vector<double>& times_ms) {
    return gen_navigator_signals(model, times_ms).measured;
}

SliceOrder slice_order_from_string(const std::string& name) {
    if (name == "ascending") return SliceOrder::ascending;
    if (name == "interleaved") return SliceOrder::interleaved;
    throw ValidationError("unknown slice order: '" + name + "'");
}

std::string slice_order_to_string(SliceOrder order) {
    return order == SliceOrder::ascending ? "ascending" : "interleaved";
}

std::vector<double> AcquisitionSchedule::event_times_ms() const {
    std::vector<double> times;
    times.reserve(events.size());
    for (const ScheduledEvent& e : events) times.push_back(e.time_ms);
    return times;
}

AcquisitionSchedule gen_schedule(const ScanProtocol& protocol, SliceOrder slice_order) {
    protocol.validate();

    std::vector<int> positions;
    positions.reserve(protocol.slice_count);
    if (slice_order == SliceOrder::ascending) {
        for (int s = 0; s < protocol.slice_count; ++s) positions.push_back(s);
    } else {
        for (int s = 0; s < protocol.slice_count; s += 2) positions.push_back(s);
        for (int s = 1; s < protocol.slice_count; s += 2) positions.push_back(s);
    }

    AcquisitionSchedule schedule;
    schedule.protocol = protocol;
    schedule.slice_order = slice_order;
    const double slot_ms = protocol.tr_ms / protocol.slice_count;
    const int max_averages =
        *std::max_element(protocol.averages_per_b.begin(), protocol.averages_per_b.end());
    // averages, then directions, then b-values: every b-value's volumes are
    // interleaved across the scan rather than bunched into one block
    int volume = 0;
    for (int avg = 0; avg < max_averages; ++avg) {
        for (int dir = 0; dir < protocol.n_directions; ++dir) {
            for (int bi = 0; bi < protocol.n_b(); ++bi) {
                if (avg >= protocol.averages_per_b[bi]) continue;
                for (int j = 0; j < protocol.slice_count; ++j) {
                    const double t = (static_cast<double>(volume) * protocol.slice_count + j) *
                                     slot_ms;
                    schedule.events.push_back({t, bi, positions[j]});
                }
                ++volume;
            }
        }
    }
    return schedule;
}

int Phantom::shape_at(int r, int c, double z) const {
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const Shape& sh = shapes[i];
        const double dr = (r - sh.cr) / sh.rr;
        const double dc = (c - sh.cc) / sh.rc;
        const double dz = (z - sh.cz) / sh.rz;
        if (dr * dr + dc * dc + dz * dz <= 1.0) return static_cast<int>(i);
    }
    return -1;
}

void Phantom::validate() const {
    if (rows < 1 || cols < 1 || slice_count < 1) {
        throw ValidationError("phantom: grid dimensions must be positive");
    }
    for (const Shape& sh : shapes) {
        if (sh.label.empty()) throw ValidationError("phantom: shape without label");
        if (!(sh.rr > 0.0 && sh.rc > 0.0 && sh.rz > 0.0)) {
            throw ValidationError("phantom: shape radii must be positive");
        }
        if (sh.adc < 1e-4 || sh.adc > 5e-3) {
            throw ValidationError("phantom: ADC outside [1e-4, 5e-3] mm^2/s for '" + sh.label +
                                  "'");
        }
        if (sh.s0 < 0.0) throw ValidationError("phantom: negative S0");
    }
}

Phantom default_phantom(int rows, int cols, int slice_count) {
    Phantom ph;
    ph.rows = rows;
    ph.cols = cols;
    ph.slice_count = slice_count;

    // Reference geometry on 48 x 48 x 16, scaled to the requested grid.
    const double fr = rows / 48.0;
    const double fc = cols / 48.0;
    const double fz = slice_count / 16.0;
    auto shape = [&](const char* label, double cr, double cc, double cz, double rr, double rc,
                     double rz, double s0, double adc) {
        ph.shapes.push_back(
            {label, cr * fr, cc * fc, cz * fz, rr * fr, rc * fc, rz * fz, s0, adc});
    };
    // Priority order: most specific first.
    shape("lesion", 20.0, 18.0, 7.0, 3.0, 3.0, 2.2, 1100.0, 7.0e-4);
    shape("kidney", 33.0, 30.0, 8.0, 7.5, 6.5, 3.6, 1000.0, 1.8e-3);
    shape("spleen", 14.0, 34.0, 8.0, 7.5, 7.5, 3.4, 950.0, 9.0e-4);
    shape("liver", 17.0, 15.0, 6.0, 10.0, 9.0, 4.2, 900.0, 1.2e-3);
    shape("body", 23.5, 23.5, 7.5, 23.0, 23.0, 8.6, 1000.0, 2.0e-3);
    ph.validate();
    return ph;
}

std::vector<RoiMask> default_roi_masks(const Phantom& phantom) {
    std::vector<RoiMask> masks;
    for (const char* organ : {"liver", "spleen", "kidney"}) {
        int shape_index = -1;
        for (std::size_t i = 0; i < phantom.shapes.size(); ++i) {
            if (phantom.shapes[i].label == organ) {
                shape_index = static_cast<int>(i);
                break;
            }
        }
        if (shape_index < 0) continue;
        const Phantom::Shape& sh = phantom.shapes[shape_index];
        const int cr = static_cast<int>(std::lround(sh.cr));
        const int cc = static_cast<int>(std::lround(sh.cc));

        // Lowest slice where the centered 8x8 square is entirely this organ:
        // inferior-edge placement maximizes sensitivity to SI motion while the
        // neutral frame stays homogeneous.
        for (int s = 0; s <= static_cast<int>(sh.cz); ++s) {
            bool fits = true;
            std::vector<std::pair<int, int>> pixels;
            pixels.reserve(64);
            for (int r = cr - 4; r < cr + 4 && fits; ++r) {
                for (int c = cc - 4; c < cc + 4 && fits; ++c) {
                    if (r < 0 || r >= phantom.rows || c < 0 || c >= phantom.cols ||
                        phantom.shape_at(r, c, s) != shape_index) {
                        fits = false;
                    } else {
                        pixels.emplace_back(r, c);
                    }
                }
            }
            if (fits) {
                masks.push_back({organ, s, std::move(pixels)});
                break;
            }
        }
    }
    return masks;
}

SimulatedScan gen_scan(const BreathingModel& model, const AcquisitionSchedule& schedule,
                       const Phantom& phantom, const SimOptions& options) {
    model.validate();
    phantom.validate();
    const ScanProtocol& protocol = schedule.protocol;
    if (protocol.rows != phantom.rows || protocol.cols != phantom.cols ||
        protocol.slice_count != phantom.slice_count) {
        throw ValidationError("gen_scan: protocol grid does not match the phantom");
    }
    if (options.pt_channels < 1) throw ValidationError("gen_scan: need >= 1 PT channel");
    if (options.max_displacement_slices < 0.0) {
        throw ValidationError("gen_scan: max displacement must be >= 0");
    }
    if (!(options.pt_sample_hz > 0.0)) {
        throw ValidationError("gen_scan: PT sample rate must be positive");
    }
    if (schedule.events.empty()) throw ValidationError("gen_scan: empty schedule");

    SimulatedScan sim;
    sim.model = model;
    sim.options = options;
    sim.phantom = phantom;
    sim.rois = default_roi_masks(phantom);

    const std::vector<double> times = schedule.event_times_ms();
    const NavigatorSignals nav = gen_navigator_signals(model, times);

    // End-expiration (motion == -amplitude) maps to displacement 0, the
    // phantom's neutral frame, so the reference bin sees unshifted anatomy.
    const int max_d = static_cast<int>(std::lround(options.max_displacement_slices));
    sim.displacements.reserve(times.size());
    for (double m : nav.motion) {
        const double u = (m + model.amplitude) / (2.0 * model.amplitude);
        const int d = static_cast<int>(std::lround(u * options.max_displacement_slices));
        sim.displacements.push_back(std::clamp(d, 0, max_d));
    }

    std::mt19937_64 image_rng(model.seed ^ 0x696d616765ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);

    sim.scan.protocol = protocol;
    sim.scan.slices.reserve(schedule.events.size());
    for (std::size_t i = 0; i < schedule.events.size(); ++i) {
        const ScheduledEvent& ev = schedule.events[i];
        SliceRecord rec;
        rec.acq_index = static_cast<int>(i);
        rec.t = nav.measured[i];
        rec.b = protocol.b_values[ev.b_index];
        rec.s = ev.s;

        Image2D img(protocol.rows, protocol.cols);
        const int z_src = std::clamp(ev.s - sim.displacements[i], 0, protocol.slice_count - 1);
        for (int r = 0; r < protocol.rows; ++r) {
            for (int c = 0; c < protocol.cols; ++c) {
                const int sh = phantom.shape_at(r, c, z_src);
                double sig = 0.0;
                if (sh >= 0) {
                    sig = phantom.shapes[sh].s0 * std::exp(-rec.b * phantom.shapes[sh].adc);
                }
                if (options.image_noise_sigma > 0.0) {
                    sig += options.image_noise_sigma * gauss(image_rng);
                }
                img.at(r, c) = sig;
            }
        }
        rec.pixels = std::move(img);
        sim.scan.slices.push_back(std::move(rec));
    }

    // PT stream on a uniform grid covering the whole acquisition; channel m
    // mixes the clean motion with progressively worse gain, drift, and noise.
    const double interval_ms = 1000.0 / options.pt_sample_hz;
    const double t_end = times.back() + protocol.tr_ms / protocol.slice_count;
    const int n_samples = static_cast<int>(t_end / interval_ms) + 1;
    std::vector<double> pt_times(n_samples);
    for (int i = 0; i < n_samples; ++i) pt_times[i] = i * interval_ms;
    const NavigatorSignals pt_nav = gen_navigator_signals(model, pt_times);

    sim.pt.n_samples = n_samples;
    sim.pt.n_channels = options.pt_channels;
    sim.pt.sample_rate_hz = options.pt_sample_hz;
    sim.pt.samples.assign(static_cast<std::size_t>(n_samples) * options.pt_channels, 0.0);
    for (int m = 0; m < options.pt_channels; ++m) {
        const double gain = 1.0 / (1.0 + 0.6 * m);
        const double drift = 0.25 * m * model.amplitude;  // per minute
        const double sigma = (m == 0 ? 0.01 : 0.15 + 0.25 * m) * model.amplitude;
        std::mt19937_64 rng(model.seed ^ (0x70740000ULL + 7919ULL * m));
        for (int i = 0; i < n_samples; ++i) {
            const double t_min = pt_times[i] / 60000.0;
            sim.pt.at(i, m) = gain * pt_nav.motion[i] + drift * t_min + sigma * gauss(rng);
        }
    }

    const auto violations = validate_scan(sim.scan);
    if (!violations.empty()) {
        throw ValidationError("gen_scan produced an invalid scan: " + violations.front());
    }
    return sim;
}

SimConfig preset_config(const std::string& preset, std::uint64_t seed) {
    SimConfig config;
    config.preset = preset;

    ScanProtocol p;
    p.slice_count = 16;
    p.b_values = {50.0, 400.0, 800.0};
    p.averages_per_b = {3, 3, 4};
    p.n_directions = 6;
    p.tr_ms = 5200.0;
    p.rows = 48;
    p.cols = 48;
    config.protocol = p;  // N = 16 * (3 + 3 + 4) * 6 = 960

    BreathingModel& m = config.model;
    m.amplitude = 1.0;
    m.seed = seed;
    SimOptions& o = config.options;
    o.pt_channels = 4;
    o.image_noise_sigma = 5.0;

    if (preset == "calm") {
        m.period_s = 4.0;
        m.drift_per_min = 0.01;
        m.noise_sigma = 0.02;
        m.irregularity = 0.05;
        o.max_displacement_slices = 2.0;
        config.slice_order = SliceOrder::interleaved;
    } else if (preset == "deep") {
        m.period_s = 4.8;
        m.drift_per_min = 0.02;
        m.noise_sigma = 0.03;
        m.irregularity = 0.12;
        o.max_displacement_slices = 4.0;
        config.slice_order = SliceOrder::interleaved;
    } else if (preset == "irregular") {
        m.period_s = 4.2;
        m.drift_per_min = 0.06;
        m.noise_sigma = 0.06;
        m.irregularity = 0.35;
        o.max_displacement_slices = 3.0;
        config.slice_order = SliceOrder::interleaved;
    } else if (preset == "synchronized") {
        // Breathing locked to TR with ascending order: every slice position
        // recurs at nearly the same respiratory phase, which starves fixed
        // positions out of whole navigator ranges. Cycle jitter accumulates
        // into a slow phase walk, so coverage recovers over the scan for an
        // optimized partition while the equal-count one keeps missing slots.
        m.period_s = 5.2;
        m.drift_per_min = 0.04;
        m.noise_sigma = 0.03;
        m.irregularity = 0.15;
        o.max_displacement_slices = 3.0;
        config.slice_order = SliceOrder::ascending;
    } else {
        throw ValidationError("unknown preset: '" + preset +
                              "' (expected calm|deep|irregular|synchronized)");
    }
    return config;
}

SimulatedScan run_simulation(const SimConfig& config) {
    const AcquisitionSchedule schedule = gen_schedule(config.protocol, config.slice_order);
    const Phantom phantom =
        default_phantom(config.protocol.rows, config.protocol.cols, config.protocol.slice_count);
    return gen_scan(config.model, schedule, phantom, config.options);
}

void save_truth(const SimulatedScan& sim, const std::filesystem::path& path) {
    nlohmann::json doc;
    nlohmann::json labels = nlohmann::json::object();
    for (const Phantom::Shape& sh : sim.phantom.shapes) {
        labels[sh.label] = {{"adc_mm2_per_s", sh.adc}, {"s0", sh.s0}};
    }
    doc["labels"] = std::move(labels);
    doc["displacement_per_event"] = sim.displacements;
    nlohmann::json rois = nlohmann::json::array();
    for (const RoiMask& mask : sim.rois) {
        nlohmann::json pixels = nlohmann::json::array();
        for (const auto& [r, c] : mask.pixels) pixels.push_back({r, c});
        rois.push_back({{"label", mask.label}, {"s", mask.s}, {"pixels", std::move(pixels)}});
    }
    doc["roi_masks"] = std::move(rois);
    doc["model"] = {{"period_s", sim.model.period_s},
                    {"amplitude", sim.model.amplitude},
                    {"drift_per_min", sim.model.drift_per_min},
                    {"noise_sigma", sim.model.noise_sigma},
                    {"irregularity", sim.model.irregularity},
                    {"seed", sim.model.seed}};
    doc["options"] = {{"pt_channels", sim.options.pt_channels},
                      {"image_noise_sigma", sim.options.image_noise_sigma},
                      {"max_displacement_slices", sim.options.max_displacement_slices},
                      {"pt_sample_hz", sim.options.pt_sample_hz}};
    atomic_write_text(path, doc.dump(2) + "\n");
}

} // namespace respbin

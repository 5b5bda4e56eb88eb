#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "respbin/pt_navigator.hpp"
#include "respbin/scan.hpp"

namespace respbin {

/// Quasi-periodic breathing: a sinusoid whose per-cycle period is jittered by
/// +-irregularity, plus linear drift and additive Gaussian noise on the
/// measured signal. The drift and noise model PT measurement artifacts; the
/// body motion itself is the clean jittered sinusoid.
struct BreathingModel {
    double period_s = 4.0;
    double amplitude = 1.0;
    double drift_per_min = 0.0;   ///< measured-signal drift, units per minute
    double noise_sigma = 0.0;     ///< measured-signal noise std
    double irregularity = 0.0;    ///< per-cycle period jitter fraction, in [0, 1)
    std::uint64_t seed = 0;

    void validate() const;
};

/// Clean motion and measured navigator evaluated at the same timestamps.
struct NavigatorSignals {
    std::vector<double> motion;    ///< amplitude * sin(jittered phase)
    std::vector<double> measured;  ///< motion + drift + noise
};

NavigatorSignals gen_navigator_signals(const BreathingModel& model,
                                       const std::vector<double>& times_ms);

/// The measured navigator alone (sinusoid + drift + noise), deterministic
/// under the model seed.
std::vector<double> gen_navigator(const BreathingModel& model,
                                  const std::vector<double>& times_ms);

enum class SliceOrder { ascending, interleaved };

SliceOrder slice_order_from_string(const std::string& name);
std::string slice_order_to_string(SliceOrder order);

struct ScheduledEvent {
    double time_ms = 0.0;
    int b_index = 0;
    int s = 0;
};

struct AcquisitionSchedule {
    ScanProtocol protocol;
    SliceOrder slice_order = SliceOrder::ascending;
    std::vector<ScheduledEvent> events;  ///< strictly increasing time_ms

    std::vector<double> event_times_ms() const;
};

/// One volume of S slices per (b, average, direction) triple; slices within a
/// volume are spaced TR/S apart, in ascending or interleaved (evens-then-odds)
/// position order.
AcquisitionSchedule gen_schedule(const ScanProtocol& protocol, SliceOrder slice_order);

/// Labeled ellipsoids over a rows x cols x S grid, checked in priority order
/// (first containing shape wins); outside every shape is air (S0 = 0).
struct Phantom {
    struct Shape {
        std::string label;
        double cr = 0.0, cc = 0.0, cz = 0.0;  ///< center (row, col, slice)
        double rr = 1.0, rc = 1.0, rz = 1.0;  ///< radii
        double s0 = 0.0;
        double adc = 0.0;  ///< mm^2/s
    };

    int rows = 0;
    int cols = 0;
    int slice_count = 0;
    std::vector<Shape> shapes;  ///< priority order, most specific first

    /// Index into `shapes`, or -1 for air.
    int shape_at(int r, int c, double z) const;
    void validate() const;
};

/// Body + liver + spleen + kidney + small lesion on the desk-scale grid.
Phantom default_phantom(int rows = 48, int cols = 48, int slice_count = 16);

/// 2D 64-voxel (8x8) square mask on one slice, fully inside its organ in the
/// neutral (end-expiration) frame.
struct RoiMask {
    std::string label;
    int s = 0;
    std::vector<std::pair<int, int>> pixels;  ///< (row, col)
};

/// Masks for liver, spleen, and kidney, placed at the organ's inferior
/// z-edge so superior-inferior motion mixes tissue into the uncorrected
/// average while the neutral frame stays homogeneous.
std::vector<RoiMask> default_roi_masks(const Phantom& phantom);

struct SimOptions {
    int pt_channels = 4;
    double image_noise_sigma = 0.0;        ///< absolute signal units
    double max_displacement_slices = 3.0;  ///< displacement at peak inspiration
    double pt_sample_hz = 20.0;
};

struct SimulatedScan {
    Scan scan;                        ///< with pixel payloads; t = measured navigator
    MultiChannelSignal pt;            ///< channel 0 is constructed cleanest
    std::vector<int> displacements;   ///< true integer SI shift per event
    std::vector<RoiMask> rois;
    Phantom phantom;
    BreathingModel model;
    SimOptions options;
};

/// Full synthetic acquisition: per-event displacement quantized from the
/// clean motion (end-expiration, motion = -amplitude, maps to displacement 0,
/// i.e. the phantom's neutral frame), pixels sampled from the shifted phantom
/// with mono-exponential b-value decay plus Gaussian noise, and a
/// multi-channel PT stream mixed from the motion with per-channel gain,
/// drift, and noise.
SimulatedScan gen_scan(const BreathingModel& model, const AcquisitionSchedule& schedule,
                       const Phantom& phantom, const SimOptions& options);

struct SimConfig {
    std::string preset;
    BreathingModel model;
    ScanProtocol protocol;
    SliceOrder slice_order = SliceOrder::interleaved;
    SimOptions options;
};

/// Named presets (calm | deep | irregular | synchronized) on the desk-scale
/// protocol: S=16, b={50,400,800}, averages={3,3,4}, 6 directions, TR=5200ms,
/// 48x48 pixels (N = 960). `synchronized` locks the breathing period to TR
/// with ascending slice order so slice positions hit repeating phases.
SimConfig preset_config(const std::string& preset, std::uint64_t seed);

SimulatedScan run_simulation(const SimConfig& config);

/// Ground-truth JSON: per-label S0/ADC, per-event displacement, ROI masks,
/// and the generating model.
void save_truth(const SimulatedScan& sim, const std::filesystem::path& path);

} // namespace respbin

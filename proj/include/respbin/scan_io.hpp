#pragma once

#include <filesystem>
#include <string>

#include "respbin/scan.hpp"

namespace respbin {

/// Writes `content` to `path` atomically (temp file + rename).
void atomic_write_text(const std::filesystem::path& path, const std::string& content);
void atomic_write_binary(const std::filesystem::path& path, const void* bytes, std::size_t n);

/// Shortest round-trip decimal rendering of a double (bit-exact on reload).
std::string format_double(double v);
double parse_double(const std::string& text);

// --- slice metadata CSV: header `acq_index,t,b,s`, one row per slice ---

Scan load_slices(const std::filesystem::path& path, const ScanProtocol& protocol);
void save_slices(const std::filesystem::path& path, const Scan& scan);

/// Builds a metadata-only protocol from a slice CSV: S = max(s)+1, b-values
/// the sorted distinct set. Used by CLI commands when no protocol file is given.
ScanProtocol infer_protocol_from_slices(const std::filesystem::path& path);

// --- protocol JSON ---

ScanProtocol load_protocol(const std::filesystem::path& path);
void save_protocol(const std::filesystem::path& path, const ScanProtocol& protocol);

// --- raw pixel payload: <base>.json sidecar + <base>.bin of f32 LE arrays,
//     one rows*cols array per slice in acquisition-row order ---

void save_pixels(const std::filesystem::path& base, const Scan& scan);
void load_pixels_into(Scan& scan, const std::filesystem::path& base);

// --- binned volume container: <base>.json sidecar + <base>.bin of f32 LE
//     arrays concatenated in the sidecar's key order, row-major per slice ---

void save_volumes(const std::filesystem::path& base, const VolumeStack& stack,
                  const std::string& quantity = "");
VolumeStack load_volumes(const std::filesystem::path& base, std::string* quantity = nullptr);

} // namespace respbin

#include "respbin/scan_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "volume container is little-endian; big-endian hosts unsupported");

namespace respbin {

namespace fs = std::filesystem;
using nlohmann::json;

void atomic_write_text(const fs::path& path, const std::string& content) {
    atomic_write_binary(path, content.data(), content.size());
}

void atomic_write_binary(const fs::path& path, const void* bytes, std::size_t n) {
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
        if (!out) throw IoError("short write: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed for " + path.string() + ": " + ec.message());
}

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) throw IoError("double formatting failed");
    return std::string(buf, ptr);
}

double parse_double(const std::string& text) {
    double v = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    auto [ptr, ec] = std::from_chars(begin, end, v);
    if (ec != std::errc() || ptr != end) throw IoError("malformed number: '" + text + "'");
    return v;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

long long parse_ll(const std::string& text) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw IoError("malformed integer: '" + text + "'");
    return v;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json_file(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

constexpr const char* kSliceHeader = "acq_index,t,b,s";

} // namespace

Scan load_slices(const fs::path& path, const ScanProtocol& protocol) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());

    Scan scan;
    scan.protocol = protocol;

    std::string line;
    if (!std::getline(in, line)) throw IoError("empty slice file: " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kSliceHeader)
        throw IoError("unexpected slice CSV header in " + path.string() + ": '" + line + "'");

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
        SliceRecord rec;
        try {
            rec.acq_index = parse_ll(fields[0]);
            rec.t = parse_double(fields[1]);
            rec.b = parse_double(fields[2]);
            rec.s = static_cast<int>(parse_ll(fields[3]));
        } catch (const IoError& e) {
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        scan.slices.push_back(std::move(rec));
    }

    auto violations = validate_scan(scan);
    if (!violations.empty()) {
        std::string msg = "invalid scan in " + path.string() + ":";
        for (const auto& v : violations) msg += "\n  " + v;
        throw ValidationError(msg);
    }
    return scan;
}

void save_slices(const fs::path& path, const Scan& scan) {
    std::ostringstream out;
    out << kSliceHeader << "\n";
    for (const auto& sl : scan.slices) {
        out << sl.acq_index << ',' << format_double(sl.t) << ',' << format_double(sl.b) << ','
            << sl.s << "\n";
    }
    atomic_write_text(path, out.str());
}

ScanProtocol infer_protocol_from_slices(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty slice file: " + path.string());

    int max_s = 0;
    std::set<double> bs;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
        bs.insert(parse_double(fields[2]));
        max_s = std::max(max_s, static_cast<int>(parse_ll(fields[3])));
    }

    ScanProtocol p;
    p.slice_count = max_s + 1;
    p.b_values.assign(bs.begin(), bs.end());
    p.averages_per_b.assign(p.b_values.size(), 1);
    p.n_directions = 1;
    p.tr_ms = 1.0;
    if (p.b_values.empty()) {
        // header-only CSV: leave a minimal single-key protocol
        p.b_values = {1.0};
        p.averages_per_b = {1};
        p.slice_count = 1;
    }
    return p;
}

ScanProtocol load_protocol(const fs::path& path) {
    json j = parse_json_file(path);
    ScanProtocol p;
    try {
        p.slice_count = j.at("S").get<int>();
        p.b_values = j.at("b_values").get<std::vector<double>>();
        p.averages_per_b = j.at("averages_per_b").get<std::vector<int>>();
        p.n_directions = j.at("n_directions").get<int>();
        p.tr_ms = j.at("tr_ms").get<double>();
        p.rows = j.at("rows").get<int>();
        p.cols = j.at("cols").get<int>();
    } catch (const json::exception& e) {
        throw IoError("bad protocol file " + path.string() + ": " + e.what());
    }
    p.validate();
    return p;
}

void save_protocol(const fs::path& path, const ScanProtocol& protocol) {
    json j;
    j["S"] = protocol.slice_count;
    j["b_values"] = protocol.b_values;
    j["averages_per_b"] = protocol.averages_per_b;
    j["n_directions"] = protocol.n_directions;
    j["tr_ms"] = protocol.tr_ms;
    j["rows"] = protocol.rows;
    j["cols"] = protocol.cols;
    atomic_write_text(path, j.dump(2) + "\n");
}

void save_pixels(const fs::path& base, const Scan& scan) {
    if (!scan.has_pixels()) throw ValidationError("save_pixels: scan has no pixel payloads");
    json j;
    j["rows"] = scan.protocol.rows;
    j["cols"] = scan.protocol.cols;
    j["count"] = scan.size();
    j["order"] = "acq_index";
    atomic_write_text(fs::path(base).concat(".json"), j.dump(2) + "\n");

    std::vector<float> blob;
    blob.reserve(static_cast<std::size_t>(scan.size()) * scan.protocol.rows * scan.protocol.cols);
    for (const auto& sl : scan.slices) {
        blob.insert(blob.end(), sl.pixels->data.begin(), sl.pixels->data.end());
    }
    atomic_write_binary(fs::path(base).concat(".bin"), blob.data(), blob.size() * sizeof(float));
}

void load_pixels_into(Scan& scan, const fs::path& base) {
    json j = parse_json_file(fs::path(base).concat(".json"));
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    const int count = j.at("count").get<int>();
    if (count != scan.size())
        throw ValidationError("pixel payload count does not match slice count");
    if (scan.protocol.rows == 0 && scan.protocol.cols == 0) {
        // metadata-only protocol (e.g. inferred from a slice CSV): adopt the
        // payload's dimensions instead of rejecting them
        scan.protocol.rows = rows;
        scan.protocol.cols = cols;
    } else if (rows != scan.protocol.rows || cols != scan.protocol.cols) {
        throw ValidationError("pixel payload dimensions do not match protocol");
    }

    const std::string blob = read_file(fs::path(base).concat(".bin"));
    const std::size_t per = static_cast<std::size_t>(rows) * cols * sizeof(float);
    if (blob.size() != per * static_cast<std::size_t>(count))
        throw IoError("pixel payload size mismatch for " + base.string());

    for (int i = 0; i < count; ++i) {
        Image2D img(rows, cols);
        const char* src = blob.data() + per * static_cast<std::size_t>(i);
        for (std::size_t p = 0; p < img.data.size(); ++p) {
            float v;
            std::memcpy(&v, src + p * sizeof(float), sizeof(float));
            img.data[p] = v;
        }
        scan.slices[static_cast<std::size_t>(i)].pixels = std::move(img);
    }
}

void save_volumes(const fs::path& base, const VolumeStack& stack, const std::string& quantity) {
    json j;
    j["rows"] = stack.protocol.rows;
    j["cols"] = stack.protocol.cols;
    j["S"] = stack.protocol.slice_count;
    j["k"] = stack.k;
    j["b_values"] = stack.protocol.b_values;
    if (!quantity.empty()) j["quantity"] = quantity;

    json keys = json::array();
    std::vector<float> blob;
    for (const auto& [key, img] : stack.data) {
        auto prov_it = stack.provenance.find(key);
        if (prov_it == stack.provenance.end())
            throw ValidationError("volume stack missing provenance for a stored key");
        json k;
        k["bin"] = key.bin;
        k["b"] = stack.protocol.b_values.at(static_cast<std::size_t>(key.b_index));
        k["s"] = key.s;
        k["provenance"] = provenance_to_string(prov_it->second);
        keys.push_back(std::move(k));
        blob.insert(blob.end(), img.data.begin(), img.data.end());
    }
    j["keys"] = std::move(keys);

    atomic_write_text(fs::path(base).concat(".json"), j.dump(2) + "\n");
    atomic_write_binary(fs::path(base).concat(".bin"), blob.data(), blob.size() * sizeof(float));
}

VolumeStack load_volumes(const fs::path& base, std::string* quantity) {
    json j = parse_json_file(fs::path(base).concat(".json"));

    VolumeStack stack;
    stack.protocol.rows = j.at("rows").get<int>();
    stack.protocol.cols = j.at("cols").get<int>();
    stack.protocol.slice_count = j.at("S").get<int>();
    stack.protocol.b_values = j.at("b_values").get<std::vector<double>>();
    stack.protocol.averages_per_b.assign(stack.protocol.b_values.size(), 1);
    stack.protocol.tr_ms = 1.0;
    stack.k = j.at("k").get<int>();
    if (quantity) *quantity = j.value("quantity", "");

    const std::string blob = read_file(fs::path(base).concat(".bin"));
    const std::size_t per =
        static_cast<std::size_t>(stack.protocol.rows) * stack.protocol.cols * sizeof(float);
    const auto& keys = j.at("keys");
    if (blob.size() != per * keys.size())
        throw IoError("volume payload size mismatch for " + base.string());

    std::size_t offset = 0;
    for (const auto& k : keys) {
        VolKey key;
        key.bin = k.at("bin").get<int>();
        const double b = k.at("b").get<double>();
        key.b_index = stack.protocol.b_index(b);
        if (key.b_index < 0) throw IoError("volume key references unknown b-value");
        key.s = k.at("s").get<int>();

        Image2D img(stack.protocol.rows, stack.protocol.cols);
        for (std::size_t p = 0; p < img.data.size(); ++p) {
            float v;
            std::memcpy(&v, blob.data() + offset + p * sizeof(float), sizeof(float));
            img.data[p] = v;
        }
        offset += per;

        stack.provenance[key] = provenance_from_string(k.at("provenance").get<std::string>());
        stack.data[key] = std::move(img);
    }
    return stack;
}

} // namespace respbin

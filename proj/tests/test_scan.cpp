#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "respbin/scan.hpp"
#include "respbin/scan_io.hpp"
#include "test_util.hpp"

using namespace respbin;
using testutil::TempDir;

TEST_SUITE_BEGIN("scan");

TEST_CASE("b_index matches exactly, never with a tolerance") {
    ScanProtocol p = testutil::small_protocol(3, 3);  // b = 50, 400, 800
    CHECK(p.b_index(50.0) == 0);
    CHECK(p.b_index(400.0) == 1);
    CHECK(p.b_index(800.0) == 2);
    CHECK(p.b_index(400.0000001) == -1);
    CHECK(p.b_index(0.0) == -1);
}

TEST_CASE("protocol validation rejects each structural violation") {
    const ScanProtocol good = testutil::small_protocol();
    CHECK_NOTHROW(good.validate());

    ScanProtocol p = good;
    p.slice_count = 0;
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p = good;
    p.b_values.clear();
    p.averages_per_b.clear();
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p = good;
    p.b_values = {50.0, 50.0};
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p = good;
    p.b_values = {-50.0, 400.0};
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p = good;
    p.averages_per_b = {1};
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p = good;
    p.averages_per_b = {1, 0};
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p = good;
    p.n_directions = 0;
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p = good;
    p.tr_ms = 0.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);

    p = good;
    p.rows = -1;
    CHECK_THROWS_AS(p.validate(), ValidationError);
}

TEST_CASE("validate_scan reports every violated slice, never throws") {
    Scan scan = testutil::random_scan(1, 5);
    CHECK(validate_scan(scan).empty());

    scan.slices[1].acq_index = scan.slices[0].acq_index;  // duplicate
    scan.slices[2].s = scan.protocol.slice_count;         // out of range
    scan.slices[3].b = 123.0;                             // not in protocol
    scan.slices[4].t = std::nan("");                      // non-finite
    const auto violations = validate_scan(scan);
    CHECK(violations.size() == 4);
}

TEST_CASE("validate_scan flags pixel dimension mismatches") {
    Scan scan = testutil::random_scan(2, 2);
    scan.protocol.rows = 4;
    scan.protocol.cols = 4;
    scan.slices[0].pixels = Image2D(4, 4, 1.0);
    scan.slices[1].pixels = Image2D(3, 4, 1.0);
    const auto violations = validate_scan(scan);
    REQUIRE(violations.size() == 1);
    CHECK(violations[0].find("pixel dimensions") != std::string::npos);
}

TEST_CASE("has_pixels requires a payload on every slice") {
    Scan scan = testutil::random_scan(3, 3);
    CHECK_FALSE(scan.has_pixels());
    for (auto& sl : scan.slices) sl.pixels = Image2D(2, 2);
    CHECK(scan.has_pixels());
    scan.slices[1].pixels.reset();
    CHECK_FALSE(scan.has_pixels());
    CHECK_FALSE(Scan{}.has_pixels());
}

TEST_CASE("provenance strings round-trip and reject malformed input") {
    const SliceProvenance cases[] = {
        {Provenance::acquired, 1},
        {Provenance::averaged, 3},
        {Provenance::interpolated, 1},
        {Provenance::missing, 0},
    };
    for (const SliceProvenance& p : cases) {
        CHECK(provenance_from_string(provenance_to_string(p)) == p);
    }
    CHECK(provenance_to_string({Provenance::averaged, 3}) == "averaged(3)");
    CHECK_THROWS_AS(provenance_from_string("averaged(x)"), IoError);
    CHECK_THROWS_AS(provenance_from_string("unknown"), IoError);
}

TEST_CASE("format_double reloads bit-exactly on random doubles") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double v = dist(rng) * std::pow(10.0, static_cast<int>(rng() % 13) - 6);
        CHECK(parse_double(format_double(v)) == v);
    }
    CHECK(parse_double(format_double(0.1)) == 0.1);
    CHECK(parse_double(format_double(-0.0)) == 0.0);
}

TEST_CASE("slice CSV round-trips metadata bit-exactly") {
    TempDir dir;
    const Scan scan = testutil::random_scan(4, 25);
    const auto path = dir / "slices.csv";
    save_slices(path, scan);
    const Scan back = load_slices(path, scan.protocol);
    REQUIRE(back.size() == scan.size());
    for (int i = 0; i < scan.size(); ++i) {
        CHECK(back.slices[i].acq_index == scan.slices[i].acq_index);
        CHECK(back.slices[i].t == scan.slices[i].t);
        CHECK(back.slices[i].b == scan.slices[i].b);
        CHECK(back.slices[i].s == scan.slices[i].s);
    }
}

TEST_CASE("loading slices validates against the protocol") {
    TempDir dir;
    const auto path = dir / "slices.csv";
    atomic_write_text(path, "acq_index,t,b,s\n0,0.5,50,9\n");
    CHECK_THROWS_AS(load_slices(path, testutil::small_protocol(3, 2)), ValidationError);
    atomic_write_text(path, "acq_index,t,b\n0,0.5,50\n");
    CHECK_THROWS_AS(load_slices(path, testutil::small_protocol(3, 2)), IoError);
    CHECK_THROWS_AS(load_slices(dir / "absent.csv", testutil::small_protocol()), IoError);
}

TEST_CASE("protocol inference from slice CSV") {
    TempDir dir;
    const auto path = dir / "slices.csv";
    atomic_write_text(path, "acq_index,t,b,s\n0,0.1,400,2\n1,0.2,50,0\n2,0.3,400,5\n");
    const ScanProtocol p = infer_protocol_from_slices(path);
    CHECK(p.slice_count == 6);                              // max(s) + 1
    CHECK(p.b_values == std::vector<double>{50.0, 400.0});  // sorted distinct
    CHECK(p.rows == 0);
    CHECK(p.cols == 0);
    CHECK_NOTHROW(p.validate());
}

TEST_CASE("protocol JSON round-trips") {
    TempDir dir;
    ScanProtocol p = testutil::small_protocol(16, 3);
    p.averages_per_b = {3, 3, 4};
    p.n_directions = 6;
    p.tr_ms = 5200.0;
    p.rows = 48;
    p.cols = 48;
    const auto path = dir / "protocol.json";
    save_protocol(path, p);
    const ScanProtocol back = load_protocol(path);
    CHECK(back.slice_count == p.slice_count);
    CHECK(back.b_values == p.b_values);
    CHECK(back.averages_per_b == p.averages_per_b);
    CHECK(back.n_directions == p.n_directions);
    CHECK(back.tr_ms == p.tr_ms);
    CHECK(back.rows == p.rows);
    CHECK(back.cols == p.cols);
}

TEST_CASE("pixel payloads round-trip through 32-bit storage") {
    TempDir dir;
    Scan scan = testutil::random_scan(5, 6);
    scan.protocol.rows = 3;
    scan.protocol.cols = 4;
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> dist(0.0, 1200.0);
    for (auto& sl : scan.slices) {
        Image2D img(3, 4);
        for (double& v : img.data) v = dist(rng);
        sl.pixels = img;
    }
    const auto base = dir / "pixels";
    save_pixels(base, scan);

    Scan loaded = scan;
    for (auto& sl : loaded.slices) sl.pixels.reset();
    load_pixels_into(loaded, base);
    REQUIRE(loaded.has_pixels());
    for (int i = 0; i < scan.size(); ++i) {
        const Image2D& orig = *scan.slices[i].pixels;
        const Image2D& back = *loaded.slices[i].pixels;
        REQUIRE(back.same_shape(orig));
        for (std::size_t j = 0; j < orig.data.size(); ++j) {
            // on-disk format is float32, so reload equals the float cast
            CHECK(back.data[j] == static_cast<double>(static_cast<float>(orig.data[j])));
        }
    }
}

TEST_CASE("metadata-only protocols adopt payload dimensions on load") {
    TempDir dir;
    Scan scan = testutil::random_scan(7, 3);
    scan.protocol.rows = 2;
    scan.protocol.cols = 2;
    for (auto& sl : scan.slices) sl.pixels = Image2D(2, 2, 7.0);
    save_pixels(dir / "px", scan);

    Scan inferred = scan;
    inferred.protocol.rows = 0;
    inferred.protocol.cols = 0;
    for (auto& sl : inferred.slices) sl.pixels.reset();
    load_pixels_into(inferred, dir / "px");
    CHECK(inferred.protocol.rows == 2);
    CHECK(inferred.protocol.cols == 2);

    Scan wrong = scan;
    wrong.protocol.rows = 5;
    CHECK_THROWS_AS(load_pixels_into(wrong, dir / "px"), ValidationError);
}

TEST_CASE("volume container round-trips data, provenance, and quantity") {
    TempDir dir;
    VolumeStack stack;
    stack.protocol = testutil::small_protocol(2, 2);
    stack.protocol.rows = 2;
    stack.protocol.cols = 3;
    stack.k = 2;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> dist(0.0, 10.0);
    for (int bin = 0; bin < 2; ++bin) {
        for (int bi = 0; bi < 2; ++bi) {
            for (int s = 0; s < 2; ++s) {
                Image2D img(2, 3);
                for (double& v : img.data) {
                    // float-representable payloads so the round-trip is exact
                    v = static_cast<float>(dist(rng));
                }
                const VolKey key{bin, bi, s};
                stack.data[key] = img;
                stack.provenance[key] =
                    s == 0 ? SliceProvenance{Provenance::averaged, 2}
                           : SliceProvenance{Provenance::interpolated, 1};
            }
        }
    }
    save_volumes(dir / "vols", stack, "signal");
    std::string quantity;
    const VolumeStack back = load_volumes(dir / "vols", &quantity);
    CHECK(quantity == "signal");
    CHECK(back.k == 2);
    REQUIRE(back.data.size() == stack.data.size());
    for (const auto& [key, img] : stack.data) {
        REQUIRE(back.data.count(key) == 1);
        CHECK(back.data.at(key) == img);
        CHECK(back.provenance.at(key) == stack.provenance.at(key));
    }
}

TEST_CASE("atomic text writes replace content and create parents' files") {
    TempDir dir;
    const auto path = dir / "out.txt";
    atomic_write_text(path, "first");
    atomic_write_text(path, "second");
    std::ifstream in(path);
    std::string content((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
    CHECK(content == "second");
    // no stray temp files left behind
    int entries = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path))
        ++entries;
    CHECK(entries == 1);
}

TEST_SUITE_END();

#include <doctest.h>

#include <cstring>
#include <random>

#include "oneseg/voldata.hpp"
#include "test_util.hpp"

using namespace oneseg;
using testutil::TempDir;

namespace {

std::vector<std::uint8_t> f32_file(std::vector<std::uint32_t> dims, const std::vector<float>& values,
                                   const char* magic = "OSEG") {
    std::vector<std::uint8_t> b(magic, magic + 4);
    auto put = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    put(1);
    put(0);
    put(static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put(d);
    for (float v : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put(bits);
    }
    return b;
}

}  // namespace

TEST_CASE("hand-built file decodes and normalizes to [0,1]") {
    std::vector<float> v(4 * 8 * 8);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i % 256);
    const auto raw = decode_oseg(f32_file({4, 8, 8}, v));
    CHECK(raw.dims == std::vector<std::uint32_t>{4, 8, 8});
    const Volume vol = volume_from_raw(raw, "v");
    const auto vox = vol.voxels();
    CHECK(*std::min_element(vox.begin(), vox.end()) == 0.0f);
    CHECK(*std::max_element(vox.begin(), vox.end()) == 1.0f);
    CHECK(vol.depth() == 4);
}

TEST_CASE("malformed files are rejected") {
    std::vector<float> v(8 * 8, 0.5f);
    CHECK_THROWS_AS(decode_oseg(f32_file({1, 8, 8}, v, "XSEG")), FormatError);
    auto truncated = f32_file({1, 8, 8}, v);
    truncated.resize(truncated.size() - 3);
    CHECK_THROWS_AS(decode_oseg(truncated), FormatError);
    auto trailing = f32_file({1, 8, 8}, v);
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_oseg(trailing), FormatError);
    CHECK_THROWS_AS(decode_oseg(f32_file({8, 8}, v)), FormatError);
    CHECK_THROWS_AS(decode_oseg(std::vector<std::uint8_t>{'O', 'S'}), FormatError);
}

TEST_CASE("file size is header plus payload") {
    TempDir dir("voldata");
    CHECK(oseg_header_size(3) == 28);
    CHECK(oseg_header_size(4) == 32);
    VolumeMeta meta{1, 8, 8, {}, "one"};
    save_volume(Volume(meta, std::vector<float>(64, 0.25f)), dir / "a.oseg");
    CHECK(std::filesystem::file_size(dir / "a.oseg") == 28 + 4 * 64);

    meta = {3, 9, 10, {}, "three"};
    save_volume(Volume(meta, std::vector<float>(270, 0.5f)), dir / "b.oseg");
    CHECK(std::filesystem::file_size(dir / "b.oseg") == 28 + 4 * 270);
    const Volume back = load_volume(dir / "b.oseg");
    CHECK(back.meta().same_dims(meta));
}

TEST_CASE("random tensors round-trip byte-exactly") {
    std::mt19937_64 rng(11);
    TempDir dir("roundtrip");
    for (int t = 0; t < 20; ++t) {
        std::uniform_int_distribution<std::uint32_t> dim(1, 9);
        std::vector<std::uint32_t> dims{dim(rng), dim(rng), dim(rng)};
        if (t % 2) dims.push_back(dim(rng));
        std::size_t n = 1;
        for (auto d : dims) n *= d;
        RawTensor raw;
        if (t % 3 == 0) {
            std::vector<std::uint8_t> u(n);
            for (auto& x : u) x = static_cast<std::uint8_t>(rng());
            raw = RawTensor::from_u8(dims, u);
        } else {
            std::normal_distribution<float> g(0.0f, 100.0f);
            std::vector<float> f(n);
            for (auto& x : f) x = g(rng);
            raw = RawTensor::from_f32(dims, f);
        }
        const auto bytes = encode_oseg(raw);
        write_oseg(raw, dir / "t.oseg");
        CHECK(testutil::read_bytes(dir / "t.oseg") == bytes);
        const auto back = read_oseg(dir / "t.oseg");
        CHECK(back.dims == raw.dims);
        CHECK(back.dtype == raw.dtype);
        CHECK(back.payload == raw.payload);
        CHECK(encode_oseg(back) == bytes);
    }
}

TEST_CASE("volumes round-trip before normalization") {
    TempDir dir("volrt");
    std::mt19937_64 rng(3);
    const VolumeMeta meta{2, 8, 12, {}, "v"};
    auto vox = testutil::uniform(meta.voxels(), rng);
    vox[0] = 0.0f;
    vox[1] = 1.0f;
    save_volume(Volume(meta, vox), dir / "v.oseg");
    const Volume back = load_volume(dir / "v.oseg");
    CHECK(std::equal(vox.begin(), vox.end(), back.voxels().begin()));
    CHECK(back.meta().id == "v");
}

TEST_CASE("masks: zero files, invalid labels and u8 storage") {
    TempDir dir("mask");
    const VolumeMeta meta{2, 8, 8, {}, "m"};
    write_oseg(RawTensor::from_u8({2, 8, 8}, std::vector<std::uint8_t>(128, 0)), dir / "zero.oseg");
    CHECK(load_mask(dir / "zero.oseg", meta).foreground_count() == 0);

    std::vector<std::uint8_t> bad(128, 0);
    bad[5] = 2;
    write_oseg(RawTensor::from_u8({2, 8, 8}, bad), dir / "bad.oseg");
    CHECK_THROWS_AS(load_mask(dir / "bad.oseg", meta), ValidationError);

    write_oseg(RawTensor::from_u8({2, 8, 9}, std::vector<std::uint8_t>(144, 0)), dir / "dims.oseg");
    CHECK_THROWS_AS(load_mask(dir / "dims.oseg", meta), ValidationError);

    Mask m(meta, 1);
    std::vector<float> s(64, 0.0f);
    s[9] = s[10] = 1.0f;
    m.set_slice(1, s, SliceOrigin::ground_truth);
    save_mask(m, dir / "m.oseg");
    CHECK(read_oseg(dir / "m.oseg").dtype == DType::u8);
    const Mask back = load_mask(dir / "m.oseg", meta);
    CHECK(back.foreground_count() == 2);
    CHECK(back.slice(1)[10] == 1.0f);
}

TEST_CASE("manifest paths resolve relative to the manifest") {
    TempDir dir("manifest");
    std::filesystem::create_directories(dir / "sub");
    const VolumeMeta meta{1, 8, 8, {}, "a"};
    save_volume(Volume(meta, std::vector<float>(64, 0.5f)), dir / "sub" / "a.oseg");
    write_oseg(RawTensor::from_u8({1, 8, 8}, std::vector<std::uint8_t>(64, 0)), dir / "sub" / "a_mask.oseg");
    {
        std::ofstream out(dir / "sub" / "manifest.txt");
        out << "# comment\na.oseg,a_mask.oseg\n";
    }
    const auto m = load_manifest(dir / "sub" / "manifest.txt", DatasetRole::test);
    REQUIRE(m.entries.size() == 1);
    CHECK(std::filesystem::exists(m.entries[0].volume));
    CHECK(m.entries[0].mask.has_value());
    {
        std::ofstream out(dir / "sub" / "missing.txt");
        out << "nope.oseg\n";
    }
    CHECK_THROWS_AS(load_manifest(dir / "sub" / "missing.txt", DatasetRole::train), ValidationError);
}

TEST_CASE("resize: identity and hand-evaluated bilinear weights") {
    std::mt19937_64 rng(5);
    const auto src = testutil::uniform(5 * 7 * 2, rng);
    CHECK(resize_slice(src, 5, 7, 2, 5, 7, Interp::bilinear) == src);
    CHECK(resize_slice(src, 5, 7, 2, 5, 7, Interp::nearest) == src);

    // Half-pixel centres: output column i samples x = (i + 0.5) / 2 - 0.5,
    // clamped to [0, 1]: -0.25 -> 0, 0.25, 0.75, 1.25 -> 1.
    const std::vector<float> grid{0, 1, 0, 1};
    const auto up = resize_slice(grid, 2, 2, 1, 4, 4, Interp::bilinear);
    const float expect[4] = {0.0f, 0.25f, 0.75f, 1.0f};
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x) CHECK(up[y * 4 + x] == doctest::Approx(expect[x]).epsilon(1e-7));
}

TEST_CASE("nearest downsampling keeps binary masks binary") {
    std::vector<float> m(16 * 16, 0.0f);
    for (std::size_t y = 4; y < 12; ++y)
        for (std::size_t x = 2; x < 9; ++x) m[y * 16 + x] = 1.0f;
    const auto down = resize_slice(m, 16, 16, 1, 8, 8, Interp::nearest);
    for (float v : down) CHECK((v == 0.0f || v == 1.0f));
    CHECK(nearest_source(0, 16, 8) == 1);
    CHECK(nearest_source(7, 16, 8) == 15);
}

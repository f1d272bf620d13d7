#include <doctest.h>

#include <random>

#include "oneseg/metrics.hpp"
#include "oneseg/oracles.hpp"

using namespace oneseg;

namespace {

BinaryVolume empty(std::size_t d, std::size_t h, std::size_t w) {
    return BinaryVolume{d, h, w, std::vector<std::uint8_t>(d * h * w, 0)};
}

void set(BinaryVolume& m, std::size_t z, std::size_t y, std::size_t x) { m.voxels[(z * m.height + y) * m.width + x] = 1; }

BinaryVolume cube(std::size_t n, std::size_t z0, std::size_t y0, std::size_t x0, std::size_t side) {
    auto m = empty(n, n, n);
    for (std::size_t z = z0; z < z0 + side; ++z)
        for (std::size_t y = y0; y < y0 + side; ++y)
            for (std::size_t x = x0; x < x0 + side; ++x) set(m, z, y, x);
    return m;
}

}  // namespace

TEST_CASE("dice on hand examples") {
    auto a = empty(1, 1, 4), b = empty(1, 1, 4);
    a.voxels = {1, 1, 0, 0};
    b.voxels = {0, 1, 1, 0};
    CHECK(dice(a, b) == 0.5);
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(empty(1, 1, 4), empty(1, 1, 4)) == 1.0);
    b.voxels = {0, 0, 1, 1};
    CHECK(dice(a, b) == 0.0);
    CHECK_THROWS_AS(dice(a, empty(1, 2, 2)), ValidationError);
}

TEST_CASE("relative volume difference in percent") {
    auto p = empty(1, 10, 11), g = empty(1, 10, 11);
    for (std::size_t i = 0; i < 100; ++i) g.voxels[i] = 1;
    for (std::size_t i = 0; i < 110; ++i) p.voxels[i] = 1;
    CHECK(ravd(p, g) == doctest::Approx(10.0));
    CHECK(ravd(empty(1, 10, 11), g) == 100.0);
    CHECK(ravd(g, g) == 0.0);
    CHECK_THROWS_AS(ravd(g, empty(1, 10, 11)), ValidationError);
}

TEST_CASE("surface distance on single voxels and shifted cubes") {
    auto a = empty(1, 1, 5), b = empty(1, 1, 5);
    set(a, 0, 0, 0);
    set(b, 0, 0, 3);
    CHECK(assd(a, b) == 3.0);
    CHECK(assd(a, b, Spacing{1.0, 1.0, 2.0}) == 6.0);
    CHECK(assd(a, a) == 0.0);
    CHECK_THROWS_AS(assd(a, empty(1, 1, 5)), ValidationError);

    const auto c1 = cube(10, 2, 2, 2, 4), c2 = cube(10, 2, 2, 4, 4);
    CHECK(assd(c1, c2) == oracle::assd(c1, c2, Spacing{}));
    const Spacing s{2.5, 0.5, 1.25};
    CHECK(assd(c1, c2, s) == doctest::Approx(oracle::assd(c1, c2, s)).epsilon(1e-12));
}

TEST_CASE("surface points are the voxels touching background") {
    const auto c = cube(5, 1, 1, 1, 3);
    CHECK(surface_points(c).size() == 26);
    const auto solid = cube(4, 0, 0, 0, 4);
    CHECK(surface_points(solid).size() == 56);
}

TEST_CASE("fast surface distance agrees with the all-pairs oracle on random masks") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> side(2, 9);
    std::bernoulli_distribution coin(0.3);
    std::uniform_real_distribution<double> sp(0.3, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = side(rng), h = side(rng), w = side(rng);
        BinaryVolume a = empty(d, h, w), b = empty(d, h, w);
        for (auto& v : a.voxels) v = coin(rng);
        for (auto& v : b.voxels) v = coin(rng);
        a.voxels[0] = 1;
        b.voxels.back() = 1;
        const Spacing s{sp(rng), sp(rng), sp(rng)};
        INFO("trial ", trial);
        CHECK(std::abs(assd(a, b, s) - oracle::assd(a, b, s)) <= 1e-12 * std::max(1.0, oracle::assd(a, b, s)));
    }
}

TEST_CASE("evaluating a prediction against itself") {
    const VolumeMeta meta{3, 8, 8, {}, "v"};
    Mask m(meta, 1);
    std::vector<float> s(64, 0.0f);
    for (std::size_t i = 18; i < 30; ++i) s[i] = 1.0f;
    for (std::size_t d = 0; d < 3; ++d) m.set_slice(d, s, SliceOrigin::ground_truth);
    const auto r = evaluate_volume(m, m, Spacing{});
    CHECK(r.dice == 1.0);
    CHECK(r.ravd == 0.0);
    CHECK(r.assd == 0.0);
    CHECK(r.slice_dice == std::vector<double>{1.0, 1.0, 1.0});

    Mask other(VolumeMeta{3, 8, 9, {}, "w"}, 1);
    CHECK_THROWS_AS(evaluate_volume(m, other, Spacing{}), ValidationError);
}

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "oneseg/oracles.hpp"
#include "oneseg/screening.hpp"
#include "test_util.hpp"

using namespace oneseg;
using testutil::random_features;

namespace {

FeatureMap constant_map(std::size_t h, std::size_t w, std::vector<float> channel_values) {
    FeatureMap f;
    f.height = h;
    f.width = w;
    f.channels = channel_values.size();
    for (std::size_t p = 0; p < h * w; ++p) f.data.insert(f.data.end(), channel_values.begin(), channel_values.end());
    return f;
}

std::vector<FeatureMap> random_volume(std::size_t D, std::mt19937_64& rng) {
    std::vector<FeatureMap> v;
    for (std::size_t d = 0; d < D; ++d) v.push_back(random_features(3, 4, 2, rng, 0.0f, 1.0f));
    return v;
}

double sse(const std::vector<std::vector<double>>& pts, const std::vector<std::size_t>& assign, std::size_t k) {
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
        std::vector<double> mean(pts[0].size(), 0.0);
        std::size_t n = 0;
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (assign[i] == c) {
                for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += pts[i][d];
                ++n;
            }
        for (auto& m : mean) m /= static_cast<double>(n);
        for (std::size_t i = 0; i < pts.size(); ++i)
            if (assign[i] == c)
                for (std::size_t d = 0; d < mean.size(); ++d) total += (pts[i][d] - mean[d]) * (pts[i][d] - mean[d]);
    }
    return total;
}

}  // namespace

TEST_CASE("flattening follows row order") {
    FeatureMap a;
    a.height = 1;
    a.width = 1;
    a.channels = 3;
    a.data = {0.5f, -1.0f, 2.0f};
    CHECK(flatten_features(a) == a.data);

    std::mt19937_64 rng(1);
    const auto f = random_features(3, 5, 4, rng);
    const auto flat = flatten_features(f);
    std::size_t i = 0;
    for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 5; ++x)
            for (std::size_t c = 0; c < 4; ++c) CHECK(flat[i++] == f.at(y, x, c));
}

TEST_CASE("cosine similarity") {
    const auto a = constant_map(2, 2, {1.0f, 0.0f}), b = constant_map(2, 2, {0.0f, 1.0f});
    CHECK(sim(a, a) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sim(a, b) == 0.0);
    CHECK(sim(a, b, SimilarityMode::pixel) == 0.0);
    CHECK(sim(a, constant_map(2, 2, {0.0f, 0.0f})) == 0.0);
    CHECK_THROWS_AS(sim(a, constant_map(2, 3, {1.0f, 0.0f})), ValidationError);

    std::mt19937_64 rng(2);
    for (int t = 0; t < 20; ++t) {
        const auto x = random_features(4, 3, 5, rng), y = random_features(4, 3, 5, rng);
        CHECK(std::abs(sim(x, y) - oracle::cosine(x, y)) <= 1e-12);
        double pix = 0.0;
        for (std::size_t p = 0; p < 12; ++p) {
            long double d = 0, nx = 0, ny = 0;
            for (std::size_t c = 0; c < 5; ++c) {
                d += static_cast<long double>(x.data[p * 5 + c]) * y.data[p * 5 + c];
                nx += static_cast<long double>(x.data[p * 5 + c]) * x.data[p * 5 + c];
                ny += static_cast<long double>(y.data[p * 5 + c]) * y.data[p * 5 + c];
            }
            pix += static_cast<double>(d / std::sqrt(nx * ny));
        }
        CHECK(sim(x, y, SimilarityMode::pixel) == doctest::Approx(pix / 12).epsilon(1e-12));
    }
}

TEST_CASE("representative scores") {
    std::mt19937_64 rng(3);
    const auto one = random_volume(1, rng);
    const std::vector<std::size_t> self{0};
    CHECK(rep_score(0, self, one) == doctest::Approx(1.0).epsilon(1e-15));

    const std::vector<FeatureMap> same(4, random_features(3, 3, 2, rng));
    const std::vector<std::size_t> all{0, 1, 2, 3};
    CHECK(rep_score(2, all, same) == doctest::Approx(4.0).epsilon(1e-14));

    for (int t = 0; t < 20; ++t) {
        const auto vol = random_volume(8, rng);
        const std::vector<std::size_t> members{1, 3, 4, 6, 7};
        const auto ref = oracle::repscore(vol, members);
        for (std::size_t i = 0; i < members.size(); ++i) CHECK(std::abs(rep_score(members[i], members, vol) - ref[i]) <= 1e-9);
    }
    CHECK_THROWS_AS(rep_score(0, std::vector<std::size_t>{1, 2}, one), ValidationError);
}

TEST_CASE("cluster counts") {
    CHECK(cluster_count(10, 2) == 5);
    CHECK(cluster_count(6, 3) == 2);
    CHECK(cluster_count(12, 5) == 2);
    CHECK(cluster_count(3, 5) == 2);
    CHECK(cluster_count(1, 2) == 1);
}

TEST_CASE("kmeans with one cluster per point has zero inertia") {
    std::mt19937_64 rng(4);
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 6; ++i) pts.push_back({std::uniform_real_distribution<double>(0, 1)(rng), 0.5 * i});
    const auto r = kmeans(pts, 6, 9);
    CHECK(r.inertia == 0.0);
    auto sorted = r.assignment;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});
    CHECK_THROWS_AS(kmeans(pts, 7, 0), ValidationError);
    CHECK_THROWS_AS(kmeans(pts, 0, 0), ValidationError);
}

TEST_CASE("kmeans finds the minimum-SSE partition of separated blobs") {
    const std::vector<std::vector<double>> pts{{0.0}, {10.0}, {0.1}, {10.1}};
    // Exhaustive oracle over all 2-partitions.
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> best_assign;
    for (unsigned mask = 1; mask < 15; ++mask) {
        std::vector<std::size_t> a(4);
        for (int i = 0; i < 4; ++i) a[i] = (mask >> i) & 1u;
        const double s = sse(pts, a, 2);
        if (s < best) {
            best = s;
            best_assign = a;
        }
    }
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto r = kmeans(pts, 2, seed);
        CHECK(r.inertia == doctest::Approx(best).epsilon(1e-12));
        CHECK((r.assignment[0] == r.assignment[2]) == (best_assign[0] == best_assign[2]));
        CHECK(r.assignment[0] != r.assignment[1]);
        CHECK(r.assignment[1] == r.assignment[3]);
    }
}

TEST_CASE("kmeans inertia never increases and runs are reproducible") {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 30; ++t) {
        std::vector<std::vector<double>> pts(15, std::vector<double>(3));
        for (auto& p : pts)
            for (auto& v : p) v = std::normal_distribution<double>(0, 1)(rng);
        const auto r = kmeans(pts, 4, t);
        for (std::size_t i = 1; i < r.inertia_history.size(); ++i) CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-12);
        for (const auto& m : r.members()) CHECK(!m.empty());
        CHECK(r.iterations <= 100);
        CHECK(kmeans(pts, 4, t).assignment == r.assignment);
    }
}

TEST_CASE("groups of identical slices give one representative per group") {
    std::mt19937_64 rng(6);
    const auto a = random_features(3, 3, 2, rng, 0, 1), b = random_features(3, 3, 2, rng, 0, 1),
               c = random_features(3, 3, 2, rng, 0, 1);
    const std::vector<FeatureMap> two{a, a, a, b, b, b}, three{a, a, b, b, c, c};
    std::size_t checked_two = 0, checked_three = 0;
    for (std::uint64_t s = 0; s < 30; ++s) {
        std::mt19937_64 d1(s), d2(s);
        const auto r2 = build_representative_set("g", two, d1);
        if (r2.clusters.k == 2) {
            ++checked_two;
            CHECK(r2.indices == std::vector<std::size_t>{0, 3});
            REQUIRE(r2.pairs.size() == 1);
            CHECK(r2.pairs[0] == std::pair<std::size_t, std::size_t>{0, 3});
        }
        const auto r3 = build_representative_set("g", three, d2);
        if (r3.clusters.k == 3) {
            ++checked_three;
            CHECK(r3.indices == std::vector<std::size_t>{0, 2, 4});
            CHECK(r3.pairs.size() == 2);
        }
    }
    CHECK(checked_two > 0);
    CHECK(checked_three > 0);
}

TEST_CASE("D = 6 with I = 3 gives two clusters and one pair") {
    std::mt19937_64 rng(7);
    const auto vol = random_volume(6, rng);
    bool seen = false;
    for (std::uint64_t s = 0; s < 50 && !seen; ++s) {
        std::mt19937_64 draw(s);
        const auto rs = build_representative_set("v", vol, draw);
        if (rs.interval != 3) continue;
        seen = true;
        CHECK(rs.clusters.k == 2);
        CHECK(rs.indices.size() == 2);
        CHECK(rs.pairs.size() == 1);
    }
    CHECK(seen);
}

TEST_CASE("representative sets match the per-cluster brute-force argmax") {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 40; ++t) {
        const std::size_t D = 2 + rng() % 15;
        const auto vol = random_volume(D, rng);
        std::mt19937_64 draw(t);
        const auto rs = build_representative_set("v", vol, draw, SimilarityMode::flat, 1 + t % 3);
        std::vector<std::size_t> expect;
        for (const auto& m : rs.clusters.members()) expect.push_back(oracle::best_member(vol, m));
        std::sort(expect.begin(), expect.end());
        CHECK(rs.indices == expect);
        CHECK(rs.pairs.size() + 1 == rs.indices.size());
        for (std::size_t i = 0; i < rs.pairs.size(); ++i) {
            CHECK(rs.pairs[i].first == rs.indices[i]);
            CHECK(rs.pairs[i].second == rs.indices[i + 1]);
        }
        CHECK(select_test_slice(vol) == oracle::test_slice(vol));
    }
}

TEST_CASE("test slice selection") {
    std::mt19937_64 rng(9);
    const std::vector<FeatureMap> same(5, random_features(2, 2, 3, rng, 0, 1));
    CHECK(select_test_slice(same) == 0);
    CHECK(select_test_slice(std::vector<FeatureMap>{same[0]}) == 0);

    // Four corner patterns and their mean: the mean is closest to all of them.
    std::vector<FeatureMap> vol;
    const float e[4][4] = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
    vol.push_back(constant_map(1, 1, {e[0][0], e[0][1], e[0][2], e[0][3]}));
    vol.push_back(constant_map(1, 1, {e[1][0], e[1][1], e[1][2], e[1][3]}));
    vol.push_back(constant_map(1, 1, {0.25f, 0.25f, 0.25f, 0.25f}));
    vol.push_back(constant_map(1, 1, {e[2][0], e[2][1], e[2][2], e[2][3]}));
    vol.push_back(constant_map(1, 1, {e[3][0], e[3][1], e[3][2], e[3][3]}));
    CHECK(select_test_slice(vol) == 2);
    CHECK(oracle::test_slice(vol) == 2);
}

TEST_CASE("screening ignores positive rescaling of the features") {
    std::mt19937_64 rng(10);
    for (int t = 0; t < 20; ++t) {
        const auto vol = random_volume(10, rng);
        const float c = std::uniform_real_distribution<float>(0.01f, 100.0f)(rng);
        auto scaled = vol;
        for (auto& f : scaled)
            for (auto& v : f.data) v *= c;
        CHECK(select_test_slice(scaled) == select_test_slice(vol));
        CHECK(select_test_slice(scaled, SimilarityMode::pixel) == select_test_slice(vol, SimilarityMode::pixel));
        std::mt19937_64 d1(t), d2(t);
        CHECK(build_representative_set("s", scaled, d1).indices == build_representative_set("s", vol, d2).indices);
    }
}

TEST_CASE("similarity matrices do not depend on the worker count") {
    std::mt19937_64 rng(11);
    const auto vol = random_volume(9, rng);
    CHECK(similarity_matrix(vol, SimilarityMode::flat, 1) == similarity_matrix(vol, SimilarityMode::flat, 4));
    CHECK(parse_similarity_mode("pixel") == SimilarityMode::pixel);
    CHECK_THROWS_AS(parse_similarity_mode("dot"), ValidationError);
}

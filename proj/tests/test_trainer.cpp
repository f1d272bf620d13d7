#include <doctest.h>

#include <cmath>
#include <random>

#include "oneseg/model.hpp"
#include "oneseg/oracles.hpp"
#include "oneseg/synth.hpp"
#include "oneseg/trainer.hpp"
#include "test_util.hpp"

using namespace oneseg;
using T = Tensor<double>;
using V = ad::Var<double>;

namespace {

constexpr std::size_t kSide = 6, kChannels = 3;

// Content-derived features, rounded to float so the float oracle sees the same numbers.
std::vector<double> content_features(const T& s) {
    std::vector<double> f;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t c = 0; c < kChannels; ++c)
            f.push_back(static_cast<float>(3.0 * std::tanh((c + 1.0) * s[i] - 0.5 * c)));
    return f;
}

FeatureFn<double> feature_fn() {
    return [](V s) { return s.tape().constant(T({kSide, kSide, kChannels}, content_features(s.value()))); };
}

// A distinct code per pixel position: every pixel attends to itself.
FeatureFn<double> positional_fn() {
    return [](V s) {
        T f({kSide, kSide, kSide * kSide}, 0.0);
        for (std::size_t p = 0; p < kSide * kSide; ++p) f[p * kSide * kSide + p] = 40.0;
        return s.tape().constant(f);
    };
}

FeatureMap as_map(const std::vector<double>& f) {
    return FeatureMap{kSide, kSide, kChannels, 1, std::vector<float>(f.begin(), f.end())};
}

std::vector<double> oracle_copy(const std::vector<double>& dense, const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i] += dense[i * n + j] * v[j];
    return out;
}

std::vector<double> oracle_reconstruct(const std::vector<double>& tar_feat, const std::vector<double>& ref_feat,
                                       const std::vector<double>& values, std::size_t patch) {
    return oracle_copy(oracle::dense_attention(as_map(tar_feat), as_map(ref_feat), patch), values);
}

double huber_mean(const std::vector<double>& a, const std::vector<double>& b, double delta) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = std::abs(a[i] - b[i]);
        s += d < delta ? 0.5 * d * d / delta : d - 0.5 * delta;
    }
    return s / static_cast<double>(a.size());
}

std::vector<T> random_slices(std::size_t n, std::mt19937_64& rng) {
    std::vector<T> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto v = testutil::uniform(kSide * kSide, rng);
        out.emplace_back(Shape{kSide, kSide, 1}, std::vector<double>(v.begin(), v.end()));
    }
    return out;
}

Objective<double> objective(ad::Tape<double>& tape, const std::vector<T>& slices, const LossWeights& w) {
    std::vector<V> vs;
    for (const auto& s : slices) vs.push_back(tape.constant(s));
    return build_objective<double>(vs, feature_fn(), w);
}

}  // namespace

TEST_CASE("annealing endpoints and midpoint") {
    const Alpha a0 = anneal_alpha(0.0), a1 = anneal_alpha(1.0), mid = anneal_alpha(0.5);
    CHECK(a0.alpha1 == 0.9);
    CHECK(a0.alpha2 == 0.1);
    CHECK(a1.alpha1 == 0.5);
    CHECK(a1.alpha2 == 0.5);
    CHECK(mid.alpha1 == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(mid.alpha2 == doctest::Approx(0.3).epsilon(1e-15));
    for (double p = 0.0; p <= 1.0; p += 0.125) CHECK(anneal_alpha(p).alpha1 + anneal_alpha(p).alpha2 == doctest::Approx(1.0));
    CHECK_THROWS_AS(anneal_alpha(1.5), ValidationError);
}

TEST_CASE("learning rate halves every epoch") {
    CHECK(learning_rate(1e-4, 0) == 1e-4);
    CHECK(learning_rate(1e-4, 1) == 5e-5);
    CHECK(learning_rate(1e-4, 2) == 2.5e-5);
    for (std::size_t e = 0; e < 20; ++e) CHECK(learning_rate(1e-4, e) == 1e-4 / std::pow(2.0, static_cast<double>(e)));
}

TEST_CASE("identical slices under self-matching features give a zero objective") {
    std::mt19937_64 rng(1);
    const auto one = random_slices(1, rng)[0];
    ad::Tape<double> tape;
    std::vector<V> vs(3, tape.constant(one));
    const auto o = build_objective<double>(vs, positional_fn(), LossWeights{0.6, 0.4, 0.9, 0.1, 3, 1e-3});
    CHECK(o.teacher.value()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(o.chained.value()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(o.cycle.value()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(o.total.value()[0] < 1e-9);
}

TEST_CASE("objective terms match a step-by-step composition") {
    std::mt19937_64 rng(2);
    for (const std::size_t n : {2, 3, 4}) {
        const auto slices = random_slices(n, rng);
        const LossWeights w{0.7, 0.3, 0.9, 0.1, 3, 0.05};
        ad::Tape<double> tape;
        const auto o = objective(tape, slices, w);

        std::vector<std::vector<double>> S, F;
        for (const auto& s : slices) {
            S.emplace_back(s.data().begin(), s.data().end());
            F.push_back(content_features(s));
        }
        double teacher = 0.0, chained = 0.0, cycle = 0.0;
        std::vector<double> hat;
        for (std::size_t i = 0; i + 1 < n; ++i) {
            const auto fw = oracle_reconstruct(F[i + 1], F[i], S[i], w.patch);
            teacher += huber_mean(S[i + 1], fw, w.huber_delta);
            const auto rec = i == 0 ? fw : oracle_reconstruct(F[i + 1], content_features(T({kSide, kSide, 1}, hat)), hat, w.patch);
            chained += huber_mean(S[i + 1], rec, w.huber_delta);
            hat = rec;
            const auto back = oracle_reconstruct(F[i], content_features(T({kSide, kSide, 1}, fw)), fw, w.patch);
            cycle += huber_mean(S[i], back, w.huber_delta);
        }
        CHECK(o.teacher_terms.size() == n - 1);
        CHECK(std::abs(o.teacher.value()[0] - teacher) <= 1e-6);
        CHECK(std::abs(o.chained.value()[0] - chained) <= 1e-6);
        CHECK(std::abs(o.cycle.value()[0] - cycle) <= 1e-6);
        CHECK(std::abs(o.sche.value()[0] - (0.7 * teacher + 0.3 * chained)) <= 1e-6);
        CHECK(std::abs(o.total.value()[0] - (0.9 * (0.7 * teacher + 0.3 * chained) + 0.1 * cycle)) <= 1e-6);
    }
}

TEST_CASE("alpha1 = 1 leaves only the teacher-forced term") {
    std::mt19937_64 rng(3);
    const auto slices = random_slices(3, rng);
    ad::Tape<double> tape;
    const auto o = objective(tape, slices, LossWeights{1.0, 0.0, 1.0, 0.0, 3, 1e-3});
    CHECK(o.chained.value()[0] == 0.0);
    CHECK(o.cycle.value()[0] == 0.0);
    CHECK(o.sche.value()[0] == doctest::Approx(o.teacher.value()[0]).epsilon(1e-15));
    CHECK(o.total.value()[0] == doctest::Approx(o.teacher.value()[0]).epsilon(1e-15));
}

TEST_CASE("loss helpers agree with the combined objective") {
    std::mt19937_64 rng(4);
    const auto slices = random_slices(3, rng);
    const LossWeights w{0.8, 0.2, 0.9, 0.1, 3, 1e-3};
    ad::Tape<double> tape;
    std::vector<V> vs;
    for (const auto& s : slices) vs.push_back(tape.constant(s));
    const double sche = loss_sche<double>(vs, feature_fn(), w).value()[0];
    const double cyc = loss_cyc<double>(vs, feature_fn(), w).value()[0];
    const double total = total_loss<double>(vs, feature_fn(), w).value()[0];
    CHECK(total == doctest::Approx(0.9 * sche + 0.1 * cyc).epsilon(1e-12));

    CHECK_THROWS_AS(loss_sche<double>(std::span<const V>(vs.data(), 1), feature_fn(), w), ValidationError);
}

TEST_CASE("cycle term vanishes for inverse permutations") {
    // Features equal to a per-pixel code: pixel p of the target matches pixel p of the reference.
    std::mt19937_64 rng(5);
    const auto slices = random_slices(2, rng);
    const auto positional = positional_fn();
    ad::Tape<double> tape;
    std::vector<V> vs{tape.constant(slices[0]), tape.constant(slices[1])};
    const auto o = build_objective<double>(vs, positional, LossWeights{0.9, 0.1, 0.9, 0.1, 3, 1e-3});
    CHECK(o.cycle.value()[0] < 1e-9);
}

TEST_CASE("Adam: zero gradients leave parameters alone, a first step moves by lr") {
    std::vector<Tensor<float>> p{Tensor<float>({3}, std::vector<float>{0.5f, -1.0f, 2.0f})};
    const std::vector<Tensor<float>> zero{Tensor<float>({3}, 0.0f)};
    AdamState s;
    adam_step(p, zero, s, 1e-2, 0.9, 0.999, 1e-8);
    CHECK(p[0][0] == 0.5f);
    CHECK(p[0][2] == 2.0f);

    AdamState s2;
    const std::vector<Tensor<float>> g{Tensor<float>({3}, std::vector<float>{0.3f, -2.0f, 1e-3f})};
    adam_step(p, g, s2, 1e-2, 0.9, 0.999, 1e-8);
    CHECK(p[0][0] == doctest::Approx(0.49).epsilon(1e-5));
    CHECK(p[0][1] == doctest::Approx(-0.99).epsilon(1e-5));
    CHECK(p[0][2] == doctest::Approx(1.99).epsilon(1e-5));
}

TEST_CASE("report CSV layout") {
    TrainReport r;
    EpochStats e;
    e.epoch = 0;
    e.loss = 0.25;
    e.l_sche = 0.2;
    e.l_cyc = 0.5;
    e.alpha1 = 0.9;
    e.lr = 1e-4;
    e.seconds = 1.23456;
    r.epochs.push_back(e);
    CHECK(report_csv(r) == "epoch,loss,l_sche,l_cyc,alpha1,lr,seconds\n0,0.25,0.2,0.5,0.9,1e-04,1.235\n");
}

TEST_CASE("configuration validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.patch = 4;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.alpha_start = 1.2;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = TrainConfig{};
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

namespace {

std::vector<Volume> small_set(std::size_t count, std::size_t side) {
    SynthConfig base;
    base.depth = 6;
    base.height = side;
    base.width = side;
    base.radius = side / 5.0;
    base.growth = 0.2;
    base.drift_y = 0.5;
    base.drift_x = 0.25;
    std::vector<Volume> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate(vary_synth(base, 40 + i, "v" + std::to_string(i))).volume);
    return out;
}

Model small_model(std::uint64_t seed) {
    GaborParams g;
    g.scales = 2;
    g.orientations = 4;
    g.kernel = 7;
    EncoderConfig e;
    e.channels = 8;
    e.layers = {{8, 1}, {8, 1}};
    e.seed = seed;
    return make_model(g, true, e);
}

}  // namespace

TEST_CASE("training is reproducible and independent of the worker count") {
    const auto vols = small_set(3, 24);
    TrainConfig c;
    c.epochs = 2;
    c.patch = 5;
    c.lr = 1e-3;
    c.seed = 5;
    const auto a = train(vols, small_model(1), c);
    const auto b = train(vols, small_model(1), c);
    c.workers = 3;
    const auto m = train(vols, small_model(1), c);
    REQUIRE(a.report.epochs.size() == 2);
    for (std::size_t e = 0; e < 2; ++e) {
        CHECK(a.report.epochs[e].loss == b.report.epochs[e].loss);
        CHECK(a.report.epochs[e].teacher == b.report.epochs[e].teacher);
        CHECK(a.report.epochs[e].loss == m.report.epochs[e].loss);
        CHECK(a.report.epochs[e].lr == learning_rate(1e-3, e));
    }
    CHECK(a.model.encoder.weights[0].storage() == b.model.encoder.weights[0].storage());
    CHECK(a.model.encoder.weights[0].storage() == m.model.encoder.weights[0].storage());
    CHECK(a.report.epochs[0].alpha1 == 0.9);
}

TEST_CASE("teacher-forced loss trends down on one volume") {
    const auto vols = small_set(1, 32);
    TrainConfig c;
    c.epochs = 3;
    c.patch = 7;
    c.lr = 1e-3;
    c.seed = 11;
    const auto r = train(vols, small_model(2), c);
    std::size_t regressions = 0;
    for (std::size_t e = 1; e < r.report.epochs.size(); ++e) regressions += r.report.epochs[e].teacher > r.report.epochs[e - 1].teacher;
    CHECK(regressions <= 1);
    CHECK(r.report.epochs.back().teacher < r.report.epochs.front().teacher);
}

TEST_CASE("runaway parameters raise a divergence error") {
    const auto vols = small_set(1, 16);
    TrainConfig c;
    c.epochs = 3;
    c.patch = 3;
    c.lr = 1e38;
    CHECK_THROWS_AS(train(vols, small_model(3), c), DivergenceError);
}

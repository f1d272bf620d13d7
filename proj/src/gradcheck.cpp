#include "oneseg/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "oneseg/diffcore.hpp"
#include "oneseg/model.hpp"
#include "oneseg/trainer.hpp"

namespace oneseg {

bool GradcheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed(); });
}

double GradcheckReport::max_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.error);
    return m;
}

namespace {

using T = Tensor<double>;
using V = ad::Var<double>;
using Tp = ad::Tape<double>;

struct Rand {
    std::mt19937_64 rng;
    explicit Rand(std::uint64_t seed) : rng(seed) {}

    T uniform(Shape s, double lo, double hi) {
        std::uniform_real_distribution<double> u(lo, hi);
        T t(std::move(s));
        for (auto& v : t.data()) v = u(rng);
        return t;
    }
    // Magnitudes in [lo, hi] with random sign, away from kinks at zero.
    T signed_away(Shape s, double lo, double hi) {
        T t = uniform(std::move(s), lo, hi);
        std::bernoulli_distribution coin(0.5);
        for (auto& v : t.data())
            if (coin(rng)) v = -v;
        return t;
    }
};

// Scalar probe of a tensor-valued primitive: sum(out * R) with a fixed random R,
// so every output element influences the loss.
V probe(Tp& tape, V out, const T& weights) { return ad::sum(ad::mul(out, tape.constant(weights))); }

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed) {
    Rand r(seed);
    GradcheckReport report;
    ad::FiniteDiffOptions fd;
    fd.eps = 1e-5;
    fd.seed = seed;
    ad::FiniteDiffOptions fd_objective = fd;
    fd_objective.retry_eps = 1e-7;

    auto check = [&](const std::string& name, std::vector<T> params, std::function<V(Tp&, std::span<const V>)> f,
                     double tol, const ad::FiniteDiffOptions& opts) {
        const ad::LossFn<double> fn = f;
        report.entries.push_back({name, ad::finite_diff_check<double>(fn, params, opts), tol});
    };
    auto prim = [&](const std::string& name, std::vector<T> params, std::function<V(Tp&, std::span<const V>)> f) {
        check(name, std::move(params), std::move(f), kPrimitiveGradTolerance, fd);
    };

    const T w342 = r.uniform({3, 4, 2}, -1, 1);
    prim("add", {r.uniform({3, 4, 2}, -1, 1), r.uniform({3, 4, 2}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::add(p[0], p[1]), w342); });
    prim("sub", {r.uniform({3, 4, 2}, -1, 1), r.uniform({3, 4, 2}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::sub(p[0], p[1]), w342); });
    prim("mul", {r.uniform({3, 4, 2}, -1, 1), r.uniform({3, 4, 2}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::mul(p[0], p[1]), w342); });
    prim("scale", {r.uniform({3, 4, 2}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::scale(p[0], 1.7), w342); });
    prim("sum", {r.uniform({3, 4, 2}, -1, 1)}, [&](Tp&, std::span<const V> p) { return ad::sum(p[0]); });
    prim("relu", {r.signed_away({3, 4, 2}, 0.1, 1.0)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::relu(p[0]), w342); });

    const T wc1 = r.uniform({5, 5, 3}, -1, 1), wc2 = r.uniform({3, 3, 3}, -1, 1);
    prim("conv2d", {r.uniform({5, 5, 2}, -1, 1), r.uniform({3, 3, 2, 3}, -1, 1), r.uniform({3}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::conv2d(p[0], p[1], p[2], 1), wc1); });
    prim("conv2d/stride2", {r.uniform({5, 5, 2}, -1, 1), r.uniform({3, 3, 2, 3}, -1, 1), r.uniform({3}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::conv2d(p[0], p[1], p[2], 2), wc2); });

    GaborParams gp;
    gp.scales = 1;
    gp.orientations = 2;
    gp.kernel = 5;
    gp.wavelength = 2.0;
    const GaborBank small_bank(gp);
    const T wf = r.uniform({6, 6, 2}, -1, 1);
    prim("filter_bank", {r.uniform({6, 6, 1}, 0, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::filter_bank(p[0], small_bank.kernels()), wf); });

    const T wm = r.uniform({3, 3, 2}, -1, 1);
    prim("pair_magnitude", {r.signed_away({3, 3, 4}, 0.2, 1.0)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::pair_magnitude(p[0]), wm); });

    const T wu = r.uniform({5, 7, 2}, -1, 1), wd = r.uniform({3, 3, 1}, -1, 1);
    prim("resize/up", {r.uniform({3, 4, 2}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::resize(p[0], 5, 7), wu); });
    prim("resize/down", {r.uniform({6, 6, 1}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::resize(p[0], 3, 3), wd); });

    const T ww = r.uniform({4, 4, 3, 3}, -1, 1), wv = r.uniform({4, 4, 2}, -1, 1);
    prim("window_logits", {r.uniform({4, 4, 2}, -1, 1), r.uniform({4, 4, 2}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::window_logits(p[0], p[1], 3), ww); });
    prim("window_softmax", {r.uniform({4, 4, 3, 3}, -2, 2)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::window_softmax(p[0]), ww); });
    prim("soft_copy", {r.uniform({4, 4, 3, 3}, 0, 1), r.uniform({4, 4, 2}, -1, 1)},
         [&](Tp& t, std::span<const V> p) { return probe(t, ad::soft_copy(p[0], p[1]), wv); });

    // Residuals on both sides of the quadratic zone.
    T a = r.uniform({4, 4, 1}, 0, 1), b = a;
    const T offsets = r.signed_away({4, 4, 1}, 0.0, 0.2);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += offsets[i];
    prim("smooth_l1_mean", {a, b}, [&](Tp&, std::span<const V> p) { return ad::smooth_l1_mean(p[0], p[1], 0.05); });

    // Full objective: bottleneck + encoder + all loss terms, two pairs.
    for (const std::size_t stride : {std::size_t{1}, std::size_t{2}}) {
        const std::size_t side = 6 * stride;
        EncoderConfig ec;
        ec.channels = 4;
        ec.layers = {{3, 1}, {4, stride}};
        ec.seed = seed;
        const Model model = make_model(gp, true, ec);
        std::vector<T> slices;
        for (int i = 0; i < 3; ++i) slices.push_back(r.uniform({side, side, 1}, 0, 1));
        const LossWeights lw{0.7, 0.3, 0.9, 0.1, 3, 1e-3};
        auto params = model.encoder.cast<double>().flatten();
        check(stride == 1 ? "objective" : "objective/stride2", params,
              [&](Tp& t, std::span<const V> p) {
                  std::vector<V> vs;
                  for (const auto& s : slices) vs.push_back(t.constant(s));
                  const FeatureFn<double> features = [&](V s) { return model_features<double>(model, s, p); };
                  return total_loss<double>(vs, features, lw);
              },
              kObjectiveGradTolerance, fd_objective);
    }
    return report;
}

}  // namespace oneseg

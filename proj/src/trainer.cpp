#include "oneseg/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>
#include <random>
#include <sstream>

#include "oneseg/parallel.hpp"
#include "oneseg/reconstruct.hpp"
#include "oneseg/textio.hpp"

namespace oneseg {

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("train.epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("train.batch_size must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("train.lr must be positive");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("loss weights must be non-negative");
    if (lambda1 + lambda2 <= 0.0) throw ValidationError("at least one loss weight must be positive");
    for (double a : {alpha_start, alpha_end})
        if (a < 0.0 || a > 1.0) throw ValidationError("alpha endpoints must lie in [0,1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ValidationError("Adam betas must lie in [0,1)");
    }
    if (!(eps > 0.0) || !(huber_delta > 0.0)) throw ValidationError("eps and huber delta must be positive");
    if (patch % 2 == 0) throw ValidationError("recon.patch must be odd");
}

namespace {

// 1 - a, rounded to 15 significant digits so that decimal endpoints such as
// 0.9 produce 0.1 rather than its binary neighbour.
double complement(double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.15g", 1.0 - a);
    return std::strtod(buf, nullptr);
}

}  // namespace

Alpha anneal_alpha(double progress, double start, double end) {
    if (!(progress >= 0.0 && progress <= 1.0)) throw ValidationError("annealing progress must lie in [0,1]");
    return Alpha{std::lerp(start, end, progress), std::lerp(complement(start), complement(end), progress)};
}

double learning_rate(double lr0, std::size_t epoch) { return std::ldexp(lr0, -static_cast<int>(epoch)); }

template <std::floating_point Real>
Objective<Real> build_objective(std::span<const ad::Var<Real>> slices, const FeatureFn<Real>& features,
                                const LossWeights& w) {
    if (slices.size() < 2) throw ValidationError("the objective needs at least one slice pair");
    auto& tape = slices[0].tape();
    const std::size_t H = slices[0].shape()[0], W = slices[0].shape()[1];
    const Real delta = static_cast<Real>(w.huber_delta);

    std::vector<ad::Var<Real>> feats;
    for (const auto& s : slices) feats.push_back(features(s));
    const std::size_t h = feats[0].shape()[0], wd = feats[0].shape()[1];
    const bool same = h == H && wd == W;
    auto to_grid = [&](ad::Var<Real> v) { return same ? v : ad::resize(v, h, wd); };
    auto to_full = [&](ad::Var<Real> v) { return same ? v : ad::resize(v, H, W); };

    std::vector<ad::Var<Real>> vals;
    for (const auto& s : slices) vals.push_back(to_grid(s));

    auto accumulate = [](ad::Var<Real>& acc, ad::Var<Real> term) { acc = acc.valid() ? ad::add(acc, term) : term; };
    auto zero = [&] { return tape.constant(Tensor<Real>({1}, Real{0})); };

    Objective<Real> o;
    ad::Var<Real> hat;
    for (std::size_t i = 0; i + 1 < slices.size(); ++i) {
        const auto fw = reconstruct(feats[i + 1], feats[i], vals[i], w.patch);
        const auto t = ad::smooth_l1_mean(vals[i + 1], fw, delta);
        o.teacher_terms.push_back(t.value()[0]);
        accumulate(o.teacher, t);

        if (w.alpha2 != 0.0) {
            // The chain starts from the true first slice.
            ad::Var<Real> rec = fw;
            if (i > 0) rec = reconstruct(feats[i + 1], features(to_full(hat)), hat, w.patch);
            accumulate(o.chained, ad::smooth_l1_mean(vals[i + 1], rec, delta));
            hat = rec;
        }
        if (w.lambda2 != 0.0) {
            const auto back = reconstruct(feats[i], features(to_full(fw)), fw, w.patch);
            accumulate(o.cycle, ad::smooth_l1_mean(vals[i], back, delta));
        }
    }
    if (!o.chained.valid()) o.chained = zero();
    if (!o.cycle.valid()) o.cycle = zero();

    o.sche = ad::add(ad::scale(o.teacher, static_cast<Real>(w.alpha1)), ad::scale(o.chained, static_cast<Real>(w.alpha2)));
    o.total = ad::add(ad::scale(o.sche, static_cast<Real>(w.lambda1)), ad::scale(o.cycle, static_cast<Real>(w.lambda2)));
    return o;
}

template <std::floating_point Real>
ad::Var<Real> loss_sche(std::span<const ad::Var<Real>> slices, const FeatureFn<Real>& features,
                        const LossWeights& weights) {
    LossWeights w = weights;
    w.lambda2 = 0.0;
    return build_objective(slices, features, w).sche;
}

template <std::floating_point Real>
ad::Var<Real> loss_cyc(std::span<const ad::Var<Real>> slices, const FeatureFn<Real>& features,
                       const LossWeights& weights) {
    LossWeights w = weights;
    w.alpha2 = 0.0;
    w.lambda2 = 1.0;
    return build_objective(slices, features, w).cycle;
}

template <std::floating_point Real>
ad::Var<Real> total_loss(std::span<const ad::Var<Real>> slices, const FeatureFn<Real>& features,
                         const LossWeights& weights) {
    return build_objective(slices, features, weights).total;
}

#define ONESEG_INSTANTIATE_OBJECTIVE(R)                                                                          \
    template Objective<R> build_objective(std::span<const ad::Var<R>>, const FeatureFn<R>&, const LossWeights&); \
    template ad::Var<R> loss_sche(std::span<const ad::Var<R>>, const FeatureFn<R>&, const LossWeights&);         \
    template ad::Var<R> loss_cyc(std::span<const ad::Var<R>>, const FeatureFn<R>&, const LossWeights&);          \
    template ad::Var<R> total_loss(std::span<const ad::Var<R>>, const FeatureFn<R>&, const LossWeights&);
ONESEG_INSTANTIATE_OBJECTIVE(float)
ONESEG_INSTANTIATE_OBJECTIVE(double)
#undef ONESEG_INSTANTIATE_OBJECTIVE

void adam_step(std::vector<Tensor<float>>& params, std::span<const Tensor<float>> grads, AdamState& state, double lr,
               double beta1, double beta2, double eps) {
    if (grads.size() != params.size()) throw ValidationError("Adam: gradient count does not match parameters");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), 0.0);
            state.v.emplace_back(p.size(), 0.0);
        }
    }
    ++state.steps;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.steps));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.steps));
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (grads[p].size() != params[p].size()) throw ValidationError("Adam: gradient shape mismatch");
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < params[p].size(); ++i) {
            const double g = grads[p][i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            const double step = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
            params[p][i] = static_cast<float>(static_cast<double>(params[p][i]) - step);
        }
    }
}

std::string report_csv(const TrainReport& report) {
    std::ostringstream out;
    out << "epoch,loss,l_sche,l_cyc,alpha1,lr,seconds\n";
    for (const auto& e : report.epochs) {
        out << e.epoch << ',' << format_double(e.loss) << ',' << format_double(e.l_sche) << ','
            << format_double(e.l_cyc) << ',' << format_double(e.alpha1) << ',' << format_double(e.lr) << ','
            << format_double(std::round(e.seconds * 1000.0) / 1000.0) << '\n';
    }
    return out.str();
}

void write_report_csv(const TrainReport& report, const std::filesystem::path& path) {
    write_text(path, report_csv(report));
}

namespace {

struct VolumeStep {
    double total = 0.0;
    double sche = 0.0;
    double cycle = 0.0;
    std::vector<double> teacher;
    std::vector<Tensor<float>> grads;
};

VolumeStep volume_step(const Model& model, const Volume& v, const RepresentativeSet& rs, const LossWeights& w) {
    ad::Tape<float> tape;
    std::vector<ad::Var<float>> params;
    for (auto& p : model.encoder.flatten()) params.push_back(tape.parameter(std::move(p)));
    std::vector<ad::Var<float>> slices;
    for (std::size_t idx : rs.indices) slices.push_back(tape.constant(v.slice_tensor(idx)));
    const FeatureFn<float> features = [&](ad::Var<float> s) {
        return model_features<float>(model, s, std::span<const ad::Var<float>>(params));
    };
    const auto o = build_objective<float>(slices, features, w);
    const double loss = o.total.value()[0];
    if (!std::isfinite(loss)) throw DivergenceError("non-finite loss on volume '" + v.meta().id + "'");
    tape.backward(o.total);

    VolumeStep r;
    r.total = loss;
    r.sche = o.sche.value()[0];
    r.cycle = o.cycle.value()[0];
    r.teacher.assign(o.teacher_terms.begin(), o.teacher_terms.end());
    for (const auto& p : params) {
        r.grads.push_back(tape.grad(p));
        if (!r.grads.back().all_finite()) {
            throw DivergenceError("non-finite gradient on volume '" + v.meta().id + "'");
        }
    }
    return r;
}

}  // namespace

TrainResult train(std::span<const Volume> volumes, Model model, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (volumes.empty()) throw ValidationError("training needs at least one volume");
    for (const auto& v : volumes)
        if (v.depth() < 2) throw ValidationError("training volume '" + v.meta().id + "' has fewer than 2 slices");

    std::mt19937_64 rng(cfg.seed);
    const std::size_t n = volumes.size();
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * steps_per_epoch;
    AdamState adam;
    std::size_t step = 0;
    TrainResult result;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = learning_rate(cfg.lr, epoch);

        std::vector<RepresentativeSet> sets;
        for (const auto& v : volumes) {
            const auto feats = encode_volume(model, v, cfg.workers);
            for (const auto& f : feats)
                for (float x : f.data)
                    if (!std::isfinite(x)) throw DivergenceError("features became non-finite at epoch " + std::to_string(epoch));
            sets.push_back(build_representative_set(v, feats, rng, cfg.similarity, cfg.workers));
        }
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);

        EpochStats stats;
        stats.epoch = epoch;
        stats.lr = lr;
        std::size_t pair_count = 0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            const double progress =
                total_steps > 1 ? static_cast<double>(step) / static_cast<double>(total_steps - 1) : 0.0;
            const Alpha alpha = anneal_alpha(progress, cfg.alpha_start, cfg.alpha_end);
            if (b == 0) stats.alpha1 = alpha.alpha1;
            const LossWeights w{alpha.alpha1, alpha.alpha2, cfg.lambda1, cfg.lambda2, cfg.patch, cfg.huber_delta};

            const std::size_t first = b * cfg.batch_size;
            const std::size_t count = std::min(cfg.batch_size, n - first);
            std::vector<VolumeStep> parts(count);
            parallel_for(count, cfg.workers, [&](std::size_t j) {
                const std::size_t vi = order[first + j];
                parts[j] = volume_step(model, volumes[vi], sets[vi], w);
            });

            // Fixed-order reduction keeps results independent of the worker count.
            auto grads = std::move(parts[0].grads);
            for (std::size_t j = 1; j < count; ++j)
                for (std::size_t p = 0; p < grads.size(); ++p)
                    for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += parts[j].grads[p][i];
            const float inv = 1.0f / static_cast<float>(count);
            for (auto& g : grads)
                for (auto& x : g.data()) x *= inv;
            for (const auto& part : parts) {
                stats.loss += part.total;
                stats.l_sche += part.sche;
                stats.l_cyc += part.cycle;
                for (double t : part.teacher) stats.teacher += t;
                pair_count += part.teacher.size();
            }

            auto flat = model.encoder.flatten();
            adam_step(flat, grads, adam, lr, cfg.beta1, cfg.beta2, cfg.eps);
            model.encoder = EncoderParams<float>::unflatten(model.encoder.config, std::move(flat));
            for (const auto& p : model.encoder.weights)
                if (!p.all_finite()) throw DivergenceError("parameters became non-finite at epoch " + std::to_string(epoch));
            ++step;
            ++stats.steps;
        }
        stats.loss /= static_cast<double>(n);
        stats.l_sche /= static_cast<double>(n);
        stats.l_cyc /= static_cast<double>(n);
        stats.teacher /= static_cast<double>(std::max<std::size_t>(1, pair_count));
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.report.epochs.push_back(stats);
        if (on_epoch) on_epoch(stats);
    }
    result.model = std::move(model);
    return result;
}

TrainResult train(const DatasetManifest& manifest, Model model, const TrainConfig& cfg, const EpochCallback& on_epoch) {
    std::vector<Volume> volumes;
    for (const auto& e : manifest.entries) volumes.push_back(load_volume(e.volume));
    return train(volumes, std::move(model), cfg, on_epoch);
}

}  // namespace oneseg

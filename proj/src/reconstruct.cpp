#include "oneseg/reconstruct.hpp"

#include <cmath>

#include "oneseg/kernels.hpp"
#include "oneseg/parallel.hpp"

namespace oneseg {

bool AttentionFactors::source(std::size_t y, std::size_t x, std::size_t t, std::size_t& sy, std::size_t& sx) const {
    return kernels::WindowGeometry{height, width, patch}.source(y, x, t, sy, sx);
}

void ValueGrid::validate() const {
    if (values.size() != height * width * channels) throw ValidationError("value grid size does not match its shape");
    for (float v : values) {
        if (!std::isfinite(v)) throw ValidationError("value grid contains non-finite values");
        if (kind == ValueKind::mask && (v < 0.0f || v > 1.0f)) throw ValidationError("mask values must lie in [0,1]");
    }
}

namespace {

// Rows are independent, so they are split into bands across workers.
template <typename Fn>
void for_row_bands(std::size_t rows, std::size_t workers, Fn&& fn) {
    const std::size_t bands = std::max<std::size_t>(1, std::min(workers, rows));
    const std::size_t per = (rows + bands - 1) / bands;
    parallel_for(bands, bands, [&](std::size_t b) { fn(b * per, std::min(rows, (b + 1) * per)); });
}

}  // namespace

AttentionFactors reconstruction_factors(const FeatureMap& q_tar, const FeatureMap& k_ref, std::size_t patch,
                                        std::size_t workers) {
    if (patch % 2 == 0) throw ValidationError("patch size must be odd, got " + std::to_string(patch));
    if (q_tar.height != k_ref.height || q_tar.width != k_ref.width || q_tar.channels != k_ref.channels) {
        throw ValidationError("target and reference feature maps differ in shape");
    }
    const kernels::WindowGeometry g{q_tar.height, q_tar.width, patch};
    const std::size_t C = q_tar.channels;
    // Logits and softmax in double; only the stored weights are rounded.
    const std::vector<double> q(q_tar.data.begin(), q_tar.data.end());
    const std::vector<double> k(k_ref.data.begin(), k_ref.data.end());
    std::vector<double> logits(g.height * g.width * g.taps()), w(logits.size());
    for_row_bands(g.height, workers, [&](std::size_t r0, std::size_t r1) {
        kernels::window_logits_forward<double>(q, k, g, C, logits, r0, r1);
        kernels::window_softmax_forward<double>(logits, g, w, r0, r1);
    });
    AttentionFactors f;
    f.height = g.height;
    f.width = g.width;
    f.patch = patch;
    f.weights.assign(w.begin(), w.end());
    return f;
}

ValueGrid soft_copy(const AttentionFactors& factors, const ValueGrid& v, std::size_t workers) {
    if (v.height != factors.height || v.width != factors.width) {
        throw ValidationError("value grid " + std::to_string(v.height) + "x" + std::to_string(v.width) +
                              " does not match factor grid " + std::to_string(factors.height) + "x" +
                              std::to_string(factors.width));
    }
    if (v.values.size() != v.height * v.width * v.channels) throw ValidationError("value grid size mismatch");
    const kernels::WindowGeometry g{factors.height, factors.width, factors.patch};
    ValueGrid out;
    out.height = v.height;
    out.width = v.width;
    out.channels = v.channels;
    out.kind = v.kind;
    out.values.resize(v.values.size());
    for_row_bands(g.height, workers, [&](std::size_t r0, std::size_t r1) {
        kernels::soft_copy_forward<float>(factors.weights, v.values, g, v.channels, out.values, r0, r1);
    });
    if (out.kind == ValueKind::mask) {
        // Rounding can push a convex combination of 0/1 values a hair outside [0,1].
        for (auto& x : out.values) x = std::clamp(x, 0.0f, 1.0f);
    }
    return out;
}

ValueGrid reconstruct_slice(const ValueGrid& ref, const FeatureMap& ref_feat, const FeatureMap& tar_feat,
                            std::size_t patch, std::size_t workers) {
    return soft_copy(reconstruction_factors(tar_feat, ref_feat, patch, workers), ref, workers);
}

template <std::floating_point Real>
ad::Var<Real> reconstruct(ad::Var<Real> q_tar, ad::Var<Real> k_ref, ad::Var<Real> v_ref, std::size_t patch) {
    return ad::soft_copy(ad::window_softmax(ad::window_logits(q_tar, k_ref, patch)), v_ref);
}

template ad::Var<float> reconstruct(ad::Var<float>, ad::Var<float>, ad::Var<float>, std::size_t);
template ad::Var<double> reconstruct(ad::Var<double>, ad::Var<double>, ad::Var<double>, std::size_t);

}  // namespace oneseg

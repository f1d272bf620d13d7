#include "oneseg/propagate.hpp"

#include <algorithm>

#include "oneseg/parallel.hpp"

namespace oneseg {

ValueGrid propagate_step(const ValueGrid& prev_mask, const FeatureMap& prev_feat, const FeatureMap& tar_feat,
                         std::size_t patch, std::size_t workers) {
    ValueGrid prev = prev_mask;
    prev.kind = ValueKind::mask;
    return reconstruct_slice(prev, prev_feat, tar_feat, patch, workers);
}

std::vector<float> binarize(std::span<const float> soft, std::size_t channels, float threshold) {
    std::vector<float> out(soft.size(), 0.0f);
    for (std::size_t p = 0; p < soft.size() / channels; ++p) {
        std::size_t best = channels;
        for (std::size_t c = 0; c < channels; ++c) {
            const float v = soft[p * channels + c];
            if (v >= threshold && (best == channels || v > soft[p * channels + best])) best = c;
        }
        if (best < channels) out[p * channels + best] = 1.0f;
    }
    return out;
}

PropagationResult propagate_volume(const Volume& v, std::size_t rep, std::span<const float> rep_mask,
                                   std::size_t channels, std::span<const FeatureMap> feats,
                                   const PropagateOptions& options) {
    const auto& meta = v.meta();
    const std::size_t D = meta.depth, H = meta.height, W = meta.width;
    if (rep >= D) {
        throw ValidationError("representative index " + std::to_string(rep) + " out of range for " +
                              std::to_string(D) + " slices");
    }
    if (channels < 1) throw ValidationError("mask needs at least one channel");
    if (rep_mask.size() != H * W * channels) {
        throw ValidationError("representative mask has " + std::to_string(rep_mask.size()) + " values, expected " +
                              std::to_string(H * W * channels));
    }
    for (float x : rep_mask)
        if (x != 0.0f && x != 1.0f) throw ValidationError("representative mask must be binary");
    if (feats.size() != D) throw ValidationError("feature count does not match volume depth");
    if (!(options.threshold > 0.0f && options.threshold <= 1.0f)) {
        throw ValidationError("propagation threshold must lie in (0,1]");
    }

    const std::size_t fh = feats[0].height, fw = feats[0].width;
    ValueGrid start;
    start.height = fh;
    start.width = fw;
    start.channels = channels;
    start.kind = ValueKind::mask;
    start.values = resize_slice(rep_mask, H, W, channels, fh, fw, Interp::nearest);

    PropagationResult r;
    r.rep = rep;
    r.distance.assign(D, 0);
    r.direction.assign(D, 0);
    std::vector<ValueGrid> grids(D);

    // Each direction walks its own chain; they share nothing but read-only inputs.
    const std::size_t step_workers = std::max<std::size_t>(1, options.workers / 2);
    parallel_for(2, options.workers, [&](std::size_t dir) {
        const long delta = dir == 0 ? -1 : 1;
        const ValueGrid* prev = &start;
        std::size_t prev_index = rep;
        for (long d = static_cast<long>(rep) + delta; d >= 0 && d < static_cast<long>(D); d += delta) {
            const auto i = static_cast<std::size_t>(d);
            grids[i] = propagate_step(*prev, feats[prev_index], feats[i], options.patch, step_workers);
            r.distance[i] = static_cast<std::size_t>(std::labs(d - static_cast<long>(rep)));
            r.direction[i] = static_cast<int>(delta);
            prev = &grids[i];
            prev_index = i;
        }
    });

    r.mask = Mask(meta, channels);
    r.soft = Mask(meta, channels);
    for (std::size_t d = 0; d < D; ++d) {
        if (d == rep) {
            r.mask.set_slice(d, rep_mask, SliceOrigin::ground_truth);
            r.soft.set_slice(d, rep_mask, SliceOrigin::ground_truth);
            continue;
        }
        auto full = resize_slice(grids[d].values, fh, fw, channels, H, W, Interp::bilinear);
        for (auto& x : full) x = std::clamp(x, 0.0f, 1.0f);
        r.mask.set_slice(d, binarize(full, channels, options.threshold), SliceOrigin::reconstructed);
        r.soft.set_slice(d, full, SliceOrigin::reconstructed);
    }
    return r;
}

PropagationResult propagate_volume(const Volume& v, std::size_t rep, std::span<const float> rep_mask,
                                   std::size_t channels, const Model& model, const PropagateOptions& options) {
    const auto feats = encode_volume(model, v, options.workers);
    return propagate_volume(v, rep, rep_mask, channels, feats, options);
}

}  // namespace oneseg

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oneseg/model.hpp"
#include "oneseg/reconstruct.hpp"
#include "oneseg/voldata.hpp"

namespace oneseg {

struct PropagateOptions {
    std::size_t patch = 13;
    float threshold = 0.5f;
    std::size_t workers = 1;
};

struct PropagationResult {
    Mask mask;                        // binarized; the representative slice is the expert mask
    Mask soft;                        // full-resolution soft values before thresholding
    std::size_t rep = 0;
    std::vector<std::size_t> distance;  // slices from the representative slice
    std::vector<int> direction;         // -1 towards slice 0, +1 towards slice D-1, 0 at rep
};

// One application of the factors from the previous (annotated) slice to the
// target slice on the previous mask. Output lies in [0,1].
ValueGrid propagate_step(const ValueGrid& prev_mask, const FeatureMap& prev_feat, const FeatureMap& tar_feat,
                         std::size_t patch, std::size_t workers = 1);

// rep_mask: H x W x L binary values of the representative slice.
PropagationResult propagate_volume(const Volume& v, std::size_t rep, std::span<const float> rep_mask,
                                   std::size_t channels, std::span<const FeatureMap> feats,
                                   const PropagateOptions& options = {});
PropagationResult propagate_volume(const Volume& v, std::size_t rep, std::span<const float> rep_mask,
                                   std::size_t channels, const Model& model, const PropagateOptions& options = {});

// Per channel `value >= threshold`; with several channels at most the strongest survives.
std::vector<float> binarize(std::span<const float> soft, std::size_t channels, float threshold);

}  // namespace oneseg

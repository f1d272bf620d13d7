#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "oneseg/diffcore.hpp"
#include "oneseg/voldata.hpp"

namespace oneseg {

// Softmax weights over a P x P reference window centred on each target pixel.
// Stored as [H',W',P,P]; taps that fall outside the grid hold 0.
struct AttentionFactors {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t patch = 1;
    std::vector<float> weights;

    std::size_t taps() const { return patch * patch; }
    std::span<const float> at(std::size_t y, std::size_t x) const {
        return std::span<const float>(weights).subspan((y * width + x) * taps(), taps());
    }
    // Reference pixel of tap t for target (y,x); false outside the grid.
    bool source(std::size_t y, std::size_t x, std::size_t t, std::size_t& sy, std::size_t& sx) const;
};

enum class ValueKind { intensity, mask };

struct ValueGrid {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 1;
    ValueKind kind = ValueKind::intensity;
    std::vector<float> values;  // [H',W',channels]

    // Shape consistency, finiteness and [0,1] range for masks.
    void validate() const;
};

AttentionFactors reconstruction_factors(const FeatureMap& q_tar, const FeatureMap& k_ref, std::size_t patch,
                                        std::size_t workers = 1);

ValueGrid soft_copy(const AttentionFactors& factors, const ValueGrid& v, std::size_t workers = 1);

// reconstruction_factors followed by soft_copy.
ValueGrid reconstruct_slice(const ValueGrid& ref, const FeatureMap& ref_feat, const FeatureMap& tar_feat,
                            std::size_t patch, std::size_t workers = 1);

// Graph version: q, k [H',W',C], v [H',W',Cv] -> [H',W',Cv].
template <std::floating_point Real>
ad::Var<Real> reconstruct(ad::Var<Real> q_tar, ad::Var<Real> k_ref, ad::Var<Real> v_ref, std::size_t patch);

}  // namespace oneseg

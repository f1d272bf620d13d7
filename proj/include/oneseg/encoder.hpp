#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oneseg/diffcore.hpp"
#include "oneseg/gabor.hpp"
#include "oneseg/voldata.hpp"

namespace oneseg {

struct EncoderLayerSpec {
    std::size_t out_channels = 16;
    std::size_t stride = 1;
};

// Stack of 3x3 convolutions with rectifiers between layers (none after the last).
struct EncoderConfig {
    std::size_t in_channels = 32;
    std::vector<EncoderLayerSpec> layers = {{16, 1}, {16, 2}, {16, 1}};
    std::size_t channels = 16;
    std::size_t kernel = 3;
    std::uint64_t seed = 0;

    std::size_t stride() const;
    void validate() const;
};

// "16:1,16:2,16:1" or "1,2,1" (bare strides produce `channels` outputs). The
// last layer always produces `channels` outputs.
std::vector<EncoderLayerSpec> parse_layer_specs(const std::string& text, std::size_t channels);
std::string format_layer_specs(const std::vector<EncoderLayerSpec>& layers);

template <typename Real>
struct EncoderParams {
    EncoderConfig config;
    std::vector<Tensor<Real>> weights;  // [K,K,Cin,Cout]
    std::vector<Tensor<Real>> biases;   // [Cout]

    // weight0, bias0, weight1, bias1, ...
    std::vector<Tensor<Real>> flatten() const;
    static EncoderParams unflatten(const EncoderConfig& config, std::vector<Tensor<Real>> flat);

    template <typename Other>
    EncoderParams<Other> cast() const {
        EncoderParams<Other> out;
        out.config = config;
        for (const auto& w : weights) out.weights.push_back(w.template cast<Other>());
        for (const auto& b : biases) out.biases.push_back(b.template cast<Other>());
        return out;
    }
};

// Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) kernels, zero biases.
template <typename Real>
EncoderParams<Real> init_encoder(const EncoderConfig& config);

// Input [H,W,Cin] -> feature map [ceil(H/r), ceil(W/r), C].
FeatureMap encode(const Tensor<float>& input, const EncoderParams<float>& params);
FeatureMap encode(const GaborStack& stack, const EncoderParams<float>& params);

// Graph version; `params` in flatten() order.
template <std::floating_point Real>
ad::Var<Real> encode(ad::Var<Real> input, std::span<const ad::Var<Real>> params, const EncoderConfig& config);

}  // namespace oneseg

#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "oneseg/diffcore.hpp"
#include "oneseg/encoder.hpp"
#include "oneseg/gabor.hpp"
#include "oneseg/voldata.hpp"

namespace oneseg {

// Bottleneck + encoder. With the bottleneck disabled the encoder sees the raw
// slice as a single channel.
struct Model {
    GaborBank bank;
    bool bottleneck = true;
    EncoderParams<float> encoder;

    std::size_t input_channels() const { return bottleneck ? bank.channels() : 1; }
    std::size_t stride() const { return encoder.config.stride(); }
};

// Fixes encoder.in_channels to match the bottleneck and initializes the encoder.
Model make_model(const GaborParams& gabor, bool bottleneck, EncoderConfig encoder);

FeatureMap encode_slice(const Model& model, std::span<const float> slice, std::size_t height, std::size_t width);
std::vector<FeatureMap> encode_volume(const Model& model, const Volume& volume, std::size_t workers = 1);

// slice [H,W,1] -> features [H',W',C]; `params` in EncoderParams::flatten() order.
template <std::floating_point Real>
ad::Var<Real> model_features(const Model& model, ad::Var<Real> slice, std::span<const ad::Var<Real>> params);

// Directory with config.txt, params.txt (name -> file) and one OSEG file per tensor.
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace oneseg

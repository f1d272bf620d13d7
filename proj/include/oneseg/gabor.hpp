#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "oneseg/diffcore.hpp"
#include "oneseg/tensor.hpp"

namespace oneseg {

enum class GaborMode {
    real,       // cosine part only
    magnitude,  // modulus of the (cosine, sine) quadrature pair
};

struct GaborParams {
    std::size_t scales = 4;
    std::size_t orientations = 8;
    std::size_t kernel = 9;
    double wavelength = 4.0;   // finest scale, pixels; each further scale doubles it
    double sigma_ratio = 0.56; // sigma = ratio * wavelength
    double aspect = 0.5;
    double phase = 0.0;
    GaborMode mode = GaborMode::real;
};

// Fixed bank of S x O zero-mean Gabor kernels, channel c = scale * O + orientation.
class GaborBank {
public:
    GaborBank() = default;
    explicit GaborBank(const GaborParams& params);

    const GaborParams& params() const { return params_; }
    std::size_t channels() const { return params_.scales * params_.orientations; }
    std::size_t kernel_size() const { return params_.kernel; }

    double wavelength(std::size_t scale) const;
    double sigma(std::size_t scale) const { return params_.sigma_ratio * wavelength(scale); }
    double orientation(std::size_t index) const;

    // [S*O, k, k] cosine kernels.
    const Tensor<double>& kernels() const { return even_; }
    // [S*O, k, k] sine kernels, used by the magnitude mode.
    const Tensor<double>& odd_kernels() const { return odd_; }

    // Kernels fed to the filter-bank primitive: even kernels, or even then odd for magnitude mode.
    const Tensor<double>& filter_tensor() const { return filters_; }

private:
    GaborParams params_;
    Tensor<double> even_;
    Tensor<double> odd_;
    Tensor<double> filters_;
};

GaborBank build_bank(std::size_t scales, std::size_t orientations, std::size_t kernel, double base_wavelength);

struct GaborStack {
    Tensor<float> data;  // [H,W,S*O]
    std::string source;
};

// Same-size correlation of the slice with every kernel, reflect padding.
GaborStack apply_bottleneck(std::span<const float> slice, std::size_t height, std::size_t width,
                            const GaborBank& bank, std::string source = {});

// Graph version: slice [H,W,1] -> [H,W,S*O]. Gradients reach the slice, never the kernels.
template <std::floating_point Real>
ad::Var<Real> apply_bottleneck(ad::Var<Real> slice, const GaborBank& bank);

}  // namespace oneseg

#include "oneseg/gabor.hpp"

#include <cmath>
#include <numbers>

#include "oneseg/kernels.hpp"

namespace oneseg {

namespace {

// Mean-subtracted kernel so constant regions produce no response.
void gabor_kernel(double wavelength, double theta, double sigma, double aspect, double phase, bool odd,
                  std::size_t k, std::span<double> out) {
    const long half = static_cast<long>(k / 2);
    const double c = std::cos(theta), s = std::sin(theta);
    double mean = 0.0;
    for (long y = -half; y <= half; ++y) {
        for (long x = -half; x <= half; ++x) {
            const double xr = x * c + y * s;
            const double yr = -x * s + y * c;
            const double envelope = std::exp(-(xr * xr + aspect * aspect * yr * yr) / (2.0 * sigma * sigma));
            const double arg = 2.0 * std::numbers::pi * xr / wavelength + phase;
            const double v = envelope * (odd ? std::sin(arg) : std::cos(arg));
            out[static_cast<std::size_t>((y + half) * static_cast<long>(k) + (x + half))] = v;
            mean += v;
        }
    }
    mean /= static_cast<double>(k * k);
    for (auto& v : out) v -= mean;
}

}  // namespace

GaborBank::GaborBank(const GaborParams& params) : params_(params) {
    if (params_.scales < 1 || params_.orientations < 1) {
        throw ValidationError("gabor bank needs at least one scale and one orientation");
    }
    if (params_.kernel % 2 == 0 || params_.kernel < 1) {
        throw ValidationError("gabor kernel size must be odd, got " + std::to_string(params_.kernel));
    }
    if (!(params_.wavelength > 0.0) || !(params_.sigma_ratio > 0.0) || !(params_.aspect > 0.0)) {
        throw ValidationError("gabor wavelength, sigma ratio and aspect must be positive");
    }
    const std::size_t n = channels(), k = params_.kernel;
    even_ = Tensor<double>({n, k, k});
    odd_ = Tensor<double>({n, k, k});
    for (std::size_t s = 0; s < params_.scales; ++s) {
        for (std::size_t o = 0; o < params_.orientations; ++o) {
            const std::size_t c = s * params_.orientations + o;
            gabor_kernel(wavelength(s), orientation(o), sigma(s), params_.aspect, params_.phase, false, k,
                         even_.data().subspan(c * k * k, k * k));
            gabor_kernel(wavelength(s), orientation(o), sigma(s), params_.aspect, params_.phase, true, k,
                         odd_.data().subspan(c * k * k, k * k));
        }
    }
    if (params_.mode == GaborMode::real) {
        filters_ = even_;
    } else {
        std::vector<double> both(even_.storage());
        both.insert(both.end(), odd_.storage().begin(), odd_.storage().end());
        filters_ = Tensor<double>({2 * n, k, k}, std::move(both));
    }
}

double GaborBank::wavelength(std::size_t scale) const { return params_.wavelength * std::ldexp(1.0, static_cast<int>(scale)); }

double GaborBank::orientation(std::size_t index) const {
    return std::numbers::pi * static_cast<double>(index) / static_cast<double>(params_.orientations);
}

GaborBank build_bank(std::size_t scales, std::size_t orientations, std::size_t kernel, double base_wavelength) {
    GaborParams p;
    p.scales = scales;
    p.orientations = orientations;
    p.kernel = kernel;
    p.wavelength = base_wavelength;
    return GaborBank(p);
}

GaborStack apply_bottleneck(std::span<const float> slice, std::size_t height, std::size_t width,
                            const GaborBank& bank, std::string source) {
    if (slice.size() != height * width) throw ValidationError("gabor input size does not match H*W");
    const auto& filters = bank.filter_tensor();
    const std::size_t nf = filters.dim(0), k = filters.dim(1), n = bank.channels();
    Tensor<float> responses({height, width, nf});
    kernels::filter_bank_forward<float>(slice, height, width, filters.data(), nf, k, responses.data());
    if (bank.params().mode == GaborMode::real) return GaborStack{std::move(responses), std::move(source)};

    Tensor<float> mag({height, width, n});
    for (std::size_t p = 0; p < height * width; ++p)
        for (std::size_t c = 0; c < n; ++c) {
            const float re = responses[p * nf + c], im = responses[p * nf + n + c];
            mag[p * n + c] = std::sqrt(re * re + im * im);
        }
    return GaborStack{std::move(mag), std::move(source)};
}

template <std::floating_point Real>
ad::Var<Real> apply_bottleneck(ad::Var<Real> slice, const GaborBank& bank) {
    auto responses = ad::filter_bank(slice, bank.filter_tensor());
    if (bank.params().mode == GaborMode::real) return responses;
    return ad::pair_magnitude(responses);
}

template ad::Var<float> apply_bottleneck(ad::Var<float>, const GaborBank&);
template ad::Var<double> apply_bottleneck(ad::Var<double>, const GaborBank&);

}  // namespace oneseg

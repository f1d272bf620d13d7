#include "oneseg/encoder.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "oneseg/kernels.hpp"

namespace oneseg {

std::size_t EncoderConfig::stride() const {
    std::size_t r = 1;
    for (const auto& l : layers) r *= l.stride;
    return r;
}

void EncoderConfig::validate() const {
    if (channels < 1) throw ValidationError("encoder channels must be >= 1");
    if (in_channels < 1) throw ValidationError("encoder input channels must be >= 1");
    if (layers.empty()) throw ValidationError("encoder needs at least one layer");
    if (kernel % 2 == 0) throw ValidationError("encoder kernel size must be odd");
    for (const auto& l : layers) {
        if (l.stride != 1 && l.stride != 2) throw ValidationError("encoder strides must be 1 or 2");
        if (l.out_channels < 1) throw ValidationError("encoder layer needs at least one output channel");
    }
    if (layers.back().out_channels != channels) {
        throw ValidationError("last encoder layer must produce " + std::to_string(channels) + " channels");
    }
}

std::vector<EncoderLayerSpec> parse_layer_specs(const std::string& text, std::size_t channels) {
    std::vector<EncoderLayerSpec> layers;
    std::stringstream ss(text);
    std::string item;
    auto parse_count = [&](const std::string& s) {
        std::size_t pos = 0;
        unsigned long v = 0;
        try {
            v = std::stoul(s, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != s.size()) throw ValidationError("bad encoder layer spec '" + text + "'");
        return static_cast<std::size_t>(v);
    };
    while (std::getline(ss, item, ',')) {
        EncoderLayerSpec spec;
        if (auto colon = item.find(':'); colon != std::string::npos) {
            spec.out_channels = parse_count(item.substr(0, colon));
            spec.stride = parse_count(item.substr(colon + 1));
        } else {
            spec.out_channels = channels;
            spec.stride = parse_count(item);
        }
        layers.push_back(spec);
    }
    if (layers.empty()) throw ValidationError("encoder layer spec is empty");
    if (layers.back().out_channels != channels) {
        throw ValidationError("last encoder layer in '" + text + "' must produce encoder.channels = " +
                              std::to_string(channels));
    }
    return layers;
}

std::string format_layer_specs(const std::vector<EncoderLayerSpec>& layers) {
    std::string s;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(layers[i].out_channels) + ":" + std::to_string(layers[i].stride);
    }
    return s;
}

template <typename Real>
std::vector<Tensor<Real>> EncoderParams<Real>::flatten() const {
    std::vector<Tensor<Real>> flat;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        flat.push_back(weights[l]);
        flat.push_back(biases[l]);
    }
    return flat;
}

template <typename Real>
EncoderParams<Real> EncoderParams<Real>::unflatten(const EncoderConfig& config, std::vector<Tensor<Real>> flat) {
    if (flat.size() != 2 * config.layers.size()) throw ValidationError("encoder parameter count mismatch");
    EncoderParams<Real> p;
    p.config = config;
    std::size_t cin = config.in_channels;
    for (std::size_t l = 0; l < config.layers.size(); ++l) {
        const std::size_t cout = config.layers[l].out_channels;
        const Shape ws = {config.kernel, config.kernel, cin, cout};
        if (flat[2 * l].shape() != ws || flat[2 * l + 1].shape() != Shape{cout}) {
            throw ValidationError("encoder layer " + std::to_string(l) + " has shape " +
                                  shape_string(flat[2 * l].shape()) + ", expected " + shape_string(ws));
        }
        p.weights.push_back(std::move(flat[2 * l]));
        p.biases.push_back(std::move(flat[2 * l + 1]));
        cin = cout;
    }
    return p;
}

template <typename Real>
EncoderParams<Real> init_encoder(const EncoderConfig& config) {
    config.validate();
    EncoderParams<Real> p;
    p.config = config;
    std::mt19937_64 rng(config.seed);
    std::size_t cin = config.in_channels;
    for (const auto& layer : config.layers) {
        const std::size_t k = config.kernel, cout = layer.out_channels;
        const double bound = std::sqrt(6.0 / static_cast<double>(k * k * cin));
        std::uniform_real_distribution<double> dist(-bound, bound);
        Tensor<Real> w({k, k, cin, cout});
        for (auto& v : w.data()) v = static_cast<Real>(dist(rng));
        p.weights.push_back(std::move(w));
        p.biases.emplace_back(Shape{cout}, Real{0});
        cin = cout;
    }
    return p;
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template EncoderParams<float> init_encoder<float>(const EncoderConfig&);
template EncoderParams<double> init_encoder<double>(const EncoderConfig&);

FeatureMap encode(const Tensor<float>& input, const EncoderParams<float>& params) {
    const auto& cfg = params.config;
    if (input.rank() != 3 || input.dim(2) != cfg.in_channels) {
        throw ValidationError("encoder expects [H,W," + std::to_string(cfg.in_channels) + "] input, got " +
                              shape_string(input.shape()));
    }
    std::vector<float> cur(input.storage());
    std::size_t H = input.dim(0), W = input.dim(1), cin = cfg.in_channels;
    for (std::size_t l = 0; l < cfg.layers.size(); ++l) {
        const std::size_t cout = cfg.layers[l].out_channels, s = cfg.layers[l].stride;
        const std::size_t Ho = kernels::conv_output_size(H, cfg.kernel, s);
        const std::size_t Wo = kernels::conv_output_size(W, cfg.kernel, s);
        std::vector<float> next(Ho * Wo * cout);
        kernels::conv2d_forward<float>(cur, H, W, cin, params.weights[l].data(), params.biases[l].data(), cout,
                                       cfg.kernel, s, next);
        if (l + 1 < cfg.layers.size()) {
            for (auto& v : next) v = v > 0.0f ? v : 0.0f;
        }
        cur = std::move(next);
        H = Ho;
        W = Wo;
        cin = cout;
    }
    FeatureMap f;
    f.height = H;
    f.width = W;
    f.channels = cin;
    f.stride = cfg.stride();
    f.data = std::move(cur);
    return f;
}

FeatureMap encode(const GaborStack& stack, const EncoderParams<float>& params) { return encode(stack.data, params); }

template <std::floating_point Real>
ad::Var<Real> encode(ad::Var<Real> input, std::span<const ad::Var<Real>> params, const EncoderConfig& config) {
    if (params.size() != 2 * config.layers.size()) throw ValidationError("encoder parameter count mismatch");
    if (input.shape().size() != 3 || input.shape()[2] != config.in_channels) {
        throw ValidationError("encoder expects [H,W," + std::to_string(config.in_channels) + "] input, got " +
                              shape_string(input.shape()));
    }
    ad::Var<Real> x = input;
    for (std::size_t l = 0; l < config.layers.size(); ++l) {
        x = ad::conv2d(x, params[2 * l], params[2 * l + 1], config.layers[l].stride);
        if (l + 1 < config.layers.size()) x = ad::relu(x);
    }
    return x;
}

template ad::Var<float> encode(ad::Var<float>, std::span<const ad::Var<float>>, const EncoderConfig&);
template ad::Var<double> encode(ad::Var<double>, std::span<const ad::Var<double>>, const EncoderConfig&);

}  // namespace oneseg

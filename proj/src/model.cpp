#include "oneseg/model.hpp"

#include <map>

#include "oneseg/parallel.hpp"
#include "oneseg/textio.hpp"

namespace oneseg {

Model make_model(const GaborParams& gabor, bool bottleneck, EncoderConfig encoder) {
    Model m;
    m.bank = GaborBank(gabor);
    m.bottleneck = bottleneck;
    encoder.in_channels = m.input_channels();
    m.encoder = init_encoder<float>(encoder);
    return m;
}

FeatureMap encode_slice(const Model& model, std::span<const float> slice, std::size_t height, std::size_t width) {
    if (!model.bottleneck) {
        return encode(Tensor<float>({height, width, 1}, std::vector<float>(slice.begin(), slice.end())),
                      model.encoder);
    }
    return encode(apply_bottleneck(slice, height, width, model.bank), model.encoder);
}

std::vector<FeatureMap> encode_volume(const Model& model, const Volume& volume, std::size_t workers) {
    std::vector<FeatureMap> feats(volume.depth());
    const auto& meta = volume.meta();
    parallel_for(volume.depth(), workers, [&](std::size_t d) {
        feats[d] = encode_slice(model, volume.slice(d), meta.height, meta.width);
    });
    return feats;
}

template <std::floating_point Real>
ad::Var<Real> model_features(const Model& model, ad::Var<Real> slice, std::span<const ad::Var<Real>> params) {
    auto input = model.bottleneck ? apply_bottleneck(slice, model.bank) : slice;
    return encode(input, params, model.encoder.config);
}

template ad::Var<float> model_features(const Model&, ad::Var<float>, std::span<const ad::Var<float>>);
template ad::Var<double> model_features(const Model&, ad::Var<double>, std::span<const ad::Var<double>>);

namespace {

std::vector<std::uint32_t> dims_of(const Shape& s) { return {s.begin(), s.end()}; }

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto& g = model.bank.params();
    const auto& e = model.encoder.config;
    std::string cfg;
    cfg += "gabor.scales = " + std::to_string(g.scales) + "\n";
    cfg += "gabor.orientations = " + std::to_string(g.orientations) + "\n";
    cfg += "gabor.kernel = " + std::to_string(g.kernel) + "\n";
    cfg += "gabor.wavelength = " + format_double(g.wavelength) + "\n";
    cfg += "gabor.sigma_ratio = " + format_double(g.sigma_ratio) + "\n";
    cfg += "gabor.aspect = " + format_double(g.aspect) + "\n";
    cfg += "gabor.phase = " + format_double(g.phase) + "\n";
    cfg += std::string("gabor.mode = ") + (g.mode == GaborMode::real ? "real" : "magnitude") + "\n";
    cfg += std::string("bottleneck = ") + (model.bottleneck ? "true" : "false") + "\n";
    cfg += "encoder.in_channels = " + std::to_string(e.in_channels) + "\n";
    cfg += "encoder.channels = " + std::to_string(e.channels) + "\n";
    cfg += "encoder.kernel = " + std::to_string(e.kernel) + "\n";
    cfg += "encoder.layers = " + format_layer_specs(e.layers) + "\n";
    cfg += "encoder.seed = " + std::to_string(e.seed) + "\n";
    write_text(dir / "config.txt", cfg);

    std::string index;
    for (std::size_t l = 0; l < model.encoder.weights.size(); ++l) {
        const auto& w = model.encoder.weights[l];
        const auto& b = model.encoder.biases[l];
        const std::string wn = "layer" + std::to_string(l) + ".weight";
        const std::string bn = "layer" + std::to_string(l) + ".bias";
        write_oseg(RawTensor::from_f32(dims_of(w.shape()), w.data()), dir / (wn + ".oseg"));
        // OSEG stores 3-d or 4-d tensors only.
        write_oseg(RawTensor::from_f32({1, 1, static_cast<std::uint32_t>(b.size())}, b.data()), dir / (bn + ".oseg"));
        index += wn + " = " + wn + ".oseg\n";
        index += bn + " = " + bn + ".oseg\n";
    }
    write_text(dir / "params.txt", index);
}

Model load_checkpoint(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ValidationError("checkpoint directory not found: " + dir.string());
    std::map<std::string, std::string> cfg;
    for (auto& [k, v] : read_key_values(dir / "config.txt")) cfg[k] = v;
    auto need = [&](const std::string& key) -> const std::string& {
        auto it = cfg.find(key);
        if (it == cfg.end()) throw FormatError("checkpoint config lacks '" + key + "'");
        return it->second;
    };
    GaborParams g;
    g.scales = parse_unsigned(need("gabor.scales"), "gabor.scales");
    g.orientations = parse_unsigned(need("gabor.orientations"), "gabor.orientations");
    g.kernel = parse_unsigned(need("gabor.kernel"), "gabor.kernel");
    g.wavelength = parse_double(need("gabor.wavelength"), "gabor.wavelength");
    g.sigma_ratio = parse_double(need("gabor.sigma_ratio"), "gabor.sigma_ratio");
    g.aspect = parse_double(need("gabor.aspect"), "gabor.aspect");
    g.phase = parse_double(need("gabor.phase"), "gabor.phase");
    const auto& mode = need("gabor.mode");
    if (mode != "real" && mode != "magnitude") throw FormatError("unknown gabor.mode '" + mode + "'");
    g.mode = mode == "real" ? GaborMode::real : GaborMode::magnitude;

    EncoderConfig e;
    e.channels = parse_unsigned(need("encoder.channels"), "encoder.channels");
    e.in_channels = parse_unsigned(need("encoder.in_channels"), "encoder.in_channels");
    e.kernel = parse_unsigned(need("encoder.kernel"), "encoder.kernel");
    e.layers = parse_layer_specs(need("encoder.layers"), e.channels);
    e.seed = parse_unsigned(need("encoder.seed"), "encoder.seed");
    e.validate();

    Model m;
    m.bank = GaborBank(g);
    m.bottleneck = parse_bool(need("bottleneck"), "bottleneck");
    if (e.in_channels != m.input_channels()) throw FormatError("checkpoint encoder input does not match bottleneck");

    std::map<std::string, std::string> index;
    for (auto& [k, v] : read_key_values(dir / "params.txt")) index[k] = v;
    std::vector<Tensor<float>> flat;
    std::size_t cin = e.in_channels;
    for (std::size_t l = 0; l < e.layers.size(); ++l) {
        const std::size_t cout = e.layers[l].out_channels;
        for (const char* part : {"weight", "bias"}) {
            const std::string name = "layer" + std::to_string(l) + "." + part;
            auto it = index.find(name);
            if (it == index.end()) throw FormatError("checkpoint index lacks '" + name + "'");
            const RawTensor raw = read_oseg(dir / it->second);
            const Shape want = std::string(part) == "weight" ? Shape{e.kernel, e.kernel, cin, cout} : Shape{1, 1, cout};
            const Shape got(raw.dims.begin(), raw.dims.end());
            if (got != want || raw.dtype != DType::f32) {
                throw FormatError(name + " has shape " + shape_string(got) + ", expected f32 " + shape_string(want));
            }
            Tensor<float> t(got, raw.as_float());
            if (!t.all_finite()) throw FormatError(name + " contains non-finite values");
            flat.push_back(std::string(part) == "weight" ? std::move(t) : t.reshaped({cout}));
        }
        cin = cout;
    }
    m.encoder = EncoderParams<float>::unflatten(e, std::move(flat));
    return m;
}

}  // namespace oneseg

#include "oneseg/config.hpp"

#include <cstdlib>

#include "oneseg/textio.hpp"

namespace oneseg {

const std::vector<std::pair<std::string, std::string>>& RunConfig::defaults() {
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"data.resize", "0"},
        {"encoder.channels", "16"},
        {"encoder.layers", "1,2,1"},
        {"encoder.seed", "0"},
        {"gabor.aspect", "0.5"},
        {"gabor.enabled", "true"},
        {"gabor.kernel", "9"},
        {"gabor.mode", "real"},
        {"gabor.orientations", "8"},
        {"gabor.phase", "0"},
        {"gabor.scales", "4"},
        {"gabor.sigma_ratio", "0.56"},
        {"gabor.wavelength", "4"},
        {"pipeline.seed", "0"},
        {"pipeline.test_volumes", "2"},
        {"pipeline.train_volumes", "6"},
        {"prop.threshold", "0.5"},
        {"recon.patch", "13"},
        {"screen.similarity", "flat"},
        {"synth.background", "0.3"},
        {"synth.correlation", "4"},
        {"synth.depth", "12"},
        {"synth.drift_x", "0.5"},
        {"synth.drift_y", "1"},
        {"synth.foreground", "0.6"},
        {"synth.growth", "0.3"},
        {"synth.height", "64"},
        {"synth.noise", "0.1"},
        {"synth.radius", "14"},
        {"synth.seed", "0"},
        {"synth.shape", "disk"},
        {"synth.width", "64"},
        {"train.alpha_end", "0.5"},
        {"train.alpha_start", "0.9"},
        {"train.batch_size", "2"},
        {"train.beta1", "0.9"},
        {"train.beta2", "0.999"},
        {"train.epochs", "10"},
        {"train.eps", "1e-08"},
        {"train.huber_delta", "0.001"},
        {"train.lambda1", "0.9"},
        {"train.lambda2", "0.1"},
        {"train.lr", "0.0001"},
        {"train.seed", "0"},
    };
    return table;
}

RunConfig::RunConfig() {
    for (const auto& [k, v] : defaults()) values_[k] = v;
}

bool RunConfig::known(const std::string& key) {
    for (const auto& [k, v] : defaults())
        if (k == key) return true;
    return false;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ValidationError("unknown config key '" + key + "'");
    values_[key] = trim(value);
    explicit_.insert(key);
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
    return it->second;
}

double RunConfig::number(const std::string& key) const { return parse_double(get(key), key); }
std::uint64_t RunConfig::count(const std::string& key) const { return parse_unsigned(get(key), key); }
bool RunConfig::flag(const std::string& key) const { return parse_bool(get(key), key); }

void RunConfig::load_file(const std::filesystem::path& path) {
    for (const auto& [k, v] : read_key_values(path)) {
        if (!known(k)) throw ValidationError(path.string() + ": unknown config key '" + k + "'");
        set(k, v);
    }
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void RunConfig::apply_seed(std::uint64_t seed) {
    const std::pair<const char*, std::uint64_t> streams[] = {
        {"encoder.seed", 1}, {"train.seed", 2}, {"synth.seed", 3}, {"pipeline.seed", 4}};
    for (const auto& [key, stream] : streams)
        if (!explicitly_set(key)) values_[key] = std::to_string(derive_seed(seed, stream));
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

void RunConfig::write(const std::filesystem::path& path) const { write_text(path, to_text()); }

GaborParams RunConfig::gabor() const {
    GaborParams g;
    g.scales = count("gabor.scales");
    g.orientations = count("gabor.orientations");
    g.kernel = count("gabor.kernel");
    g.wavelength = number("gabor.wavelength");
    g.sigma_ratio = number("gabor.sigma_ratio");
    g.aspect = number("gabor.aspect");
    g.phase = number("gabor.phase");
    const auto& mode = get("gabor.mode");
    if (mode == "real") g.mode = GaborMode::real;
    else if (mode == "magnitude") g.mode = GaborMode::magnitude;
    else throw ValidationError("gabor.mode: expected real or magnitude, got '" + mode + "'");
    return g;
}

bool RunConfig::bottleneck() const { return flag("gabor.enabled"); }

EncoderConfig RunConfig::encoder() const {
    EncoderConfig e;
    e.channels = count("encoder.channels");
    e.layers = parse_layer_specs(get("encoder.layers"), e.channels);
    e.seed = count("encoder.seed");
    e.in_channels = bottleneck() ? count("gabor.scales") * count("gabor.orientations") : 1;
    return e;
}

TrainConfig RunConfig::train() const {
    TrainConfig t;
    t.epochs = count("train.epochs");
    t.batch_size = count("train.batch_size");
    t.lr = number("train.lr");
    t.lambda1 = number("train.lambda1");
    t.lambda2 = number("train.lambda2");
    t.alpha_start = number("train.alpha_start");
    t.alpha_end = number("train.alpha_end");
    t.beta1 = number("train.beta1");
    t.beta2 = number("train.beta2");
    t.eps = number("train.eps");
    t.huber_delta = number("train.huber_delta");
    t.patch = count("recon.patch");
    t.similarity = similarity();
    t.seed = count("train.seed");
    return t;
}

PropagateOptions RunConfig::propagate() const {
    PropagateOptions p;
    p.patch = count("recon.patch");
    p.threshold = static_cast<float>(number("prop.threshold"));
    return p;
}

SimilarityMode RunConfig::similarity() const { return parse_similarity_mode(get("screen.similarity")); }

SynthConfig RunConfig::synth() const {
    SynthConfig s;
    s.depth = count("synth.depth");
    s.height = count("synth.height");
    s.width = count("synth.width");
    s.shape = parse_shape_family(get("synth.shape"));
    s.radius = number("synth.radius");
    s.drift_y = number("synth.drift_y");
    s.drift_x = number("synth.drift_x");
    s.growth = number("synth.growth");
    s.noise_amplitude = number("synth.noise");
    s.correlation_length = number("synth.correlation");
    s.foreground = number("synth.foreground");
    s.background = number("synth.background");
    s.seed = count("synth.seed");
    return s;
}

std::size_t RunConfig::resize() const {
    const auto r = count("data.resize");
    if (r != 0 && r < 8) throw ValidationError("data.resize must be 0 or at least 8");
    return r;
}

void RunConfig::validate() const {
    GaborBank bank(gabor());
    encoder().validate();
    train().validate();
    const auto p = propagate();
    if (p.patch % 2 == 0) throw ValidationError("recon.patch must be odd");
    if (!(p.threshold > 0.0f && p.threshold <= 1.0f)) throw ValidationError("prop.threshold must lie in (0,1]");
    synth().validate();
    resize();
    count("pipeline.train_volumes");
    count("pipeline.test_volumes");
    count("pipeline.seed");
}

std::size_t resolve_workers(std::size_t flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("ONESEG_WORKERS")) {
        const auto n = parse_unsigned(env, "ONESEG_WORKERS");
        if (n > 0) return n;
    }
    return 1;
}

}  // namespace oneseg

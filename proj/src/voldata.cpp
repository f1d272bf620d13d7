#include "oneseg/voldata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace oneseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

void VolumeMeta::validate() const {
    if (depth < 1) throw ValidationError("volume '" + id + "': depth must be >= 1");
    if (height < 8 || width < 8) {
        throw ValidationError("volume '" + id + "': slices must be at least 8x8, got " +
                              std::to_string(height) + "x" + std::to_string(width));
    }
    if (!(spacing.z > 0.0 && spacing.y > 0.0 && spacing.x > 0.0)) {
        throw ValidationError("volume '" + id + "': spacing components must be positive");
    }
}

Volume::Volume(VolumeMeta meta, std::vector<float> voxels) : meta_(std::move(meta)), voxels_(std::move(voxels)) {
    meta_.validate();
    if (voxels_.size() != meta_.voxels()) {
        throw ValidationError("volume '" + meta_.id + "': voxel count " + std::to_string(voxels_.size()) +
                              " does not match D*H*W = " + std::to_string(meta_.voxels()));
    }
    for (float v : voxels_) {
        if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
            throw ValidationError("volume '" + meta_.id + "': intensities must be finite and in [0,1]");
        }
    }
}

std::span<const float> Volume::slice(std::size_t d) const {
    if (d >= meta_.depth) throw ValidationError("slice index out of range");
    return std::span<const float>(voxels_).subspan(d * meta_.slice_pixels(), meta_.slice_pixels());
}

Tensor<float> Volume::slice_tensor(std::size_t d) const {
    auto s = slice(d);
    return Tensor<float>({meta_.height, meta_.width, 1}, std::vector<float>(s.begin(), s.end()));
}

std::vector<float> normalize_intensities(std::span<const float> raw) {
    std::vector<float> out(raw.size(), 0.0f);
    if (raw.empty()) return out;
    for (float v : raw) {
        if (!std::isfinite(v)) throw FormatError("volume payload contains non-finite values");
    }
    const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    if (hi == lo) return out;
    const double range = hi - lo;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        out[i] = static_cast<float>((static_cast<double>(raw[i]) - lo) / range);
    }
    return out;
}

Mask::Mask(VolumeMeta meta, std::size_t channels)
    : meta_(std::move(meta)),
      channels_(channels),
      labels_(meta_.voxels() * channels, 0.0f),
      origins_(meta_.depth, SliceOrigin::absent) {
    if (channels_ < 1) throw ValidationError("mask needs at least one channel");
}

std::span<const float> Mask::slice(std::size_t d) const {
    if (d >= meta_.depth) throw ValidationError("mask slice index out of range");
    return std::span<const float>(labels_).subspan(d * slice_values(), slice_values());
}

void Mask::set_slice(std::size_t d, std::span<const float> values, SliceOrigin origin) {
    if (d >= meta_.depth) throw ValidationError("mask slice index out of range");
    if (values.size() != slice_values()) {
        throw ValidationError("mask slice has " + std::to_string(values.size()) + " values, expected " +
                              std::to_string(slice_values()));
    }
    std::copy(values.begin(), values.end(), labels_.begin() + static_cast<std::ptrdiff_t>(d * slice_values()));
    origins_[d] = origin;
}

std::vector<std::uint8_t> Mask::binary_channel(std::size_t channel, float threshold) const {
    if (channel >= channels_) throw ValidationError("mask channel out of range");
    std::vector<std::uint8_t> out(meta_.voxels());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = labels_[i * channels_ + channel] >= threshold ? 1 : 0;
    }
    return out;
}

std::size_t Mask::foreground_count(std::size_t channel) const {
    auto b = binary_channel(channel);
    return static_cast<std::size_t>(std::count(b.begin(), b.end(), std::uint8_t{1}));
}

void Mask::validate() const {
    for (std::size_t d = 0; d < meta_.depth; ++d) {
        auto s = slice(d);
        for (float v : s) {
            if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
                throw ValidationError("mask values must lie in [0,1] (slice " + std::to_string(d) + ")");
            }
            if (origins_[d] == SliceOrigin::ground_truth && v != 0.0f && v != 1.0f) {
                throw ValidationError("ground-truth mask slice " + std::to_string(d) + " is not binary");
            }
        }
        if (channels_ > 1) {
            for (std::size_t p = 0; p < meta_.slice_pixels(); ++p) {
                double sum = 0.0;
                for (std::size_t c = 0; c < channels_; ++c) sum += s[p * channels_ + c];
                if (sum > 1.0 + 1e-5) {
                    throw ValidationError("mask channel values sum above 1 (slice " + std::to_string(d) + ")");
                }
            }
        }
    }
}

void FeatureMap::validate() const {
    if (data.size() != height * width * channels) throw ValidationError("feature map size mismatch");
    for (float v : data) {
        if (!std::isfinite(v)) throw ValidationError("feature map contains non-finite values");
    }
}

FeatureMap feature_map_from(const Tensor<float>& t, std::size_t stride) {
    if (t.rank() != 3) throw ValidationError("feature tensor must be [H,W,C], got " + shape_string(t.shape()));
    FeatureMap f;
    f.height = t.dim(0);
    f.width = t.dim(1);
    f.channels = t.dim(2);
    f.stride = stride;
    f.data = t.storage();
    return f;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

DatasetManifest load_manifest(const fs::path& path, DatasetRole role) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest " + path.string());
    const fs::path base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        fs::path q(p);
        return q.is_absolute() ? q : base / q;
    };

    DatasetManifest m;
    m.role = role;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        ManifestEntry e;
        if (auto comma = line.find(','); comma != std::string::npos) {
            const std::string vol = trim(line.substr(0, comma));
            const std::string mask = trim(line.substr(comma + 1));
            if (vol.empty() || mask.empty() || mask.find(',') != std::string::npos) {
                throw FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed entry");
            }
            e.volume = resolve(vol);
            e.mask = resolve(mask);
        } else {
            e.volume = resolve(line);
        }
        if (!fs::exists(e.volume)) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": missing volume " +
                                  e.volume.string());
        }
        if (e.mask && !fs::exists(*e.mask)) {
            throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": missing mask " +
                                  e.mask->string());
        }
        m.entries.push_back(std::move(e));
    }
    if (role == DatasetRole::test) {
        for (const auto& e : m.entries) {
            if (!e.mask) throw ValidationError("test manifest entry without mask: " + e.volume.string());
        }
    }
    return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest " + path.string());
    out << "# volume_path[,mask_path]\n";
    const fs::path base = path.parent_path();
    auto rel = [&](const fs::path& p) {
        auto r = p.lexically_relative(base);
        return (r.empty() ? p : r).generic_string();
    };
    for (const auto& e : manifest.entries) {
        out << rel(e.volume);
        if (e.mask) out << ',' << rel(*e.mask);
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing manifest " + path.string());
}

// ---------------------------------------------------------------------------
// OSEG encoding
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'O', 'S', 'E', 'G'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[at + i]) << (8 * i);
    return v;
}

std::size_t dtype_bytes(DType t) { return t == DType::f32 ? 4 : 1; }

std::uint32_t float_bits(float f) { return std::bit_cast<std::uint32_t>(f); }
float bits_float(std::uint32_t u) { return std::bit_cast<float>(u); }

}  // namespace

std::size_t oseg_header_size(std::size_t ndim) { return 16 + 4 * ndim; }

std::size_t RawTensor::elements() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

std::vector<float> RawTensor::as_float() const {
    const std::size_t n = elements();
    std::vector<float> out(n);
    if (dtype == DType::u8) {
        for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(payload[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = bits_float(get_u32(payload, 4 * i));
    }
    return out;
}

RawTensor RawTensor::from_f32(std::vector<std::uint32_t> dims, std::span<const float> values) {
    RawTensor t;
    t.dtype = DType::f32;
    t.dims = std::move(dims);
    if (values.size() != t.elements()) throw ValidationError("f32 tensor values do not match dims");
    t.payload.reserve(4 * values.size());
    for (float f : values) put_u32(t.payload, float_bits(f));
    return t;
}

RawTensor RawTensor::from_u8(std::vector<std::uint32_t> dims, std::span<const std::uint8_t> values) {
    RawTensor t;
    t.dtype = DType::u8;
    t.dims = std::move(dims);
    if (values.size() != t.elements()) throw ValidationError("u8 tensor values do not match dims");
    t.payload.assign(values.begin(), values.end());
    return t;
}

std::vector<std::uint8_t> encode_oseg(const RawTensor& t) {
    if (t.dims.size() != 3 && t.dims.size() != 4) {
        throw ValidationError("OSEG tensors have 3 or 4 dims, got " + std::to_string(t.dims.size()));
    }
    if (t.payload.size() != t.elements() * dtype_bytes(t.dtype)) {
        throw ValidationError("OSEG payload size does not match dims");
    }
    std::vector<std::uint8_t> out;
    out.reserve(oseg_header_size(t.dims.size()) + t.payload.size());
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, kOsegVersion);
    put_u32(out, static_cast<std::uint32_t>(t.dtype));
    put_u32(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put_u32(out, d);
    out.insert(out.end(), t.payload.begin(), t.payload.end());
    return out;
}

RawTensor decode_oseg(std::span<const std::uint8_t> bytes, const std::string& source) {
    auto fail = [&](const std::string& what) { return FormatError(source + ": " + what); };
    if (bytes.size() < 16) throw fail("truncated header (" + std::to_string(bytes.size()) + " bytes)");
    if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
        throw fail("bad magic '" + std::string(bytes.begin(), bytes.begin() + 4) + "', expected 'OSEG'");
    }
    const auto version = get_u32(bytes, 4);
    if (version != kOsegVersion) throw fail("unsupported version " + std::to_string(version));
    const auto dtype = get_u32(bytes, 8);
    if (dtype > 1) throw fail("unknown dtype code " + std::to_string(dtype));
    const auto ndim = get_u32(bytes, 12);
    if (ndim != 3 && ndim != 4) throw fail("ndim must be 3 or 4, got " + std::to_string(ndim));
    const std::size_t header = oseg_header_size(ndim);
    if (bytes.size() < header) throw fail("truncated dims");

    RawTensor t;
    t.dtype = static_cast<DType>(dtype);
    for (std::uint32_t i = 0; i < ndim; ++i) {
        const auto d = get_u32(bytes, 16 + 4 * i);
        if (d == 0) throw fail("zero-sized dimension " + std::to_string(i));
        t.dims.push_back(d);
    }
    const std::size_t expect = t.elements() * dtype_bytes(t.dtype);
    const std::size_t have = bytes.size() - header;
    if (have < expect) {
        throw fail("truncated payload: " + std::to_string(have) + " of " + std::to_string(expect) + " bytes");
    }
    if (have > expect) throw fail("trailing bytes after payload");
    t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return t;
}

RawTensor read_oseg(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_oseg(bytes, path.string());
}

void write_oseg(const RawTensor& t, const fs::path& path) {
    const auto bytes = encode_oseg(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Volumes and masks
// ---------------------------------------------------------------------------

Volume volume_from_raw(const RawTensor& raw, std::string id) {
    if (raw.dims.size() != 3) {
        throw FormatError("volume '" + id + "' must have 3 dims (D,H,W), got " + std::to_string(raw.dims.size()));
    }
    VolumeMeta meta;
    meta.depth = raw.dims[0];
    meta.height = raw.dims[1];
    meta.width = raw.dims[2];
    meta.id = std::move(id);
    return Volume(meta, normalize_intensities(raw.as_float()));
}

Volume load_volume(const fs::path& path) { return volume_from_raw(read_oseg(path), path.stem().string()); }

void save_volume(const Volume& v, const fs::path& path) {
    const auto& m = v.meta();
    write_oseg(RawTensor::from_f32({static_cast<std::uint32_t>(m.depth), static_cast<std::uint32_t>(m.height),
                                    static_cast<std::uint32_t>(m.width)},
                                   v.voxels()),
               path);
}

Mask load_mask(const fs::path& path, const VolumeMeta& meta) {
    const RawTensor raw = read_oseg(path);
    const std::size_t channels = raw.dims.size() == 4 ? raw.dims[3] : 1;
    if (raw.dims[0] != meta.depth || raw.dims[1] != meta.height || raw.dims[2] != meta.width) {
        throw ValidationError(path.string() + ": mask dims do not match volume '" + meta.id + "' (" +
                              std::to_string(meta.depth) + "x" + std::to_string(meta.height) + "x" +
                              std::to_string(meta.width) + ")");
    }
    const auto values = raw.as_float();
    for (float v : values) {
        if (v != 0.0f && v != 1.0f) {
            throw ValidationError(path.string() + ": ground-truth mask values must be 0 or 1");
        }
    }
    Mask m(meta, channels);
    for (std::size_t d = 0; d < meta.depth; ++d) {
        m.set_slice(d, std::span<const float>(values).subspan(d * m.slice_values(), m.slice_values()),
                    SliceOrigin::ground_truth);
    }
    m.validate();
    return m;
}

void save_mask(const Mask& m, const fs::path& path) {
    const auto& meta = m.meta();
    std::vector<std::uint32_t> dims = {static_cast<std::uint32_t>(meta.depth), static_cast<std::uint32_t>(meta.height),
                                       static_cast<std::uint32_t>(meta.width)};
    if (m.channels() > 1) dims.push_back(static_cast<std::uint32_t>(m.channels()));
    const auto labels = m.labels();
    const bool binary = std::all_of(labels.begin(), labels.end(), [](float v) { return v == 0.0f || v == 1.0f; });
    if (binary) {
        std::vector<std::uint8_t> bytes(labels.size());
        std::transform(labels.begin(), labels.end(), bytes.begin(),
                       [](float v) { return static_cast<std::uint8_t>(v); });
        write_oseg(RawTensor::from_u8(std::move(dims), bytes), path);
    } else {
        write_oseg(RawTensor::from_f32(std::move(dims), labels), path);
    }
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

std::vector<ResampleTap> bilinear_taps(std::size_t src, std::size_t dst) {
    std::vector<ResampleTap> taps(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t i = 0; i < dst; ++i) {
        double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src - 1));
        const auto lo = static_cast<std::size_t>(std::floor(s));
        taps[i].lo = lo;
        taps[i].hi = std::min(lo + 1, src - 1);
        taps[i].frac = s - static_cast<double>(lo);
    }
    return taps;
}

std::size_t nearest_source(std::size_t i, std::size_t src, std::size_t dst) {
    const auto s = static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) * static_cast<double>(src) /
                                                       static_cast<double>(dst)));
    return std::min(s, src - 1);
}

std::vector<float> resize_slice(std::span<const float> src, std::size_t height, std::size_t width,
                                std::size_t channels, std::size_t target_h, std::size_t target_w,
                                Interp interp) {
    if (target_h < 1 || target_w < 1) throw ValidationError("resize target must be at least 1x1");
    if (height < 1 || width < 1 || channels < 1) throw ValidationError("resize source must be non-empty");
    if (src.size() != height * width * channels) throw ValidationError("resize source size mismatch");
    std::vector<float> out(target_h * target_w * channels);
    if (interp == Interp::nearest) {
        for (std::size_t y = 0; y < target_h; ++y) {
            const std::size_t sy = nearest_source(y, height, target_h);
            for (std::size_t x = 0; x < target_w; ++x) {
                const std::size_t sx = nearest_source(x, width, target_w);
                for (std::size_t c = 0; c < channels; ++c) {
                    out[(y * target_w + x) * channels + c] = src[(sy * width + sx) * channels + c];
                }
            }
        }
        return out;
    }
    const auto ty = bilinear_taps(height, target_h);
    const auto tx = bilinear_taps(width, target_w);
    auto at = [&](std::size_t y, std::size_t x, std::size_t c) {
        return static_cast<double>(src[(y * width + x) * channels + c]);
    };
    for (std::size_t y = 0; y < target_h; ++y) {
        const auto& a = ty[y];
        for (std::size_t x = 0; x < target_w; ++x) {
            const auto& b = tx[x];
            for (std::size_t c = 0; c < channels; ++c) {
                const double top = (1.0 - b.frac) * at(a.lo, b.lo, c) + b.frac * at(a.lo, b.hi, c);
                const double bot = (1.0 - b.frac) * at(a.hi, b.lo, c) + b.frac * at(a.hi, b.hi, c);
                out[(y * target_w + x) * channels + c] = static_cast<float>((1.0 - a.frac) * top + a.frac * bot);
            }
        }
    }
    return out;
}

Volume resize_volume(const Volume& v, std::size_t target_h, std::size_t target_w) {
    const auto& m = v.meta();
    if (m.height == target_h && m.width == target_w) return v;
    VolumeMeta meta = m;
    meta.height = target_h;
    meta.width = target_w;
    std::vector<float> voxels;
    voxels.reserve(meta.voxels());
    for (std::size_t d = 0; d < m.depth; ++d) {
        auto s = resize_slice(v.slice(d), m.height, m.width, 1, target_h, target_w, Interp::bilinear);
        for (float& f : s) f = std::clamp(f, 0.0f, 1.0f);
        voxels.insert(voxels.end(), s.begin(), s.end());
    }
    return Volume(meta, std::move(voxels));
}

Mask resize_mask(const Mask& m, std::size_t target_h, std::size_t target_w) {
    const auto& meta = m.meta();
    if (meta.height == target_h && meta.width == target_w) return m;
    VolumeMeta out_meta = meta;
    out_meta.height = target_h;
    out_meta.width = target_w;
    Mask out(out_meta, m.channels());
    for (std::size_t d = 0; d < meta.depth; ++d) {
        out.set_slice(d,
                      resize_slice(m.slice(d), meta.height, meta.width, m.channels(), target_h, target_w,
                                   Interp::nearest),
                      m.origin(d));
    }
    return out;
}

}  // namespace oneseg

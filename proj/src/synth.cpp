#include "oneseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace oneseg {

ShapeFamily parse_shape_family(const std::string& text) {
    if (text == "disk") return ShapeFamily::disk;
    if (text == "ellipse") return ShapeFamily::ellipse;
    if (text == "two-blob" || text == "two_blob") return ShapeFamily::two_blob;
    throw ValidationError("unknown shape family '" + text + "' (expected disk, ellipse or two-blob)");
}

std::string to_string(ShapeFamily shape) {
    switch (shape) {
        case ShapeFamily::disk: return "disk";
        case ShapeFamily::ellipse: return "ellipse";
        case ShapeFamily::two_blob: return "two-blob";
    }
    return "disk";
}

namespace {

constexpr double kEllipseMinor = 0.6;
constexpr double kEllipseAngle = 0.5;
constexpr double kBlobRadius = 0.6;
constexpr double kBlobOffset = 0.7;
constexpr long kMargin = 2;

struct SliceShape {
    double cy, cx, r;
};

SliceShape shape_at(const SynthConfig& c, std::size_t d) {
    const double t = static_cast<double>(d) - static_cast<double>(c.depth - 1) / 2.0;
    const double cy = c.center_y < 0 ? static_cast<double>(c.height - 1) / 2.0 : c.center_y;
    const double cx = c.center_x < 0 ? static_cast<double>(c.width - 1) / 2.0 : c.center_x;
    return {cy + c.drift_y * t, cx + c.drift_x * t, c.radius + c.growth * t};
}

// Half-extents (y, x) of the shape's bounding box.
std::pair<double, double> extents(ShapeFamily f, double r) {
    switch (f) {
        case ShapeFamily::disk:
        case ShapeFamily::ellipse: return {r, r};
        case ShapeFamily::two_blob: return {kBlobRadius * r, (kBlobOffset + kBlobRadius) * r};
    }
    return {r, r};
}

bool inside(ShapeFamily f, const SliceShape& s, double y, double x) {
    const double dy = y - s.cy, dx = x - s.cx;
    switch (f) {
        case ShapeFamily::disk: return dy * dy + dx * dx <= s.r * s.r;
        case ShapeFamily::ellipse: {
            const double c = std::cos(kEllipseAngle), sn = std::sin(kEllipseAngle);
            const double u = dx * c + dy * sn, v = -dx * sn + dy * c;
            const double b = kEllipseMinor * s.r;
            return (u * u) / (s.r * s.r) + (v * v) / (b * b) <= 1.0;
        }
        case ShapeFamily::two_blob: {
            const double rb = kBlobRadius * s.r, off = kBlobOffset * s.r;
            const double l = dx + off, rr = dx - off;
            return dy * dy + l * l <= rb * rb || dy * dy + rr * rr <= rb * rb;
        }
    }
    return false;
}

// White noise blurred with a Gaussian of the given width, then standardized.
std::vector<double> smooth_noise(std::size_t h, std::size_t w, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> field(h * w);
    for (auto& v : field) v = normal(rng);
    if (sigma > 0.0) {
        const long radius = static_cast<long>(std::ceil(3.0 * sigma));
        std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
        double ks = 0.0;
        for (long i = -radius; i <= radius; ++i) {
            k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
            ks += k[static_cast<std::size_t>(i + radius)];
        }
        for (auto& v : k) v /= ks;
        auto wrap = [](long i, long n) { return static_cast<std::size_t>(((i % n) + n) % n); };
        std::vector<double> tmp(field.size());
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (long i = -radius; i <= radius; ++i)
                    s += k[static_cast<std::size_t>(i + radius)] * field[y * w + wrap(static_cast<long>(x) + i, static_cast<long>(w))];
                tmp[y * w + x] = s;
            }
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                double s = 0.0;
                for (long i = -radius; i <= radius; ++i)
                    s += k[static_cast<std::size_t>(i + radius)] * tmp[wrap(static_cast<long>(y) + i, static_cast<long>(h)) * w + x];
                field[y * w + x] = s;
            }
    }
    double mean = 0.0, var = 0.0;
    for (double v : field) mean += v;
    mean /= static_cast<double>(field.size());
    for (double v : field) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(field.size()));
    for (auto& v : field) v = sd > 0.0 ? (v - mean) / sd : 0.0;
    return field;
}

double sample_bilinear(const std::vector<double>& f, std::size_t h, std::size_t w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const auto y0 = static_cast<std::size_t>(y), x0 = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
    const double top = (1 - fx) * f[y0 * w + x0] + fx * f[y0 * w + x1];
    const double bot = (1 - fx) * f[y1 * w + x0] + fx * f[y1 * w + x1];
    return (1 - fy) * top + fy * bot;
}

}  // namespace

void SynthConfig::validate() const {
    VolumeMeta{depth, height, width, {}, id}.validate();
    if (!(radius > 0.0)) throw ValidationError("synth radius must be positive");
    if (noise_amplitude < 0.0 || correlation_length < 0.0) {
        throw ValidationError("texture amplitude and correlation length must be non-negative");
    }
    for (std::size_t d = 0; d < depth; ++d) {
        const auto s = shape_at(*this, d);
        if (!(s.r > 0.0)) throw ValidationError("shape radius shrinks to zero by slice " + std::to_string(d));
        const auto [ey, ex] = extents(shape, s.r);
        const double lo = static_cast<double>(kMargin);
        if (s.cy - ey < lo || s.cx - ex < lo || s.cy + ey > static_cast<double>(height) - 1.0 - lo ||
            s.cx + ex > static_cast<double>(width) - 1.0 - lo) {
            throw ValidationError("shape comes within " + std::to_string(kMargin) + " px of the border on slice " +
                                  std::to_string(d));
        }
    }
}

SynthVolume generate(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t D = cfg.depth, H = cfg.height, W = cfg.width;
    std::mt19937_64 rng(cfg.seed);

    const auto first = shape_at(cfg, 0);
    double max_shift = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
        const auto s = shape_at(cfg, d);
        max_shift = std::max({max_shift, std::abs(s.cy - first.cy), std::abs(s.cx - first.cx)});
    }
    const auto pad = static_cast<std::size_t>(std::ceil(max_shift)) + 2;
    const auto bg = smooth_noise(H, W, cfg.correlation_length, rng);
    const std::size_t fh = H + 2 * pad, fw = W + 2 * pad;
    const auto fg = smooth_noise(fh, fw, cfg.correlation_length, rng);

    VolumeMeta meta{D, H, W, {}, cfg.id};
    std::vector<float> raw(D * H * W);
    Mask mask(meta, 1);
    std::vector<float> ms(H * W);
    for (std::size_t d = 0; d < D; ++d) {
        const auto s = shape_at(cfg, d);
        // The foreground texture rides with the shape.
        const double sy = s.cy - first.cy, sx = s.cx - first.cx;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const bool in = inside(cfg.shape, s, static_cast<double>(y), static_cast<double>(x));
                ms[y * W + x] = in ? 1.0f : 0.0f;
                double v;
                if (in) {
                    v = cfg.foreground + cfg.noise_amplitude * sample_bilinear(fg, fh, fw, static_cast<double>(y + pad) - sy,
                                                                              static_cast<double>(x + pad) - sx);
                } else {
                    v = cfg.background + cfg.noise_amplitude * bg[y * W + x];
                }
                raw[(d * H + y) * W + x] = static_cast<float>(v);
            }
        mask.set_slice(d, ms, SliceOrigin::ground_truth);
    }
    return SynthVolume{Volume(meta, normalize_intensities(raw)), std::move(mask)};
}

SynthConfig vary_synth(const SynthConfig& base, std::uint64_t seed, const std::string& id) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    SynthConfig c = base;
    c.id = id;
    c.seed = rng();
    const double speed = std::hypot(base.drift_y, base.drift_x);
    const double angle = 2.0 * std::numbers::pi * unit(rng);
    c.drift_y = speed * std::cos(angle);
    c.drift_x = speed * std::sin(angle);
    c.radius = base.radius * (0.9 + 0.2 * unit(rng));
    const double cy = base.center_y < 0 ? static_cast<double>(base.height - 1) / 2.0 : base.center_y;
    const double cx = base.center_x < 0 ? static_cast<double>(base.width - 1) / 2.0 : base.center_x;
    c.center_y = cy + 6.0 * unit(rng) - 3.0;
    c.center_x = cx + 6.0 * unit(rng) - 3.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
        try {
            c.validate();
            return c;
        } catch (const ValidationError&) {
            c.radius *= 0.95;
        }
    }
    c.validate();
    return c;
}

}  // namespace oneseg

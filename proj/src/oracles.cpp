#include "oneseg/oracles.hpp"

#include <cmath>
#include <limits>

namespace oneseg::oracle {

std::vector<double> dense_attention(const FeatureMap& q, const FeatureMap& k, std::size_t patch) {
    const long H = static_cast<long>(q.height), W = static_cast<long>(q.width);
    const long r = static_cast<long>(patch / 2);
    const std::size_t n = q.height * q.width;
    std::vector<double> out(n * n, 0.0);
    for (long ty = 0; ty < H; ++ty)
        for (long tx = 0; tx < W; ++tx) {
            const std::size_t row = static_cast<std::size_t>(ty * W + tx);
            std::vector<double> logits(n, -std::numeric_limits<double>::infinity());
            double m = -std::numeric_limits<double>::infinity();
            for (long ry = 0; ry < H; ++ry)
                for (long rx = 0; rx < W; ++rx) {
                    if (std::abs(ry - ty) > r || std::abs(rx - tx) > r) continue;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < q.channels; ++c) {
                        dot += static_cast<double>(q.at(static_cast<std::size_t>(ty), static_cast<std::size_t>(tx), c)) *
                               static_cast<double>(k.at(static_cast<std::size_t>(ry), static_cast<std::size_t>(rx), c));
                    }
                    logits[static_cast<std::size_t>(ry * W + rx)] = dot;
                    m = std::max(m, dot);
                }
            double z = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (std::isfinite(logits[j])) z += std::exp(logits[j] - m);
            for (std::size_t j = 0; j < n; ++j)
                if (std::isfinite(logits[j])) out[row * n + j] = std::exp(logits[j] - m) / z;
        }
    return out;
}

double cosine(const FeatureMap& a, const FeatureMap& b) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        dot += static_cast<long double>(a.data[i]) * b.data[i];
        na += static_cast<long double>(a.data[i]) * a.data[i];
        nb += static_cast<long double>(b.data[i]) * b.data[i];
    }
    if (na == 0 || nb == 0) return 0.0;
    return static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

std::vector<double> repscore(std::span<const FeatureMap> feats, std::span<const std::size_t> members) {
    std::vector<double> out;
    for (std::size_t i : members) {
        long double s = 0;
        for (std::size_t j : members) s += cosine(feats[i], feats[j]);
        out.push_back(static_cast<double>(s));
    }
    return out;
}

std::size_t best_member(std::span<const FeatureMap> feats, std::span<const std::size_t> members) {
    const auto scores = repscore(feats, members);
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return members[best];
}

std::size_t test_slice(std::span<const FeatureMap> feats) {
    std::vector<std::size_t> all(feats.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return best_member(feats, all);
}

namespace {

std::vector<std::array<long, 3>> surface(const BinaryVolume& m) {
    const long D = static_cast<long>(m.depth), H = static_cast<long>(m.height), W = static_cast<long>(m.width);
    auto on = [&](long z, long y, long x) {
        return z >= 0 && y >= 0 && x >= 0 && z < D && y < H && x < W && m.voxels[static_cast<std::size_t>((z * H + y) * W + x)];
    };
    const long dz[6] = {-1, 1, 0, 0, 0, 0}, dy[6] = {0, 0, -1, 1, 0, 0}, dx[6] = {0, 0, 0, 0, -1, 1};
    std::vector<std::array<long, 3>> pts;
    for (long z = 0; z < D; ++z)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                if (!on(z, y, x)) continue;
                bool border = false;
                for (int n = 0; n < 6; ++n) border = border || !on(z + dz[n], y + dy[n], x + dx[n]);
                if (border) pts.push_back({z, y, x});
            }
    return pts;
}

double directed(const std::vector<std::array<long, 3>>& a, const std::vector<std::array<long, 3>>& b,
                const Spacing& s) {
    double total = 0.0;
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : b) {
            const double ez = static_cast<double>(p[0] - q[0]) * s.z;
            const double ey = static_cast<double>(p[1] - q[1]) * s.y;
            const double ex = static_cast<double>(p[2] - q[2]) * s.x;
            best = std::min(best, ez * ez + ey * ey + ex * ex);
        }
        total += std::sqrt(best);
    }
    return total;
}

}  // namespace

double assd(const BinaryVolume& pred, const BinaryVolume& gt, const Spacing& spacing) {
    const auto a = surface(pred), b = surface(gt);
    return (directed(a, b, spacing) + directed(b, a, spacing)) / static_cast<double>(a.size() + b.size());
}

std::vector<double> conv2d(std::span<const double> x, std::size_t H, std::size_t W, std::size_t cin,
                           std::span<const double> w, std::span<const double> b, std::size_t cout, std::size_t K,
                           std::size_t stride) {
    const long pad = static_cast<long>(K / 2);
    const std::size_t Ho = (H + 2 * (K / 2) - K) / stride + 1, Wo = (W + 2 * (K / 2) - K) / stride + 1;
    std::vector<double> out(Ho * Wo * cout);
    for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox)
            for (std::size_t co = 0; co < cout; ++co) {
                double s = b[co];
                for (std::size_t ky = 0; ky < K; ++ky)
                    for (std::size_t kx = 0; kx < K; ++kx)
                        for (std::size_t ci = 0; ci < cin; ++ci) {
                            const long iy = static_cast<long>(oy * stride + ky) - pad;
                            const long ix = static_cast<long>(ox * stride + kx) - pad;
                            if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                            s += x[(static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin + ci] *
                                 w[((ky * K + kx) * cin + ci) * cout + co];
                        }
                out[(oy * Wo + ox) * cout + co] = s;
            }
    return out;
}

}  // namespace oneseg::oracle

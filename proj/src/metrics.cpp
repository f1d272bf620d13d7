#include "oneseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace oneseg {

std::size_t BinaryVolume::count() const {
    return static_cast<std::size_t>(std::count(voxels.begin(), voxels.end(), std::uint8_t{1}));
}

BinaryVolume binary_volume(const Mask& m, std::size_t channel, float threshold) {
    return BinaryVolume{m.meta().depth, m.meta().height, m.meta().width, m.binary_channel(channel, threshold)};
}

namespace {

void check_dims(const BinaryVolume& a, const BinaryVolume& b) {
    if (!a.same_dims(b)) throw ValidationError("masks differ in dimensions");
    if (a.voxels.size() != a.depth * a.height * a.width || b.voxels.size() != a.voxels.size()) {
        throw ValidationError("mask voxel count does not match its dimensions");
    }
}

}  // namespace

double dice(const BinaryVolume& a, const BinaryVolume& b) {
    check_dims(a, b);
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.voxels.size(); ++i) {
        na += a.voxels[i];
        nb += b.voxels[i];
        both += a.voxels[i] & b.voxels[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double ravd(const BinaryVolume& pred, const BinaryVolume& gt) {
    check_dims(pred, gt);
    const double g = static_cast<double>(gt.count());
    if (g == 0.0) throw ValidationError("RAVD is undefined for an empty ground truth");
    return 100.0 * std::abs(static_cast<double>(pred.count()) - g) / g;
}

std::vector<SurfacePoint> surface_points(const BinaryVolume& m) {
    const long D = static_cast<long>(m.depth), H = static_cast<long>(m.height), W = static_cast<long>(m.width);
    auto fg = [&](long z, long y, long x) {
        if (z < 0 || y < 0 || x < 0 || z >= D || y >= H || x >= W) return false;
        return m.voxels[static_cast<std::size_t>((z * H + y) * W + x)] != 0;
    };
    std::vector<SurfacePoint> out;
    for (long z = 0; z < D; ++z)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                if (!fg(z, y, x)) continue;
                if (!fg(z - 1, y, x) || !fg(z + 1, y, x) || !fg(z, y - 1, x) || !fg(z, y + 1, x) ||
                    !fg(z, y, x - 1) || !fg(z, y, x + 1)) {
                    out.push_back({z, y, x});
                }
            }
    return out;
}

namespace {

double sq_distance(const SurfacePoint& a, const SurfacePoint& b, const Spacing& s) {
    const double dz = static_cast<double>(a.z - b.z) * s.z;
    const double dy = static_cast<double>(a.y - b.y) * s.y;
    const double dx = static_cast<double>(a.x - b.x) * s.x;
    return dz * dz + dy * dy + dx * dx;
}

// Sum over `from` of the distance to the closest point of `to`. `to` is
// bucketed by slice and searched outwards in z until the slab gap alone
// exceeds the best distance found.
double directed_sum(const std::vector<SurfacePoint>& from, const std::vector<SurfacePoint>& to, long depth,
                    const Spacing& s) {
    std::vector<std::vector<SurfacePoint>> slabs(static_cast<std::size_t>(depth));
    for (const auto& p : to) slabs[static_cast<std::size_t>(p.z)].push_back(p);
    double total = 0.0;
    for (const auto& p : from) {
        double best = std::numeric_limits<double>::infinity();
        for (long off = 0; off < depth; ++off) {
            const double gap = static_cast<double>(off) * s.z;
            if (gap * gap > best) break;
            for (long z : {p.z - off, p.z + off}) {
                if (z < 0 || z >= depth) continue;
                for (const auto& q : slabs[static_cast<std::size_t>(z)]) best = std::min(best, sq_distance(p, q, s));
                if (off == 0) break;
            }
        }
        total += std::sqrt(best);
    }
    return total;
}

}  // namespace

double assd(const BinaryVolume& pred, const BinaryVolume& gt, const Spacing& spacing) {
    check_dims(pred, gt);
    if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0)) throw ValidationError("spacing must be positive");
    const auto sp = surface_points(pred);
    const auto sg = surface_points(gt);
    if (sp.empty() || sg.empty()) throw ValidationError("ASSD is undefined for an empty mask");
    const long D = static_cast<long>(pred.depth);
    const double total = directed_sum(sp, sg, D, spacing) + directed_sum(sg, sp, D, spacing);
    return total / static_cast<double>(sp.size() + sg.size());
}

EvalResult evaluate_volume(const Mask& pred, const Mask& gt, const Spacing& spacing, std::size_t channel) {
    if (!pred.meta().same_dims(gt.meta())) throw ValidationError("prediction and ground truth differ in dimensions");
    const auto p = binary_volume(pred, channel);
    const auto g = binary_volume(gt, channel);
    EvalResult r;
    r.dice = dice(p, g);
    r.ravd = ravd(p, g);
    r.assd = assd(p, g, spacing);
    const std::size_t n = p.height * p.width;
    for (std::size_t d = 0; d < p.depth; ++d) {
        BinaryVolume a{1, p.height, p.width, {p.voxels.begin() + d * n, p.voxels.begin() + (d + 1) * n}};
        BinaryVolume b{1, g.height, g.width, {g.voxels.begin() + d * n, g.voxels.begin() + (d + 1) * n}};
        r.slice_dice.push_back(dice(a, b));
    }
    return r;
}

}  // namespace oneseg

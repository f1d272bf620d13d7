#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "oneseg/voldata.hpp"

namespace oneseg {

// 0/1 voxels in C order (slice, row, column).
struct BinaryVolume {
    std::size_t depth = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> voxels;

    std::size_t count() const;
    bool same_dims(const BinaryVolume& o) const {
        return depth == o.depth && height == o.height && width == o.width;
    }
};

BinaryVolume binary_volume(const Mask& m, std::size_t channel = 0, float threshold = 0.5f);

// Both empty counts as perfect agreement.
double dice(const BinaryVolume& a, const BinaryVolume& b);
// Percent; an empty ground truth is rejected.
double ravd(const BinaryVolume& pred, const BinaryVolume& gt);

struct SurfacePoint {
    long z = 0;
    long y = 0;
    long x = 0;
};

// Foreground voxels with at least one 6-neighbour in the background (outside counts as background).
std::vector<SurfacePoint> surface_points(const BinaryVolume& m);

// Average symmetric surface distance, spacing-weighted. Both masks must be nonempty.
double assd(const BinaryVolume& pred, const BinaryVolume& gt, const Spacing& spacing = {});

struct EvalResult {
    double dice = 0.0;
    double ravd = 0.0;
    double assd = 0.0;
    std::vector<double> slice_dice;
};

EvalResult evaluate_volume(const Mask& pred, const Mask& gt, const Spacing& spacing, std::size_t channel = 0);

}  // namespace oneseg

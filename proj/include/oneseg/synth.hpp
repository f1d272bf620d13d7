#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "oneseg/voldata.hpp"

namespace oneseg {

enum class ShapeFamily { disk, ellipse, two_blob };

ShapeFamily parse_shape_family(const std::string& text);
std::string to_string(ShapeFamily shape);

struct SynthConfig {
    std::size_t depth = 12;
    std::size_t height = 64;
    std::size_t width = 64;
    ShapeFamily shape = ShapeFamily::disk;
    double radius = 14.0;       // at the middle slice
    double drift_y = 1.0;       // pixels per slice
    double drift_x = 0.5;
    double growth = 0.3;        // radius change per slice
    double center_y = -1.0;     // middle-slice centre; negative means the grid centre
    double center_x = -1.0;
    double noise_amplitude = 0.1;
    double correlation_length = 4.0;
    double foreground = 0.6;    // mean intensities
    double background = 0.3;
    std::uint64_t seed = 0;
    std::string id = "synth";

    // Throws unless the shape keeps a 2-pixel margin from the border on every slice.
    void validate() const;
};

struct SynthVolume {
    Volume volume;
    Mask mask;
};

// Textured background plus a moving, growing shape whose own texture moves
// with it. The mask is the exact indicator of the shape at pixel centres.
SynthVolume generate(const SynthConfig& cfg);

// Per-volume variation of a base config: drift of the same magnitude in a
// random direction, radius within 10 %, centre moved by up to 3 px. The
// radius shrinks if needed to keep the border margin.
SynthConfig vary_synth(const SynthConfig& base, std::uint64_t seed, const std::string& id);

}  // namespace oneseg

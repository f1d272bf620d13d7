#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace oneseg {

inline constexpr double kPrimitiveGradTolerance = 1e-6;
inline constexpr double kObjectiveGradTolerance = 1e-5;

struct GradcheckEntry {
    std::string name;
    double error = 0.0;
    double tolerance = 0.0;
    bool passed() const { return error <= tolerance; }
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;

    bool passed() const;
    double max_error() const;
};

// Per-primitive checks on random inputs, then the full training objective on
// 6x6 feature grids with two slice pairs, all in double precision.
GradcheckReport run_gradcheck(std::uint64_t seed);

}  // namespace oneseg

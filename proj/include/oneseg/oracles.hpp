#pragma once

// Brute-force reference implementations, linked only into tests. Everything
// is f64 and single-threaded and shares no code with the production paths.

#include <cstddef>
#include <span>
#include <vector>

#include "oneseg/metrics.hpp"
#include "oneseg/voldata.hpp"

namespace oneseg::oracle {

// Dense (H'W') x (H'W') factor matrix, row = target pixel, column = reference
// pixel; zero outside each target's P x P window.
std::vector<double> dense_attention(const FeatureMap& q, const FeatureMap& k, std::size_t patch);

// Cosine of the flattened maps, computed in long double.
double cosine(const FeatureMap& a, const FeatureMap& b);

// Score of every member of `members`, in the order given.
std::vector<double> repscore(std::span<const FeatureMap> feats, std::span<const std::size_t> members);

// Member with the highest score; first one on ties.
std::size_t best_member(std::span<const FeatureMap> feats, std::span<const std::size_t> members);

// Whole-volume argmax of summed similarity.
std::size_t test_slice(std::span<const FeatureMap> feats);

// All-pairs surface distance.
double assd(const BinaryVolume& pred, const BinaryVolume& gt, const Spacing& spacing);

// Zero-padded strided correlation, x [H,W,Cin], w [K,K,Cin,Cout].
std::vector<double> conv2d(std::span<const double> x, std::size_t H, std::size_t W, std::size_t cin,
                           std::span<const double> w, std::span<const double> b, std::size_t cout, std::size_t K,
                           std::size_t stride);

}  // namespace oneseg::oracle

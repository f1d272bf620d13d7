#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oneseg/voldata.hpp"

namespace oneseg {

enum class SimilarityMode {
    flat,   // cosine of the flattened H'*W'*C vectors
    pixel,  // mean over pixels of the per-pixel channel cosine
};

SimilarityMode parse_similarity_mode(const std::string& text);
std::string to_string(SimilarityMode mode);

std::vector<float> flatten_features(const FeatureMap& f);

// 0 when either side is all zeros.
double sim(const FeatureMap& a, const FeatureMap& b, SimilarityMode mode = SimilarityMode::flat);

// Symmetric D x D matrix, row-major.
std::vector<double> similarity_matrix(std::span<const FeatureMap> feats, SimilarityMode mode = SimilarityMode::flat,
                                      std::size_t workers = 1);

// Sum of sim(i, j) over all members j, i itself included.
double rep_score(std::size_t i, std::span<const std::size_t> members, std::span<const FeatureMap> feats,
                 SimilarityMode mode = SimilarityMode::flat);

struct ClusterAssignment {
    std::size_t k = 0;
    std::vector<std::size_t> assignment;
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // after every assignment step
    std::size_t iterations = 0;

    std::vector<std::vector<std::size_t>> members() const;
};

// Lloyd iterations from farthest-point seeding (first centre drawn from `seed`),
// at most 100 rounds. An emptied cluster takes the point farthest from its own
// centroid among clusters with more than one member.
ClusterAssignment kmeans(std::span<const std::vector<double>> points, std::size_t k, std::uint64_t seed);

inline constexpr std::size_t kScreeningIntervals[] = {2, 3, 5};

struct RepresentativeSet {
    std::string volume_id;
    std::size_t interval = 0;  // I
    std::vector<std::size_t> indices;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    ClusterAssignment clusters;
};

std::size_t cluster_count(std::size_t depth, std::size_t interval);

// First index holding the maximum.
std::size_t argmax_lowest(std::span<const double> scores);

RepresentativeSet build_representative_set(const std::string& volume_id, std::span<const FeatureMap> feats,
                                           std::mt19937_64& rng, SimilarityMode mode = SimilarityMode::flat,
                                           std::size_t workers = 1);
RepresentativeSet build_representative_set(const Volume& v, std::span<const FeatureMap> feats, std::mt19937_64& rng,
                                           SimilarityMode mode = SimilarityMode::flat, std::size_t workers = 1);

std::size_t select_test_slice(std::span<const FeatureMap> feats, SimilarityMode mode = SimilarityMode::flat,
                              std::size_t workers = 1);

}  // namespace oneseg

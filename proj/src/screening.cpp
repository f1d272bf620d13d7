#include "oneseg/screening.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "oneseg/parallel.hpp"

namespace oneseg {

SimilarityMode parse_similarity_mode(const std::string& text) {
    if (text == "flat") return SimilarityMode::flat;
    if (text == "pixel") return SimilarityMode::pixel;
    throw ValidationError("unknown similarity mode '" + text + "' (expected flat or pixel)");
}

std::string to_string(SimilarityMode mode) { return mode == SimilarityMode::flat ? "flat" : "pixel"; }

std::vector<float> flatten_features(const FeatureMap& f) { return f.data; }

namespace {

double cosine(const float* a, const float* b, std::size_t n) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

void check_same_dims(const FeatureMap& a, const FeatureMap& b) {
    if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
        throw ValidationError("feature maps differ in shape");
    }
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

double sim(const FeatureMap& a, const FeatureMap& b, SimilarityMode mode) {
    check_same_dims(a, b);
    if (mode == SimilarityMode::flat) return cosine(a.data.data(), b.data.data(), a.data.size());
    const std::size_t pixels = a.height * a.width, c = a.channels;
    double total = 0.0;
    for (std::size_t p = 0; p < pixels; ++p) total += cosine(a.data.data() + p * c, b.data.data() + p * c, c);
    return pixels ? total / static_cast<double>(pixels) : 0.0;
}

std::vector<double> similarity_matrix(std::span<const FeatureMap> feats, SimilarityMode mode, std::size_t workers) {
    const std::size_t n = feats.size();
    std::vector<double> m(n * n);
    parallel_for(n, workers, [&](std::size_t i) {
        for (std::size_t j = i; j < n; ++j) m[i * n + j] = m[j * n + i] = sim(feats[i], feats[j], mode);
    });
    return m;
}

double rep_score(std::size_t i, std::span<const std::size_t> members, std::span<const FeatureMap> feats,
                 SimilarityMode mode) {
    if (std::find(members.begin(), members.end(), i) == members.end()) {
        throw ValidationError("slice " + std::to_string(i) + " is not a member of the cluster");
    }
    double s = 0.0;
    for (std::size_t j : members) {
        if (j >= feats.size()) throw ValidationError("cluster member out of range");
        s += sim(feats[i], feats[j], mode);
    }
    return s;
}

std::vector<std::vector<std::size_t>> ClusterAssignment::members() const {
    std::vector<std::vector<std::size_t>> out(k);
    for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
    return out;
}

ClusterAssignment kmeans(std::span<const std::vector<double>> points, std::size_t k, std::uint64_t seed) {
    const std::size_t n = points.size();
    if (k < 1) throw ValidationError("kmeans needs K >= 1");
    if (k > n) throw ValidationError("kmeans: K = " + std::to_string(k) + " exceeds " + std::to_string(n) + " points");
    const std::size_t dim = points[0].size();
    for (const auto& p : points)
        if (p.size() != dim) throw ValidationError("kmeans points differ in dimension");
    for (const auto& p : points)
        for (double x : p)
            if (!std::isfinite(x)) throw ValidationError("kmeans points must be finite");

    ClusterAssignment r;
    r.k = k;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> chosen{std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
    std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
    while (chosen.size() < k) {
        for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], sq_dist(points[i], points[chosen.back()]));
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            if (best == n || nearest[i] > nearest[best]) best = i;
        }
        chosen.push_back(best);
    }
    for (std::size_t c : chosen) r.centroids.push_back(points[c]);

    r.assignment.assign(n, k);
    constexpr std::size_t kMaxIterations = 100;
    for (std::size_t iter = 0; iter < kMaxIterations; ++iter) {
        std::vector<std::size_t> next(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            double bd = sq_dist(points[i], r.centroids[0]);
            for (std::size_t c = 1; c < k; ++c) {
                const double d = sq_dist(points[i], r.centroids[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            next[i] = best;
        }
        // Repair empty clusters.
        for (std::size_t c = 0; c < k; ++c) {
            std::vector<std::size_t> sizes(k, 0);
            for (std::size_t a : next) ++sizes[a];
            if (sizes[c] > 0) continue;
            std::size_t far = n;
            double fd = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[next[i]] < 2) continue;
                const double d = sq_dist(points[i], r.centroids[next[i]]);
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            next[far] = c;
        }
        const bool stable = next == r.assignment;
        r.assignment = std::move(next);
        ++r.iterations;

        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto& s = sums[r.assignment[i]];
            for (std::size_t d = 0; d < dim; ++d) s[d] += points[i][d];
            ++counts[r.assignment[i]];
        }
        for (std::size_t c = 0; c < k; ++c)
            for (std::size_t d = 0; d < dim; ++d) r.centroids[c][d] = sums[c][d] / static_cast<double>(counts[c]);

        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) inertia += sq_dist(points[i], r.centroids[r.assignment[i]]);
        r.inertia = inertia;
        r.inertia_history.push_back(inertia);
        if (stable) break;
    }
    return r;
}

std::size_t cluster_count(std::size_t depth, std::size_t interval) {
    if (interval == 0) throw ValidationError("screening interval must be positive");
    return std::min(depth, std::max<std::size_t>(2, depth / interval));
}

std::size_t argmax_lowest(std::span<const double> scores) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return best;
}

RepresentativeSet build_representative_set(const std::string& volume_id, std::span<const FeatureMap> feats,
                                           std::mt19937_64& rng, SimilarityMode mode, std::size_t workers) {
    const std::size_t D = feats.size();
    if (D < 2) throw ValidationError("volume '" + volume_id + "' needs at least 2 slices for a representative set");
    RepresentativeSet rs;
    rs.volume_id = volume_id;
    rs.interval = kScreeningIntervals[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
    const std::uint64_t kseed = rng();

    std::vector<std::vector<double>> points(D);
    for (std::size_t d = 0; d < D; ++d) points[d].assign(feats[d].data.begin(), feats[d].data.end());
    rs.clusters = kmeans(points, cluster_count(D, rs.interval), kseed);

    const auto S = similarity_matrix(feats, mode, workers);
    for (const auto& members : rs.clusters.members()) {
        std::vector<double> scores;
        for (std::size_t i : members) {
            double s = 0.0;
            for (std::size_t j : members) s += S[i * D + j];
            scores.push_back(s);
        }
        rs.indices.push_back(members[argmax_lowest(scores)]);
    }
    std::sort(rs.indices.begin(), rs.indices.end());
    for (std::size_t i = 0; i + 1 < rs.indices.size(); ++i) rs.pairs.emplace_back(rs.indices[i], rs.indices[i + 1]);
    return rs;
}

RepresentativeSet build_representative_set(const Volume& v, std::span<const FeatureMap> feats, std::mt19937_64& rng,
                                           SimilarityMode mode, std::size_t workers) {
    if (feats.size() != v.depth()) throw ValidationError("feature count does not match volume depth");
    return build_representative_set(v.meta().id, feats, rng, mode, workers);
}

std::size_t select_test_slice(std::span<const FeatureMap> feats, SimilarityMode mode, std::size_t workers) {
    const std::size_t D = feats.size();
    if (D < 1) throw ValidationError("cannot select a slice from an empty volume");
    const auto S = similarity_matrix(feats, mode, workers);
    std::vector<double> scores(D, 0.0);
    for (std::size_t i = 0; i < D; ++i)
        for (std::size_t j = 0; j < D; ++j) scores[i] += S[i * D + j];
    return argmax_lowest(scores);
}

}  // namespace oneseg

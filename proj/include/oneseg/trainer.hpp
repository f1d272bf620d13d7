#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "oneseg/diffcore.hpp"
#include "oneseg/model.hpp"
#include "oneseg/screening.hpp"
#include "oneseg/voldata.hpp"

namespace oneseg {

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 2;  // volumes per optimizer step
    double lr = 1e-4;            // halved after every epoch
    double lambda1 = 0.9;
    double lambda2 = 0.1;
    double alpha_start = 0.9;
    double alpha_end = 0.5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double huber_delta = 1e-3;
    std::size_t patch = 13;
    SimilarityMode similarity = SimilarityMode::flat;
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    void validate() const;
};

struct Alpha {
    double alpha1 = 0.9;
    double alpha2 = 0.1;
};

// Linear in progress, exact at both ends.
Alpha anneal_alpha(double progress, double start = 0.9, double end = 0.5);

// lr0 * 2^-epoch.
double learning_rate(double lr0, std::size_t epoch);

struct LossWeights {
    double alpha1 = 0.9;
    double alpha2 = 0.1;
    double lambda1 = 0.9;
    double lambda2 = 0.1;
    std::size_t patch = 13;
    double huber_delta = 1e-3;
};

// Maps a full-resolution slice [H,W,1] to its features [H',W',C].
template <std::floating_point Real>
using FeatureFn = std::function<ad::Var<Real>(ad::Var<Real> slice)>;

template <std::floating_point Real>
struct Objective {
    ad::Var<Real> teacher;  // sum over pairs, reference = true slice
    ad::Var<Real> chained;  // sum over pairs, reference = previous reconstruction
    ad::Var<Real> sche;     // alpha1 * teacher + alpha2 * chained
    ad::Var<Real> cycle;
    ad::Var<Real> total;    // lambda1 * sche + lambda2 * cycle
    std::vector<Real> teacher_terms;  // per pair
};

// `slices` are the representative slices of one volume in slice order, so
// consecutive entries form the training pairs. Intensities are compared on
// the feature grid. Terms whose weight is zero are recorded as constant 0.
template <std::floating_point Real>
Objective<Real> build_objective(std::span<const ad::Var<Real>> slices, const FeatureFn<Real>& features,
                                const LossWeights& weights);

template <std::floating_point Real>
ad::Var<Real> loss_sche(std::span<const ad::Var<Real>> slices, const FeatureFn<Real>& features,
                        const LossWeights& weights);
template <std::floating_point Real>
ad::Var<Real> loss_cyc(std::span<const ad::Var<Real>> slices, const FeatureFn<Real>& features,
                       const LossWeights& weights);
template <std::floating_point Real>
ad::Var<Real> total_loss(std::span<const ad::Var<Real>> slices, const FeatureFn<Real>& features,
                         const LossWeights& weights);

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t steps = 0;
};

void adam_step(std::vector<Tensor<float>>& params, std::span<const Tensor<float>> grads, AdamState& state, double lr,
               double beta1, double beta2, double eps);

struct EpochStats {
    std::size_t epoch = 0;
    double loss = 0.0;     // mean per volume
    double l_sche = 0.0;
    double l_cyc = 0.0;
    double teacher = 0.0;  // mean teacher-forced L1 per pair
    double alpha1 = 0.0;   // at the first step of the epoch
    double lr = 0.0;
    double seconds = 0.0;
    std::size_t steps = 0;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    std::filesystem::path checkpoint;
};

// CSV header: epoch,loss,l_sche,l_cyc,alpha1,lr,seconds
std::string report_csv(const TrainReport& report);
void write_report_csv(const TrainReport& report, const std::filesystem::path& path);

struct TrainResult {
    Model model;
    TrainReport report;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Representative sets are redrawn each epoch; alpha anneals per optimizer step.
TrainResult train(std::span<const Volume> volumes, Model model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});
TrainResult train(const DatasetManifest& manifest, Model model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace oneseg

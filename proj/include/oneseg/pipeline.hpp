#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oneseg/config.hpp"
#include "oneseg/metrics.hpp"
#include "oneseg/trainer.hpp"

namespace oneseg {

enum class Ablation {
    none,
    no_screening,   // random annotated slice instead of the screened one
    no_bottleneck,  // encoder sees the raw slice
    no_sched,       // teacher forcing only (alpha1 = 1)
    no_cycle,       // lambda2 = 0
};

Ablation parse_ablation(const std::string& text);
std::string to_string(Ablation a);
void apply_ablation(RunConfig& cfg, Ablation a);

struct PipelineOptions {
    std::filesystem::path out;
    Ablation ablation = Ablation::none;
    std::size_t workers = 1;
    std::function<void(const std::string&)> log;
};

struct PipelineRow {
    std::string id;
    std::size_t rep = 0;
    EvalResult eval;
    std::vector<std::size_t> distance;
};

struct PipelineResult {
    std::vector<PipelineRow> rows;
    TrainReport report;
    double median_dice = 0.0;
};

double median(std::vector<double> values);

// synth -> train -> screen -> propagate -> evaluate. Writes under `out`:
//   run_config.txt, data/{train,test}/..., checkpoint/, train_report.csv,
//   predictions/<id>_pred.oseg, summary.csv, per_slice.csv
PipelineResult run_pipeline(RunConfig cfg, const PipelineOptions& options);

// Writes volumes and masks for `count` varied synth volumes plus manifest.txt.
DatasetManifest write_synth_set(const SynthConfig& base, std::size_t count, std::uint64_t seed,
                                const std::string& prefix, const std::filesystem::path& dir);

std::string format_fixed(double v, int digits = 6);

}  // namespace oneseg

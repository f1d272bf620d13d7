#include "oneseg/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "oneseg/model.hpp"
#include "oneseg/propagate.hpp"
#include "oneseg/screening.hpp"
#include "oneseg/synth.hpp"
#include "oneseg/textio.hpp"

namespace oneseg {

Ablation parse_ablation(const std::string& text) {
    if (text == "none") return Ablation::none;
    if (text == "no-screening") return Ablation::no_screening;
    if (text == "no-bottleneck") return Ablation::no_bottleneck;
    if (text == "no-sched") return Ablation::no_sched;
    if (text == "no-cycle") return Ablation::no_cycle;
    throw ValidationError("unknown ablation '" + text +
                          "' (expected none, no-screening, no-bottleneck, no-sched or no-cycle)");
}

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_screening: return "no-screening";
        case Ablation::no_bottleneck: return "no-bottleneck";
        case Ablation::no_sched: return "no-sched";
        case Ablation::no_cycle: return "no-cycle";
    }
    return "none";
}

void apply_ablation(RunConfig& cfg, Ablation a) {
    switch (a) {
        case Ablation::none:
        case Ablation::no_screening: break;
        case Ablation::no_bottleneck: cfg.set("gabor.enabled", "false"); break;
        case Ablation::no_sched:
            cfg.set("train.alpha_start", "1");
            cfg.set("train.alpha_end", "1");
            break;
        case Ablation::no_cycle: cfg.set("train.lambda2", "0"); break;
    }
}

double median(std::vector<double> values) {
    if (values.empty()) throw ValidationError("median of an empty list");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

DatasetManifest write_synth_set(const SynthConfig& base, std::size_t count, std::uint64_t seed,
                                const std::string& prefix, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    DatasetManifest m;
    std::string text;
    for (std::size_t i = 0; i < count; ++i) {
        char id[64];
        std::snprintf(id, sizeof id, "%s_%03zu", prefix.c_str(), i);
        const auto sv = generate(vary_synth(base, derive_seed(seed, i), id));
        const std::string vol = std::string(id) + ".oseg", msk = std::string(id) + "_mask.oseg";
        save_volume(sv.volume, dir / vol);
        save_mask(sv.mask, dir / msk);
        m.entries.push_back({dir / vol, dir / msk});
        text += vol + "," + msk + "\n";
    }
    write_text(dir / "manifest.txt", text);
    return m;
}

PipelineResult run_pipeline(RunConfig cfg, const PipelineOptions& options) {
    apply_ablation(cfg, options.ablation);
    cfg.validate();
    auto log = [&](const std::string& s) {
        if (options.log) options.log(s);
    };
    const auto& out = options.out;
    std::filesystem::create_directories(out);
    write_text(out / "run_config.txt", "# ablation: " + to_string(options.ablation) + "\n" + cfg.to_text());

    const SynthConfig base = cfg.synth();
    const std::uint64_t synth_seed = cfg.count("synth.seed");
    const auto n_train = cfg.count("pipeline.train_volumes"), n_test = cfg.count("pipeline.test_volumes");
    if (n_train < 1 || n_test < 1) throw ValidationError("pipeline needs at least one training and one test volume");
    write_synth_set(base, n_train, derive_seed(synth_seed, 0), "train", out / "data" / "train");
    write_synth_set(base, n_test, derive_seed(synth_seed, 1), "test", out / "data" / "test");
    log("wrote " + std::to_string(n_train) + " training and " + std::to_string(n_test) + " test volumes");

    const auto train_manifest = load_manifest(out / "data" / "train" / "manifest.txt", DatasetRole::train);
    const auto test_manifest = load_manifest(out / "data" / "test" / "manifest.txt", DatasetRole::test);
    std::vector<Volume> train_volumes;
    for (const auto& e : train_manifest.entries) train_volumes.push_back(load_volume(e.volume));

    TrainConfig tc = cfg.train();
    tc.workers = options.workers;
    const Model init = make_model(cfg.gabor(), cfg.bottleneck(), cfg.encoder());
    auto trained = train(train_volumes, init, tc, [&](const EpochStats& e) {
        log("epoch " + std::to_string(e.epoch) + " loss " + format_fixed(e.loss) + " teacher " +
            format_fixed(e.teacher) + " lr " + format_double(e.lr) + " (" + format_fixed(e.seconds, 1) + " s)");
    });
    save_checkpoint(trained.model, out / "checkpoint");
    trained.report.checkpoint = out / "checkpoint";
    write_report_csv(trained.report, out / "train_report.csv");

    PipelineResult result;
    result.report = trained.report;
    std::mt19937_64 pick(cfg.count("pipeline.seed"));
    PropagateOptions po = cfg.propagate();
    po.workers = options.workers;
    std::filesystem::create_directories(out / "predictions");
    std::string summary = "volume_id,rep_index,dice,ravd,assd\n";
    std::string per_slice = "volume_id,slice,distance,dice\n";
    for (const auto& e : test_manifest.entries) {
        const Volume v = load_volume(e.volume);
        const Mask gt = load_mask(*e.mask, v.meta());
        const auto feats = encode_volume(trained.model, v, options.workers);
        std::size_t rep;
        if (options.ablation == Ablation::no_screening) {
            rep = std::uniform_int_distribution<std::size_t>(0, v.depth() - 1)(pick);
        } else {
            rep = select_test_slice(feats, cfg.similarity(), options.workers);
        }
        const auto pr = propagate_volume(v, rep, gt.slice(rep), gt.channels(), feats, po);
        save_mask(pr.mask, out / "predictions" / (v.meta().id + "_pred.oseg"));

        PipelineRow row;
        row.id = v.meta().id;
        row.rep = rep;
        row.eval = evaluate_volume(pr.mask, gt, v.meta().spacing);
        row.distance = pr.distance;
        summary += row.id + "," + std::to_string(rep) + "," + format_fixed(row.eval.dice) + "," +
                   format_fixed(row.eval.ravd) + "," + format_fixed(row.eval.assd) + "\n";
        for (std::size_t d = 0; d < v.depth(); ++d) {
            per_slice += row.id + "," + std::to_string(d) + "," + std::to_string(pr.distance[d]) + "," +
                         format_fixed(row.eval.slice_dice[d]) + "\n";
        }
        log(row.id + ": rep " + std::to_string(rep) + " dice " + format_fixed(row.eval.dice, 4));
        result.rows.push_back(std::move(row));
    }
    write_text(out / "summary.csv", summary);
    write_text(out / "per_slice.csv", per_slice);

    std::vector<double> dices;
    for (const auto& r : result.rows) dices.push_back(r.eval.dice);
    result.median_dice = median(dices);
    return result;
}

}  // namespace oneseg

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "oneseg/config.hpp"
#include "oneseg/errors.hpp"
#include "oneseg/gradcheck.hpp"
#include "oneseg/metrics.hpp"
#include "oneseg/model.hpp"
#include "oneseg/pipeline.hpp"
#include "oneseg/propagate.hpp"
#include "oneseg/screening.hpp"
#include "oneseg/synth.hpp"
#include "oneseg/textio.hpp"
#include "oneseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace oneseg;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::size_t workers = 0;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "override one config key (key=value), repeatable");
    cmd->add_option("--seed", c.seed, "master seed for every unset seed key");
    cmd->add_option("--workers", c.workers, "parallel width (default: ONESEG_WORKERS or 1)");
}

RunConfig build_config(const Common& c) {
    RunConfig cfg;
    if (!c.config.empty()) cfg.load_file(c.config);
    for (const auto& kv : c.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
        cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (c.seed) cfg.apply_seed(*c.seed);
    cfg.validate();
    return cfg;
}

Volume load_resized(const fs::path& path, const RunConfig& cfg) {
    Volume v = load_volume(path);
    const std::size_t r = cfg.resize();
    return r ? resize_volume(v, r, r) : v;
}

// The expert mask may cover the whole volume (only slice `rep` is read) or be a
// single slice, 1 x H x W [x L].
std::pair<std::vector<float>, std::size_t> read_rep_mask(const fs::path& path, const VolumeMeta& meta,
                                                         std::size_t rep) {
    const RawTensor raw = read_oseg(path);
    if (!raw.dims.empty() && raw.dims[0] == 1 && meta.depth != 1) {
        VolumeMeta one = meta;
        one.depth = 1;
        const Mask m = load_mask(path, one);
        return {std::vector<float>(m.slice(0).begin(), m.slice(0).end()), m.channels()};
    }
    const Mask m = load_mask(path, meta);
    const auto s = m.slice(rep);
    return {std::vector<float>(s.begin(), s.end()), m.channels()};
}

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

int cmd_synth(const Common& c, const std::string& out, std::size_t volumes, const std::string& prefix) {
    const RunConfig cfg = build_config(c);
    if (volumes < 1) throw ValidationError("--volumes must be at least 1");
    const SynthConfig base = cfg.synth();
    vary_synth(base, 0, prefix).validate();
    write_synth_set(base, volumes, cfg.count("synth.seed"), prefix, out);
    cfg.write(fs::path(out) / "run_config.txt");
    std::cout << "wrote " << volumes << " volumes to " << out << "\n";
    return 0;
}

int cmd_train(const Common& c, const std::string& manifest_path, const std::string& out) {
    const RunConfig cfg = build_config(c);
    TrainConfig tc = cfg.train();
    tc.workers = resolve_workers(c.workers);
    const auto manifest = load_manifest(manifest_path, DatasetRole::train);
    std::vector<Volume> volumes;
    for (const auto& e : manifest.entries) volumes.push_back(load_resized(e.volume, cfg));
    if (volumes.empty()) throw ValidationError("manifest lists no volumes");
    const Model init = make_model(cfg.gabor(), cfg.bottleneck(), cfg.encoder());

    auto result = train(volumes, init, tc, [](const EpochStats& e) {
        std::cout << "epoch " << e.epoch << " loss " << format_fixed(e.loss) << " teacher " << format_fixed(e.teacher)
                  << " alpha1 " << format_fixed(e.alpha1, 4) << " lr " << format_double(e.lr) << "\n"
                  << std::flush;
    });
    const fs::path dir(out);
    save_checkpoint(result.model, dir);
    result.report.checkpoint = dir;
    write_report_csv(result.report, dir / "train_report.csv");
    cfg.write(dir / "run_config.txt");
    return 0;
}

int cmd_screen(const Common& c, const std::string& manifest_path, const std::string& checkpoint,
               const std::string& role) {
    const RunConfig cfg = build_config(c);
    if (role != "train" && role != "test") throw ValidationError("--role must be train or test");
    const Model model = load_checkpoint(checkpoint);
    const std::size_t workers = resolve_workers(c.workers);
    const auto manifest = load_manifest(manifest_path, role == "train" ? DatasetRole::train : DatasetRole::test);
    std::mt19937_64 rng(cfg.count("train.seed"));
    for (const auto& e : manifest.entries) {
        const Volume v = load_resized(e.volume, cfg);
        const auto feats = encode_volume(model, v, workers);
        if (role == "train") {
            const auto rs = build_representative_set(v, feats, rng, cfg.similarity(), workers);
            std::cout << v.meta().id << "\t" << join(rs.indices) << "\n";
        } else {
            std::cout << v.meta().id << "\t" << select_test_slice(feats, cfg.similarity(), workers) << "\n";
        }
    }
    return 0;
}

int cmd_propagate(const Common& c, const std::string& volume_path, const std::string& checkpoint,
                  const std::string& mask_path, std::optional<std::size_t> rep_index, const std::string& out) {
    const RunConfig cfg = build_config(c);
    const std::size_t workers = resolve_workers(c.workers);
    const Volume stored = load_volume(volume_path);
    const Volume v = load_resized(volume_path, cfg);
    const Model model = load_checkpoint(checkpoint);
    if (rep_index && *rep_index >= v.depth()) {
        throw ValidationError("--rep-index " + std::to_string(*rep_index) + " out of range for depth " +
                              std::to_string(v.depth()));
    }
    if (!mask_path.empty() && out.empty()) throw ValidationError("--out is required when --mask is given");

    const auto feats = encode_volume(model, v, workers);
    const std::size_t rep = rep_index ? *rep_index : select_test_slice(feats, cfg.similarity(), workers);
    if (mask_path.empty()) {
        std::cout << rep << "\n";
        return 0;
    }
    auto [rep_mask, channels] = read_rep_mask(mask_path, stored.meta(), rep);
    const std::size_t r = cfg.resize();
    if (r) rep_mask = resize_slice(rep_mask, stored.meta().height, stored.meta().width, channels, r, r, Interp::nearest);

    PropagateOptions po = cfg.propagate();
    po.workers = workers;
    const auto pr = propagate_volume(v, rep, rep_mask, channels, feats, po);
    save_mask(pr.mask, out);
    std::cout << "rep " << rep << " -> " << out << "\n";
    return 0;
}

// Mask file on its own: dimensions come from the file, id from the file name.
Mask standalone_mask(const fs::path& path) {
    const RawTensor raw = read_oseg(path);
    if (raw.dims.size() != 3 && raw.dims.size() != 4) throw FormatError(path.string() + ": mask must have 3 or 4 dims");
    VolumeMeta meta;
    meta.depth = raw.dims[0];
    meta.height = raw.dims[1];
    meta.width = raw.dims[2];
    meta.id = path.stem().string();
    return load_mask(path, meta);
}

std::string volume_id_of(const fs::path& pred) {
    std::string id = pred.stem().string();
    for (const std::string suffix : {"_pred", "_mask"}) {
        if (id.size() > suffix.size() && id.compare(id.size() - suffix.size(), suffix.size(), suffix) == 0) {
            return id.substr(0, id.size() - suffix.size());
        }
    }
    return id;
}

int cmd_evaluate(const Common& c, const std::vector<std::string>& preds, const std::vector<std::string>& gts,
                 const std::string& out, const std::string& per_slice, const std::vector<double>& spacing_flag) {
    build_config(c);
    if (preds.size() != gts.size()) throw ValidationError("--pred and --gt must be given the same number of times");
    if (preds.empty()) throw ValidationError("nothing to evaluate");
    Spacing spacing;
    if (!spacing_flag.empty()) {
        if (spacing_flag.size() != 3) throw ValidationError("--spacing takes three values: z y x");
        spacing = {spacing_flag[0], spacing_flag[1], spacing_flag[2]};
        if (spacing.z <= 0 || spacing.y <= 0 || spacing.x <= 0) throw ValidationError("spacing must be positive");
    }
    std::string summary = "volume_id,dice,ravd,assd\n", slices = "volume_id,slice,dice\n";
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const Mask pred = standalone_mask(preds[i]), gt = standalone_mask(gts[i]);
        if (!pred.meta().same_dims(gt.meta())) throw ValidationError(preds[i] + " and " + gts[i] + " differ in size");
        const auto r = evaluate_volume(pred, gt, spacing);
        const std::string id = volume_id_of(preds[i]);
        summary += id + "," + format_fixed(r.dice) + "," + format_fixed(r.ravd) + "," + format_fixed(r.assd) + "\n";
        for (std::size_t d = 0; d < r.slice_dice.size(); ++d)
            slices += id + "," + std::to_string(d) + "," + format_fixed(r.slice_dice[d]) + "\n";
    }
    if (out.empty()) std::cout << summary;
    else write_text(out, summary);
    if (!per_slice.empty()) write_text(per_slice, slices);
    return 0;
}

int cmd_gradcheck(const Common& c) {
    const std::uint64_t seed = c.seed.value_or(0);
    const auto report = run_gradcheck(seed);
    for (const auto& e : report.entries) {
        std::printf("%-20s %.3e  (tol %.0e)  %s\n", e.name.c_str(), e.error, e.tolerance, e.passed() ? "ok" : "FAIL");
    }
    std::printf("max relative error %.3e\n", report.max_error());
    return report.passed() ? 0 : 2;
}

int cmd_pipeline(const Common& c, const std::string& out, const std::string& ablate) {
    const RunConfig cfg = build_config(c);
    PipelineOptions opts;
    opts.out = out;
    opts.ablation = parse_ablation(ablate);
    opts.workers = resolve_workers(c.workers);
    opts.log = [](const std::string& s) { std::cerr << s << "\n"; };
    const auto result = run_pipeline(cfg, opts);
    std::cout << "volume_id,rep_index,dice,ravd,assd\n";
    for (const auto& r : result.rows) {
        std::cout << r.id << "," << r.rep << "," << format_fixed(r.eval.dice) << "," << format_fixed(r.eval.ravd)
                  << "," << format_fixed(r.eval.assd) << "\n";
    }
    std::cout << "median dice " << format_fixed(result.median_dice, 4) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"oneseg: one-shot slice annotation and label propagation for volumes"};
    app.require_subcommand(1);

    Common common;
    std::string out, manifest, checkpoint, volume, mask, role = "test", ablate = "none", prefix = "vol", per_slice;
    std::size_t volumes = 4;
    std::optional<std::size_t> rep_index;
    std::vector<std::string> preds, gts;
    std::vector<double> spacing;

    auto* synth = app.add_subcommand("synth", "write synthetic volumes, masks and a manifest");
    synth->add_option("--out", out, "output directory")->required();
    synth->add_option("--volumes", volumes, "number of volumes");
    synth->add_option("--prefix", prefix, "volume id prefix");

    auto* trn = app.add_subcommand("train", "self-supervised encoder training");
    trn->add_option("--manifest", manifest, "training manifest")->required()->check(CLI::ExistingFile);
    trn->add_option("--out", out, "checkpoint directory")->required();

    auto* scr = app.add_subcommand("screen", "representative slice selection report");
    scr->add_option("--manifest", manifest, "manifest")->required()->check(CLI::ExistingFile);
    scr->add_option("--checkpoint", checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
    scr->add_option("--role", role, "train (representative sets) or test (one slice)");

    auto* prop = app.add_subcommand("propagate", "propagate an annotated slice through a volume");
    prop->add_option("--volume", volume, "volume file")->required()->check(CLI::ExistingFile);
    prop->add_option("--checkpoint", checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
    prop->add_option("--mask", mask, "annotation of the representative slice")->check(CLI::ExistingFile);
    prop->add_option("--rep-index", rep_index, "annotated slice (default: screened)");
    prop->add_option("--out", out, "predicted mask file");

    auto* ev = app.add_subcommand("evaluate", "DICE, RAVD and ASSD of predicted masks");
    ev->add_option("--pred", preds, "predicted mask, repeatable")->required()->check(CLI::ExistingFile);
    ev->add_option("--gt", gts, "ground-truth mask, repeatable")->required()->check(CLI::ExistingFile);
    ev->add_option("--out", out, "summary CSV (default: stdout)");
    ev->add_option("--per-slice", per_slice, "per-slice DICE CSV");
    ev->add_option("--spacing", spacing, "voxel spacing z y x")->expected(3);

    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every primitive and the objective");

    auto* pipe = app.add_subcommand("pipeline", "synth, train, screen, propagate and evaluate in one run");
    pipe->add_option("--out", out, "run directory")->required();
    pipe->add_option("--ablate", ablate, "none, no-screening, no-bottleneck, no-sched or no-cycle");

    for (auto* cmd : {synth, trn, scr, prop, ev, gc, pipe}) add_common(cmd, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e, std::cerr, std::cerr);
        std::cerr << app.help();
        return 1;
    }

    try {
        if (*synth) return cmd_synth(common, out, volumes, prefix);
        if (*trn) return cmd_train(common, manifest, out);
        if (*scr) return cmd_screen(common, manifest, checkpoint, role);
        if (*prop) return cmd_propagate(common, volume, checkpoint, mask, rep_index, out);
        if (*ev) return cmd_evaluate(common, preds, gts, out, per_slice, spacing);
        if (*gc) return cmd_gradcheck(common);
        if (*pipe) return cmd_pipeline(common, out, ablate);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "docdpm/trainer.hpp"

using namespace docdpm;

namespace {

// DOCDPM_LOG picks the console verbosity: quiet/0, info/1 (default), debug/2.
int env_verbosity() {
    const char* v = std::getenv("DOCDPM_LOG");
    if (!v) return 1;
    std::string s(v);
    if (s == "0" || s == "quiet" || s == "error") return 0;
    if (s == "1" || s == "info") return 1;
    if (s == "2" || s == "debug") return 2;
    throw ConfigError("DOCDPM_LOG must be quiet, info, or debug (or 0/1/2); got '" + s + "'");
}

DegradeSpec::Kind degrade_kind(const std::string& name) {
    if (name == "gaussian_blur") return DegradeSpec::Kind::gaussian_blur;
    if (name == "motion_blur") return DegradeSpec::Kind::motion_blur;
    return DegradeSpec::Kind::binarization_noise;
}

TrainConfig config_from(const std::string& path, const std::vector<std::string>& sets) {
    if (!path.empty()) return load_train_config(path, sets);
    TrainConfig cfg = parse_train_config(default_config_text(), "defaults");
    for (const auto& s : sets) apply_override(cfg, s);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"docdpm: document enhancement with an initial predictor and a residual "
                 "diffusion refiner"};
    app.fallthrough();
    app.require_subcommand(0, 1);
    app.set_version_flag("--version", std::string("docdpm ") + kVersion);

    int threads = 1;
    app.add_option("--threads", threads,
                   "worker thread budget (computation currently runs on one thread)")
        ->check(CLI::Range(1, 64));

    std::string cfg_path, resume_path, checkpoint, crnn_checkpoint, input, out_path, manifest,
        outputs_dir, mode = "deblur", report_path, clean_dir, kind = "binarization_noise";
    std::vector<std::string> sets;
    std::uint64_t seed = 0;
    int overlap = -1;

    auto* train = app.add_subcommand("train", "train the enhancement networks");
    train->add_option("--config", cfg_path, "config file (key = value lines)")->required();
    train->add_option("--set", sets, "override a config key, e.g. --set train.steps=500");
    train->add_option("--resume", resume_path, "checkpoint to continue from");

    auto* finetune = app.add_subcommand(
        "finetune", "continue training with the frozen-recognizer CTC penalty");
    finetune->add_option("--checkpoint", checkpoint, "trained enhancement checkpoint")
        ->required();
    finetune->add_option("--crnn", crnn_checkpoint,
                         "recognizer checkpoint from pretrain-ocr (optional when the "
                         "checkpoint already carries one)");
    finetune->add_option("--set", sets, "override a config key");

    auto* sample = app.add_subcommand("sample", "restore images with a trained checkpoint");
    sample->add_option("--checkpoint", checkpoint, "checkpoint to sample from")->required();
    sample->add_option("--input", input, "directory of PNGs, or a manifest of pairs")
        ->required();
    sample->add_option("--out", out_path, "output directory for restored PNGs")->required();
    sample->add_option("--overlap", overlap, "patch overlap in pixels (default patch/4)");
    sample->add_option("--seed", seed, "sampling seed");
    sample->add_option("--set", sets, "override a config key, e.g. --set sampler.steps=10");

    auto* eval = app.add_subcommand("eval", "score restored images against clean references");
    eval->add_option("--manifest", manifest, "manifest of degraded/clean pairs")->required();
    eval->add_option("--outputs", outputs_dir, "directory holding the restored PNGs")
        ->required();
    eval->add_option("--mode", mode, "deblur or binarize")
        ->check(CLI::IsMember({"deblur", "binarize"}));
    eval->add_option("--checkpoint", checkpoint,
                     "recognizer-bearing checkpoint; enables character error rate");
    eval->add_option("--report", report_path, "report path (default outputs/eval_report.txt)");

    auto* degrade_cmd = app.add_subcommand("degrade", "build a degraded/clean training corpus");
    DegradeOptions dopts;
    degrade_cmd->add_option("--out", dopts.out_dir, "output directory")->required();
    degrade_cmd->add_option("--clean-dir", clean_dir,
                            "degrade existing PNGs instead of synthesizing pages");
    degrade_cmd->add_option("--count", dopts.count, "synthesized page count");
    degrade_cmd->add_option("--seed", dopts.seed, "corpus seed");
    degrade_cmd->add_option("--kind", kind, "degradation kind")
        ->check(CLI::IsMember({"gaussian_blur", "motion_blur", "binarization_noise"}));
    degrade_cmd->add_option("--blur-sigma", dopts.spec.blur_sigma, "gaussian blur sigma");
    degrade_cmd->add_option("--kernel-size", dopts.spec.kernel_size,
                            "odd gaussian kernel size (0 derives it from sigma)");
    degrade_cmd->add_option("--motion-length", dopts.spec.motion_length,
                            "motion blur length in pixels");
    degrade_cmd->add_option("--motion-angle", dopts.spec.motion_angle_deg,
                            "motion blur angle in degrees");
    degrade_cmd->add_option("--stain-strength", dopts.spec.stain_strength,
                            "stain field strength");
    degrade_cmd->add_option("--stain-cell", dopts.spec.stain_cell, "stain cell size in pixels");
    degrade_cmd->add_option("--bleed", dopts.spec.bleed_amplitude, "bleed-through amplitude");
    degrade_cmd->add_option("--noise-sigma", dopts.spec.noise_sigma, "pixel noise sigma");
    degrade_cmd->add_option("--page-width", dopts.page_width, "synthesized page width");
    degrade_cmd->add_option("--page-height", dopts.page_height, "synthesized page height");
    degrade_cmd->add_option("--page-scale", dopts.scale, "synthesized font scale");

    auto* pretrain = app.add_subcommand("pretrain-ocr",
                                        "train the recognizer on clean word crops");
    pretrain->add_option("--config", cfg_path, "config file")->required();
    pretrain->add_option("--out", out_path, "checkpoint to write")->required();
    pretrain->add_option("--set", sets, "override a config key");

    auto* describe = app.add_subcommand("describe", "print what a config builds");
    describe->add_option("--config", cfg_path, "config file (defaults when omitted)");
    describe->add_option("--set", sets, "override a config key");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        RunLog log{[](const std::string& s) { std::cerr << s << '\n'; }, env_verbosity()};
        if (*train) {
            run_train(load_train_config(cfg_path, sets), log, resume_path);
        } else if (*finetune) {
            FinetuneOptions o;
            o.checkpoint = checkpoint;
            o.crnn_checkpoint = crnn_checkpoint;
            o.overrides = sets;
            run_finetune(o, log);
        } else if (*sample) {
            SampleOptions o;
            o.checkpoint = checkpoint;
            o.input = input;
            o.out_dir = out_path;
            o.overlap = overlap;
            o.seed = seed;
            o.overrides = sets;
            run_sample(o, log);
        } else if (*eval) {
            EvalOptions o;
            o.manifest = manifest;
            o.outputs_dir = outputs_dir;
            o.mode = mode == "binarize" ? EvalMode::binarize : EvalMode::deblur;
            o.checkpoint = checkpoint;
            o.report_path = report_path;
            std::cout << run_eval(o, log).to_text();
        } else if (*degrade_cmd) {
            dopts.clean_dir = clean_dir;
            dopts.spec.kind = degrade_kind(kind);
            run_degrade(dopts, log);
        } else if (*pretrain) {
            run_pretrain_ocr(config_from(cfg_path, sets), out_path, log);
        } else if (*describe) {
            std::cout << describe_text(config_from(cfg_path, sets));
        } else {
            std::cerr << app.help();
            return 1;
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "docdpm/checkpoint.hpp"
#include "docdpm/data.hpp"
#include "docdpm/metrics.hpp"

namespace docdpm {

inline constexpr const char* kVersion = "0.1.0";

// Console logging for the run_* entry points. Level 1 lines are the normal
// progress report; level 2 adds detail. Every level-1 line is also written to
// the run's log file, which stays timestamp-free so repeated runs produce
// identical bytes.
struct RunLog {
    std::function<void(const std::string&)> sink;
    int verbosity = 1;

    void info(const std::string& s) const {
        if (sink && verbosity >= 1) sink(s);
    }
    void debug(const std::string& s) const {
        if (sink && verbosity >= 2) sink(s);
    }
};

// Human-readable summary of what a config builds: parameter counts, schedule
// and sampler settings.
std::string describe_text(const TrainConfig& cfg);

// Runs (or, with resume_path, continues) joint training of the initial
// predictor and the denoiser. Writes ckpt_<iteration>.ckpt + latest.ckpt and
// train_log.txt under cfg.out_dir and returns the final state. On resume only
// run-control keys (data.manifest, out.dir, train.steps, train.log_every,
// train.checkpoint_every, train.val_images, sampler.*) may differ from the
// checkpoint's config; anything that shaped the networks, the optimizer, or
// the data stream must match.
TrainState run_train(const TrainConfig& cfg, const RunLog& log,
                     const std::string& resume_path = {});

struct FinetuneOptions {
    std::string checkpoint;       // trained enhancement checkpoint
    std::string crnn_checkpoint;  // recognizer source; optional when the
                                  // checkpoint already carries one
    std::vector<std::string> overrides;  // key=value applied to the config
};

// Continues training with the frozen-recognizer CTC penalty added to the
// objective. Writes checkpoints and finetune_log.txt under out.dir.
TrainState run_finetune(const FinetuneOptions& opts, const RunLog& log);

struct SampleOptions {
    std::string checkpoint;
    std::string input;    // directory of PNGs, or a manifest whose degraded
                          // images are the inputs
    std::string out_dir;  // restored PNGs land here under their input names
    int overlap = -1;     // patch overlap in pixels; <0 means patch/4
    std::uint64_t seed = 0;
    std::vector<std::string> overrides;  // e.g. sampler.steps=10
};

// Restores every input image patch-wise and stitches the results. Returns the
// number of images written; also writes sample_log.txt into out_dir.
int run_sample(const SampleOptions& opts, const RunLog& log);

struct EvalOptions {
    std::string manifest;
    std::string outputs_dir;  // holds one restored PNG per manifest record,
                              // named like the degraded file
    EvalMode mode = EvalMode::deblur;
    std::string checkpoint;    // optional; enables CER via its recognizer
    std::string report_path;   // default: outputs_dir/eval_report.txt
};

EvalReport run_eval(const EvalOptions& opts, const RunLog& log);

struct DegradeOptions {
    std::string out_dir;
    std::string clean_dir;  // empty: synthesize text pages instead
    DegradeSpec spec;
    int count = 16;  // synthesized page count
    std::uint64_t seed = 0;
    // Synthesized page geometry.
    int page_width = 256;
    int page_height = 96;
    int scale = 2;
};

// Produces out_dir/{clean,degraded}/*.png plus manifest.jsonl. Synthesized
// pages carry word boxes so the corpus also feeds recognizer training.
// Returns the number of pairs written.
int run_degrade(const DegradeOptions& opts, const RunLog& log);

// Trains the recognizer on clean word crops from the manifest's training
// split and saves a recognizer-bearing checkpoint to out_path. Returns the
// final character error rate (percent) over those words.
double run_pretrain_ocr(const TrainConfig& cfg, const std::string& out_path, const RunLog& log);

}  // namespace docdpm

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "docdpm/diffusion.hpp"
#include "docdpm/ocr.hpp"

namespace docdpm {

// Raised for problems a user can fix in the config file or on the command
// line; the CLI maps it to exit code 1 (runtime failures exit 2).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Full run configuration, loadable from a flat `key = value` text file with
// `#` comments. Every key is validated against its documented range at load
// time and unknown or duplicate keys are rejected, so a config that loads
// cleanly cannot fail validation later.
struct TrainConfig {
    std::uint64_t seed = 0;

    std::string data_manifest;  // data.manifest
    std::string out_dir;        // out.dir

    // schedule.*
    int schedule_steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    // init.* / den.* / time.*
    NetworkConfig init_net;
    NetworkConfig den_net;
    TimeEmbeddingConfig time;

    // optim.*
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double clip_norm = 1.0;

    // train.*
    int train_steps = 2000;
    int batch = 4;
    int patch = 32;
    bool augment = true;
    bool detach_initial = false;
    int log_every = 50;
    int checkpoint_every = 500;
    int val_images = 2;

    // sampler.*
    SamplerSpec sampler;

    // crnn.*
    CrnnConfig crnn;

    // finetune.*
    int finetune_steps = 200;
    double finetune_lr = 1e-4;

    // pretrain.*
    int pretrain_epochs = 40;
    double pretrain_lr = 3e-3;

    // Canonical serialization: every key in schema order, one per line.
    // parse_train_config(to_text()) reproduces the struct exactly.
    std::string to_text() const;
};

// Parses config text. `source` names the origin (file path or "--set") for
// error messages.
TrainConfig parse_train_config(const std::string& text, const std::string& source);

// Loads a config file, then applies `key=value` override strings in order.
TrainConfig load_train_config(const std::string& path,
                              const std::vector<std::string>& overrides = {});

// Applies one `key=value` override to an existing config and revalidates.
void apply_override(TrainConfig& cfg, const std::string& assignment);

// Range-checks every field; parse/load call this, and it is public so
// hand-built configs can be checked too. Throws ConfigError naming the key.
void validate_train_config(const TrainConfig& cfg);

// The documented schema: default config text with a comment per key.
std::string default_config_text();

}  // namespace docdpm

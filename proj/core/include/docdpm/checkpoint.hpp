#pragma once

#include <cstdint>
#include <string>

#include "docdpm/config.hpp"
#include "docdpm/diffusion.hpp"
#include "docdpm/ocr.hpp"

namespace docdpm {

// Everything needed to continue a run bit-identically on the same platform:
// model parameters, optimizer moments, the training rng, and the config the
// run was started with.
struct TrainState {
    TrainConfig config;
    std::int64_t iteration = 0;  // completed optimization steps
    Models<float> models;
    Adam<float> opt;
    Rng rng;

    // Recognizer surrogate; present after pretraining or finetuning.
    bool has_crnn = false;
    ParamStore<float> crnn_store;
    Crnn<float> crnn;
};

// Builds fresh models (and the CRNN when with_crnn) from the config.
TrainState init_train_state(const TrainConfig& cfg, bool with_crnn = false);

// Checkpoint container, all integers little-endian:
//   bytes 0..7   magic "DOCDPMCK"
//   u32          format version (currently 1)
//   u64          completed iteration count
//   u64          optimizer step count
//   u8           1 when a recognizer section is present
//   u64 + bytes  config snapshot (TrainConfig::to_text, UTF-8)
//   u64 + bytes  rng state (decimal text, Rng::serialize)
//   u64          blob count
//   per blob:    u64 + bytes name; u8 dtype (0 = f32, 1 = f64);
//                u32 ndim; i32 dims[ndim]; payload (numel * 4 or 8 bytes)
// Model parameters are f32 blobs under their parameter names; optimizer
// moments are f32 blobs under "opt.m.<name>" / "opt.v.<name>"; recognizer
// parameters live under their own "crnn."-prefixed names.
// Files are written atomically (temp + rename).
void save_checkpoint(const std::string& path, const TrainState& state);

// Rebuilds the full state: parses the config snapshot, reconstructs the
// networks, and overwrites every parameter and moment from the blobs.
// Throws std::runtime_error on malformed files or mismatched names.
TrainState load_checkpoint(const std::string& path);

}  // namespace docdpm

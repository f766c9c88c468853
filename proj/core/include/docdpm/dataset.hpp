#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "docdpm/diffusion.hpp"
#include "docdpm/manifest.hpp"
#include "docdpm/ocr.hpp"
#include "docdpm/rng.hpp"

namespace docdpm {

struct Dataset {
    std::vector<ManifestRecord> records;
    std::vector<int> train_indices;
    std::vector<int> val_indices;

    // Decoded images, keyed by path, loaded on first use.
    mutable std::unordered_map<std::string, Tensor<float>> cache;

    const Tensor<float>& image(const std::string& path) const;
};

// Stable 64-bit FNV-1a; the validation split must not depend on the platform's
// std::hash.
std::uint64_t fnv1a(const std::string& s);

// Loads a manifest and assigns each record to train or validation by hashing
// its clean path: hash % 10 == 0 goes to validation. If that leaves the
// training side empty, everything becomes training data.
Dataset load_dataset(const std::string& manifest_path);

// Draws `batch` training records (with replacement) and applies the shared
// crop/flip/rotation augmentation; with augment_enabled=false a deterministic
// center crop is taken and no random draws are consumed beyond the record
// picks. Every image must be at least `patch` pixels on each side.
Batch<float> sample_batch(const Dataset& ds, Rng& rng, int batch, int patch,
                          bool augment_enabled = true);

// Like sample_batch but restricted to records carrying word boxes, using the
// box-preserving random crop. Throws if no training record has words.
FinetuneBatch<float> sample_finetune_batch(const Dataset& ds, Rng& rng, int batch, int patch);

}  // namespace docdpm

#pragma once

#include <string>
#include <vector>

#include "docdpm/ocr.hpp"

namespace docdpm {

struct ManifestRecord {
    std::string degraded_path;
    std::string clean_path;
    std::vector<WordBox> words;  // empty when the pair carries no transcriptions
};

// Reads a JSONL manifest: one object per line with "degraded" and "clean"
// paths plus an optional "words" array of {"text", "bbox": [x, y, w, h]}.
// Relative paths resolve against the manifest's directory. Every referenced
// file must exist, texts must be nonempty, and boxes must lie inside the
// clean image; violations raise std::runtime_error naming the line.
std::vector<ManifestRecord> load_manifest(const std::string& path);

// Writes records back out in the same JSONL layout, one record per line.
void save_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

}  // namespace docdpm

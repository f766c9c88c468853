#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "docdpm/ocr.hpp"
#include "docdpm/rng.hpp"
#include "docdpm/tensor.hpp"

namespace docdpm {

// --- text rendering -----------------------------------------------------------

struct RenderResult {
    Tensor<float> image;          // (1,1,H,W), white +1 / black -1
    std::vector<WordBox> words;   // tight ink bounding boxes, reading order
};

// Draws black-on-white lines with the bundled 5x7 bitmap font at an integer
// scale. Every whitespace-separated token becomes one WordBox whose bounds
// hug the token's ink exactly.
RenderResult render_text_image(const std::vector<std::string>& lines, int width, int height,
                               int scale = 2);

namespace detail {
// 7 rows of 5 columns, '#' = ink. Throws on characters without a glyph.
const std::array<const char*, 7>& glyph_rows(char c);
}  // namespace detail

// --- degradation --------------------------------------------------------------

struct DegradeSpec {
    enum class Kind { gaussian_blur, motion_blur, binarization_noise };
    Kind kind = Kind::gaussian_blur;

    double blur_sigma = 1.5;   // gaussian_blur; kernel size derived as 2*ceil(3*sigma)+1
    int kernel_size = 0;       // optional explicit odd size (0 = derive)

    double motion_length = 7.0;     // motion_blur, in pixels along the line
    double motion_angle_deg = 0.0;  // counterclockwise from the +x axis

    double stain_strength = 0.35;   // binarization_noise: low-frequency field amplitude
    int stain_cell = 16;            // coarse grid spacing of the stain field
    double bleed_amplitude = 0.25;  // mirrored-text ghost strength
    double noise_sigma = 0.03;      // white pixel noise

    std::uint64_t seed = 0;
};

void validate_degrade_spec(const DegradeSpec& spec);

// Deterministic in (clean, spec): the same spec and seed reproduce the exact
// same bytes. Output stays in [-1, 1].
Tensor<float> degrade(const Tensor<float>& clean, const DegradeSpec& spec);

// --- patch grid ----------------------------------------------------------------

struct PatchRecord {
    Tensor<float> patch;  // (1,1,size,size)
    int y = 0, x = 0;     // origin in the source image
    bool padded = false;  // set when the source was smaller than the patch
    int valid_h = 0, valid_w = 0;  // meaningful region when padded
};

// Regular grid with stride (size - overlap); the last row/column is shifted
// inward so every pixel is covered. An image smaller than `size` yields one
// white-padded patch flagged `padded`.
std::vector<PatchRecord> extract_patches(const Tensor<float>& image, int size, int overlap);

// Uniform-average reassembly; throws if any pixel is uncovered.
Tensor<float> stitch_patches(const std::vector<PatchRecord>& patches, int height, int width);

// --- paired augmentation --------------------------------------------------------

struct PairSample {
    Tensor<float> gt;        // (1,1,H,W)
    Tensor<float> degraded;  // same shape
};

// One shared random crop to (crop x crop), horizontal flip with p=1/2, and a
// right-angle rotation, applied identically to both members. Draw order:
// crop y, crop x, flip, rotation.
PairSample augment(const PairSample& sample, Rng& rng, int crop);

struct LabeledSample {
    Tensor<float> gt;
    Tensor<float> degraded;
    std::vector<WordBox> words;
};

// Shared random crop only (geometry that would invalidate reading order is
// skipped); boxes are shifted into crop coordinates and words not fully
// inside the crop are dropped.
LabeledSample crop_labeled(const LabeledSample& sample, Rng& rng, int crop);

}  // namespace docdpm

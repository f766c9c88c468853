#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "docdpm/manifest.hpp"
#include "docdpm/tensor.hpp"

namespace docdpm {

// Peak signal-to-noise ratio in dB over the given peak value. Identical
// images report a 100 dB cap so corpus means stay finite.
double psnr(const Tensor<float>& x, const Tensor<float>& y, double peak);

// Mean local structural similarity with a Gaussian window (default 11x11,
// sigma 1.5) and the standard stabilizing constants C1=(0.01 L)^2 and
// C2=(0.03 L)^2 on dynamic range L. Only positions where the full window
// fits contribute (valid-region mean).
double ssim(const Tensor<float>& x, const Tensor<float>& y, double dynamic_range,
            int window = 11, double sigma = 1.5);

// Thresholds to the binary document domain: pixel >= threshold becomes
// background (+1), anything below becomes text (-1). Idempotent.
Tensor<float> binarize(const Tensor<float>& x, float threshold);

// Pixel F-measure in percent with text (negative values) as the positive
// class; 0 when no text pixel is predicted correctly.
double f_measure(const Tensor<float>& pred, const Tensor<float>& gt);

// F-measure with standard precision but recall measured against an
// iteratively thinned skeleton of the ground-truth text.
double pseudo_f_measure(const Tensor<float>& pred, const Tensor<float>& gt);

// One-pixel-wide skeleton of the text mask via two-subiteration thinning;
// the result is a subset of the input text pixels.
Tensor<float> thin_text(const Tensor<float>& binary);

enum class EvalMode { deblur, binarize };

// Reads a word region from the full restored image and returns its predicted
// transcription.
using Recognizer = std::function<std::string(const Tensor<float>& image, const WordBox& box)>;

struct ImageEval {
    std::string name;
    double psnr = 0.0;
    double ssim = 0.0;
    std::optional<double> f_measure;
    std::optional<double> pseudo_f_measure;
    std::optional<double> cer;
};

struct EvalReport {
    EvalMode mode = EvalMode::deblur;
    double psnr = 0.0;  // aggregates are plain means over per-image values
    double ssim = 0.0;
    std::optional<double> f_measure;
    std::optional<double> pseudo_f_measure;
    std::optional<double> cer;
    std::vector<ImageEval> images;

    // One aggregate block followed by one line per image.
    std::string to_text() const;
};

// Scores restored images against the manifest's clean references. Binarize
// mode thresholds both sides at the middle of the [-1,1] range before
// scoring and adds the binarization measures. Character error rates are
// reported when a recognizer is supplied and records carry word boxes.
EvalReport evaluate(const std::vector<ManifestRecord>& records,
                    const std::vector<Tensor<float>>& restored, EvalMode mode,
                    const Recognizer& recognize = nullptr);

}  // namespace docdpm

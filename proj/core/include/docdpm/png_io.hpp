#pragma once

#include <string>
#include <utility>

#include "docdpm/tensor.hpp"

namespace docdpm {

// Reads any PNG (gray, palette, or RGB, 8- or 16-bit) as a single-channel
// (1,1,H,W) tensor in [-1, 1]: byte 0 -> -1, byte 255 -> +1. Color inputs are
// converted with the usual Rec. 601 luma weights.
Tensor<float> read_png_gray(const std::string& path);

// Writes a (1,1,H,W) tensor as an 8-bit grayscale PNG, mapping [-1, 1] back to
// [0, 255] with round-to-nearest. Values outside the range are clipped. The
// file appears atomically (temp file + rename).
void write_png_gray(const std::string& path, const Tensor<float>& image);

// Reads just the IHDR dimensions without decoding pixel data.
// Returns {width, height}.
std::pair<int, int> read_png_size(const std::string& path);

}  // namespace docdpm

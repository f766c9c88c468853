#include "docdpm/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "docdpm/freq.hpp"

namespace docdpm {

namespace {

void check_gray_image(const Tensor<float>& img, const char* where) {
    if (img.ndim() != 4 || img.dim(0) != 1 || img.dim(1) != 1)
        throw std::invalid_argument(std::string(where) + ": expected a (1,1,H,W) image");
}

constexpr int kGlyphW = 5;
constexpr int kGlyphH = 7;

}  // namespace

RenderResult render_text_image(const std::vector<std::string>& lines, int width, int height,
                               int scale) {
    if (width < 1 || height < 1 || scale < 1)
        throw std::invalid_argument("render: size and scale must be positive");
    const int margin = 2 * scale;
    const int advance = (kGlyphW + 1) * scale;
    const int line_advance = (kGlyphH + 3) * scale;

    RenderResult res;
    res.image = Tensor<float>({1, 1, height, width});
    res.image.fill(1.0f);

    int pen_y = margin;
    for (const auto& line : lines) {
        if (pen_y + kGlyphH * scale > height - margin)
            throw std::invalid_argument("render: lines overflow the page height");
        int pen_x = margin;
        std::string word;
        int min_x = 0, min_y = 0, max_x = -1, max_y = -1;
        auto flush_word = [&]() {
            if (!word.empty() && max_x >= 0)
                res.words.push_back(
                    {word, min_x, min_y, max_x - min_x + 1, max_y - min_y + 1});
            word.clear();
            max_x = -1;
        };
        for (char c : line) {
            if (c == ' ') {
                flush_word();
                pen_x += advance;
                continue;
            }
            if (pen_x + kGlyphW * scale > width - margin)
                throw std::invalid_argument("render: line overflows the page width");
            const auto& rows = detail::glyph_rows(c);
            bool first_ink_of_word = word.empty();
            for (int gy = 0; gy < kGlyphH; ++gy)
                for (int gx = 0; gx < kGlyphW; ++gx) {
                    if (rows[static_cast<std::size_t>(gy)][gx] != '#') continue;
                    for (int sy = 0; sy < scale; ++sy)
                        for (int sx = 0; sx < scale; ++sx) {
                            int py = pen_y + gy * scale + sy;
                            int px = pen_x + gx * scale + sx;
                            res.image.at4(0, 0, py, px) = -1.0f;
                            if (first_ink_of_word && max_x < 0) {
                                min_x = max_x = px;
                                min_y = max_y = py;
                            } else {
                                min_x = std::min(min_x, px);
                                max_x = std::max(max_x, px);
                                min_y = std::min(min_y, py);
                                max_y = std::max(max_y, py);
                            }
                        }
                }
            word.push_back(c);
            pen_x += advance;
        }
        flush_word();
        pen_y += line_advance;
    }
    return res;
}

// --- degradation --------------------------------------------------------------

void validate_degrade_spec(const DegradeSpec& spec) {
    switch (spec.kind) {
        case DegradeSpec::Kind::gaussian_blur:
            if (spec.blur_sigma < 0.0 || spec.blur_sigma > 10.0)
                throw std::invalid_argument("degrade: blur_sigma must lie in [0, 10]");
            if (spec.kernel_size != 0 && (spec.kernel_size < 1 || spec.kernel_size % 2 == 0))
                throw std::invalid_argument("degrade: kernel_size must be odd and positive");
            break;
        case DegradeSpec::Kind::motion_blur:
            if (spec.motion_length < 1.0 || spec.motion_length > 51.0)
                throw std::invalid_argument("degrade: motion_length must lie in [1, 51]");
            break;
        case DegradeSpec::Kind::binarization_noise:
            if (spec.stain_strength < 0.0 || spec.stain_strength > 1.0)
                throw std::invalid_argument("degrade: stain_strength must lie in [0, 1]");
            if (spec.stain_cell < 2)
                throw std::invalid_argument("degrade: stain_cell must be at least 2");
            if (spec.bleed_amplitude < 0.0 || spec.bleed_amplitude > 1.0)
                throw std::invalid_argument("degrade: bleed_amplitude must lie in [0, 1]");
            if (spec.noise_sigma < 0.0 || spec.noise_sigma > 0.5)
                throw std::invalid_argument("degrade: noise_sigma must lie in [0, 0.5]");
            break;
    }
}

namespace {

Tensor<double> gaussian_kernel(double sigma, int explicit_size) {
    int k = explicit_size != 0
                ? explicit_size
                : 2 * static_cast<int>(std::ceil(3.0 * std::max(sigma, 1e-9))) + 1;
    Tensor<double> ker({k, k});
    if (sigma <= 0.0) {
        ker[static_cast<std::int64_t>(k / 2) * k + k / 2] = 1.0;
        return ker;
    }
    double sum = 0.0;
    for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) {
            double dy = y - k / 2, dx = x - k / 2;
            double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            ker[static_cast<std::int64_t>(y) * k + x] = v;
            sum += v;
        }
    for (std::int64_t i = 0; i < ker.numel(); ++i) ker[i] /= sum;
    return ker;
}

Tensor<double> motion_kernel(double length, double angle_deg) {
    int half = static_cast<int>(std::ceil((length - 1.0) / 2.0));
    int k = 2 * half + 1;
    Tensor<double> ker({k, k});
    double rad = angle_deg * M_PI / 180.0;
    double cx = std::cos(rad), cy = std::sin(rad);
    int npoints = std::max(1, static_cast<int>(std::ceil(length * 4.0)));
    for (int i = 0; i < npoints; ++i) {
        double t = npoints == 1
                       ? 0.0
                       : (static_cast<double>(i) / (npoints - 1) - 0.5) * (length - 1.0);
        double px = half + t * cx;
        double py = half + t * cy;
        int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
        double fx = px - x0, fy = py - y0;
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                int xx = x0 + dx, yy = y0 + dy;
                if (xx < 0 || xx >= k || yy < 0 || yy >= k) continue;
                double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
                ker[static_cast<std::int64_t>(yy) * k + xx] += w;
            }
    }
    double sum = 0.0;
    for (std::int64_t i = 0; i < ker.numel(); ++i) sum += ker[i];
    for (std::int64_t i = 0; i < ker.numel(); ++i) ker[i] /= sum;
    return ker;
}

}  // namespace

Tensor<float> degrade(const Tensor<float>& clean, const DegradeSpec& spec) {
    check_gray_image(clean, "degrade");
    validate_degrade_spec(spec);
    const int h = clean.dim(2), w = clean.dim(3);

    switch (spec.kind) {
        case DegradeSpec::Kind::gaussian_blur:
            return filter2d_reflect(clean, gaussian_kernel(spec.blur_sigma, spec.kernel_size));
        case DegradeSpec::Kind::motion_blur:
            return filter2d_reflect(clean,
                                    motion_kernel(spec.motion_length, spec.motion_angle_deg));
        case DegradeSpec::Kind::binarization_noise:
            break;
    }

    Rng rng(spec.seed);
    Tensor<float> out = clean;

    // Low-frequency stain: a coarse Gaussian grid, bilinearly interpolated.
    int gh = (h + spec.stain_cell - 1) / spec.stain_cell + 1;
    int gw = (w + spec.stain_cell - 1) / spec.stain_cell + 1;
    Tensor<double> grid({gh, gw});
    for (std::int64_t i = 0; i < grid.numel(); ++i)
        grid[i] = rng.normal() * spec.stain_strength;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double fy = static_cast<double>(y) / spec.stain_cell;
            double fx = static_cast<double>(x) / spec.stain_cell;
            int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
            double ay = fy - y0, ax = fx - x0;
            double v = grid[static_cast<std::int64_t>(y0) * gw + x0] * (1 - ay) * (1 - ax) +
                       grid[static_cast<std::int64_t>(y0 + 1) * gw + x0] * ay * (1 - ax) +
                       grid[static_cast<std::int64_t>(y0) * gw + x0 + 1] * (1 - ay) * ax +
                       grid[static_cast<std::int64_t>(y0 + 1) * gw + x0 + 1] * ay * ax;
            out.at4(0, 0, y, x) += static_cast<float>(v);
        }

    // Bleed-through: the horizontally mirrored page's ink shows as a ghost.
    // A fully inked pixel on the verso darkens the recto by bleed_amplitude.
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float mirrored = clean.at4(0, 0, y, w - 1 - x);
            out.at4(0, 0, y, x) -=
                static_cast<float>(spec.bleed_amplitude) * (1.0f - mirrored) * 0.5f;
        }

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at4(0, 0, y, x) += static_cast<float>(rng.normal() * spec.noise_sigma);

    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(out[i], -1.0f, 1.0f);
    return out;
}

// --- patch grid ----------------------------------------------------------------

namespace {

std::vector<int> grid_origins(int extent, int size, int stride) {
    std::vector<int> origins;
    for (int o = 0;; o += stride) {
        if (o + size >= extent) {
            origins.push_back(std::max(0, extent - size));
            break;
        }
        origins.push_back(o);
    }
    return origins;
}

}  // namespace

std::vector<PatchRecord> extract_patches(const Tensor<float>& image, int size, int overlap) {
    check_gray_image(image, "extract_patches");
    if (size < 1 || overlap < 0 || overlap >= size)
        throw std::invalid_argument("extract_patches: need size > overlap >= 0");
    const int h = image.dim(2), w = image.dim(3);
    const int stride = size - overlap;

    std::vector<PatchRecord> out;
    for (int oy : grid_origins(h, size, stride)) {
        for (int ox : grid_origins(w, size, stride)) {
            PatchRecord rec;
            rec.y = oy;
            rec.x = ox;
            rec.valid_h = std::min(size, h - oy);
            rec.valid_w = std::min(size, w - ox);
            rec.padded = rec.valid_h < size || rec.valid_w < size;
            rec.patch = Tensor<float>({1, 1, size, size});
            rec.patch.fill(1.0f);
            for (int y = 0; y < rec.valid_h; ++y)
                for (int x = 0; x < rec.valid_w; ++x)
                    rec.patch.at4(0, 0, y, x) = image.at4(0, 0, oy + y, ox + x);
            out.push_back(std::move(rec));
        }
    }
    return out;
}

Tensor<float> stitch_patches(const std::vector<PatchRecord>& patches, int height, int width) {
    if (height < 1 || width < 1)
        throw std::invalid_argument("stitch_patches: bad target size");
    Tensor<double> sum({height, width});
    Tensor<double> count({height, width});
    for (const auto& rec : patches) {
        if (rec.patch.ndim() != 4)
            throw std::invalid_argument("stitch_patches: malformed patch");
        int vh = rec.valid_h > 0 ? rec.valid_h : rec.patch.dim(2);
        int vw = rec.valid_w > 0 ? rec.valid_w : rec.patch.dim(3);
        if (rec.y < 0 || rec.x < 0 || rec.y + vh > height || rec.x + vw > width)
            throw std::invalid_argument("stitch_patches: patch outside the target image");
        for (int y = 0; y < vh; ++y)
            for (int x = 0; x < vw; ++x) {
                sum[static_cast<std::int64_t>(rec.y + y) * width + rec.x + x] +=
                    static_cast<double>(rec.patch.at4(0, 0, y, x));
                count[static_cast<std::int64_t>(rec.y + y) * width + rec.x + x] += 1.0;
            }
    }
    Tensor<float> out({1, 1, height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            double c = count[static_cast<std::int64_t>(y) * width + x];
            if (c == 0.0) throw std::runtime_error("stitch_patches: uncovered pixel");
            out.at4(0, 0, y, x) =
                static_cast<float>(sum[static_cast<std::int64_t>(y) * width + x] / c);
        }
    return out;
}

// --- paired augmentation --------------------------------------------------------

namespace {

Tensor<float> crop_image(const Tensor<float>& img, int y0, int x0, int c) {
    Tensor<float> out({1, 1, c, c});
    for (int y = 0; y < c; ++y)
        for (int x = 0; x < c; ++x) out.at4(0, 0, y, x) = img.at4(0, 0, y0 + y, x0 + x);
    return out;
}

Tensor<float> hflip(const Tensor<float>& img) {
    int h = img.dim(2), w = img.dim(3);
    Tensor<float> out(img.shape());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at4(0, 0, y, x) = img.at4(0, 0, y, w - 1 - x);
    return out;
}

// Quarter-turn counterclockwise on a square image.
Tensor<float> rot90(const Tensor<float>& img) {
    int n = img.dim(2);
    Tensor<float> out(img.shape());
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) out.at4(0, 0, y, x) = img.at4(0, 0, x, n - 1 - y);
    return out;
}

}  // namespace

PairSample augment(const PairSample& sample, Rng& rng, int crop) {
    check_same_shape(sample.gt, sample.degraded, "augment");
    check_gray_image(sample.gt, "augment");
    const int h = sample.gt.dim(2), w = sample.gt.dim(3);
    if (crop < 1 || crop > h || crop > w)
        throw std::invalid_argument("augment: crop must fit inside the image");

    int y0 = static_cast<int>(rng.uniform_int(0, h - crop));
    int x0 = static_cast<int>(rng.uniform_int(0, w - crop));
    bool flip = rng.bernoulli(0.5);
    int rot = static_cast<int>(rng.uniform_int(0, 3));

    PairSample out;
    out.gt = crop_image(sample.gt, y0, x0, crop);
    out.degraded = crop_image(sample.degraded, y0, x0, crop);
    if (flip) {
        out.gt = hflip(out.gt);
        out.degraded = hflip(out.degraded);
    }
    for (int i = 0; i < rot; ++i) {
        out.gt = rot90(out.gt);
        out.degraded = rot90(out.degraded);
    }
    return out;
}

LabeledSample crop_labeled(const LabeledSample& sample, Rng& rng, int crop) {
    check_same_shape(sample.gt, sample.degraded, "crop_labeled");
    check_gray_image(sample.gt, "crop_labeled");
    const int h = sample.gt.dim(2), w = sample.gt.dim(3);
    if (crop < 1 || crop > h || crop > w)
        throw std::invalid_argument("crop_labeled: crop must fit inside the image");

    int y0 = static_cast<int>(rng.uniform_int(0, h - crop));
    int x0 = static_cast<int>(rng.uniform_int(0, w - crop));

    LabeledSample out;
    out.gt = crop_image(sample.gt, y0, x0, crop);
    out.degraded = crop_image(sample.degraded, y0, x0, crop);
    for (const auto& b : sample.words) {
        int nx = b.x - x0, ny = b.y - y0;
        if (nx >= 0 && ny >= 0 && nx + b.w <= crop && ny + b.h <= crop)
            out.words.push_back({b.text, nx, ny, b.w, b.h});
    }
    return out;
}

}  // namespace docdpm

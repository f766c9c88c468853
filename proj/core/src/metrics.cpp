#include "docdpm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include "docdpm/ocr.hpp"
#include "docdpm/png_io.hpp"

namespace docdpm {

double psnr(const Tensor<float>& x, const Tensor<float>& y, double peak) {
    check_same_shape(x, y, "psnr");
    if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be positive");
    double mse = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(x.numel());
    if (mse == 0.0) return 100.0;
    return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

double ssim(const Tensor<float>& x, const Tensor<float>& y, double dynamic_range, int window,
            double sigma) {
    check_same_shape(x, y, "ssim");
    if (x.ndim() != 4) throw std::invalid_argument("ssim: expected NCHW input");
    if (window % 2 == 0 || window < 1) throw std::invalid_argument("ssim: window must be odd");
    const int h = x.dim(2), w = x.dim(3);
    if (window > h || window > w)
        throw std::invalid_argument("ssim: window larger than the image");

    const int r = window / 2;
    std::vector<double> weight(static_cast<std::size_t>(window) * window);
    double wsum = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            weight[static_cast<std::size_t>((dy + r) * window + dx + r)] = v;
            wsum += v;
        }
    for (auto& v : weight) v /= wsum;

    const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
    const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);

    double total = 0.0;
    std::int64_t count = 0;
    for (int n = 0; n < x.dim(0); ++n)
        for (int c = 0; c < x.dim(1); ++c)
            for (int cy = r; cy < h - r; ++cy)
                for (int cx = r; cx < w - r; ++cx) {
                    double mx = 0.0, my = 0.0, mxx = 0.0, myy = 0.0, mxy = 0.0;
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            double wv =
                                weight[static_cast<std::size_t>((dy + r) * window + dx + r)];
                            double xv = x.at4(n, c, cy + dy, cx + dx);
                            double yv = y.at4(n, c, cy + dy, cx + dx);
                            mx += wv * xv;
                            my += wv * yv;
                            mxx += wv * xv * xv;
                            myy += wv * yv * yv;
                            mxy += wv * xv * yv;
                        }
                    double vx = mxx - mx * mx;
                    double vy = myy - my * my;
                    double cov = mxy - mx * my;
                    total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) /
                             ((mx * mx + my * my + c1) * (vx + vy + c2));
                    ++count;
                }
    return total / static_cast<double>(count);
}

Tensor<float> binarize(const Tensor<float>& x, float threshold) {
    Tensor<float> out(x.shape());
    for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] >= threshold ? 1.0f : -1.0f;
    return out;
}

namespace {

bool is_text(float v) { return v < 0.0f; }

struct Counts {
    std::int64_t tp = 0, fp = 0, fn = 0;
};

Counts count_pixels(const Tensor<float>& pred, const Tensor<float>& gt) {
    Counts c;
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        bool p = is_text(pred[i]), g = is_text(gt[i]);
        if (p && g) ++c.tp;
        else if (p && !g) ++c.fp;
        else if (!p && g) ++c.fn;
    }
    return c;
}

}  // namespace

double f_measure(const Tensor<float>& pred, const Tensor<float>& gt) {
    check_same_shape(pred, gt, "f_measure");
    Counts c = count_pixels(pred, gt);
    if (c.tp == 0) return 0.0;
    double p = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    double r = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    return 100.0 * 2.0 * p * r / (p + r);
}

Tensor<float> thin_text(const Tensor<float>& binary) {
    if (binary.ndim() != 4) throw std::invalid_argument("thin_text: expected NCHW input");
    const int h = binary.dim(2), w = binary.dim(3);
    // 1 = text pixel under thinning; work on a copy with a zero border.
    std::vector<std::uint8_t> m(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            m[static_cast<std::size_t>(y) * w + x] = is_text(binary.at4(0, 0, y, x)) ? 1 : 0;

    auto at = [&](int y, int x) -> std::uint8_t {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0;
        return m[static_cast<std::size_t>(y) * w + x];
    };

    bool changed = true;
    std::vector<std::pair<int, int>> kill;
    while (changed) {
        changed = false;
        for (int phase = 0; phase < 2; ++phase) {
            kill.clear();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (!at(y, x)) continue;
                    // Neighbors clockwise from north: p2..p9.
                    std::uint8_t p[8] = {at(y - 1, x),     at(y - 1, x + 1), at(y, x + 1),
                                         at(y + 1, x + 1), at(y + 1, x),     at(y + 1, x - 1),
                                         at(y, x - 1),     at(y - 1, x - 1)};
                    int b = 0;
                    for (int i = 0; i < 8; ++i) b += p[i];
                    if (b < 2 || b > 6) continue;
                    int a = 0;
                    for (int i = 0; i < 8; ++i)
                        if (!p[i] && p[(i + 1) % 8]) ++a;
                    if (a != 1) continue;
                    if (phase == 0) {
                        if (p[0] && p[2] && p[4]) continue;  // p2*p4*p6
                        if (p[2] && p[4] && p[6]) continue;  // p4*p6*p8
                    } else {
                        if (p[0] && p[2] && p[6]) continue;  // p2*p4*p8
                        if (p[0] && p[4] && p[6]) continue;  // p2*p6*p8
                    }
                    kill.emplace_back(y, x);
                }
            for (auto [y, x] : kill) m[static_cast<std::size_t>(y) * w + x] = 0;
            changed = changed || !kill.empty();
        }
    }

    Tensor<float> out(binary.shape());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at4(0, 0, y, x) = m[static_cast<std::size_t>(y) * w + x] ? -1.0f : 1.0f;
    return out;
}

double pseudo_f_measure(const Tensor<float>& pred, const Tensor<float>& gt) {
    check_same_shape(pred, gt, "pseudo_f_measure");
    Counts c = count_pixels(pred, gt);
    if (c.tp == 0) return 0.0;
    double precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);

    Tensor<float> skel = thin_text(gt);
    std::int64_t sk_total = 0, sk_hit = 0;
    for (std::int64_t i = 0; i < skel.numel(); ++i) {
        if (!is_text(skel[i])) continue;
        ++sk_total;
        if (is_text(pred[i])) ++sk_hit;
    }
    if (sk_total == 0) return 0.0;
    double recall = static_cast<double>(sk_hit) / static_cast<double>(sk_total);
    if (precision + recall == 0.0) return 0.0;
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

namespace {

std::string image_name(const ManifestRecord& rec) {
    return std::filesystem::path(rec.degraded_path).filename().string();
}

}  // namespace

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(4);
    os << "images: " << images.size() << "\n";
    os << "psnr_db: " << psnr << "\n";
    os << "ssim: " << ssim << "\n";
    if (f_measure) os << "f_measure: " << *f_measure << "\n";
    if (pseudo_f_measure) os << "pseudo_f_measure: " << *pseudo_f_measure << "\n";
    if (cer) os << "cer: " << *cer << "\n";
    for (const auto& im : images) {
        os << im.name << "  psnr=" << im.psnr << "  ssim=" << im.ssim;
        if (im.f_measure) os << "  f=" << *im.f_measure;
        if (im.pseudo_f_measure) os << "  f_ps=" << *im.pseudo_f_measure;
        if (im.cer) os << "  cer=" << *im.cer;
        os << "\n";
    }
    return os.str();
}

EvalReport evaluate(const std::vector<ManifestRecord>& records,
                    const std::vector<Tensor<float>>& restored, EvalMode mode,
                    const Recognizer& recognize) {
    if (records.size() != restored.size())
        throw std::invalid_argument("evaluate: record and image counts differ");
    if (records.empty()) throw std::invalid_argument("evaluate: nothing to score");

    EvalReport rep;
    rep.mode = mode;
    double cer_sum = 0.0;
    int cer_n = 0;
    double f_sum = 0.0, fps_sum = 0.0;

    for (std::size_t i = 0; i < records.size(); ++i) {
        Tensor<float> gt = read_png_gray(records[i].clean_path);
        Tensor<float> out = restored[i];
        check_same_shape(out, gt, "evaluate");

        ImageEval im;
        im.name = image_name(records[i]);
        if (mode == EvalMode::binarize) {
            out = binarize(out, 0.0f);
            gt = binarize(gt, 0.0f);
            im.f_measure = f_measure(out, gt);
            im.pseudo_f_measure = pseudo_f_measure(out, gt);
            f_sum += *im.f_measure;
            fps_sum += *im.pseudo_f_measure;
        }
        im.psnr = psnr(out, gt, 2.0);
        im.ssim = ssim(out, gt, 2.0);

        if (recognize && !records[i].words.empty()) {
            std::vector<std::string> truth, guess;
            for (const auto& b : records[i].words) {
                truth.push_back(b.text);
                guess.push_back(recognize(restored[i], b));
            }
            im.cer = cer(guess, truth);
            cer_sum += *im.cer;
            ++cer_n;
        }

        rep.psnr += im.psnr;
        rep.ssim += im.ssim;
        rep.images.push_back(std::move(im));
    }

    double n = static_cast<double>(records.size());
    rep.psnr /= n;
    rep.ssim /= n;
    if (mode == EvalMode::binarize) {
        rep.f_measure = f_sum / n;
        rep.pseudo_f_measure = fps_sum / n;
    }
    if (cer_n > 0) rep.cer = cer_sum / cer_n;
    return rep;
}

}  // namespace docdpm

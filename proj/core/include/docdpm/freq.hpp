#pragma once

#include "docdpm/image_ops.hpp"
#include "docdpm/tensor.hpp"

namespace docdpm {

// Complementary decomposition kernels: `low` is a normalized truncated
// Gaussian, `high` is the matching delta-minus-low so that low + high = delta
// and any image splits exactly into lowpass(x) + highpass(x).
struct FilterPair {
    Tensor<double> low;
    Tensor<double> high;
    int radius = 0;
};

FilterPair make_filter_pair(int size = 5, double sigma = 1.0);

// Correlate every channel with a (k,k) kernel, mirrored borders, same-size out.
template <typename T>
Tensor<T> filter2d_reflect(const Tensor<T>& x, const Tensor<double>& k) {
    if (x.ndim() != 4) throw std::invalid_argument("filter2d_reflect: expected NCHW input");
    if (k.ndim() != 2 || k.dim(0) != k.dim(1) || k.dim(0) % 2 == 0)
        throw std::invalid_argument("filter2d_reflect: kernel must be odd square");
    int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    int r = k.dim(0) / 2;
    Tensor<T> out(x.shape());
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    double acc = 0.0;
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx)
                            acc += k.at2(dy + r, dx + r) *
                                   static_cast<double>(x.at4(ni, ci, reflect101(y + dy, h),
                                                             reflect101(xx + dx, w)));
                    out.at4(ni, ci, y, xx) = static_cast<T>(acc);
                }
    return out;
}

// Same filter as a graph op: a fixed depthwise convolution.
template <typename T>
Var<T> filter2d_reflect(const Var<T>& x, const Tensor<double>& k) {
    int c = x->value.dim(1);
    int ks = k.dim(0);
    Tensor<T> w({c, 1, ks, ks});
    for (int ci = 0; ci < c; ++ci)
        for (std::int64_t i = 0; i < k.numel(); ++i)
            w[static_cast<std::int64_t>(ci) * k.numel() + i] = static_cast<T>(k[i]);
    return conv2d(x, constant(std::move(w)), Var<T>{}, 1, ks / 2, PadMode::reflect101, c);
}

}  // namespace docdpm

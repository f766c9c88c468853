#pragma once

#include <cmath>
#include <vector>

#include "docdpm/autograd.hpp"

namespace docdpm {

enum class PadMode { zero, reflect101 };

// Mirror an index into [0, n) without repeating the border sample
// (…, 2, 1, | 0, 1, …, n-1, | n-2, n-3, …).
inline int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

namespace detail {

// Per-axis source index for every (output, kernel-tap) pair; -1 means the tap
// reads a zero (out of range under zero padding).
inline std::vector<int> conv_index_lut(int out_n, int k, int stride, int pad, int in_n,
                                       PadMode mode) {
    std::vector<int> lut(static_cast<std::size_t>(out_n) * k);
    for (int o = 0; o < out_n; ++o)
        for (int u = 0; u < k; ++u) {
            int i = o * stride - pad + u;
            if (i < 0 || i >= in_n)
                i = (mode == PadMode::reflect101) ? reflect101(i, in_n) : -1;
            lut[static_cast<std::size_t>(o) * k + u] = i;
        }
    return lut;
}

template <typename T>
void im2col(const Tensor<T>& x, int n, int g, int cg, int kh, int kw, int ho, int wo,
            const std::vector<int>& ih_lut, const std::vector<int>& iw_lut, T* col) {
    int w = x.dim(3);
    std::int64_t how = static_cast<std::int64_t>(ho) * wo;
    for (int c = 0; c < cg; ++c) {
        const T* xc = x.data() + x.offset4(n, g * cg + c, 0, 0);
        for (int u = 0; u < kh; ++u)
            for (int v = 0; v < kw; ++v) {
                T* row = col + ((static_cast<std::int64_t>(c) * kh + u) * kw + v) * how;
                for (int oh = 0; oh < ho; ++oh) {
                    int ih = ih_lut[static_cast<std::size_t>(oh) * kh + u];
                    for (int ow = 0; ow < wo; ++ow) {
                        int iw = iw_lut[static_cast<std::size_t>(ow) * kw + v];
                        row[static_cast<std::int64_t>(oh) * wo + ow] =
                            (ih < 0 || iw < 0) ? T(0) : xc[static_cast<std::int64_t>(ih) * w + iw];
                    }
                }
            }
    }
}

}  // namespace detail

// x:(N,C,H,W) w:(O,C/groups,kh,kw) b:(O) or null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1, int pad = 0,
              PadMode mode = PadMode::zero, int groups = 1) {
    if (x->value.ndim() != 4 || w->value.ndim() != 4)
        throw std::invalid_argument("conv2d: expected 4-d input and weight");
    int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), wd = x->value.dim(3);
    int o = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
    if (groups < 1 || c % groups != 0 || o % groups != 0)
        throw std::invalid_argument("conv2d: channels not divisible by groups");
    int cg = c / groups, og = o / groups;
    if (w->value.dim(1) != cg) throw std::invalid_argument("conv2d: weight/input channel mismatch");
    if (b && b->value.numel() != o) throw std::invalid_argument("conv2d: bad bias size");
    if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad < kh || wd + 2 * pad < kw)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    if (mode == PadMode::reflect101 && pad >= h && h > 1)
        throw std::invalid_argument("conv2d: reflect padding wider than input");

    auto ih_lut = detail::conv_index_lut(ho, kh, stride, pad, h, mode);
    auto iw_lut = detail::conv_index_lut(wo, kw, stride, pad, wd, mode);
    std::int64_t how = static_cast<std::int64_t>(ho) * wo;
    std::int64_t krows = static_cast<std::int64_t>(cg) * kh * kw;

    Tensor<T> out({n, o, ho, wo});
    std::vector<T> col(static_cast<std::size_t>(krows * how));
    for (int ni = 0; ni < n; ++ni)
        for (int g = 0; g < groups; ++g) {
            detail::im2col(x->value, ni, g, cg, kh, kw, ho, wo, ih_lut, iw_lut, col.data());
            detail::CMapMat<T> wmat(w->value.data() + static_cast<std::int64_t>(g) * og * krows,
                                    og, krows);
            detail::MapMat<T> ob(out.data() + out.offset4(ni, g * og, 0, 0), og, how);
            ob.noalias() = wmat * detail::CMapMat<T>(col.data(), krows, how);
        }
    if (b)
        for (int ni = 0; ni < n; ++ni)
            for (int oc = 0; oc < o; ++oc) {
                T bv = b->value[oc];
                T* dst = out.data() + out.offset4(ni, oc, 0, 0);
                for (std::int64_t i = 0; i < how; ++i) dst[i] += bv;
            }

    std::vector<Var<T>> parents = b ? std::vector<Var<T>>{x, w, b} : std::vector<Var<T>>{x, w};
    return detail::make_op<T>(std::move(out), std::move(parents),
                              [x, w, b, n, groups, cg, og, kh, kw, ho, wo, wd, ih_lut, iw_lut,
                               krows, how](Node<T>& self) {
        std::vector<T> col(static_cast<std::size_t>(krows * how));
        std::vector<T> dcol(static_cast<std::size_t>(krows * how));
        if (x->requires_grad) x->ensure_grad();
        if (w->requires_grad) w->ensure_grad();
        for (int ni = 0; ni < n; ++ni)
            for (int g = 0; g < groups; ++g) {
                detail::CMapMat<T> dout(
                    self.grad.data() + self.grad.offset4(ni, g * og, 0, 0), og, how);
                if (w->requires_grad) {
                    detail::im2col(x->value, ni, g, cg, kh, kw, ho, wo, ih_lut, iw_lut,
                                   col.data());
                    detail::MapMat<T> dw(
                        w->grad.data() + static_cast<std::int64_t>(g) * og * krows, og, krows);
                    dw.noalias() += dout * detail::CMapMat<T>(col.data(), krows, how).transpose();
                }
                if (x->requires_grad) {
                    detail::CMapMat<T> wmat(
                        w->value.data() + static_cast<std::int64_t>(g) * og * krows, og, krows);
                    detail::MapMat<T>(dcol.data(), krows, how).noalias() = wmat.transpose() * dout;
                    // col2im: scatter-add (reflected taps can hit one source twice)
                    for (int c = 0; c < cg; ++c) {
                        T* xg = x->grad.data() + x->grad.offset4(ni, g * cg + c, 0, 0);
                        for (int u = 0; u < kh; ++u)
                            for (int v = 0; v < kw; ++v) {
                                const T* row =
                                    dcol.data() +
                                    ((static_cast<std::int64_t>(c) * kh + u) * kw + v) * how;
                                for (int oh = 0; oh < ho; ++oh) {
                                    int ih = ih_lut[static_cast<std::size_t>(oh) * kh + u];
                                    if (ih < 0) continue;
                                    for (int ow = 0; ow < wo; ++ow) {
                                        int iw = iw_lut[static_cast<std::size_t>(ow) * kw + v];
                                        if (iw < 0) continue;
                                        xg[static_cast<std::int64_t>(ih) * wd + iw] +=
                                            row[static_cast<std::int64_t>(oh) * wo + ow];
                                    }
                                }
                            }
                    }
                }
            }
        if (b && b->requires_grad) {
            b->ensure_grad();
            int o = og * groups;
            for (int ni = 0; ni < n; ++ni)
                for (int oc = 0; oc < o; ++oc) {
                    const T* src = self.grad.data() + self.grad.offset4(ni, oc, 0, 0);
                    T s = 0;
                    for (std::int64_t i = 0; i < how; ++i) s += src[i];
                    b->grad[oc] += s;
                }
        }
    });
}

// (N, C*r*r, H, W) -> (N, C, H*r, W*r); input channel c*r*r + dy*r + dx feeds
// output pixel (h*r+dy, w*r+dx) of channel c.
template <typename T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
    int n = x->value.dim(0), c_in = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (c_in % (r * r) != 0)
        throw std::invalid_argument("pixel_shuffle: channels not divisible by r^2");
    int c = c_in / (r * r);
    Tensor<T> out({n, c, h * r, w * r});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int dy = 0; dy < r; ++dy)
                for (int dx = 0; dx < r; ++dx) {
                    int src_c = ci * r * r + dy * r + dx;
                    for (int y = 0; y < h; ++y)
                        for (int xx = 0; xx < w; ++xx)
                            out.at4(ni, ci, y * r + dy, xx * r + dx) =
                                x->value.at4(ni, src_c, y, xx);
                }
    return detail::make_op<T>(std::move(out), {x}, [x, n, c, h, w, r](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int dy = 0; dy < r; ++dy)
                    for (int dx = 0; dx < r; ++dx) {
                        int src_c = ci * r * r + dy * r + dx;
                        for (int y = 0; y < h; ++y)
                            for (int xx = 0; xx < w; ++xx)
                                detail::accum(x, x->value.offset4(ni, src_c, y, xx),
                                              self.grad.at4(ni, ci, y * r + dy, xx * r + dx));
                    }
    });
}

// (N,C,H,W) -> (N,C): spatial mean.
template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
    int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor<T> out({n, c});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            const T* src = x->value.data() + x->value.offset4(ni, ci, 0, 0);
            T s = 0;
            for (std::int64_t i = 0; i < hw; ++i) s += src[i];
            out.at2(ni, ci) = s / static_cast<T>(hw);
        }
    return detail::make_op<T>(std::move(out), {x}, [x, n, c, hw](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                T g = self.grad.at2(ni, ci) / static_cast<T>(hw);
                std::int64_t base = x->value.offset4(ni, ci, 0, 0);
                for (std::int64_t i = 0; i < hw; ++i) detail::accum(x, base + i, g);
            }
    });
}

// x:(N,C,H,W) scaled per channel by s:(N,C).
template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& s) {
    int n = x->value.dim(0), c = x->value.dim(1);
    if (s->value.ndim() != 2 || s->value.dim(0) != n || s->value.dim(1) != c)
        throw std::invalid_argument("channel_scale: scale must be (N,C)");
    std::int64_t hw = x->value.numel() / (static_cast<std::int64_t>(n) * c);
    Tensor<T> out(x->value.shape());
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * hw;
            T sv = s->value.at2(ni, ci);
            for (std::int64_t i = 0; i < hw; ++i) out[base + i] = x->value[base + i] * sv;
        }
    return detail::make_op<T>(std::move(out), {x, s}, [x, s, n, c, hw](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * hw;
                T sv = s->value.at2(ni, ci);
                T ds = 0;
                for (std::int64_t i = 0; i < hw; ++i) {
                    detail::accum(x, base + i, self.grad[base + i] * sv);
                    ds += self.grad[base + i] * x->value[base + i];
                }
                detail::accum(s, static_cast<std::int64_t>(ni) * c + ci, ds);
            }
    });
}

// x:(N,C,H,W) shifted per channel by t:(N,C).
template <typename T>
Var<T> channel_bias(const Var<T>& x, const Var<T>& t) {
    int n = x->value.dim(0), c = x->value.dim(1);
    if (t->value.ndim() != 2 || t->value.dim(0) != n || t->value.dim(1) != c)
        throw std::invalid_argument("channel_bias: bias must be (N,C)");
    std::int64_t hw = x->value.numel() / (static_cast<std::int64_t>(n) * c);
    Tensor<T> out(x->value.shape());
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * hw;
            T tv = t->value.at2(ni, ci);
            for (std::int64_t i = 0; i < hw; ++i) out[base + i] = x->value[base + i] + tv;
        }
    return detail::make_op<T>(std::move(out), {x, t}, [x, t, n, c, hw](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * hw;
                T dt = 0;
                for (std::int64_t i = 0; i < hw; ++i) {
                    detail::accum(x, base + i, self.grad[base + i]);
                    dt += self.grad[base + i];
                }
                detail::accum(t, static_cast<std::int64_t>(ni) * c + ci, dt);
            }
    });
}

// Normalize each spatial position across channels, then apply a learnable
// per-channel affine. gain/bias are length-C parameters.
template <typename T>
Var<T> layer_norm_chan(const Var<T>& x, const Var<T>& gain, const Var<T>& bias,
                       T eps = T(1e-6)) {
    int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (gain->value.numel() != c || bias->value.numel() != c)
        throw std::invalid_argument("layer_norm_chan: affine params must have C entries");
    std::int64_t hw = static_cast<std::int64_t>(h) * w;
    std::int64_t chw = c * hw;
    std::vector<T> mu(static_cast<std::size_t>(n) * hw), inv(static_cast<std::size_t>(n) * hw);
    Tensor<T> out(x->value.shape());
    for (int ni = 0; ni < n; ++ni)
        for (std::int64_t p = 0; p < hw; ++p) {
            std::int64_t base = ni * chw + p;
            T m = 0;
            for (int ci = 0; ci < c; ++ci) m += x->value[base + ci * hw];
            m /= static_cast<T>(c);
            T v = 0;
            for (int ci = 0; ci < c; ++ci) {
                T d = x->value[base + ci * hw] - m;
                v += d * d;
            }
            v /= static_cast<T>(c);
            T iv = T(1) / std::sqrt(v + eps);
            mu[static_cast<std::size_t>(ni) * hw + p] = m;
            inv[static_cast<std::size_t>(ni) * hw + p] = iv;
            for (int ci = 0; ci < c; ++ci)
                out[base + ci * hw] =
                    (x->value[base + ci * hw] - m) * iv * gain->value[ci] + bias->value[ci];
        }
    return detail::make_op<T>(std::move(out), {x, gain, bias},
                              [x, gain, bias, n, c, hw, chw, mu, inv](Node<T>& self) {
        std::vector<T> xhat(static_cast<std::size_t>(c)), dxh(static_cast<std::size_t>(c));
        for (int ni = 0; ni < n; ++ni)
            for (std::int64_t p = 0; p < hw; ++p) {
                std::int64_t base = ni * chw + p;
                T m = mu[static_cast<std::size_t>(ni) * hw + p];
                T iv = inv[static_cast<std::size_t>(ni) * hw + p];
                T mean_dxh = 0, mean_dxh_xhat = 0;
                for (int ci = 0; ci < c; ++ci) {
                    xhat[ci] = (x->value[base + ci * hw] - m) * iv;
                    T g = self.grad[base + ci * hw];
                    dxh[ci] = g * gain->value[ci];
                    mean_dxh += dxh[ci];
                    mean_dxh_xhat += dxh[ci] * xhat[ci];
                    detail::accum(gain, ci, g * xhat[ci]);
                    detail::accum(bias, ci, g);
                }
                mean_dxh /= static_cast<T>(c);
                mean_dxh_xhat /= static_cast<T>(c);
                for (int ci = 0; ci < c; ++ci)
                    detail::accum(x, base + ci * hw,
                                  iv * (dxh[ci] - mean_dxh - xhat[ci] * mean_dxh_xhat));
            }
    });
}

// Split channels in half and multiply the halves: (N,2C,H,W) -> (N,C,H,W).
template <typename T>
Var<T> simple_gate(const Var<T>& x) {
    int n = x->value.dim(0), c2 = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (c2 % 2 != 0) throw std::invalid_argument("simple_gate: odd channel count");
    int c = c2 / 2;
    std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor<T> out({n, c, h, w});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci) {
            std::int64_t ia = x->value.offset4(ni, ci, 0, 0);
            std::int64_t ib = x->value.offset4(ni, c + ci, 0, 0);
            std::int64_t io = out.offset4(ni, ci, 0, 0);
            for (std::int64_t i = 0; i < hw; ++i)
                out[io + i] = x->value[ia + i] * x->value[ib + i];
        }
    return detail::make_op<T>(std::move(out), {x}, [x, n, c, hw](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci) {
                std::int64_t ia = x->value.offset4(ni, ci, 0, 0);
                std::int64_t ib = x->value.offset4(ni, c + ci, 0, 0);
                std::int64_t io = self.grad.offset4(ni, ci, 0, 0);
                for (std::int64_t i = 0; i < hw; ++i) {
                    detail::accum(x, ia + i, self.grad[io + i] * x->value[ib + i]);
                    detail::accum(x, ib + i, self.grad[io + i] * x->value[ia + i]);
                }
            }
    });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
    int n = a->value.dim(0), ca = a->value.dim(1), h = a->value.dim(2), w = a->value.dim(3);
    int cb = b->value.dim(1);
    if (b->value.dim(0) != n || b->value.dim(2) != h || b->value.dim(3) != w)
        throw std::invalid_argument("concat_channels: spatial/batch mismatch");
    std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor<T> out({n, ca + cb, h, w});
    for (int ni = 0; ni < n; ++ni) {
        std::copy(a->value.data() + static_cast<std::int64_t>(ni) * ca * hw,
                  a->value.data() + static_cast<std::int64_t>(ni + 1) * ca * hw,
                  out.data() + out.offset4(ni, 0, 0, 0));
        std::copy(b->value.data() + static_cast<std::int64_t>(ni) * cb * hw,
                  b->value.data() + static_cast<std::int64_t>(ni + 1) * cb * hw,
                  out.data() + out.offset4(ni, ca, 0, 0));
    }
    return detail::make_op<T>(std::move(out), {a, b}, [a, b, n, ca, cb, hw](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni) {
            std::int64_t oa = self.grad.offset4(ni, 0, 0, 0);
            std::int64_t ob = self.grad.offset4(ni, ca, 0, 0);
            for (std::int64_t i = 0; i < ca * hw; ++i)
                detail::accum(a, static_cast<std::int64_t>(ni) * ca * hw + i, self.grad[oa + i]);
            for (std::int64_t i = 0; i < cb * hw; ++i)
                detail::accum(b, static_cast<std::int64_t>(ni) * cb * hw + i, self.grad[ob + i]);
        }
    });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int c0, int c1) {
    int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (c0 < 0 || c1 > c || c0 >= c1) throw std::invalid_argument("slice_channels: bad range");
    std::int64_t hw = static_cast<std::int64_t>(h) * w;
    Tensor<T> out({n, c1 - c0, h, w});
    for (int ni = 0; ni < n; ++ni)
        std::copy(x->value.data() + x->value.offset4(ni, c0, 0, 0),
                  x->value.data() + x->value.offset4(ni, c0, 0, 0) +
                      static_cast<std::int64_t>(c1 - c0) * hw,
                  out.data() + out.offset4(ni, 0, 0, 0));
    return detail::make_op<T>(std::move(out), {x}, [x, n, c0, c1, hw](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni) {
            std::int64_t src = self.grad.offset4(ni, 0, 0, 0);
            std::int64_t dst = x->value.offset4(ni, c0, 0, 0);
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(c1 - c0) * hw; ++i)
                detail::accum(x, dst + i, self.grad[src + i]);
        }
    });
}

// Select batch items [n0, n1) from (N,C,H,W).
template <typename T>
Var<T> slice_items(const Var<T>& x, int n0, int n1) {
    int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (n0 < 0 || n1 > n || n0 >= n1) throw std::invalid_argument("slice_items: bad range");
    std::int64_t item = static_cast<std::int64_t>(c) * h * w;
    Tensor<T> out({n1 - n0, c, h, w});
    std::copy(x->value.data() + n0 * item, x->value.data() + n1 * item, out.data());
    return detail::make_op<T>(std::move(out), {x}, [x, n0, item](Node<T>& self) {
        std::int64_t base = n0 * item;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i)
            detail::accum(x, base + i, self.grad[i]);
    });
}

template <typename T>
Var<T> crop_spatial(const Var<T>& x, int y0, int x0, int h, int w) {
    int n = x->value.dim(0), c = x->value.dim(1), hin = x->value.dim(2), win = x->value.dim(3);
    if (y0 < 0 || x0 < 0 || y0 + h > hin || x0 + w > win)
        throw std::invalid_argument("crop_spatial: window out of range");
    Tensor<T> out({n, c, h, w});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                std::copy(x->value.data() + x->value.offset4(ni, ci, y0 + y, x0),
                          x->value.data() + x->value.offset4(ni, ci, y0 + y, x0) + w,
                          out.data() + out.offset4(ni, ci, y, 0));
    return detail::make_op<T>(std::move(out), {x}, [x, n, c, h, w, y0, x0](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        detail::accum(x, x->value.offset4(ni, ci, y0 + y, x0 + xx),
                                      self.grad.at4(ni, ci, y, xx));
    });
}

template <typename T>
Var<T> pad_spatial(const Var<T>& x, int top, int bottom, int left, int right, T value = T(0)) {
    int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw std::invalid_argument("pad_spatial: negative pad");
    Tensor<T> out({n, c, h + top + bottom, w + left + right});
    out.fill(value);
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                std::copy(x->value.data() + x->value.offset4(ni, ci, y, 0),
                          x->value.data() + x->value.offset4(ni, ci, y, 0) + w,
                          out.data() + out.offset4(ni, ci, y + top, left));
    return detail::make_op<T>(std::move(out), {x}, [x, n, c, h, w, top, left](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx)
                        detail::accum(x, x->value.offset4(ni, ci, y, xx),
                                      self.grad.at4(ni, ci, y + top, xx + left));
    });
}

// Resize (N,C,H,W) -> (N,C,Ho,Wo) by bilinear interpolation with half-pixel
// centers; source coordinates are clamped at the border.
template <typename T>
Var<T> bilinear_resize(const Var<T>& x, int ho, int wo) {
    int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (ho < 1 || wo < 1) throw std::invalid_argument("bilinear_resize: bad target size");

    auto axis_lut = [](int out_n, int in_n) {
        std::vector<int> i0(out_n), i1(out_n);
        std::vector<T> frac(out_n);
        double s = static_cast<double>(in_n) / out_n;
        for (int o = 0; o < out_n; ++o) {
            double f = (o + 0.5) * s - 0.5;
            f = std::min(std::max(f, 0.0), static_cast<double>(in_n - 1));
            int lo = static_cast<int>(std::floor(f));
            i0[o] = lo;
            i1[o] = std::min(lo + 1, in_n - 1);
            frac[o] = static_cast<T>(f - lo);
        }
        return std::tuple(i0, i1, frac);
    };
    auto [y0, y1, fy] = axis_lut(ho, h);
    auto [x0, x1, fx] = axis_lut(wo, w);

    Tensor<T> out({n, c, ho, wo});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    T wy = fy[oy], wx = fx[ox];
                    out.at4(ni, ci, oy, ox) =
                        (T(1) - wy) * ((T(1) - wx) * x->value.at4(ni, ci, y0[oy], x0[ox]) +
                                       wx * x->value.at4(ni, ci, y0[oy], x1[ox])) +
                        wy * ((T(1) - wx) * x->value.at4(ni, ci, y1[oy], x0[ox]) +
                              wx * x->value.at4(ni, ci, y1[oy], x1[ox]));
                }
    return detail::make_op<T>(std::move(out), {x},
                              [x, n, c, ho, wo, y0 = y0, y1 = y1, fy = fy, x0 = x0, x1 = x1,
                               fx = fx](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox) {
                        T g = self.grad.at4(ni, ci, oy, ox);
                        T wy = fy[oy], wx = fx[ox];
                        detail::accum(x, x->value.offset4(ni, ci, y0[oy], x0[ox]),
                                      g * (T(1) - wy) * (T(1) - wx));
                        detail::accum(x, x->value.offset4(ni, ci, y0[oy], x1[ox]),
                                      g * (T(1) - wy) * wx);
                        detail::accum(x, x->value.offset4(ni, ci, y1[oy], x0[ox]),
                                      g * wy * (T(1) - wx));
                        detail::accum(x, x->value.offset4(ni, ci, y1[oy], x1[ox]), g * wy * wx);
                    }
    });
}

// Collapse height: (N,C,H,W) -> (N,C,W) by averaging rows.
template <typename T>
Var<T> height_mean(const Var<T>& x) {
    int n = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    Tensor<T> out({n, c, w});
    for (int ni = 0; ni < n; ++ni)
        for (int ci = 0; ci < c; ++ci)
            for (int xx = 0; xx < w; ++xx) {
                T s = 0;
                for (int y = 0; y < h; ++y) s += x->value.at4(ni, ci, y, xx);
                out.at3(ni, ci, xx) = s / static_cast<T>(h);
            }
    return detail::make_op<T>(std::move(out), {x}, [x, n, c, h, w](Node<T>& self) {
        for (int ni = 0; ni < n; ++ni)
            for (int ci = 0; ci < c; ++ci)
                for (int xx = 0; xx < w; ++xx) {
                    T g = self.grad.at3(ni, ci, xx) / static_cast<T>(h);
                    for (int y = 0; y < h; ++y)
                        detail::accum(x, x->value.offset4(ni, ci, y, xx), g);
                }
    });
}

}  // namespace docdpm

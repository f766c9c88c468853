#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "docdpm/image_ops.hpp"
#include "docdpm/rng.hpp"

namespace docdpm {

// Named parameter registry. Insertion order is the canonical order used by
// the optimizer and the checkpoint format, so two stores built from the same
// config walk their parameters identically.
template <typename T>
class ParamStore {
public:
    Var<T> add(const std::string& name, Tensor<T> init) {
        if (index_.count(name))
            throw std::invalid_argument("ParamStore: duplicate parameter " + name);
        auto v = parameter(std::move(init));
        index_[name] = items_.size();
        items_.emplace_back(name, v);
        return v;
    }

    Var<T> get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end())
            throw std::invalid_argument("ParamStore: unknown parameter " + name);
        return items_[it->second].second;
    }

    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::pair<std::string, Var<T>>>& items() const { return items_; }

    void zero_grad() {
        for (auto& [name, v] : items_) {
            (void)name;
            if (v->grad.empty())
                v->ensure_grad();
            else
                v->grad.fill(T(0));
        }
    }

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (const auto& [name, v] : items_) {
            (void)name;
            n += v->value.numel();
        }
        return n;
    }

    // Total over parameters whose name starts with the prefix.
    std::int64_t param_count(const std::string& prefix) const {
        std::int64_t n = 0;
        for (const auto& [name, v] : items_)
            if (name.rfind(prefix, 0) == 0) n += v->value.numel();
        return n;
    }

private:
    std::vector<std::pair<std::string, Var<T>>> items_;
    std::unordered_map<std::string, std::size_t> index_;
};

// --- layer wrappers ---------------------------------------------------------

template <typename T>
struct Conv2dLayer {
    Var<T> w, b;
    int stride = 1, pad = 0, groups = 1;
    PadMode mode = PadMode::zero;
    Var<T> operator()(const Var<T>& x) const { return conv2d(x, w, b, stride, pad, mode, groups); }
};

// Fan-in-scaled normal init; ending projections are zero-initialized so the
// networks start as identity/zero maps.
template <typename T>
Conv2dLayer<T> make_conv(ParamStore<T>& ps, Rng& rng, const std::string& name, int cin, int cout,
                         int k, int stride = 1, int pad = 0, PadMode mode = PadMode::zero,
                         int groups = 1, bool zero_init = false) {
    Conv2dLayer<T> layer;
    Tensor<T> w({cout, cin / groups, k, k});
    if (!zero_init) {
        double std = std::sqrt(2.0 / (static_cast<double>(cin / groups) * k * k));
        w = rng.normal_tensor<T>({cout, cin / groups, k, k});
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(w[i] * std);
    }
    layer.w = ps.add(name + ".w", std::move(w));
    layer.b = ps.add(name + ".b", Tensor<T>({cout}));
    layer.stride = stride;
    layer.pad = pad;
    layer.mode = mode;
    layer.groups = groups;
    return layer;
}

template <typename T>
struct LinearLayer {
    Var<T> w, b;
    Var<T> operator()(const Var<T>& x) const { return linear(x, w, b); }
};

template <typename T>
LinearLayer<T> make_linear(ParamStore<T>& ps, Rng& rng, const std::string& name, int din,
                           int dout, bool zero_init = false) {
    LinearLayer<T> layer;
    Tensor<T> w({dout, din});
    if (!zero_init) {
        double std = std::sqrt(1.0 / static_cast<double>(din));
        w = rng.normal_tensor<T>({dout, din});
        for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = static_cast<T>(w[i] * std);
    }
    layer.w = ps.add(name + ".w", std::move(w));
    layer.b = ps.add(name + ".b", Tensor<T>({dout}));
    return layer;
}

template <typename T>
struct LayerNormChan {
    Var<T> gain, bias;
    Var<T> operator()(const Var<T>& x) const { return layer_norm_chan(x, gain, bias); }
};

template <typename T>
LayerNormChan<T> make_layer_norm(ParamStore<T>& ps, const std::string& name, int channels) {
    LayerNormChan<T> ln;
    ln.gain = ps.add(name + ".g", Tensor<T>::full({channels}, T(1)));
    ln.bias = ps.add(name + ".b", Tensor<T>({channels}));
    return ln;
}

// --- time embedding ---------------------------------------------------------

// Interleaved [sin, cos] pairs at geometrically spaced frequencies;
// t = 0 maps to [0, 1, 0, 1, ...].
template <typename T>
Tensor<T> time_sinusoid(double t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw std::invalid_argument("time_sinusoid: dim must be even and >= 2");
    int half = dim / 2;
    Tensor<T> out({1, dim});
    for (int k = 0; k < half; ++k) {
        double omega =
            half == 1 ? 1.0 : std::pow(10000.0, -static_cast<double>(k) / (half - 1));
        out[2 * k] = static_cast<T>(std::sin(omega * t));
        out[2 * k + 1] = static_cast<T>(std::cos(omega * t));
    }
    return out;
}

struct TimeEmbeddingConfig {
    int dim = 16;         // sinusoid width and MLP output width
    int mlp_hidden = 32;  // hidden width of the two-layer MLP
};

template <typename T>
struct TimeMlp {
    TimeEmbeddingConfig cfg;
    LinearLayer<T> fc1, fc2;

    // One embedding row per batch item's timestep.
    Var<T> operator()(const std::vector<double>& t) const {
        Tensor<T> raw({static_cast<int>(t.size()), cfg.dim});
        for (std::size_t i = 0; i < t.size(); ++i) {
            auto row = time_sinusoid<T>(t[i], cfg.dim);
            std::copy(row.data(), row.data() + cfg.dim,
                      raw.data() + static_cast<std::int64_t>(i) * cfg.dim);
        }
        return fc2(silu(fc1(constant(std::move(raw)))));
    }
};

template <typename T>
TimeMlp<T> make_time_mlp(ParamStore<T>& ps, Rng& rng, const std::string& name,
                         const TimeEmbeddingConfig& cfg) {
    TimeMlp<T> mlp;
    mlp.cfg = cfg;
    mlp.fc1 = make_linear(ps, rng, name + ".fc1", cfg.dim, cfg.mlp_hidden);
    mlp.fc2 = make_linear(ps, rng, name + ".fc2", cfg.mlp_hidden, cfg.dim);
    return mlp;
}

// --- optimizer --------------------------------------------------------------

// Adam with global-norm gradient clipping. Moment buffers are addressed by
// parameter order, which the store keeps canonical.
template <typename T>
class Adam {
public:
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping

    void step(ParamStore<T>& ps) {
        const auto& items = ps.items();
        if (m_.size() != items.size()) {
            m_.clear();
            v_.clear();
            for (const auto& [name, p] : items) {
                (void)name;
                m_.emplace_back(p->value.shape());
                v_.emplace_back(p->value.shape());
            }
            t_ = 0;
        }
        double norm_sq = 0.0;
        for (const auto& [name, p] : items) {
            (void)name;
            p->ensure_grad();
            for (std::int64_t i = 0; i < p->grad.numel(); ++i)
                norm_sq += static_cast<double>(p->grad[i]) * static_cast<double>(p->grad[i]);
        }
        double scale = 1.0;
        if (clip_norm > 0.0) {
            double norm = std::sqrt(norm_sq);
            if (norm > clip_norm) scale = clip_norm / norm;
        }
        ++t_;
        double bc1 = 1.0 - std::pow(beta1, t_);
        double bc2 = 1.0 - std::pow(beta2, t_);
        for (std::size_t pi = 0; pi < items.size(); ++pi) {
            auto& p = items[pi].second;
            auto& m = m_[pi];
            auto& v = v_[pi];
            for (std::int64_t i = 0; i < p->value.numel(); ++i) {
                double g = static_cast<double>(p->grad[i]) * scale;
                double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * g;
                double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * g * g;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
                p->value[i] = static_cast<T>(static_cast<double>(p->value[i]) - update);
            }
        }
    }

    std::int64_t iteration() const { return t_; }

    // Checkpoint access: moment buffers plus the step counter.
    std::vector<Tensor<T>>& moment1() { return m_; }
    std::vector<Tensor<T>>& moment2() { return v_; }
    const std::vector<Tensor<T>>& moment1() const { return m_; }
    const std::vector<Tensor<T>>& moment2() const { return v_; }
    void set_iteration(std::int64_t t) { t_ = t; }

private:
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    std::int64_t t_ = 0;
};

}  // namespace docdpm

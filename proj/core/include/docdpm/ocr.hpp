#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "docdpm/diffusion.hpp"
#include "docdpm/image_ops.hpp"
#include "docdpm/nn.hpp"

namespace docdpm {

// Label space for the recognizer; index 0 is the CTC blank, symbol i maps to
// class index i+1.
struct Alphabet {
    std::string symbols;

    int classes() const { return static_cast<int>(symbols.size()) + 1; }
    bool contains(char c) const { return symbols.find(c) != std::string::npos; }
    int index_of(char c) const;                     // class index, throws if absent
    char symbol(int index) const;                   // inverse, index in [1, classes)
    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& indices) const;
};

Alphabet default_alphabet();

struct WordBox {
    std::string text;
    int x = 0, y = 0, w = 0, h = 0;
};

int levenshtein(const std::string& a, const std::string& b);

// Percentage of character edits over the total reference length.
double cer(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

// --- CTC --------------------------------------------------------------------

namespace detail {
template <typename T>
T log_add(T a, T b) {
    if (a == -std::numeric_limits<T>::infinity()) return b;
    if (b == -std::numeric_limits<T>::infinity()) return a;
    T hi = std::max(a, b);
    return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

inline int ctc_min_frames(const std::vector<int>& target) {
    int need = static_cast<int>(target.size());
    for (std::size_t i = 1; i < target.size(); ++i)
        if (target[i] == target[i - 1]) ++need;
    return need;
}
}  // namespace detail

// Forward-backward evaluation of -log P(target | log_probs) over all
// blank-augmented alignments, entirely in log space, plus the analytic
// gradient with respect to the normalized per-frame log-probabilities.
// log_probs is time-major (frames, classes); target holds symbol indices >= 1.
template <typename T>
std::pair<T, Tensor<T>> ctc_loss_value(const Tensor<T>& log_probs,
                                       const std::vector<int>& target) {
    if (log_probs.ndim() != 2)
        throw std::invalid_argument("ctc_loss: log_probs must be (frames, classes)");
    const int frames = log_probs.dim(0);
    const int classes = log_probs.dim(1);
    if (frames < 1 || classes < 2)
        throw std::invalid_argument("ctc_loss: need at least 1 frame and 2 classes");
    for (int c : target)
        if (c < 1 || c >= classes)
            throw std::invalid_argument("ctc_loss: target symbol outside alphabet");
    for (int t = 0; t < frames; ++t) {
        T lse = -std::numeric_limits<T>::infinity();
        for (int k = 0; k < classes; ++k)
            lse = detail::log_add(lse, log_probs[static_cast<std::int64_t>(t) * classes + k]);
        if (std::abs(static_cast<double>(lse)) > 1e-3)
            throw std::invalid_argument("ctc_loss: frames are not normalized log-probabilities");
    }
    if (frames < detail::ctc_min_frames(target))
        throw std::invalid_argument("ctc_loss: target cannot be aligned in the given frames");

    const T ninf = -std::numeric_limits<T>::infinity();
    const int len = static_cast<int>(target.size());
    const int states = 2 * len + 1;  // blank-interleaved label sequence
    auto label = [&](int s) { return (s % 2 == 0) ? 0 : target[static_cast<std::size_t>(s / 2)]; };
    auto lp = [&](int t, int s) {
        return log_probs[static_cast<std::int64_t>(t) * classes + label(s)];
    };

    std::vector<T> alpha(static_cast<std::size_t>(frames) * states, ninf);
    alpha[0] = lp(0, 0);
    if (states > 1) alpha[1] = lp(0, 1);
    for (int t = 1; t < frames; ++t) {
        for (int s = 0; s < states; ++s) {
            T acc = alpha[static_cast<std::size_t>(t - 1) * states + s];
            if (s >= 1) acc = detail::log_add(acc, alpha[static_cast<std::size_t>(t - 1) * states + s - 1]);
            if (s >= 2 && label(s) != 0 && label(s) != label(s - 2))
                acc = detail::log_add(acc, alpha[static_cast<std::size_t>(t - 1) * states + s - 2]);
            alpha[static_cast<std::size_t>(t) * states + s] = acc == ninf ? ninf : acc + lp(t, s);
        }
    }
    T log_p = alpha[static_cast<std::size_t>(frames - 1) * states + states - 1];
    if (states > 1)
        log_p = detail::log_add(log_p, alpha[static_cast<std::size_t>(frames - 1) * states + states - 2]);
    if (log_p == ninf)
        throw std::invalid_argument("ctc_loss: no feasible alignment");

    // Suffix probabilities exclusive of frame t's own emission.
    std::vector<T> beta(static_cast<std::size_t>(frames) * states, ninf);
    beta[static_cast<std::size_t>(frames - 1) * states + states - 1] = T(0);
    if (states > 1) beta[static_cast<std::size_t>(frames - 1) * states + states - 2] = T(0);
    for (int t = frames - 2; t >= 0; --t) {
        for (int s = 0; s < states; ++s) {
            T acc = beta[static_cast<std::size_t>(t + 1) * states + s] + lp(t + 1, s);
            if (s + 1 < states)
                acc = detail::log_add(acc, beta[static_cast<std::size_t>(t + 1) * states + s + 1] + lp(t + 1, s + 1));
            if (s + 2 < states && label(s + 2) != 0 && label(s + 2) != label(s))
                acc = detail::log_add(acc, beta[static_cast<std::size_t>(t + 1) * states + s + 2] + lp(t + 1, s + 2));
            beta[static_cast<std::size_t>(t) * states + s] = acc;
        }
    }

    Tensor<T> grad(log_probs.shape());
    for (int t = 0; t < frames; ++t)
        for (int s = 0; s < states; ++s) {
            T a = alpha[static_cast<std::size_t>(t) * states + s];
            T b = beta[static_cast<std::size_t>(t) * states + s];
            if (a == ninf || b == ninf) continue;
            grad[static_cast<std::int64_t>(t) * classes + label(s)] -= std::exp(a + b - log_p);
        }
    return {-log_p, std::move(grad)};
}

// Autograd wrapper: a scalar loss node whose backward adds the analytic
// gradient into the log-probability frames.
template <typename T>
Var<T> ctc_loss(const Var<T>& log_probs, const std::vector<int>& target) {
    auto [loss, grad] = ctc_loss_value(log_probs->value, target);
    Tensor<T> out({1});
    out[0] = loss;
    auto g = std::make_shared<Tensor<T>>(std::move(grad));
    return detail::make_op<T>(std::move(out), {log_probs}, [log_probs, g](Node<T>& self) {
        for (std::int64_t i = 0; i < g->numel(); ++i)
            detail::accum(log_probs, i, self.grad[0] * (*g)[i]);
    });
}

// Per-frame argmax, collapse adjacent repeats, drop blanks.
template <typename T>
std::string ctc_greedy_decode(const Tensor<T>& log_probs, const Alphabet& alphabet) {
    if (log_probs.ndim() != 2 || log_probs.dim(1) != alphabet.classes())
        throw std::invalid_argument("ctc_greedy_decode: shape does not match alphabet");
    std::string out;
    int prev = 0;
    for (int t = 0; t < log_probs.dim(0); ++t) {
        const T* row = log_probs.data() + static_cast<std::int64_t>(t) * alphabet.classes();
        int best = 0;
        for (int k = 1; k < alphabet.classes(); ++k)
            if (row[k] > row[best]) best = k;
        if (best != 0 && best != prev) out.push_back(alphabet.symbol(best));
        prev = best;
    }
    return out;
}

// --- recurrence --------------------------------------------------------------

// Gated recurrent unit over time-major frames (frames, in) -> (frames, hidden).
// Gate layout in the fused projections: [update | reset | candidate].
template <typename T>
struct Gru {
    int hidden = 0;
    LinearLayer<T> wx;  // in -> 3*hidden
    LinearLayer<T> wh;  // hidden -> 3*hidden
    Var<T> forward(const Var<T>& x, bool reverse) const {
        int frames = x->value.dim(0);
        auto gx = wx(x);  // one fused input projection for all frames
        Var<T> h = constant(Tensor<T>({1, hidden}));
        std::vector<Var<T>> outs(static_cast<std::size_t>(frames));
        for (int i = 0; i < frames; ++i) {
            int t = reverse ? frames - 1 - i : i;
            auto gxt = slice_rows(gx, t, t + 1);
            auto ght = wh(h);
            auto z = sigmoid(add(slice_cols(gxt, 0, hidden), slice_cols(ght, 0, hidden)));
            auto r = sigmoid(add(slice_cols(gxt, hidden, 2 * hidden),
                                 slice_cols(ght, hidden, 2 * hidden)));
            auto n = tanh_op(add(slice_cols(gxt, 2 * hidden, 3 * hidden),
                                 mul(r, slice_cols(ght, 2 * hidden, 3 * hidden))));
            h = add(mul(add_const(scale(z, T(-1)), T(1)), n), mul(z, h));
            outs[static_cast<std::size_t>(t)] = h;
        }
        return concat_rows(outs);
    }
};

template <typename T>
Gru<T> make_gru(ParamStore<T>& ps, Rng& rng, const std::string& name, int in, int hidden) {
    Gru<T> g;
    g.hidden = hidden;
    g.wx = make_linear(ps, rng, name + ".wx", in, 3 * hidden);
    g.wh = make_linear(ps, rng, name + ".wh", hidden, 3 * hidden);
    return g;
}

// --- recognizer ---------------------------------------------------------------

struct CrnnConfig {
    int height = 32;   // required input height
    int c1 = 16;       // channels after the first conv stage
    int c2 = 32;       // channels in the remaining stages
    int hidden = 32;   // recurrent width per direction
    int stride() const { return 4; }  // two stride-2 stages
};

inline void validate_crnn_config(const CrnnConfig& cfg) {
    if (cfg.height < 4 || cfg.height % 4 != 0)
        throw std::invalid_argument("crnn: height must be a positive multiple of 4");
    if (cfg.c1 < 1 || cfg.c2 < 1 || cfg.hidden < 1)
        throw std::invalid_argument("crnn: channel and hidden sizes must be positive");
}

// Four conv stages (two downsampling), height pooled away, bidirectional
// recurrence over width, per-frame classifier with log-normalization.
template <typename T>
struct Crnn {
    CrnnConfig cfg;
    int classes = 0;
    Conv2dLayer<T> conv1, conv2, conv3, conv4;
    Gru<T> fw, bw;
    LinearLayer<T> head;

    int frames_for_width(int width) const { return width / cfg.stride(); }

    // (1, 1, height, width) -> (width/4, classes) normalized log-probs.
    Var<T> forward(const Var<T>& patch) const {
        const auto& v = patch->value;
        if (v.ndim() != 4 || v.dim(0) != 1 || v.dim(1) != 1)
            throw std::invalid_argument("crnn_forward: expected a single one-channel patch");
        if (v.dim(2) != cfg.height)
            throw std::invalid_argument("crnn_forward: patch height must be " +
                                        std::to_string(cfg.height));
        if (v.dim(3) < cfg.stride() || v.dim(3) % cfg.stride() != 0)
            throw std::invalid_argument("crnn_forward: patch width must be a positive multiple of " +
                                        std::to_string(cfg.stride()));
        auto h = silu(conv1(patch));
        h = silu(conv2(h));
        h = silu(conv3(h));
        h = silu(conv4(h));
        auto pooled = height_mean(h);                               // (1, C, W/4)
        auto seq = transpose2d(reshape(pooled, {cfg.c2, pooled->value.dim(2)}));
        auto both = concat_cols(fw.forward(seq, false), bw.forward(seq, true));
        return log_softmax(head(both));
    }
};

template <typename T>
Crnn<T> make_crnn(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
                  const CrnnConfig& cfg, int classes) {
    validate_crnn_config(cfg);
    if (classes < 2) throw std::invalid_argument("crnn: need at least one symbol plus blank");
    Crnn<T> net;
    net.cfg = cfg;
    net.classes = classes;
    net.conv1 = make_conv(ps, rng, prefix + ".conv1", 1, cfg.c1, 3, 2, 1);
    net.conv2 = make_conv(ps, rng, prefix + ".conv2", cfg.c1, cfg.c2, 3, 2, 1);
    net.conv3 = make_conv(ps, rng, prefix + ".conv3", cfg.c2, cfg.c2, 3, 1, 1);
    net.conv4 = make_conv(ps, rng, prefix + ".conv4", cfg.c2, cfg.c2, 3, 1, 1);
    net.fw = make_gru(ps, rng, prefix + ".gru.f", cfg.c2, cfg.hidden);
    net.bw = make_gru(ps, rng, prefix + ".gru.b", cfg.c2, cfg.hidden);
    net.head = make_linear(ps, rng, prefix + ".head", 2 * cfg.hidden, classes);
    return net;
}

template <typename T>
void freeze_params(ParamStore<T>& ps) {
    for (auto& [name, p] : ps.items()) p->requires_grad = false;
}

// --- word extraction ----------------------------------------------------------

// Differentiable crop + rescale to the recognition height, right-padded with
// white to the frame stride. Box order is preserved.
template <typename T>
std::vector<Var<T>> extract_word_patches(const Var<T>& image, const std::vector<WordBox>& boxes,
                                         const CrnnConfig& cfg) {
    const auto& v = image->value;
    if (v.ndim() != 4 || v.dim(1) != 1)
        throw std::invalid_argument("extract_word_patches: expected (N,1,H,W)");
    std::vector<Var<T>> out;
    out.reserve(boxes.size());
    for (const auto& b : boxes) {
        if (b.w <= 0 || b.h <= 0)
            throw std::invalid_argument("extract_word_patches: degenerate box");
        if (b.x < 0 || b.y < 0 || b.x + b.w > v.dim(3) || b.y + b.h > v.dim(2))
            throw std::invalid_argument("extract_word_patches: box outside image");
        auto crop = crop_spatial(image, b.y, b.x, b.h, b.w);
        int target_w = std::max(
            cfg.stride(),
            static_cast<int>(std::lround(static_cast<double>(b.w) * cfg.height / b.h)));
        auto scaled = bilinear_resize(crop, cfg.height, target_w);
        int pad = (cfg.stride() - target_w % cfg.stride()) % cfg.stride();
        if (pad > 0) scaled = pad_spatial(scaled, 0, 0, 0, pad, T(1));
        out.push_back(scaled);
    }
    return out;
}

// --- finetuning ---------------------------------------------------------------

template <typename T>
struct FinetuneBatch {
    Tensor<T> gt;
    Tensor<T> degraded;
    std::vector<std::vector<WordBox>> words;  // one list per item; may be empty
};

// train_step plus the recognizer penalty: rebuild the enhanced image from the
// predictions, read its labeled words with the frozen recognizer, and add the
// mean per-word CTC loss to the training objective.
template <typename T>
LossReport finetune_step(Models<T>& models, const Crnn<T>& crnn, Adam<T>& opt, Rng& rng,
                         const FinetuneBatch<T>& batch, const NoiseSchedule& sched,
                         const FilterPair& fp, const Alphabet& alphabet,
                         const TrainOptions& opts = {}) {
    check_same_shape(batch.gt, batch.degraded, "finetune_step");
    int n = batch.gt.dim(0);
    if (batch.words.size() != static_cast<std::size_t>(n))
        throw std::invalid_argument("finetune_step: need one word list per batch item");

    std::vector<double> t_real(static_cast<std::size_t>(n));
    std::vector<T> sqrt_ab(static_cast<std::size_t>(n)), sqrt_1mab(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int ti = static_cast<int>(rng.uniform_int(1, sched.steps));
        t_real[static_cast<std::size_t>(i)] = static_cast<double>(ti);
        double ab = sched.alpha_bar[static_cast<std::size_t>(ti) - 1];
        sqrt_ab[static_cast<std::size_t>(i)] = static_cast<T>(std::sqrt(ab));
        sqrt_1mab[static_cast<std::size_t>(i)] = static_cast<T>(std::sqrt(1.0 - ab));
    }
    Tensor<T> eps = rng.normal_tensor<T>(batch.gt.shape());

    auto gt = constant(batch.gt);
    auto x_i = models.init_net.forward(constant(batch.degraded));
    auto x_cond = opts.detach_initial ? detach(x_i) : x_i;
    auto r0 = sub(gt, x_cond);
    auto r_t = add(scale_per_item(r0, sqrt_ab), scale_per_item(constant(eps), sqrt_1mab));
    auto r0_hat = models.den_net.forward(concat_channels(r_t, x_cond), t_real);

    LossReport rep;
    auto loss = total_loss(x_i, gt, r0_hat, r0, fp, &rep);

    int total_words = 0;
    for (const auto& w : batch.words) total_words += static_cast<int>(w.size());
    if (total_words > 0) {
        auto x_hat = add(x_cond, r0_hat);
        Var<T> ctc_sum;
        for (int i = 0; i < n; ++i) {
            const auto& words = batch.words[static_cast<std::size_t>(i)];
            if (words.empty()) continue;
            auto patches = extract_word_patches(slice_items(x_hat, i, i + 1), words, crnn.cfg);
            for (std::size_t k = 0; k < patches.size(); ++k) {
                auto wl = ctc_loss(crnn.forward(patches[k]), alphabet.encode(words[k].text));
                ctc_sum = ctc_sum ? add(ctc_sum, wl) : wl;
            }
        }
        auto l_ctc = scale(ctc_sum, T(1) / static_cast<T>(total_words));
        rep.l_ctc = static_cast<double>(l_ctc->value[0]);
        loss = add(loss, l_ctc);
    } else {
        rep.l_ctc = 0.0;
    }
    rep.l_total += rep.l_ctc;

    auto bad = [](double x) { return !std::isfinite(x); };
    if (bad(rep.l_total)) {
        std::string which = bad(rep.l_mse)    ? "l_mse"
                            : bad(rep.l_low)  ? "l_low"
                            : bad(rep.l_dpm)  ? "l_dpm"
                            : bad(rep.l_high) ? "l_high"
                            : bad(rep.l_ctc)  ? "l_ctc"
                                              : "l_total";
        throw std::runtime_error("finetune_step: non-finite loss in " + which);
    }

    models.store.zero_grad();
    backward(loss);
    opt.step(models.store);
    return rep;
}

// Plain per-sample CTC training of the recognizer; the dataset is revisited
// `epochs` times in a freshly shuffled order.
template <typename T>
void pretrain_crnn(Crnn<T>& crnn, ParamStore<T>& store, Adam<T>& opt,
                   const std::vector<std::pair<Tensor<T>, std::string>>& dataset, int epochs,
                   Rng& rng, const Alphabet& alphabet) {
    if (dataset.empty()) throw std::invalid_argument("pretrain_crnn: empty dataset");
    for (const auto& [patch, text] : dataset) {
        (void)patch;
        alphabet.encode(text);  // rejects out-of-alphabet symbols up front
    }
    std::vector<std::size_t> order(dataset.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<std::int64_t>(i) - 1)]);
        for (std::size_t idx : order) {
            const auto& [patch, text] = dataset[idx];
            auto logits = crnn.forward(constant(patch));
            auto loss = ctc_loss(logits, alphabet.encode(text));
            store.zero_grad();
            backward(loss);
            opt.step(store);
        }
    }
}

}  // namespace docdpm

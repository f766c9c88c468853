#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "docdpm/nn.hpp"

namespace docdpm {

// U-net layout shared by the initial predictor and the denoiser.
struct NetworkConfig {
    int width = 16;                     // channels at full resolution
    std::vector<int> enc_blocks = {1, 1};
    int middle_blocks = 1;
    std::vector<int> dec_blocks = {1, 1};
    int in_channels = 1;
    int out_channels = 1;
    int expansion = 2;                  // channel multiplier feeding each gate
};

inline void validate_network_config(const NetworkConfig& cfg) {
    if (cfg.width < 1 || cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.expansion < 1)
        throw std::invalid_argument("network config: counts must be positive");
    if (cfg.enc_blocks.size() != cfg.dec_blocks.size())
        throw std::invalid_argument("network config: encoder/decoder stage counts must match");
    if ((cfg.width * cfg.expansion) % 2 != 0)
        throw std::invalid_argument("network config: width*expansion must be even for gating");
}

// Activation-free block: two gated residual branches, the first with
// depthwise spatial mixing and channel attention. With time conditioning, a
// per-block head maps the shared embedding to one (gamma, beta) pair applied
// to both normalization outputs as out*(1+gamma)+beta. Residual scales start
// at zero, so a fresh block is the identity map.
template <typename T>
struct NafBlock {
    int channels = 0;
    bool uses_time = false;
    LayerNormChan<T> ln1, ln2;
    Conv2dLayer<T> conv1, dwconv, conv3;  // expand 1x1, depthwise 3x3, project 1x1
    LinearLayer<T> sca;                   // channel attention on the pooled vector
    Conv2dLayer<T> conv4, conv5;          // second branch: expand, project
    Var<T> scale1, scale2;                // per-channel residual gains
    LinearLayer<T> time_head;             // tdim -> 2*channels

    Var<T> forward(Var<T> x, const Var<T>& temb) const {
        if (uses_time && !temb)
            throw std::invalid_argument("naf block: time embedding required");
        if (!uses_time && temb)
            throw std::invalid_argument("naf block: unexpected time embedding");
        int n = x->value.dim(0);
        Var<T> gamma, beta;
        if (uses_time) {
            auto gb = time_head(temb);
            gamma = slice_cols(gb, 0, channels);
            beta = slice_cols(gb, channels, 2 * channels);
        }
        auto modulate = [&](Var<T> h) {
            return channel_bias(channel_scale(h, add_const(gamma, T(1))), beta);
        };

        auto h = ln1(x);
        if (uses_time) h = modulate(h);
        h = conv1(h);
        h = dwconv(h);
        h = simple_gate(h);
        h = channel_scale(h, sca(global_avg_pool(h)));
        h = conv3(h);
        x = add(x, channel_scale(h, broadcast_rows(scale1, n)));

        auto g = ln2(x);
        if (uses_time) g = modulate(g);
        g = conv4(g);
        g = simple_gate(g);
        g = conv5(g);
        return add(x, channel_scale(g, broadcast_rows(scale2, n)));
    }
};

template <typename T>
NafBlock<T> make_naf_block(ParamStore<T>& ps, Rng& rng, const std::string& name, int channels,
                           int expansion, bool uses_time, int time_dim) {
    if ((channels * expansion) % 2 != 0)
        throw std::invalid_argument("naf block: pre-gate width must be even");
    NafBlock<T> b;
    b.channels = channels;
    b.uses_time = uses_time;
    int wide = channels * expansion;
    int gated = wide / 2;
    b.ln1 = make_layer_norm(ps, name + ".ln1", channels);
    b.conv1 = make_conv(ps, rng, name + ".conv1", channels, wide, 1);
    b.dwconv = make_conv(ps, rng, name + ".dw", wide, wide, 3, 1, 1, PadMode::zero, wide);
    b.sca = make_linear(ps, rng, name + ".sca", gated, gated);
    b.conv3 = make_conv(ps, rng, name + ".conv3", gated, channels, 1);
    b.ln2 = make_layer_norm(ps, name + ".ln2", channels);
    b.conv4 = make_conv(ps, rng, name + ".conv4", channels, wide, 1);
    b.conv5 = make_conv(ps, rng, name + ".conv5", gated, channels, 1);
    b.scale1 = ps.add(name + ".scale1", Tensor<T>({channels}));
    b.scale2 = ps.add(name + ".scale2", Tensor<T>({channels}));
    if (uses_time) b.time_head = make_linear(ps, rng, name + ".thead", time_dim, 2 * channels);
    return b;
}

// U-shaped stack of NAF blocks. The unconditional variant adds a global skip
// (output = input + correction); the conditional variant consumes a
// channel-concatenated input, threads a time embedding into every block, and
// returns the raw projection (its target lives in residual space).
template <typename T>
struct NafUnet {
    NetworkConfig cfg;
    bool conditional = false;
    TimeMlp<T> tmlp;
    Conv2dLayer<T> intro, ending;
    std::vector<std::vector<NafBlock<T>>> enc;
    std::vector<Conv2dLayer<T>> downs;
    std::vector<NafBlock<T>> middle;
    std::vector<Conv2dLayer<T>> ups;
    std::vector<std::vector<NafBlock<T>>> dec;

    int downsample_factor() const { return 1 << static_cast<int>(cfg.enc_blocks.size()); }

    Var<T> forward(const Var<T>& x_in, const std::vector<double>& t = {}) const {
        int n = x_in->value.dim(0), h = x_in->value.dim(2), w = x_in->value.dim(3);
        if (x_in->value.dim(1) != cfg.in_channels)
            throw std::invalid_argument("unet: wrong input channel count");
        int f = downsample_factor();
        if (h % f != 0 || w % f != 0)
            throw std::invalid_argument("unet: resolution not divisible by " + std::to_string(f));
        Var<T> temb;
        if (conditional) {
            if (static_cast<int>(t.size()) != n)
                throw std::invalid_argument("unet: one timestep per batch item required");
            temb = tmlp(t);
        } else if (!t.empty()) {
            throw std::invalid_argument("unet: unexpected timestep for unconditional net");
        }

        auto x = intro(x_in);
        std::vector<Var<T>> skips;
        for (std::size_t s = 0; s < enc.size(); ++s) {
            for (const auto& blk : enc[s]) x = blk.forward(x, temb);
            skips.push_back(x);
            x = downs[s](x);
        }
        for (const auto& blk : middle) x = blk.forward(x, temb);
        for (std::size_t s = dec.size(); s-- > 0;) {
            x = pixel_shuffle(ups[s](x), 2);
            x = add(x, skips[s]);
            for (const auto& blk : dec[s]) x = blk.forward(x, temb);
        }
        auto out = ending(x);
        return conditional ? out : add(x_in, out);
    }
};

template <typename T>
NafUnet<T> make_naf_unet(ParamStore<T>& ps, Rng& rng, const std::string& prefix,
                         const NetworkConfig& cfg, bool conditional,
                         const TimeEmbeddingConfig& tcfg = {}) {
    validate_network_config(cfg);
    if (!conditional && cfg.in_channels != cfg.out_channels)
        throw std::invalid_argument("unet: global skip needs matching in/out channels");
    NafUnet<T> net;
    net.cfg = cfg;
    net.conditional = conditional;
    if (conditional) net.tmlp = make_time_mlp(ps, rng, prefix + ".tmlp", tcfg);
    int stages = static_cast<int>(cfg.enc_blocks.size());
    net.intro = make_conv(ps, rng, prefix + ".intro", cfg.in_channels, cfg.width, 3, 1, 1);
    int c = cfg.width;
    for (int s = 0; s < stages; ++s) {
        std::vector<NafBlock<T>> blocks;
        for (int j = 0; j < cfg.enc_blocks[static_cast<std::size_t>(s)]; ++j)
            blocks.push_back(make_naf_block(ps, rng,
                                            prefix + ".enc" + std::to_string(s) + ".b" +
                                                std::to_string(j),
                                            c, cfg.expansion, conditional, tcfg.dim));
        net.enc.push_back(std::move(blocks));
        net.downs.push_back(
            make_conv(ps, rng, prefix + ".down" + std::to_string(s), c, 2 * c, 2, 2, 0));
        c *= 2;
    }
    for (int j = 0; j < cfg.middle_blocks; ++j)
        net.middle.push_back(make_naf_block(ps, rng, prefix + ".mid.b" + std::to_string(j), c,
                                            cfg.expansion, conditional, tcfg.dim));
    net.ups.resize(static_cast<std::size_t>(stages));
    net.dec.resize(static_cast<std::size_t>(stages));
    for (int s = stages - 1; s >= 0; --s) {
        net.ups[static_cast<std::size_t>(s)] =
            make_conv(ps, rng, prefix + ".up" + std::to_string(s), c, 2 * c, 1);
        c /= 2;
        std::vector<NafBlock<T>> blocks;
        for (int j = 0; j < cfg.dec_blocks[static_cast<std::size_t>(s)]; ++j)
            blocks.push_back(make_naf_block(ps, rng,
                                            prefix + ".dec" + std::to_string(s) + ".b" +
                                                std::to_string(j),
                                            c, cfg.expansion, conditional, tcfg.dim));
        net.dec[static_cast<std::size_t>(s)] = std::move(blocks);
    }
    net.ending =
        make_conv(ps, rng, prefix + ".ending", cfg.width, cfg.out_channels, 3, 1, 1,
                  PadMode::zero, 1, /*zero_init=*/true);
    return net;
}

// Per-component parameter counts, grouped by the first name segment.
template <typename T>
std::string describe_params(const ParamStore<T>& ps) {
    std::vector<std::string> order;
    std::unordered_map<std::string, std::int64_t> counts;
    for (const auto& [name, v] : ps.items()) {
        auto dot = name.find('.');
        std::string head = dot == std::string::npos ? name : name.substr(0, dot);
        if (!counts.count(head)) order.push_back(head);
        counts[head] += v->value.numel();
    }
    std::ostringstream os;
    for (const auto& head : order) os << head << ": " << counts[head] << " params\n";
    os << "total: " << ps.param_count() << " params\n";
    return os.str();
}

}  // namespace docdpm

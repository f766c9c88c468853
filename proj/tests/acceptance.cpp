// Acceptance gate: one check per release criterion, each printed as a single
// [PASS]/[FAIL] line with its wall-clock time. Checks 1..8 verify numeric
// properties against independent oracles; 9..12 run the full pipeline at toy
// scale. Pass criterion numbers as arguments to run a subset; the exit code
// is 0 only when every selected criterion passes inside its time budget.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "docdpm/checkpoint.hpp"
#include "docdpm/data.hpp"
#include "docdpm/freq.hpp"
#include "docdpm/manifest.hpp"
#include "docdpm/metrics.hpp"
#include "docdpm/nafnet.hpp"
#include "docdpm/png_io.hpp"
#include "docdpm/trainer.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using namespace docdpm;

namespace {

struct Fail : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void req(bool ok, const std::string& msg) {
    if (!ok) throw Fail(msg);
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(3);
    os << v;
    return os.str();
}

const RunLog kQuiet{nullptr, 0};

fs::path scratch_root() {
    static fs::path p = [] {
        auto base = fs::temp_directory_path() / ("docdpm_acceptance_" + std::to_string(::getpid()));
        fs::create_directories(base);
        return base;
    }();
    return p;
}

std::string slurp_bytes(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    req(is.good(), "cannot open " + path.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// --- shared toy-problem fixtures ---------------------------------------------

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.init_net.width = 4;
    cfg.init_net.enc_blocks = {1};
    cfg.init_net.middle_blocks = 1;
    cfg.init_net.dec_blocks = {1};
    cfg.den_net = cfg.init_net;
    cfg.time.dim = 8;
    cfg.time.mlp_hidden = 16;
    return cfg;
}

template <typename T>
void randomize(ParamStore<T>& ps, Rng& rng) {
    for (const auto& [name, p] : ps.items()) {
        (void)name;
        for (std::int64_t i = 0; i < p->value.numel(); ++i)
            p->value[i] = static_cast<T>(rng.normal() * 0.2);
    }
}

// Manual node ladder T -> 1 (fixed endpoint), uniform in lambda, exact ends.
std::vector<double> span_nodes(const NoiseSchedule& sched, int segments) {
    std::vector<double> nodes{static_cast<double>(sched.steps)};
    double lam_lo = sched.lambda_at(nodes[0]);
    double lam_hi = sched.lambda_at(1.0);
    for (int j = 1; j < segments; ++j)
        nodes.push_back(t_for_lambda(
            sched, lam_lo + (lam_hi - lam_lo) * static_cast<double>(j) / segments));
    nodes.push_back(1.0);
    return nodes;
}

// Least-squares slope of log(err) against log(segments), negated so a
// first-order method reports ~1 and a second-order method ~2.
double fitted_order(const std::vector<int>& segs, const std::vector<double>& errs) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    auto n = static_cast<double>(segs.size());
    for (std::size_t i = 0; i < segs.size(); ++i) {
        double x = std::log(static_cast<double>(segs[i]));
        double y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return -(n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// --- 1: frequency split -------------------------------------------------------

std::string c_frequency_identity() {
    auto fp = make_filter_pair();
    Rng rng(101);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        int h = static_cast<int>(rng.uniform_int(8, 32));
        int w = static_cast<int>(rng.uniform_int(8, 32));
        auto x = rng.uniform_tensor<float>({1, 1, h, w}, -1.0, 1.0);
        auto lo = filter2d_reflect(x, fp.low);
        auto hi = filter2d_reflect(x, fp.high);
        for (std::int64_t j = 0; j < x.numel(); ++j)
            worst = std::max(worst, std::abs(static_cast<double>(lo[j]) + hi[j] - x[j]));
    }
    req(worst < 1e-6, "low+high deviates from x by " + num(worst));
    return "1000 random patches, max |low+high-x| = " + num(worst);
}

// --- 2: noising/unnoising round trip -----------------------------------------

std::string c_diffusion_round_trip() {
    auto sched = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(7);
    double worst = 0.0;
    for (int t = 1; t <= 100; ++t) {
        auto r0 = rng.normal_tensor<double>({2, 1, 6, 6});
        auto eps = rng.normal_tensor<double>({2, 1, 6, 6});
        auto r_t = forward_diffuse(r0, {t, t}, eps, sched);
        auto back = eps_from_prediction(r_t, r0, t, sched);
        for (std::int64_t i = 0; i < eps.numel(); ++i)
            worst = std::max(worst, std::abs(back[i] - eps[i]));
    }
    req(worst < 1e-6, "recovered noise deviates by " + num(worst));
    return "all t in 1..100, max noise deviation = " + num(worst);
}

// --- 3: exact samplers under a true-residual oracle ---------------------------

std::string c_oracle_sampler() {
    auto sched = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(2024);
    auto models = make_models<double>(tiny_model_config(), 7);

    Tensor<double> y = rng.uniform_tensor<double>({2, 1, 8, 8}, -0.9, 0.9);
    Tensor<double> x_gt = rng.uniform_tensor<double>({2, 1, 8, 8}, -0.9, 0.9);
    Tensor<double> x_i = val(models.init_net.forward(constant(y)));
    Tensor<double> r0(x_i.shape());
    for (std::int64_t i = 0; i < r0.numel(); ++i) r0[i] = x_gt[i] - x_i[i];

    int evals = 0;
    DenoiseFn<double> oracle = [&](const Tensor<double>&, double) {
        ++evals;
        return r0;
    };

    double worst = 0.0;
    auto check = [&](const SamplerSpec& spec, int steps) {
        evals = 0;
        auto out = restore_with_denoiser(oracle, x_i, sched, spec, 99);
        req(evals == steps, "spent " + std::to_string(evals) + " evaluations for " +
                                std::to_string(steps) + " requested steps");
        for (std::int64_t i = 0; i < out.numel(); ++i)
            worst = std::max(worst, std::abs(out[i] - x_gt[i]));
    };

    for (auto spacing : {SamplerSpec::Spacing::uniform_t, SamplerSpec::Spacing::uniform_lambda}) {
        for (int steps : {1, 5, 20, 100}) {
            check({SamplerSpec::Kind::ddim, steps, 1, spacing}, steps);
            for (int order : {1, 2}) {
                if (order == 2 && steps < 2) continue;
                check({SamplerSpec::Kind::ode_solver, steps, order, spacing}, steps);
            }
        }
    }
    req(worst < 1e-5, "oracle restoration deviates from ground truth by " + num(worst));
    return "ddim + both solver orders, steps {1,5,20,100}, max deviation = " + num(worst);
}

// --- 4: ddim == first-order solver on shared nodes ----------------------------

std::string c_ddim_equals_order1() {
    auto sched = make_linear_schedule(100, 1e-4, 0.02);
    Rng rng(5);
    Tensor<double> bias = rng.normal_tensor<double>({1, 1, 6, 6});
    DenoiseFn<double> denoise = [&](const Tensor<double>& x, double t) {
        Tensor<double> out(x.shape());
        double w = std::cos(0.013 * t);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            out[i] = 0.4 * std::tanh(x[i]) * w + 0.2 * bias[i];
        return out;
    };

    Tensor<double> x_start = rng.normal_tensor<double>({1, 1, 6, 6});
    double worst = 0.0;
    for (auto spacing : {SamplerSpec::Spacing::uniform_t, SamplerSpec::Spacing::uniform_lambda}) {
        for (int steps : {1, 5, 20, 100}) {
            auto nodes = build_sample_nodes(sched, steps, spacing);
            auto a = ddim_integrate(denoise, x_start, nodes, sched);
            auto b = ode_integrate(denoise, x_start, nodes,
                                   std::vector<int>(static_cast<std::size_t>(steps), 1), sched);
            for (std::int64_t i = 0; i < a.numel(); ++i)
                worst = std::max(worst, std::abs(a[i] - b[i]));
        }
    }
    req(worst < 1e-5, "paths diverge by " + num(worst));
    return "steps {1,5,20,100}, both spacings, max |ddim-order1| = " + num(worst);
}

// --- 5: solver convergence order on a closed-form problem ---------------------

std::string c_convergence_order() {
    auto sched = make_linear_schedule(100, 1e-4, 0.02);
    DenoiseFn<double> affine = [](const Tensor<double>& x, double) {
        Tensor<double> out(x.shape());
        out[0] = 0.7 * x[0] - 0.4;
        return out;
    };
    Tensor<double> x0({1, 1, 1, 1});
    x0[0] = 1.3;

    auto run = [&](int segments, int order) {
        auto nodes = span_nodes(sched, segments);
        std::vector<int> orders(static_cast<std::size_t>(segments), order);
        return ode_integrate(affine, x0, nodes, orders, sched)[0];
    };
    double ref = run(10000, 2);

    std::vector<int> segs{5, 10, 20, 40};
    double slope1 = 0.0, slope2 = 0.0;
    for (int order : {1, 2}) {
        std::vector<double> errs;
        for (int s : segs) errs.push_back(std::abs(run(s, order) - ref));
        (order == 1 ? slope1 : slope2) = fitted_order(segs, errs);
    }
    req(slope1 >= 0.9, "order-1 slope " + num(slope1) + " below 0.9");
    req(slope2 >= 1.8, "order-2 slope " + num(slope2) + " below 1.8");
    return "fitted slopes: order 1 = " + num(slope1) + ", order 2 = " + num(slope2);
}

// --- 6: analytic gradients vs central finite differences ----------------------

std::string c_gradient_checks() {
    std::ostringstream detail;
    auto record = [&](const std::string& name, double err, double tol) {
        req(err < tol, name + " gradient check: relative error " + num(err) +
                           " exceeds " + num(tol));
        detail << (detail.tellp() > 0 ? ", " : "") << name << "=" << num(err);
    };
    auto params_of = [](auto& ps) {
        std::vector<Var<double>> params;
        for (const auto& [n, p] : ps.items()) {
            (void)n;
            params.push_back(p);
        }
        return params;
    };

    {  // plain conv block
        ParamStore<double> ps;
        Rng rng(41);
        auto blk = make_naf_block(ps, rng, "blk", 4, 2, false, 0);
        Rng r2(42);
        randomize(ps, r2);
        auto x = constant(Rng(43).normal_tensor<double>({1, 4, 8, 8}));
        record("block", testutil::grad_check(params_of(ps), [&] {
                   auto y = blk.forward(x, {});
                   return mean_all(mul(y, y));
               }),
               1e-4);
    }
    {  // time-modulated block
        ParamStore<double> ps;
        Rng rng(44);
        auto blk = make_naf_block(ps, rng, "blk", 4, 2, true, 8);
        Rng r2(45);
        randomize(ps, r2);
        auto x = constant(Rng(46).normal_tensor<double>({1, 4, 8, 8}));
        auto temb = constant(Rng(47).normal_tensor<double>({1, 8}));
        record("timed_block", testutil::grad_check(params_of(ps), [&] {
                   auto y = blk.forward(x, temb);
                   return mean_all(mul(y, y));
               }),
               1e-4);
    }
    {  // timestep embedding MLP
        ParamStore<double> ps;
        Rng rng(3);
        auto mlp = make_time_mlp(ps, rng, "tmlp", TimeEmbeddingConfig{8, 12});
        record("time_mlp", testutil::grad_check(params_of(ps), [&] {
                   auto o = mlp(std::vector<double>{3.0, 42.0});
                   return mean_all(mul(o, o));
               }),
               1e-4);
    }
    {  // loss terms
        Rng rng(55);
        auto fp = make_filter_pair();
        auto x_pred = parameter(rng.normal_tensor<double>({1, 1, 8, 8}));
        auto r0_hat = parameter(rng.normal_tensor<double>({1, 1, 8, 8}));
        auto x_gt = constant(rng.normal_tensor<double>({1, 1, 8, 8}));
        auto r0 = constant(rng.normal_tensor<double>({1, 1, 8, 8}));
        record("init_loss",
               testutil::grad_check({x_pred}, [&] { return init_loss(x_pred, x_gt, fp); }), 1e-4);
        record("denoiser_loss",
               testutil::grad_check({r0_hat}, [&] { return denoiser_loss(r0_hat, r0, fp); }),
               1e-4);
        record("total_loss", testutil::grad_check({x_pred, r0_hat}, [&] {
                   return total_loss(x_pred, x_gt, r0_hat, r0, fp);
               }),
               1e-4);
    }
    {  // recognizer + sequence loss, end to end
        ParamStore<double> ps;
        Rng rng(8);
        CrnnConfig cfg;
        cfg.height = 8;
        cfg.c1 = 4;
        cfg.c2 = 6;
        cfg.hidden = 5;
        auto crnn = make_crnn(ps, rng, "crnn", cfg, 3);
        Tensor<double> patch = rng.uniform_tensor<double>({1, 1, 8, 8}, -1.0, 1.0);
        std::vector<int> target{1, 2};
        record("crnn_ctc", testutil::grad_check(
                               params_of(ps),
                               [&] { return ctc_loss(crnn.forward(constant(patch)), target); },
                               1e-5),
               1e-3);
    }
    {  // sequence loss alone: analytic gradient against finite differences
        Rng rng(123);
        double worst = 0.0;
        for (int inst = 0; inst < 10; ++inst) {
            int classes = 4, frames = 6;
            Tensor<double> lp({frames, classes});
            for (int t = 0; t < frames; ++t) {
                double lse = -std::numeric_limits<double>::infinity();
                for (int k = 0; k < classes; ++k) {
                    double v = rng.normal() * 1.5;
                    lp[static_cast<std::int64_t>(t) * classes + k] = v;
                    lse = detail::log_add(lse, v);
                }
                for (int k = 0; k < classes; ++k)
                    lp[static_cast<std::int64_t>(t) * classes + k] -= lse;
            }
            std::vector<int> target{static_cast<int>(rng.uniform_int(1, 3)),
                                    static_cast<int>(rng.uniform_int(1, 3))};
            auto [loss, grad] = ctc_loss_value(lp, target);
            (void)loss;
            const double eps = 1e-6;
            for (std::int64_t i = 0; i < lp.numel(); ++i) {
                auto plus = lp, minus = lp;
                plus[i] += eps;
                minus[i] -= eps;
                double fd = (ctc_loss_value(plus, target).first -
                             ctc_loss_value(minus, target).first) /
                            (2 * eps);
                worst = std::max(worst, std::abs(grad[i] - fd) /
                                            std::max({1.0, std::abs(grad[i]), std::abs(fd)}));
            }
        }
        record("ctc", worst, 1e-3);
    }
    return detail.str();
}

// --- 7: sequence loss vs exhaustive path enumeration ---------------------------

// Enumerate every frame-level path, collapse it, and sum the probabilities of
// those mapping to the target.
double ctc_brute_force(const Tensor<double>& lp, const std::vector<int>& target) {
    int frames = lp.dim(0), classes = lp.dim(1);
    std::vector<int> path(static_cast<std::size_t>(frames), 0);
    double p = 0.0;
    while (true) {
        std::vector<int> collapsed;
        int prev = -1;
        for (int t = 0; t < frames; ++t) {
            int c = path[static_cast<std::size_t>(t)];
            if (c != prev && c != 0) collapsed.push_back(c);
            prev = c;
        }
        if (collapsed == target) {
            double lg = 0;
            for (int t = 0; t < frames; ++t)
                lg += lp[static_cast<std::int64_t>(t) * classes +
                         path[static_cast<std::size_t>(t)]];
            p += std::exp(lg);
        }
        int d = 0;
        while (d < frames && ++path[static_cast<std::size_t>(d)] == classes) {
            path[static_cast<std::size_t>(d)] = 0;
            ++d;
        }
        if (d == frames) break;
    }
    return p;
}

std::string c_ctc_brute_force() {
    Rng rng(99);
    int checked = 0;
    double worst = 0.0;
    while (checked < 220) {
        int syms = static_cast<int>(rng.uniform_int(1, 3));
        int classes = syms + 1;
        int frames = static_cast<int>(rng.uniform_int(1, 6));
        std::vector<int> target;
        int len = static_cast<int>(rng.uniform_int(0, 3));
        for (int i = 0; i < len; ++i)
            target.push_back(static_cast<int>(rng.uniform_int(1, syms)));
        if (frames < detail::ctc_min_frames(target)) continue;

        Tensor<double> lp({frames, classes});
        for (int t = 0; t < frames; ++t) {
            double lse = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < classes; ++k) {
                double v = rng.normal() * 1.5;
                lp[static_cast<std::int64_t>(t) * classes + k] = v;
                lse = detail::log_add(lse, v);
            }
            for (int k = 0; k < classes; ++k)
                lp[static_cast<std::int64_t>(t) * classes + k] -= lse;
        }
        double loss = ctc_loss_value(lp, target).first;
        double ref = -std::log(ctc_brute_force(lp, target));
        double dev = std::abs(loss - ref) / std::max(1.0, std::abs(ref));
        worst = std::max(worst, dev);
        req(dev <= 1e-8, "instance " + std::to_string(checked) + " deviates by " + num(dev));
        ++checked;
    }
    return std::to_string(checked) + " random instances, max deviation = " + num(worst);
}

// --- 8: image metrics vs independent oracles -----------------------------------

// Standalone structural-similarity written against the published formula.
double ssim_reference(const Tensor<float>& x, const Tensor<float>& y, double range, int win,
                      double sigma) {
    int h = x.dim(2), w = x.dim(3), r = win / 2;
    std::vector<double> g(static_cast<std::size_t>(win) * win);
    double s = 0.0;
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
            double dy = i - r, dx = j - r;
            g[static_cast<std::size_t>(i) * win + j] =
                std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            s += g[static_cast<std::size_t>(i) * win + j];
        }
    for (auto& v : g) v /= s;
    double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
    double acc = 0.0;
    int n = 0;
    for (int y0 = 0; y0 + win <= h; ++y0)
        for (int x0 = 0; x0 + win <= w; ++x0) {
            double ux = 0, uy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    ux += g[static_cast<std::size_t>(i) * win + j] * x.at4(0, 0, y0 + i, x0 + j);
                    uy += g[static_cast<std::size_t>(i) * win + j] * y.at4(0, 0, y0 + i, x0 + j);
                }
            double sx = 0, sy = 0, sxy = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    double wij = g[static_cast<std::size_t>(i) * win + j];
                    double dx = x.at4(0, 0, y0 + i, x0 + j) - ux;
                    double dy = y.at4(0, 0, y0 + i, x0 + j) - uy;
                    sx += wij * dx * dx;
                    sy += wij * dy * dy;
                    sxy += wij * dx * dy;
                }
            acc += ((2 * ux * uy + c1) * (2 * sxy + c2)) /
                   ((ux * ux + uy * uy + c1) * (sx + sy + c2));
            ++n;
        }
    return acc / n;
}

// Independent thinning, set-style: recompute the survivor set per subiteration.
std::set<std::pair<int, int>> thin_reference(const Tensor<float>& bin) {
    int h = bin.dim(2), w = bin.dim(3);
    std::set<std::pair<int, int>> text;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (bin.at4(0, 0, y, x) < 0.0f) text.insert({y, x});

    auto pass = [&](int phase) {
        std::set<std::pair<int, int>> removals;
        for (auto [y, x] : text) {
            auto on = [&](int yy, int xx) { return text.count({yy, xx}) ? 1 : 0; };
            int p2 = on(y - 1, x), p3 = on(y - 1, x + 1), p4 = on(y, x + 1),
                p5 = on(y + 1, x + 1), p6 = on(y + 1, x), p7 = on(y + 1, x - 1),
                p8 = on(y, x - 1), p9 = on(y - 1, x - 1);
            int b = p2 + p3 + p4 + p5 + p6 + p7 + p8 + p9;
            if (b < 2 || b > 6) continue;
            int seq[9] = {p2, p3, p4, p5, p6, p7, p8, p9, p2};
            int a = 0;
            for (int i = 0; i < 8; ++i)
                if (seq[i] == 0 && seq[i + 1] == 1) ++a;
            if (a != 1) continue;
            if (phase == 0 && (p2 * p4 * p6 != 0 || p4 * p6 * p8 != 0)) continue;
            if (phase == 1 && (p2 * p4 * p8 != 0 || p2 * p6 * p8 != 0)) continue;
            removals.insert({y, x});
        }
        for (auto& rc : removals) text.erase(rc);
        return !removals.empty();
    };

    bool changed = true;
    while (changed) {
        bool a = pass(0);
        bool b = pass(1);
        changed = a || b;
    }
    return text;
}

std::string c_metric_oracles() {
    Rng rng(5);

    // Peak-signal ratio: identical images cap at 100.
    Tensor<float> x({1, 1, 8, 8});
    for (std::int64_t i = 0; i < x.numel(); ++i)
        x[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    req(psnr(x, x, 2.0) == 100.0, "identical images must score 100 dB");

    // Constant offset: closed form 10*log10(peak^2 / d^2).
    Tensor<float> a({1, 1, 8, 8}), b({1, 1, 8, 8});
    a.fill(0.2f);
    b.fill(0.7f);
    double d = static_cast<double>(a[0]) - static_cast<double>(b[0]);
    double closed = 10.0 * std::log10(1.0 / (d * d));
    req(std::abs(psnr(a, b, 1.0) - closed) < 1e-9,
        "constant-offset psnr " + num(psnr(a, b, 1.0)) + " vs closed form " + num(closed));

    // Random images quantized to 1/256: the oracle sum is exact, so the
    // library value must match bit for bit.
    for (int trial = 0; trial < 20; ++trial) {
        Tensor<float> u({1, 1, 8, 8}), v({1, 1, 8, 8});
        for (std::int64_t i = 0; i < u.numel(); ++i) {
            u[i] = static_cast<float>(rng.uniform_int(-256, 256)) / 256.0f;
            v[i] = static_cast<float>(rng.uniform_int(-256, 256)) / 256.0f;
        }
        double mse = 0.0;
        for (std::int64_t i = 0; i < u.numel(); ++i) {
            double e = static_cast<double>(u[i]) - static_cast<double>(v[i]);
            mse += e * e;
        }
        mse /= static_cast<double>(u.numel());
        double expect = mse == 0.0 ? 100.0 : std::min(100.0, 10.0 * std::log10(4.0 / mse));
        req(psnr(u, v, 2.0) == expect, "psnr deviates from the pixel-count oracle");
    }

    // F-measure against direct pixel counts, exactly.
    auto random_mask = [&](double text_p) {
        Tensor<float> t({1, 1, 8, 8});
        for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.bernoulli(text_p) ? -1.0f : 1.0f;
        return t;
    };
    for (int trial = 0; trial < 100; ++trial) {
        auto pred = random_mask(0.35);
        auto truth = random_mask(0.45);
        std::int64_t tp = 0, fp = 0, fn = 0;
        for (std::int64_t i = 0; i < pred.numel(); ++i) {
            bool p = pred[i] < 0.0f, g = truth[i] < 0.0f;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
        }
        double expect = 0.0;
        if (tp > 0) {
            double prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
            double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
            expect = 100.0 * 2.0 * prec * rec / (prec + rec);
        }
        req(f_measure(pred, truth) == expect, "f-measure deviates from the pixel-count oracle");
    }

    // Pseudo variant: skeleton recall from an independent thinning.
    for (int trial = 0; trial < 120; ++trial) {
        auto pred = random_mask(0.4);
        auto truth = random_mask(0.5);
        auto ref_skel = thin_reference(truth);
        std::int64_t tp = 0, fp = 0, hit = 0;
        for (int y = 0; y < 8; ++y)
            for (int xx = 0; xx < 8; ++xx) {
                bool p = pred.at4(0, 0, y, xx) < 0.0f;
                bool g = truth.at4(0, 0, y, xx) < 0.0f;
                tp += p && g;
                fp += p && !g;
                hit += p && ref_skel.count({y, xx});
            }
        double expect = 0.0;
        if (tp > 0 && !ref_skel.empty()) {
            double prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
            double rec = static_cast<double>(hit) / static_cast<double>(ref_skel.size());
            if (prec + rec > 0) expect = 100.0 * 2.0 * prec * rec / (prec + rec);
        }
        req(pseudo_f_measure(pred, truth) == expect,
            "pseudo f-measure deviates from the scripted oracle");
    }

    // Structural similarity against the standalone reference.
    double worst = 0.0;
    auto page = render_text_image({"ssim check", "row two"}, 160, 48, 2);
    Tensor<float> inverted(page.image.shape());
    for (std::int64_t i = 0; i < inverted.numel(); ++i) inverted[i] = -page.image[i];
    worst = std::max(worst,
                     std::abs(ssim(page.image, inverted, 2.0) -
                              ssim_reference(page.image, inverted, 2.0, 11, 1.5)));
    for (int trial = 0; trial < 3; ++trial) {
        Tensor<float> u({1, 1, 20, 28}), v({1, 1, 20, 28});
        for (std::int64_t i = 0; i < u.numel(); ++i) {
            u[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
            v[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
        }
        worst = std::max(worst, std::abs(ssim(u, v, 2.0) - ssim_reference(u, v, 2.0, 11, 1.5)));
    }
    req(worst < 1e-6, "ssim deviates from the reference by " + num(worst));
    return "psnr/f/pseudo-f exact on 8x8 oracles, ssim reference deviation = " + num(worst);
}

// --- 9: toy deblurring, full pipeline ------------------------------------------

DegradeOptions blur_corpus(const fs::path& dir, int count, std::uint64_t seed) {
    DegradeOptions o;
    o.out_dir = dir.string();
    o.count = count;
    o.seed = seed;
    o.spec.kind = DegradeSpec::Kind::gaussian_blur;
    o.spec.blur_sigma = 1.5;
    o.page_width = 128;
    o.page_height = 64;
    o.scale = 2;
    return o;
}

std::string c_toy_deblurring() {
    fs::path root = scratch_root() / "deblur";
    run_degrade(blur_corpus(root / "train", 24, 101), kQuiet);
    run_degrade(blur_corpus(root / "held", 12, 202), kQuiet);

    TrainConfig cfg;
    cfg.seed = 7;
    cfg.data_manifest = (root / "train" / "manifest.jsonl").string();
    cfg.out_dir = (root / "run").string();
    cfg.train_steps = 2000;
    cfg.log_every = 500;
    cfg.checkpoint_every = 2000;
    cfg.val_images = 0;
    auto state = run_train(cfg, kQuiet);
    req(state.models.store.param_count() < 500000,
        "model has " + std::to_string(state.models.store.param_count()) + " parameters");

    SampleOptions so;
    so.checkpoint = (root / "run" / "latest.ckpt").string();
    so.input = (root / "held" / "degraded").string();
    so.out_dir = (root / "restored").string();
    int written = run_sample(so, kQuiet);
    req(written == 12, "expected 12 restored pages, got " + std::to_string(written));

    auto recs = load_manifest((root / "held" / "manifest.jsonl").string());
    double restored_db = 0.0, degraded_db = 0.0;
    for (const auto& rec : recs) {
        auto clean = read_png_gray(rec.clean_path);
        auto degraded = read_png_gray(rec.degraded_path);
        auto restored = read_png_gray(
            (root / "restored" / fs::path(rec.degraded_path).filename()).string());
        restored_db += psnr(restored, clean, 2.0);
        degraded_db += psnr(degraded, clean, 2.0);
    }
    restored_db /= static_cast<double>(recs.size());
    degraded_db /= static_cast<double>(recs.size());
    double gain = restored_db - degraded_db;
    req(gain >= 3.0, "held-out gain " + num(gain) + " dB below 3 dB (restored " +
                         num(restored_db) + ", degraded " + num(degraded_db) + ")");
    return "held-out psnr " + num(restored_db) + " dB vs degraded " + num(degraded_db) +
           " dB (gain " + num(gain) + " dB), " +
           std::to_string(state.models.store.param_count()) + " params";
}

// --- 10: single-batch overfit ---------------------------------------------------

std::string c_single_batch_overfit() {
    auto sched = make_linear_schedule(20, 1e-4, 0.02);
    auto fp = make_filter_pair();
    auto models = make_models<float>(tiny_model_config(), 2025);
    Adam<float> opt;
    opt.lr = 3e-3;
    Rng rng(123);

    Batch<float> batch;
    batch.gt = Tensor<float>({2, 1, 8, 8});
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                batch.gt.at4(n, 0, i, j) =
                    0.8f * static_cast<float>(std::sin(0.8 * i + n) * std::cos(0.7 * j));
    batch.degraded = rng.uniform_tensor<float>({2, 1, 8, 8}, -0.5, 0.5);

    double initial = -1.0, ema = 0.0, best = 1e30;
    int steps = 0;
    for (int step = 0; step < 500; ++step) {
        auto rep = train_step(models, opt, rng, batch, sched, fp);
        if (step == 0) {
            initial = rep.l_total;
            ema = rep.l_total;
        } else {
            ema = 0.9 * ema + 0.1 * rep.l_total;
        }
        best = std::min(best, ema);
        steps = step + 1;
        if (best < 0.1 * initial) break;
    }
    req(best < 0.1 * initial, "smoothed objective only reached " + num(best) + " from " +
                                  num(initial) + " after 500 steps");
    return "smoothed objective " + num(initial) + " -> " + num(best) + " in " +
           std::to_string(steps) + " steps";
}

// --- 11: recognizer-guided finetuning probe -------------------------------------

std::string c_finetune_probe() {
    Alphabet ab;
    ab.symbols = "abcde";
    const std::vector<std::string> words{"ab", "be", "cad", "dab", "ace", "bed", "cab", "dead"};

    CrnnConfig ccfg;
    ccfg.c1 = 8;
    ccfg.c2 = 16;
    ccfg.hidden = 16;

    // One word per small page, plus a blurred counterpart.
    std::vector<RenderResult> pages;
    std::vector<Tensor<float>> degraded;
    std::vector<std::pair<Tensor<float>, std::string>> crops;
    for (std::size_t i = 0; i < words.size(); ++i) {
        auto page = render_text_image({words[i]}, 64, 32, 2);
        req(page.words.size() == 1, "expected one rendered word per page");
        DegradeSpec spec;
        spec.kind = DegradeSpec::Kind::gaussian_blur;
        spec.blur_sigma = 1.0;
        spec.seed = 900 + i;
        degraded.push_back(degrade(page.image, spec));
        auto patches = extract_word_patches(constant(page.image), page.words, ccfg);
        crops.emplace_back(val(patches[0]), words[i]);
        pages.push_back(std::move(page));
    }

    // Recognizer pretraining on the clean crops.
    ParamStore<float> crnn_ps;
    Rng crnn_rng(31);
    auto crnn = make_crnn(crnn_ps, crnn_rng, "crnn", ccfg, ab.classes());
    Adam<float> crnn_opt;
    crnn_opt.lr = 3e-3;
    Rng shuffle_rng(32);
    pretrain_crnn(crnn, crnn_ps, crnn_opt, crops, 80, shuffle_rng, ab);

    std::vector<std::string> hyps, refs;
    for (const auto& [patch, text] : crops) {
        hyps.push_back(ctc_greedy_decode(val(crnn.forward(constant(patch))), ab));
        refs.push_back(text);
    }
    double pretrain_cer = cer(hyps, refs);
    req(pretrain_cer < 10.0, "pretraining stalled at " + num(pretrain_cer) + "% error");
    freeze_params(crnn_ps);
    std::vector<float> crnn_snapshot;
    for (const auto& [name, p] : crnn_ps.items()) {
        (void)name;
        crnn_snapshot.insert(crnn_snapshot.end(), p->value.vec().begin(), p->value.vec().end());
    }

    // Enhancement model plus a short warmup on the page pairs.
    ModelConfig mcfg;
    mcfg.init_net.width = 8;
    mcfg.init_net.enc_blocks = {1, 1};
    mcfg.init_net.middle_blocks = 1;
    mcfg.init_net.dec_blocks = {1, 1};
    mcfg.den_net = mcfg.init_net;
    mcfg.time.dim = 16;
    mcfg.time.mlp_hidden = 32;
    auto models = make_models<float>(mcfg, 77);
    auto sched = make_linear_schedule(100, 1e-4, 0.02);
    auto fp = make_filter_pair();
    Adam<float> opt;
    opt.lr = 3e-3;
    Rng rng(5);

    auto pick_batch = [&](bool with_words) {
        FinetuneBatch<float> fb;
        fb.gt = Tensor<float>({4, 1, 32, 64});
        fb.degraded = Tensor<float>({4, 1, 32, 64});
        std::int64_t page_n = pages[0].image.numel();
        for (int k = 0; k < 4; ++k) {
            int i = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(words.size()) - 1));
            for (std::int64_t j = 0; j < page_n; ++j) {
                fb.gt[k * page_n + j] = pages[static_cast<std::size_t>(i)].image[j];
                fb.degraded[k * page_n + j] = degraded[static_cast<std::size_t>(i)][j];
            }
            if (with_words) fb.words.push_back(pages[static_cast<std::size_t>(i)].words);
        }
        return fb;
    };
    for (int step = 0; step < 300; ++step) {
        auto fb = pick_batch(false);
        Batch<float> plain{fb.gt, fb.degraded};
        train_step(models, opt, rng, plain, sched, fp);
    }

    // Mean sequence loss of the frozen recognizer on restored pages.
    SamplerSpec spec;
    spec.kind = SamplerSpec::Kind::ode_solver;
    spec.steps = 5;
    spec.order = 2;
    auto measure = [&] {
        double total = 0.0;
        for (std::size_t i = 0; i < words.size(); ++i) {
            auto restored = restore(degraded[i], models, sched, spec, 1000 + i);
            auto patches = extract_word_patches(constant(restored), pages[i].words, ccfg);
            total += static_cast<double>(
                val(ctc_loss(crnn.forward(patches[0]), ab.encode(words[i])))[0]);
        }
        return total / static_cast<double>(words.size());
    };
    double ctc_before = measure();

    for (int step = 0; step < 200; ++step) {
        auto fb = pick_batch(true);
        finetune_step(models, crnn, opt, rng, fb, sched, fp, ab);
    }
    double ctc_after = measure();

    req(ctc_after < ctc_before, "mean sequence loss rose from " + num(ctc_before) + " to " +
                                    num(ctc_after) + " after 200 finetune steps");
    std::vector<float> crnn_now;
    for (const auto& [name, p] : crnn_ps.items()) {
        (void)name;
        crnn_now.insert(crnn_now.end(), p->value.vec().begin(), p->value.vec().end());
    }
    req(crnn_now == crnn_snapshot, "frozen recognizer parameters changed during finetuning");
    return "pretrain cer " + num(pretrain_cer) + "%, restored-word ctc " + num(ctc_before) +
           " -> " + num(ctc_after) + ", recognizer bitwise frozen";
}

// --- 12: command-line determinism -----------------------------------------------

std::string c_cli_determinism() {
    const char* bin = std::getenv("DOCDPM_BIN");
    req(bin != nullptr && *bin != '\0',
        "set DOCDPM_BIN to the command-line binary (ctest does this automatically)");

    fs::path root = scratch_root() / "determinism";
    DegradeOptions corpus;
    corpus.out_dir = (root / "corpus").string();
    corpus.count = 6;
    corpus.seed = 5;
    corpus.spec.kind = DegradeSpec::Kind::gaussian_blur;
    corpus.spec.blur_sigma = 1.0;
    corpus.page_width = 64;
    corpus.page_height = 32;
    corpus.scale = 1;
    run_degrade(corpus, kQuiet);

    const std::string cfg_text =
        "seed = 13\n"
        "data.manifest = ../corpus/manifest.jsonl\n"
        "out.dir = run\n"
        "train.steps = 50\n"
        "train.log_every = 10\n"
        "train.checkpoint_every = 50\n"
        "train.val_images = 0\n"
        "sampler.steps = 5\n";
    for (const char* side : {"a", "b"}) {
        fs::path dir = root / side;
        fs::create_directories(dir);
        std::ofstream(dir / "run.cfg") << cfg_text;
        std::string q = "'" + std::string(bin) + "'";
        std::string train_cmd = "cd '" + dir.string() + "' && " + q +
                                " train --config run.cfg >cmd_train.txt 2>&1";
        req(std::system(train_cmd.c_str()) == 0, "training run failed in " + dir.string());
        std::string sample_cmd =
            "cd '" + dir.string() + "' && " + q +
            " sample --checkpoint run/latest.ckpt --input ../corpus/degraded --out samp"
            " --seed 9 >cmd_sample.txt 2>&1";
        req(std::system(sample_cmd.c_str()) == 0, "sampling run failed in " + dir.string());
    }

    std::vector<std::string> artifacts{"run/latest.ckpt", "run/ckpt_0000050.ckpt",
                                       "run/train_log.txt", "samp/sample_log.txt"};
    for (int i = 0; i < 6; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "samp/page_%04d.png", i);
        artifacts.push_back(name);
    }
    for (const auto& rel : artifacts)
        req(slurp_bytes(root / "a" / rel) == slurp_bytes(root / "b" / rel),
            rel + " differs between the two runs");
    return std::to_string(artifacts.size()) +
           " artifacts bit-identical across two seeded train+sample runs";
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<std::string()> fn;
};

}  // namespace

int main(int argc, char** argv) {
    std::vector<Criterion> all{
        {1, "frequency split identity", 1.0, c_frequency_identity},
        {2, "diffusion round trip", 1.0, c_diffusion_round_trip},
        {3, "oracle-denoiser sampler exactness", 5.0, c_oracle_sampler},
        {4, "ddim matches the order-1 solver", 5.0, c_ddim_equals_order1},
        {5, "solver convergence orders", 10.0, c_convergence_order},
        {6, "analytic gradients vs finite differences", 120.0, c_gradient_checks},
        {7, "ctc matches path enumeration", 30.0, c_ctc_brute_force},
        {8, "metrics match independent oracles", 30.0, c_metric_oracles},
        {9, "toy deblurring end to end", 1800.0, c_toy_deblurring},
        {10, "single-batch overfit", 300.0, c_single_batch_overfit},
        {11, "recognizer finetuning probe", 600.0, c_finetune_probe},
        {12, "seeded cli runs are bit-identical", 300.0, c_cli_determinism},
    };

    std::set<int> picked;
    for (int i = 1; i < argc; ++i) picked.insert(std::atoi(argv[i]));

    int ran = 0, failed = 0;
    for (const auto& c : all) {
        if (!picked.empty() && !picked.count(c.id)) continue;
        ++ran;
        auto t0 = std::chrono::steady_clock::now();
        bool ok = true;
        std::string detail;
        try {
            detail = c.fn();
        } catch (const std::exception& e) {
            ok = false;
            detail = e.what();
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (ok && secs > c.budget_s) {
            ok = false;
            detail = "exceeded the " + num(c.budget_s) + " s budget; " + detail;
        }
        std::printf("[%s] %2d %-44s %8.2fs  %s\n", ok ? "PASS" : "FAIL", c.id, c.name, secs,
                    detail.c_str());
        std::fflush(stdout);
        if (!ok) ++failed;
    }
    std::printf("%d/%d criteria passed\n", ran - failed, ran);

    std::error_code ec;
    fs::remove_all(scratch_root(), ec);
    return failed == 0 ? 0 : 1;
}

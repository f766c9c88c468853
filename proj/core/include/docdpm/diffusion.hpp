#pragma once

#include <functional>
#include <string>
#include <vector>

#include "docdpm/losses.hpp"
#include "docdpm/nafnet.hpp"
#include "docdpm/schedule.hpp"

namespace docdpm {

struct SamplerSpec {
    enum class Kind { ddim, ode_solver };
    enum class Spacing { uniform_t, uniform_lambda };
    Kind kind = Kind::ode_solver;
    int steps = 20;  // denoiser evaluations, not segments
    int order = 2;   // ode_solver only
    Spacing spacing = Spacing::uniform_lambda;
};

void validate_sampler_spec(const SamplerSpec& spec, int schedule_steps);

// Decreasing time nodes [T, ..., 1, 0]: `segments` integration segments whose
// interior endpoints are spaced per rule over [T, 1]; the final segment lands
// on t=0 where the update collapses to the clean prediction.
std::vector<double> build_sample_nodes(const NoiseSchedule& sched, int segments,
                                       SamplerSpec::Spacing spacing);

// Invert lambda(t) by bisection on [0, steps]; lambda is strictly decreasing.
double t_for_lambda(const NoiseSchedule& sched, double lam);

// Node sequence plus per-segment solver order summing to the requested
// evaluation budget. Order 2 spends two evaluations per segment (one at the
// left endpoint, one at the midpoint), so odd budgets split as
// (steps-1)/2 second-order segments plus the first-order final hop; even
// budgets carry one extra first-order segment before it.
struct OdePlan {
    std::vector<double> nodes;
    std::vector<int> orders;
};
OdePlan plan_ode_segments(const NoiseSchedule& sched, int steps, int order,
                          SamplerSpec::Spacing spacing);

// Clean-signal prediction hook: maps (state, time) to the estimate of r0.
// Samplers are written against this so tests can swap in exact oracles.
template <typename T>
using DenoiseFn = std::function<Tensor<T>(const Tensor<T>&, double)>;

namespace detail {
inline void check_decreasing_nodes(const std::vector<double>& nodes, int steps) {
    if (nodes.size() < 2 || nodes.front() > static_cast<double>(steps) || nodes.back() < 0.0)
        throw std::invalid_argument("sampler nodes must stay within [0, T]");
    for (std::size_t i = 1; i < nodes.size(); ++i)
        if (!(nodes[i] < nodes[i - 1]))
            throw std::invalid_argument("sampler nodes must strictly decrease");
}
}  // namespace detail

// DDIM iteration in the clean-prediction parametrization: recover the implied
// noise at the current node, then recombine at the next one. The final hop to
// t=0 (alpha_bar = 1) degenerates to returning the clean prediction.
template <typename T>
Tensor<T> ddim_integrate(const DenoiseFn<T>& denoise, Tensor<T> x,
                         const std::vector<double>& nodes, const NoiseSchedule& sched) {
    detail::check_decreasing_nodes(nodes, sched.steps);
    for (std::size_t j = 0; j + 1 < nodes.size(); ++j) {
        double ab_u = sched.alpha_bar_at(nodes[j]);
        double ab_t = sched.alpha_bar_at(nodes[j + 1]);
        Tensor<T> r0_hat = denoise(x, nodes[j]);
        check_same_shape(x, r0_hat, "ddim_integrate");
        Tensor<T> eps_hat = eps_from_prediction(x, r0_hat, ab_u);
        double a = std::sqrt(ab_t);
        double s = std::sqrt(1.0 - ab_t);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            x[i] = static_cast<T>(a * static_cast<double>(r0_hat[i]) +
                                  s * static_cast<double>(eps_hat[i]));
    }
    return x;
}

// Exponential-integrator step in lambda time. Exact for a constant
// clean-signal prediction; the order-2 variant evaluates the prediction again
// at the lambda midpoint and reuses the first-order form.
template <typename T>
Tensor<T> ode_integrate(const DenoiseFn<T>& denoise, Tensor<T> x,
                        const std::vector<double>& nodes, const std::vector<int>& orders,
                        const NoiseSchedule& sched) {
    detail::check_decreasing_nodes(nodes, sched.steps);
    if (orders.size() + 1 != nodes.size())
        throw std::invalid_argument("ode_integrate: one order per segment required");

    auto step_order1 = [&](Tensor<T>& state, double t_u, double t_t,
                           const Tensor<T>& pred) {
        double ab_u = sched.alpha_bar_at(t_u);
        double ab_t = sched.alpha_bar_at(t_t);
        if (ab_t >= 1.0) {  // sigma -> 0: e^{-h} -> 0, state -> prediction
            state = pred;
            return;
        }
        double sigma_u = std::sqrt(1.0 - ab_u);
        double alpha_t = std::sqrt(ab_t), sigma_t = std::sqrt(1.0 - ab_t);
        double h = sched.lambda_at(t_t) - sched.lambda_at(t_u);
        double ratio = sigma_t / sigma_u;
        double gain = alpha_t * (1.0 - std::exp(-h));
        for (std::int64_t i = 0; i < state.numel(); ++i)
            state[i] = static_cast<T>(ratio * static_cast<double>(state[i]) +
                                      gain * static_cast<double>(pred[i]));
    };

    for (std::size_t j = 0; j + 1 < nodes.size(); ++j) {
        double t_u = nodes[j], t_t = nodes[j + 1];
        int order = orders[j];
        if (order == 1) {
            Tensor<T> pred = denoise(x, t_u);
            check_same_shape(x, pred, "ode_integrate");
            step_order1(x, t_u, t_t, pred);
        } else if (order == 2) {
            if (sched.alpha_bar_at(t_t) >= 1.0)
                throw std::invalid_argument(
                    "ode_integrate: order-2 segment cannot target t=0");
            double lam_u = sched.lambda_at(t_u);
            double lam_t = sched.lambda_at(t_t);
            double t_mid = t_for_lambda(sched, 0.5 * (lam_u + lam_t));
            Tensor<T> pred_u = denoise(x, t_u);
            check_same_shape(x, pred_u, "ode_integrate");
            Tensor<T> mid = x;
            step_order1(mid, t_u, t_mid, pred_u);
            Tensor<T> pred_mid = denoise(mid, t_mid);
            step_order1(x, t_u, t_t, pred_mid);
        } else {
            throw std::invalid_argument("ode_integrate: order must be 1 or 2");
        }
    }
    return x;
}

// --- model plumbing ---------------------------------------------------------

template <typename T>
struct Models {
    ParamStore<T> store;
    NafUnet<T> init_net;
    NafUnet<T> den_net;
};

struct ModelConfig {
    NetworkConfig init_net;
    NetworkConfig den_net;      // in_channels fixed to 2 by make_models
    TimeEmbeddingConfig time;
};

template <typename T>
Models<T> make_models(const ModelConfig& cfg, std::uint64_t seed) {
    Models<T> m;
    Rng rng(seed);
    NetworkConfig icfg = cfg.init_net;
    icfg.in_channels = 1;
    icfg.out_channels = 1;
    m.init_net = make_naf_unet(m.store, rng, "init", icfg, false);
    NetworkConfig dcfg = cfg.den_net;
    dcfg.in_channels = 2;
    dcfg.out_channels = 1;
    m.den_net = make_naf_unet(m.store, rng, "den", dcfg, true, cfg.time);
    return m;
}

// Wrap the conditional network as a plain tensor map for the samplers.
template <typename T>
DenoiseFn<T> model_denoiser(const NafUnet<T>& den_net, const Tensor<T>& x_cond) {
    return [&den_net, x_cond](const Tensor<T>& x, double t) {
        auto joint = concat_channels(constant(x), constant(x_cond));
        std::vector<double> ts(static_cast<std::size_t>(x.dim(0)), t);
        return val(den_net.forward(joint, ts));
    };
}

template <typename T>
Tensor<T> clip_to_range(Tensor<T> x, T lo = T(-1), T hi = T(1)) {
    for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = std::clamp(x[i], lo, hi);
    return x;
}

// --- sampling entry points --------------------------------------------------

// Core restoration loop with the clean-prediction hook exposed: draw the
// terminal residual from the seed, integrate it to t=0, add the low-frequency
// estimate back, clip once.
template <typename T>
Tensor<T> restore_with_denoiser(const DenoiseFn<T>& denoise, const Tensor<T>& x_init,
                                const NoiseSchedule& sched, const SamplerSpec& spec,
                                std::uint64_t seed) {
    validate_sampler_spec(spec, sched.steps);
    Rng rng(seed);
    Tensor<T> r = rng.normal_tensor<T>(x_init.shape());
    if (spec.kind == SamplerSpec::Kind::ddim) {
        auto nodes = build_sample_nodes(sched, spec.steps, spec.spacing);
        r = ddim_integrate(denoise, std::move(r), nodes, sched);
    } else {
        auto plan = plan_ode_segments(sched, spec.steps, spec.order, spec.spacing);
        r = ode_integrate(denoise, std::move(r), plan.nodes, plan.orders, sched);
    }
    for (std::int64_t i = 0; i < r.numel(); ++i) r[i] += x_init[i];
    return clip_to_range(std::move(r));
}

template <typename T>
Tensor<T> sample_ddim(const Tensor<T>& y, const Models<T>& models, const NoiseSchedule& sched,
                      int steps, std::uint64_t seed,
                      SamplerSpec::Spacing spacing = SamplerSpec::Spacing::uniform_t) {
    SamplerSpec spec;
    spec.kind = SamplerSpec::Kind::ddim;
    spec.steps = steps;
    spec.spacing = spacing;
    Tensor<T> x_i = val(models.init_net.forward(constant(y)));
    return restore_with_denoiser(model_denoiser(models.den_net, x_i), x_i, sched, spec, seed);
}

template <typename T>
Tensor<T> sample_ode_solver(const Tensor<T>& y, const Models<T>& models,
                            const NoiseSchedule& sched, const SamplerSpec& spec,
                            std::uint64_t seed) {
    if (spec.kind != SamplerSpec::Kind::ode_solver)
        throw std::invalid_argument("sample_ode_solver: spec.kind must be ode_solver");
    Tensor<T> x_i = val(models.init_net.forward(constant(y)));
    return restore_with_denoiser(model_denoiser(models.den_net, x_i), x_i, sched, spec, seed);
}

template <typename T>
Tensor<T> restore(const Tensor<T>& y, const Models<T>& models, const NoiseSchedule& sched,
                  const SamplerSpec& spec, std::uint64_t seed) {
    if (spec.kind == SamplerSpec::Kind::ddim)
        return sample_ddim(y, models, sched, spec.steps, seed, spec.spacing);
    return sample_ode_solver(y, models, sched, spec, seed);
}

// --- training ---------------------------------------------------------------

template <typename T>
struct Batch {
    Tensor<T> gt;        // (N,1,H,W) clean targets
    Tensor<T> degraded;  // (N,1,H,W) inputs
};

struct TrainOptions {
    bool detach_initial = false;  // cut denoiser gradients into the initial net
};

// One joint update of both networks (Alg: sample t and noise per item, noise
// the residual, predict it back, descend on the combined objective).
template <typename T>
LossReport train_step(Models<T>& models, Adam<T>& opt, Rng& rng, const Batch<T>& batch,
                      const NoiseSchedule& sched, const FilterPair& fp,
                      const TrainOptions& opts = {}) {
    check_same_shape(batch.gt, batch.degraded, "train_step");
    int n = batch.gt.dim(0);

    std::vector<int> t(static_cast<std::size_t>(n));
    std::vector<double> t_real(static_cast<std::size_t>(n));
    std::vector<T> sqrt_ab(static_cast<std::size_t>(n)), sqrt_1mab(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int ti = static_cast<int>(rng.uniform_int(1, sched.steps));
        t[static_cast<std::size_t>(i)] = ti;
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

    auto bad = [](double v) { return !std::isfinite(v); };
    if (bad(rep.l_total)) {
        std::string which = bad(rep.l_mse)    ? "l_mse"
                            : bad(rep.l_low)  ? "l_low"
                            : bad(rep.l_dpm)  ? "l_dpm"
                            : bad(rep.l_high) ? "l_high"
                                              : "l_total";
        throw std::runtime_error("train_step: non-finite loss in " + which);
    }

    models.store.zero_grad();
    backward(loss);
    opt.step(models.store);
    return rep;
}

}  // namespace docdpm

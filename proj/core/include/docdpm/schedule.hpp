#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "docdpm/tensor.hpp"

namespace docdpm {

// Discrete noise schedule over timesteps 1..T. Index i of each vector holds
// the value for timestep t = i+1; alpha_bar at t = 0 is identically 1 and is
// only reachable through alpha_bar_at().
struct NoiseSchedule {
    int steps = 0;
    std::vector<double> beta;
    std::vector<double> alpha;
    std::vector<double> alpha_bar;

    // Continuous lookup with log-linear interpolation between the discrete
    // points; t may be fractional in [0, steps].
    double alpha_bar_at(double t) const;

    // log signal-to-noise ratio lambda(t) = ln(sqrt(ab) / sqrt(1-ab)).
    double lambda_at(double t) const {
        double ab = alpha_bar_at(t);
        return 0.5 * (std::log(ab) - std::log1p(-ab));
    }
};

// beta rises linearly from beta_start at t=1 to beta_end at t=T.
NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

// r_t = sqrt(alpha_bar_t) * r0 + sqrt(1 - alpha_bar_t) * eps, per batch item.
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& r0, const std::vector<int>& t, const Tensor<T>& eps,
                          const NoiseSchedule& sched) {
    check_same_shape(r0, eps, "forward_diffuse");
    int n = r0.dim(0);
    if (static_cast<int>(t.size()) != n)
        throw std::invalid_argument("forward_diffuse: one timestep per batch item required");
    std::int64_t stride = r0.numel() / n;
    Tensor<T> out(r0.shape());
    for (int i = 0; i < n; ++i) {
        if (t[static_cast<std::size_t>(i)] < 1 || t[static_cast<std::size_t>(i)] > sched.steps)
            throw std::invalid_argument("forward_diffuse: timestep out of range");
        double ab = sched.alpha_bar[static_cast<std::size_t>(t[static_cast<std::size_t>(i)]) - 1];
        double a = std::sqrt(ab);
        double s = std::sqrt(1.0 - ab);
        // accumulate in double so the only rounding is the final store
        for (std::int64_t j = 0; j < stride; ++j)
            out[i * stride + j] = static_cast<T>(a * static_cast<double>(r0[i * stride + j]) +
                                                 s * static_cast<double>(eps[i * stride + j]));
    }
    return out;
}

// Invert the forward kernel around a clean-signal estimate:
// eps_hat = (r_t - sqrt(ab) * r0_hat) / sqrt(1 - ab).
template <typename T>
Tensor<T> eps_from_prediction(const Tensor<T>& r_t, const Tensor<T>& r0_hat, double alpha_bar) {
    check_same_shape(r_t, r0_hat, "eps_from_prediction");
    if (alpha_bar <= 0.0 || alpha_bar >= 1.0)
        throw std::invalid_argument("eps_from_prediction: alpha_bar must lie in (0,1)");
    double a = std::sqrt(alpha_bar);
    double s = std::sqrt(1.0 - alpha_bar);
    Tensor<T> out(r_t.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i)
        out[i] = static_cast<T>(
            (static_cast<double>(r_t[i]) - a * static_cast<double>(r0_hat[i])) / s);
    return out;
}

template <typename T>
Tensor<T> eps_from_prediction(const Tensor<T>& r_t, const Tensor<T>& r0_hat, int t,
                              const NoiseSchedule& sched) {
    if (t < 1 || t > sched.steps)
        throw std::invalid_argument("eps_from_prediction: timestep out of range");
    return eps_from_prediction(r_t, r0_hat, sched.alpha_bar[static_cast<std::size_t>(t) - 1]);
}

}  // namespace docdpm

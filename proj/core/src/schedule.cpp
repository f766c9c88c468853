#include "docdpm/schedule.hpp"

namespace docdpm {

double NoiseSchedule::alpha_bar_at(double t) const {
    if (t < 0.0 || t > static_cast<double>(steps))
        throw std::invalid_argument("alpha_bar_at: t outside [0, steps]");
    if (t == 0.0) return 1.0;
    int lo = static_cast<int>(std::floor(t));
    double frac = t - lo;
    // log alpha_bar is linear between adjacent timesteps; alpha_bar(0) = 1.
    double log_lo = lo == 0 ? 0.0 : std::log(alpha_bar[static_cast<std::size_t>(lo) - 1]);
    if (frac == 0.0) return std::exp(log_lo);
    double log_hi = std::log(alpha_bar[static_cast<std::size_t>(lo)]);
    return std::exp(log_lo + frac * (log_hi - log_lo));
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw std::invalid_argument("make_linear_schedule: steps must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end)
        throw std::invalid_argument("make_linear_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.steps = steps;
    s.beta.resize(static_cast<std::size_t>(steps));
    s.alpha.resize(static_cast<std::size_t>(steps));
    s.alpha_bar.resize(static_cast<std::size_t>(steps));
    double prod = 1.0;
    for (int i = 0; i < steps; ++i) {
        double b = steps == 1
                       ? beta_start
                       : beta_start + (beta_end - beta_start) * i / static_cast<double>(steps - 1);
        s.beta[static_cast<std::size_t>(i)] = b;
        s.alpha[static_cast<std::size_t>(i)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(i)] = prod;
    }
    return s;
}

}  // namespace docdpm

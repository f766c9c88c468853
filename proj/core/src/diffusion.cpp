#include "docdpm/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace docdpm {

void validate_sampler_spec(const SamplerSpec& spec, int schedule_steps) {
    if (spec.steps < 1) throw std::invalid_argument("sampler: steps must be positive");
    if (spec.steps > schedule_steps)
        throw std::invalid_argument("sampler: steps cannot exceed the schedule length");
    if (spec.kind == SamplerSpec::Kind::ode_solver) {
        if (spec.order != 1 && spec.order != 2)
            throw std::invalid_argument("sampler: order must be 1 or 2");
        if (spec.order == 2 && spec.steps < 2)
            throw std::invalid_argument("sampler: order 2 needs at least 2 steps");
    }
}

double t_for_lambda(const NoiseSchedule& sched, double lam) {
    double lo = 0.0, hi = static_cast<double>(sched.steps);
    if (lam >= sched.lambda_at(lo)) return lo;
    if (lam <= sched.lambda_at(hi)) return hi;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        if (sched.lambda_at(mid) >= lam)
            lo = mid;  // lambda decreases with t: target is at or beyond mid
        else
            hi = mid;
        if (hi - lo < 1e-13 * static_cast<double>(sched.steps)) break;
    }
    return 0.5 * (lo + hi);
}

std::vector<double> build_sample_nodes(const NoiseSchedule& sched, int segments,
                                       SamplerSpec::Spacing spacing) {
    if (segments < 1) throw std::invalid_argument("build_sample_nodes: segments must be positive");
    if (segments > sched.steps)
        throw std::invalid_argument("build_sample_nodes: more segments than schedule steps");
    double big_t = static_cast<double>(sched.steps);
    std::vector<double> nodes;
    nodes.reserve(static_cast<std::size_t>(segments) + 1);
    nodes.push_back(big_t);
    if (segments > 1) {
        int interior_segments = segments - 1;  // spanning [T, 1]
        if (spacing == SamplerSpec::Spacing::uniform_t) {
            for (int j = 1; j < interior_segments; ++j) {
                double raw = big_t - (big_t - 1.0) * static_cast<double>(j) /
                                         static_cast<double>(interior_segments);
                nodes.push_back(static_cast<double>(std::llround(raw)));
            }
        } else {
            double lam_lo = sched.lambda_at(big_t);
            double lam_hi = sched.lambda_at(1.0);
            for (int j = 1; j < interior_segments; ++j) {
                double lam = lam_lo + (lam_hi - lam_lo) * static_cast<double>(j) /
                                          static_cast<double>(interior_segments);
                nodes.push_back(t_for_lambda(sched, lam));
            }
        }
        nodes.push_back(1.0);
    }
    nodes.push_back(0.0);
    for (std::size_t i = 1; i < nodes.size(); ++i)
        if (!(nodes[i] < nodes[i - 1]))
            throw std::runtime_error("build_sample_nodes: node sequence failed to decrease");
    return nodes;
}

OdePlan plan_ode_segments(const NoiseSchedule& sched, int steps, int order,
                          SamplerSpec::Spacing spacing) {
    SamplerSpec spec;
    spec.kind = SamplerSpec::Kind::ode_solver;
    spec.steps = steps;
    spec.order = order;
    spec.spacing = spacing;
    validate_sampler_spec(spec, sched.steps);

    OdePlan plan;
    if (order == 1) {
        plan.nodes = build_sample_nodes(sched, steps, spacing);
        plan.orders.assign(static_cast<std::size_t>(steps), 1);
        return plan;
    }
    int second_order = (steps - 1) / 2;
    int extra_first = (steps - 1) - 2 * second_order;  // 0 when steps is odd, else 1
    int segments = second_order + extra_first + 1;     // +1: final hop to t=0
    plan.nodes = build_sample_nodes(sched, segments, spacing);
    plan.orders.assign(static_cast<std::size_t>(second_order), 2);
    plan.orders.insert(plan.orders.end(), static_cast<std::size_t>(extra_first), 1);
    plan.orders.push_back(1);
    return plan;
}

}  // namespace docdpm

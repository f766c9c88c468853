#pragma once

#include "docdpm/autograd.hpp"
#include "docdpm/freq.hpp"

namespace docdpm {

// Scalar values of every loss term from one training step, for logging.
struct LossReport {
    double l_mse = 0.0;
    double l_low = 0.0;
    double l_init = 0.0;
    double l_dpm = 0.0;
    double l_high = 0.0;
    double l_denoiser = 0.0;
    double l_ctc = 0.0;
    double l_total = 0.0;
};

// Initial-predictor objective: squared error plus a doubled low-frequency
// term so coarse structure dominates what this network learns.
template <typename T>
Var<T> init_loss(const Var<T>& x_pred, const Var<T>& x_gt, const FilterPair& fp,
                 LossReport* rep = nullptr) {
    auto d = sub(x_gt, x_pred);
    auto l_mse = mean_all(mul(d, d));
    auto dl = filter2d_reflect(d, fp.low);
    auto l_low = mean_all(mul(dl, dl));
    auto total = add(l_mse, scale(l_low, T(2)));
    if (rep) {
        rep->l_mse = static_cast<double>(val(l_mse)[0]);
        rep->l_low = static_cast<double>(val(l_low)[0]);
        rep->l_init = static_cast<double>(val(total)[0]);
    }
    return total;
}

// Denoiser objective on the residual estimate: unsquared (pixel-normalized
// L2) distance plus a doubled high-frequency term.
template <typename T>
Var<T> denoiser_loss(const Var<T>& r0_hat, const Var<T>& r0, const FilterPair& fp,
                     LossReport* rep = nullptr) {
    auto d = sub(r0, r0_hat);
    auto l_dpm = rms_norm(d);
    auto l_high = rms_norm(filter2d_reflect(d, fp.high));
    auto total = add(l_dpm, scale(l_high, T(2)));
    if (rep) {
        rep->l_dpm = static_cast<double>(val(l_dpm)[0]);
        rep->l_high = static_cast<double>(val(l_high)[0]);
        rep->l_denoiser = static_cast<double>(val(total)[0]);
    }
    return total;
}

// Joint objective: half weight on the initial predictor, full weight on the
// denoiser.
template <typename T>
Var<T> total_loss(const Var<T>& x_pred, const Var<T>& x_gt, const Var<T>& r0_hat,
                  const Var<T>& r0, const FilterPair& fp, LossReport* rep = nullptr) {
    auto li = init_loss(x_pred, x_gt, fp, rep);
    auto ld = denoiser_loss(r0_hat, r0, fp, rep);
    auto total = add(scale(li, T(0.5)), ld);
    if (rep) rep->l_total = static_cast<double>(val(total)[0]);
    return total;
}

}  // namespace docdpm

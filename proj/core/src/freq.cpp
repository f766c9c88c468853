#include "docdpm/freq.hpp"

#include <cmath>

namespace docdpm {

FilterPair make_filter_pair(int size, double sigma) {
    if (size < 1 || size % 2 == 0)
        throw std::invalid_argument("make_filter_pair: size must be odd and positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("make_filter_pair: sigma must be positive");
    int r = size / 2;
    FilterPair fp;
    fp.radius = r;
    fp.low = Tensor<double>({size, size});
    double sum = 0.0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            double v = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
            fp.low.at2(dy + r, dx + r) = v;
            sum += v;
        }
    for (std::int64_t i = 0; i < fp.low.numel(); ++i) fp.low[i] /= sum;
    fp.high = Tensor<double>({size, size});
    for (std::int64_t i = 0; i < fp.high.numel(); ++i) fp.high[i] = -fp.low[i];
    fp.high.at2(r, r) += 1.0;
    return fp;
}

}  // namespace docdpm

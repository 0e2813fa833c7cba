#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "panoseg/params.hpp"
#include "panoseg/rng.hpp"
#include "panoseg/tensor.hpp"

namespace panoseg::testutil {

/// Relative error with an absolute floor guarding vanishing denominators.
inline double rel_err(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> vals(static_cast<size_t>(numel(shape)));
    for (auto& v : vals) v = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>::from(std::move(shape), std::move(vals));
}

/// Central finite differences against the analytic gradient for every
/// element of every leaf. `forward` must rebuild the graph from the leaves'
/// current values and return a scalar.
template <typename T>
struct GradCheckResult {
    double max_rel_err = 0.0;
    std::int64_t checked = 0;
};

template <typename T>
GradCheckResult<T> check_gradients(std::vector<Tensor<T>> leaves,
                                   const std::function<Tensor<T>()>& forward,
                                   double h_scale = 1e-5, double floor = 1e-4) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    Tensor<T> loss = forward();
    backward(loss);

    GradCheckResult<T> result;
    NoGradGuard no_grad;
    for (auto& leaf : leaves) {
        T* data = leaf.mutable_data();
        const auto& grad = leaf.grad();
        for (std::int64_t i = 0; i < leaf.numel(); ++i) {
            const T saved = data[i];
            const T h = static_cast<T>(h_scale * std::max(1.0, std::abs(double(saved))));
            data[i] = saved + h;
            const double f_plus = static_cast<double>(forward().item());
            data[i] = saved - h;
            const double f_minus = static_cast<double>(forward().item());
            data[i] = saved;
            const double fd = (f_plus - f_minus) / (2.0 * static_cast<double>(h));
            const double an = grad.empty() ? 0.0 : static_cast<double>(grad[static_cast<size_t>(i)]);
            result.max_rel_err = std::max(result.max_rel_err, rel_err(an, fd, floor));
            ++result.checked;
        }
    }
    return result;
}

}  // namespace panoseg::testutil

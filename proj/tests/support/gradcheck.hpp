#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "mpa/tensor.hpp"

// Central finite-difference gradient checking, the independent oracle for
// every differentiable op. make_loss() must rebuild the graph from the
// given leaves on each call so perturbed data is picked up.

namespace mpa::testsupport {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

inline double rel_error(double analytic, double numeric, double atol) {
    const double diff = std::fabs(analytic - numeric);
    const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
    if (scale < atol) {
        return diff < atol ? 0.0 : diff / atol;
    }
    return diff / scale;
}

inline GradCheckResult check_gradients(const std::function<mpa::Tensor<double>()>& make_loss,
                                       std::vector<mpa::Tensor<double>> leaves,
                                       double step = 1e-5, double atol = 1e-7) {
    GradCheckResult result;
    mpa::Tensor<double> loss = make_loss();
    mpa::backward(loss);

    for (auto& leaf : leaves) {
        if (!leaf.requires_grad()) {
            continue;
        }
        auto& data = leaf.mutable_data();
        const auto& grad = leaf.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double original = data[i];
            data[i] = original + step;
            const double up = make_loss().item();
            data[i] = original - step;
            const double down = make_loss().item();
            data[i] = original;
            const double numeric = (up - down) / (2.0 * step);
            const double analytic = grad.empty() ? 0.0 : grad[i];
            result.max_rel_error = std::max(result.max_rel_error,
                                            rel_error(analytic, numeric, atol));
            ++result.checked;
        }
    }
    return result;
}

}  // namespace mpa::testsupport

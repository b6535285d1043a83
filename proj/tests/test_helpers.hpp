#pragma once

#include <cmath>
#include <vector>

#include "uxmil/rng.hpp"
#include "uxmil/tensor.hpp"

namespace testutil {

template <class S>
uxmil::Tensor<S> random_tensor(uxmil::Shape shape, uxmil::Rng& rng, double lo = -1.0,
                               double hi = 1.0) {
    uxmil::Tensor<S> t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i)
        t.data()[i] = static_cast<S>(lo + (hi - lo) * rng.uniform());
    return t;
}

template <class S>
double max_abs_diff(const uxmil::Tensor<S>& a, const uxmil::Tensor<S>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i))));
    return m;
}

template <class S>
double max_abs_diff(const uxmil::Tensor<S>& a, const std::vector<S>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b[i])));
    return m;
}

}  // namespace testutil

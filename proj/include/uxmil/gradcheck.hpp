#pragma once

#include <functional>

#include "uxmil/tensor.hpp"

namespace uxmil {

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::size_t checked = 0;
};

// Compares tape gradients of f (scalar-valued, deterministic) against central
// finite differences. Relative error denominator floors at 1e-8. When
// max_elems > 0, a deterministic sample of elements is checked instead of all
// of them (large parameter groups).
template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>(Tape<S>*, Tensor<S>&)>& f, Tensor<S>& x,
                           double step = 1e-4, double tol = 1e-4, std::size_t max_elems = 0,
                           uint64_t sample_seed = 0) {
    x.set_requires_grad(true);
    x.zero_grad();
    Tape<S> tape;
    Tensor<S> y = f(&tape, x);
    if (y.numel() != 1)
        throw ShapeError("grad_check: f must be scalar-valued, got " + shape_str(y.shape()));
    backward(y, tape);
    std::vector<S> analytic(x.grad(), x.grad() + x.numel());

    std::vector<std::size_t> elems;
    if (max_elems == 0 || max_elems >= x.numel()) {
        elems.resize(x.numel());
        for (std::size_t i = 0; i < x.numel(); ++i) elems[i] = i;
    } else {
        Rng rng(Rng::mix(sample_seed ^ 0x5bd1e995u));
        for (std::size_t k = 0; k < max_elems; ++k)
            elems.push_back(static_cast<std::size_t>(rng.uniform_int(x.numel())));
    }

    GradCheckReport report;
    report.checked = elems.size();
    for (std::size_t i : elems) {
        const S orig = x.at(i);
        x.at(i) = orig + static_cast<S>(step);
        const double fp = static_cast<double>(f(nullptr, x).at(0));
        x.at(i) = orig - static_cast<S>(step);
        const double fm = static_cast<double>(f(nullptr, x).at(0));
        x.at(i) = orig;
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = static_cast<double>(analytic[i]);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        report.max_rel_err = std::max(report.max_rel_err, std::abs(a - numeric) / denom);
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace uxmil

#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <vector>

#include "uxmil/common.hpp"
#include "uxmil/rng.hpp"

namespace uxmil {

// Dense row-major tensor. Copies are shallow; data, gradient buffer and the
// requires_grad flag live in one shared block, so every handle to a tensor
// sees the same autodiff state.
template <class S>
class Tensor {
    struct Impl {
        std::vector<S> data;
        std::vector<S> grad;  // empty until requires_grad is set
        bool requires_grad = false;
    };

public:
    Tensor() = default;

    explicit Tensor(Shape shape, S fill = S(0)) : shape_(std::move(shape)) {
        impl_ = std::make_shared<Impl>();
        impl_->data.assign(shape_numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<S> values) : shape_(std::move(shape)) {
        if (values.size() != shape_numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape_));
        impl_ = std::make_shared<Impl>();
        impl_->data = std::move(values);
    }

    static Tensor scalar(S v) { return Tensor(Shape{}, std::vector<S>{v}); }

    static Tensor randn(Shape shape, Rng& rng, double stddev) {
        Tensor t(std::move(shape));
        for (auto& v : t.impl_->data) v = static_cast<S>(rng.gaussian() * stddev);
        return t;
    }

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return impl_ ? impl_->data.size() : 0; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    S* data() { return impl_->data.data(); }
    const S* data() const { return impl_->data.data(); }
    S& at(std::size_t i) { return impl_->data[i]; }
    S at(std::size_t i) const { return impl_->data[i]; }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool v) {
        impl_->requires_grad = v;
        if (v && impl_->grad.size() != impl_->data.size())
            impl_->grad.assign(impl_->data.size(), S(0));
    }

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    S* grad() { return impl_->grad.data(); }
    const S* grad() const { return impl_->grad.data(); }

    void zero_grad() {
        if (impl_ && !impl_->grad.empty())
            std::fill(impl_->grad.begin(), impl_->grad.end(), S(0));
    }

    // Deep copy of values only (fresh block, no autodiff state).
    Tensor clone_values() const {
        Tensor t;
        t.shape_ = shape_;
        t.impl_ = std::make_shared<Impl>();
        t.impl_->data = impl_->data;
        return t;
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s) +
                             ": element counts differ");
        Tensor t = *this;  // shares the block
        t.shape_ = std::move(s);
        return t;
    }

    bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

    bool all_finite() const {
        for (S v : impl_->data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

private:
    Shape shape_;
    std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Ops push their backward closures in execution order and
// register their outputs; backward() replays closures in reverse, which is a
// valid topological order.
//
// Gradient semantics: leaf tensors (parameters, inputs marked by the caller)
// accumulate across backward calls; op-output grads are reset at the start of
// every backward pass so repeated calls add exactly dL/dleaf each time.
template <class S>
class Tape {
public:
    void record(std::function<void()> backward_fn) {
        ops_.push_back(std::move(backward_fn));
    }
    void register_output(const Tensor<S>& t) { outputs_.push_back(t); }

    std::size_t size() const { return ops_.size(); }
    bool empty() const { return ops_.empty(); }
    void clear() {
        ops_.clear();
        outputs_.clear();
    }

    void reset_output_grads() {
        for (auto& t : outputs_) t.zero_grad();
    }
    void replay() {
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> ops_;
    std::vector<Tensor<S>> outputs_;
};

template <class S>
void backward(Tensor<S>& loss, Tape<S>& tape) {
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (tape.empty())
        throw ValidationError("backward: tape is empty; loss was not recorded on it");
    if (!loss.requires_grad())
        throw ValidationError("backward: loss does not require grad (no parameter feeds it)");
    tape.reset_output_grads();
    loss.grad()[0] = S(1);
    tape.replay();
}

template <class S>
inline void check_finite(const Tensor<S>& t, const char* op) {
    if (checked_mode() && !t.all_finite())
        throw ValidationError(std::string(op) + ": non-finite value in output of shape " +
                              shape_str(t.shape()));
}

}  // namespace uxmil

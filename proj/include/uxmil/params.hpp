#pragma once

#include <string>
#include <vector>

#include "uxmil/tensor.hpp"

namespace uxmil {

// Named handle into a model's parameter tensor (shares storage).
template <class S>
struct NamedParam {
    std::string name;
    Tensor<S> value;
};

template <class S>
using ParamList = std::vector<NamedParam<S>>;

template <class S>
void mark_trainable(ParamList<S>& params) {
    for (auto& p : params) p.value.set_requires_grad(true);
}

template <class S>
void zero_grads(ParamList<S>& params) {
    for (auto& p : params) p.value.zero_grad();
}

}  // namespace uxmil

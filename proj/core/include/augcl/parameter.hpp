#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "augcl/tensor.hpp"

namespace augcl {

/// Trainable tensor plus its Adam moment buffers.
template <std::floating_point T>
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor<T> initial)
        : name(std::move(name)),
          value(std::move(initial)),
          adam_m(value.numel(), T(0)),
          adam_v(value.numel(), T(0)) {
        value.set_requires_grad(true);
    }

    std::string name;
    Tensor<T> value;
    std::vector<T> adam_m;
    std::vector<T> adam_v;
    std::uint64_t step_count = 0;

    void reset_optimizer_state() {
        std::fill(adam_m.begin(), adam_m.end(), T(0));
        std::fill(adam_v.begin(), adam_v.end(), T(0));
        step_count = 0;
    }
};

}  // namespace augcl

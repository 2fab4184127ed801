#include "augcl/adam.hpp"

#include <cmath>

#include "augcl/errors.hpp"

namespace augcl {

template <std::floating_point T>
void adam_step(std::span<Parameter<T>* const> params, const AdamOptions& options) {
    for (const Parameter<T>* p : params) {
        if (!p->value.has_grad()) throw ContractError("adam_step: parameter '" + p->name + "' has no gradient");
    }
    const T lr = static_cast<T>(options.lr);
    const T b1 = static_cast<T>(options.beta1);
    const T b2 = static_cast<T>(options.beta2);
    const T eps = static_cast<T>(options.eps);
    for (Parameter<T>* p : params) {
        p->step_count += 1;
        const T t = static_cast<T>(p->step_count);
        const T correction1 = T(1) - std::pow(b1, t);
        const T correction2 = T(1) - std::pow(b2, t);
        auto value = p->value.data();
        auto grad = p->value.grad();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const T g = grad[i];
            p->adam_m[i] = b1 * p->adam_m[i] + (T(1) - b1) * g;
            p->adam_v[i] = b2 * p->adam_v[i] + (T(1) - b2) * g * g;
            const T m_hat = p->adam_m[i] / correction1;
            const T v_hat = p->adam_v[i] / correction2;
            value[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
        p->value.zero_grad();
    }
}

template void adam_step<float>(std::span<Parameter<float>* const>, const AdamOptions&);
template void adam_step<double>(std::span<Parameter<double>* const>, const AdamOptions&);

}  // namespace augcl

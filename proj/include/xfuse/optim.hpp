#pragma once

#include <vector>

#include "xfuse/tensor.hpp"

namespace xfuse {

// Bias-corrected Adam over a parameter group. Every parameter must carry a
// populated gradient; gradients are zeroed after the update.
template <typename T>
void adam_step(const std::vector<ParameterT<T>*>& params, T lr, T beta1 = T(0.9),
               T beta2 = T(0.999), T eps = T(1e-8));

// theta_T <- alpha * theta_T + (1 - alpha) * theta_S, elementwise.
// Lists must align by name and shape; teacher values never carry gradients.
template <typename T>
void ema_update(const std::vector<ParameterT<T>*>& teacher,
                const std::vector<ParameterT<T>*>& student, T alpha);

// same blend for non-parameter float arrays (running statistics)
template <typename T>
void ema_blend(std::vector<T>& teacher, const std::vector<T>& student, T alpha);

} // namespace xfuse

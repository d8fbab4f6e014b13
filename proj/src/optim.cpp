#include "xfuse/optim.hpp"

#include <cmath>

namespace xfuse {

template <typename T>
void adam_step(const std::vector<ParameterT<T>*>& params, T lr, T beta1, T beta2, T eps) {
    for (ParameterT<T>* p : params) {
        if (!p->value.has_grad())
            throw ContractError("adam_step: parameter '" + p->name + "' has no gradient");
    }
    for (ParameterT<T>* p : params) {
        auto& theta = p->value.data();
        auto& g = p->value.grad();
        p->step_count += 1;
        T bc1 = T(1) - static_cast<T>(std::pow(double(beta1), double(p->step_count)));
        T bc2 = T(1) - static_cast<T>(std::pow(double(beta2), double(p->step_count)));
        for (size_t i = 0; i < theta.size(); ++i) {
            p->adam_m[i] = beta1 * p->adam_m[i] + (T(1) - beta1) * g[i];
            p->adam_v[i] = beta2 * p->adam_v[i] + (T(1) - beta2) * g[i] * g[i];
            T mhat = p->adam_m[i] / bc1;
            T vhat = p->adam_v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
        p->value.zero_grad();
    }
}

template <typename T>
void ema_update(const std::vector<ParameterT<T>*>& teacher,
                const std::vector<ParameterT<T>*>& student, T alpha) {
    if (teacher.size() != student.size())
        throw ContractError("ema_update: parameter lists have different lengths");
    for (size_t k = 0; k < teacher.size(); ++k) {
        if (teacher[k]->name != student[k]->name)
            throw ContractError("ema_update: parameter lists misaligned at '" + teacher[k]->name +
                                "' vs '" + student[k]->name + "'");
        if (teacher[k]->value.shape() != student[k]->value.shape())
            throw ContractError("ema_update: shape mismatch for '" + teacher[k]->name + "'");
        ema_blend(teacher[k]->value.data(), student[k]->value.data(), alpha);
    }
}

template <typename T>
void ema_blend(std::vector<T>& teacher, const std::vector<T>& student, T alpha) {
    for (size_t i = 0; i < teacher.size(); ++i)
        teacher[i] = alpha * teacher[i] + (T(1) - alpha) * student[i];
}

template void adam_step<float>(const std::vector<ParameterT<float>*>&, float, float, float, float);
template void adam_step<double>(const std::vector<ParameterT<double>*>&, double, double, double, double);
template void ema_update<float>(const std::vector<ParameterT<float>*>&,
                                const std::vector<ParameterT<float>*>&, float);
template void ema_update<double>(const std::vector<ParameterT<double>*>&,
                                 const std::vector<ParameterT<double>*>&, double);
template void ema_blend<float>(std::vector<float>&, const std::vector<float>&, float);
template void ema_blend<double>(std::vector<double>&, const std::vector<double>&, double);

} // namespace xfuse

#include "xfuse/gradcheck.hpp"

#include <cmath>

#include "xfuse/ops.hpp"

namespace xfuse {

GradCheckReport grad_check(const std::string& op_name,
                           const std::function<TensorT<double>()>& fn,
                           const std::vector<TensorT<double>*>& leaves, double tolerance,
                           double step) {
    for (TensorT<double>* leaf : leaves) leaf->zero_grad();
    TensorT<double> loss = fn();
    backward(loss);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (TensorT<double>* leaf : leaves) {
        if (leaf->has_grad())
            analytic.push_back(leaf->grad());
        else
            analytic.emplace_back(leaf->data().size(), 0.0);
    }

    double max_rel = 0.0;
    {
        NoGradGuard ng;
        for (size_t li = 0; li < leaves.size(); ++li) {
            auto& values = leaves[li]->data();
            for (size_t i = 0; i < values.size(); ++i) {
                double keep = values[i];
                values[i] = keep + step;
                double fplus = fn().item();
                values[i] = keep - step;
                double fminus = fn().item();
                values[i] = keep;
                double numeric = (fplus - fminus) / (2.0 * step);
                double a = analytic[li][i];
                double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
                max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
            }
        }
    }
    for (TensorT<double>* leaf : leaves) leaf->zero_grad();

    GradCheckReport report;
    report.op_name = op_name;
    report.max_rel_error = max_rel;
    report.tolerance = tolerance;
    report.passed = max_rel <= tolerance;
    return report;
}

bool probe_away_from_kinks(const std::function<TensorT<double>()>& fn,
                           const std::function<void(int)>& resample, int max_attempts,
                           double min_distance) {
    NoGradGuard ng;
    for (int attempt = 0; attempt < max_attempts; ++attempt) {
        resample(attempt);
        reset_relu_kink_distance();
        (void)fn();
        if (relu_kink_distance() >= min_distance) return true;
    }
    return false;
}

} // namespace xfuse

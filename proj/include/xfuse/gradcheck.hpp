#pragma once

#include <functional>
#include <string>
#include <vector>

#include "xfuse/tensor.hpp"

namespace xfuse {

struct GradCheckReport {
    std::string op_name;
    double max_rel_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// Central-difference audit of a scalar-valued function of the given leaves.
// fn is re-evaluated in double precision for the numeric side; relative
// error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport grad_check(const std::string& op_name,
                           const std::function<TensorT<double>()>& fn,
                           const std::vector<TensorT<double>*>& leaves, double tolerance,
                           double step = 1e-3);

// Re-draws probes until the forward pass keeps every relu preactivation at
// least min_distance away from the kink (so finite-difference steps cannot
// cross it). resample(k) must freshly randomize leaf values for attempt k.
bool probe_away_from_kinks(const std::function<TensorT<double>()>& fn,
                           const std::function<void(int)>& resample, int max_attempts = 64,
                           double min_distance = 1e-4);

} // namespace xfuse

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfuse/tensor.hpp"

namespace xfuse {

// rows = ground truth, cols = prediction; mergeable by addition
struct ConfusionMatrix {
    int64_t class_count = 0;
    std::vector<int64_t> counts; // C*C

    explicit ConfusionMatrix(int64_t c = 0) : class_count(c), counts(static_cast<size_t>(c * c), 0) {}
    int64_t& at(int64_t gt, int64_t pred) { return counts[static_cast<size_t>(gt * class_count + pred)]; }
    int64_t at(int64_t gt, int64_t pred) const {
        return counts[static_cast<size_t>(gt * class_count + pred)];
    }
    int64_t total() const;
    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

// gt entries of -1 are skipped
void confusion_update(ConfusionMatrix& cm, const std::vector<int32_t>& pred,
                      const std::vector<int32_t>& gt);

struct IouResult {
    std::vector<double> iou;      // per class, 0 where absent
    std::vector<bool> present;    // TP+FP+FN > 0
    double miou = 0.0;            // mean over present classes
};

// IoU_c = TP_c / (TP_c + FP_c + FN_c); absent classes are excluded from the mean
IouResult iou_per_class(const ConfusionMatrix& cm);

// per point argmax of the averaged 2D/3D probabilities; ties break toward
// the lower class index
std::vector<int32_t> ensemble_xm(const Tensor& p2d_logits, const Tensor& p3d_logits);

std::vector<int32_t> argmax_rows(const Tensor& logits);

} // namespace xfuse

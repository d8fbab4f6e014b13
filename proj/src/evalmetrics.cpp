#include "xfuse/evalmetrics.hpp"

#include <cmath>

#include "xfuse/ops.hpp"

namespace xfuse {

int64_t ConfusionMatrix::total() const {
    int64_t t = 0;
    for (int64_t v : counts) t += v;
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.class_count != class_count)
        throw ContractError("confusion matrices have different class counts");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

void confusion_update(ConfusionMatrix& cm, const std::vector<int32_t>& pred,
                      const std::vector<int32_t>& gt) {
    if (pred.size() != gt.size())
        throw ContractError("confusion_update: prediction and label lengths disagree");
    for (size_t i = 0; i < pred.size(); ++i) {
        if (gt[i] == -1) continue;
        if (gt[i] < 0 || gt[i] >= cm.class_count || pred[i] < 0 || pred[i] >= cm.class_count)
            throw ContractError("confusion_update: class id outside [0," +
                                std::to_string(cm.class_count) + ") at position " + std::to_string(i));
        cm.at(gt[i], pred[i])++;
    }
}

IouResult iou_per_class(const ConfusionMatrix& cm) {
    int64_t c = cm.class_count;
    IouResult result;
    result.iou.assign(static_cast<size_t>(c), 0.0);
    result.present.assign(static_cast<size_t>(c), false);
    double sum = 0.0;
    int64_t present_count = 0;
    for (int64_t k = 0; k < c; ++k) {
        int64_t tp = cm.at(k, k);
        int64_t fp = 0, fn = 0;
        for (int64_t j = 0; j < c; ++j) {
            if (j != k) {
                fp += cm.at(j, k);
                fn += cm.at(k, j);
            }
        }
        int64_t denom = tp + fp + fn;
        if (denom == 0) continue;
        result.present[static_cast<size_t>(k)] = true;
        result.iou[static_cast<size_t>(k)] = static_cast<double>(tp) / static_cast<double>(denom);
        sum += result.iou[static_cast<size_t>(k)];
        ++present_count;
    }
    result.miou = present_count > 0 ? sum / static_cast<double>(present_count) : 0.0;
    return result;
}

std::vector<int32_t> ensemble_xm(const Tensor& p2d_logits, const Tensor& p3d_logits) {
    if (p2d_logits.shape() != p3d_logits.shape())
        throw ContractError("ensemble_xm: logit shapes disagree");
    NoGradGuard ng;
    auto prob2d = softmax_rows(p2d_logits.detach());
    auto prob3d = softmax_rows(p3d_logits.detach());
    int64_t n = prob2d.rows(), c = prob2d.cols();
    std::vector<int32_t> pred(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int32_t best = 0;
        // accumulate in double so the tie rule is well-defined
        double best_val = 0.5 * (double(prob2d.at(i, 0)) + double(prob3d.at(i, 0)));
        for (int64_t j = 1; j < c; ++j) {
            double v = 0.5 * (double(prob2d.at(i, j)) + double(prob3d.at(i, j)));
            if (v > best_val) {
                best_val = v;
                best = static_cast<int32_t>(j);
            }
        }
        pred[static_cast<size_t>(i)] = best;
    }
    return pred;
}

std::vector<int32_t> argmax_rows(const Tensor& logits) {
    int64_t n = logits.rows(), c = logits.cols();
    std::vector<int32_t> pred(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        int32_t best = 0;
        for (int64_t j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = static_cast<int32_t>(j);
        pred[static_cast<size_t>(i)] = best;
    }
    return pred;
}

} // namespace xfuse

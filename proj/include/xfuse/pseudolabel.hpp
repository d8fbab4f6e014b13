#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xfuse/models.hpp"
#include "xfuse/scene_io.hpp"
#include "xfuse/tensor.hpp"

namespace xfuse {

// Offline pseudo-labels for one scene: argmax labels per branch with their
// softmax confidences; -1 marks entries filtered by the class-wise quantile.
struct PseudoLabelSet {
    std::vector<int32_t> y2d_hat;
    std::vector<int32_t> y3d_hat;
    std::vector<float> confidence_2d;
    std::vector<float> confidence_3d;
};

enum class XdplGranularity { Point, Batch };
XdplGranularity xdpl_granularity_from_name(const std::string& name);
std::string xdpl_granularity_name(XdplGranularity g);

// Per modality and class, keep the top keep_fraction of points by
// confidence over the whole split: the threshold is the ceil(keep * n_c)-th
// highest confidence and ties at the threshold survive.
std::vector<PseudoLabelSet> filter_by_class_quantile(std::vector<PseudoLabelSet> raw,
                                                     int64_t class_count, double keep_fraction);

// Inference over target-train scenes followed by quantile filtering.
std::vector<PseudoLabelSet> generate_pseudo_labels(FullModel& model,
                                                   const std::vector<PairedScene>& scenes,
                                                   double voxel_size, double keep_fraction);

// Pseudo-label file: magic "XFPL", version u32=1, N u32, then y2d int32[N],
// y3d int32[N], confidence_2d float32[N], confidence_3d float32[N].
void write_pseudo_labels(const PseudoLabelSet& pl, const std::filesystem::path& path);
PseudoLabelSet read_pseudo_labels(const std::filesystem::path& path);

// scene file -> sibling pseudo-label file
std::filesystem::path pseudo_label_path(const std::filesystem::path& scene_path);

// Variance-weighted pseudo supervision: each branch's CE on its pseudo
// labels is scaled by exp(-KL) of the opposing head pair. Weights are plain
// values (no gradient path); CE ignores -1.
template <typename T>
TensorT<T> xdpl_loss(const PredictionSetT<T>& preds, const PseudoLabelSet& pl,
                     const std::vector<T>& class_weights,
                     XdplGranularity granularity = XdplGranularity::Point,
                     bool uniform_weight = false);

} // namespace xfuse

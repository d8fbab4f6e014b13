#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "xfuse/models.hpp"
#include "xfuse/scene.hpp"
#include "xfuse/tensor.hpp"

namespace xfuse {

// Source sample re-dressed in target style: low-frequency image content from
// the target, point density matched to the target.
struct StylizedPair {
    std::vector<float> image_st;  // H*W*3, clamped to [0,1]
    std::vector<float> points_st; // N*3, uniformly rescaled source points
    uint32_t source_scene_id = 0;
    uint32_t target_scene_id = 0;
};

// Per channel: swap the centered low-frequency square (side
// floor(beta*min(H,W)), containing DC) of the source spectrum for the
// target's, then invert and clamp.
std::vector<float> style_transfer_2d(const std::vector<float>& src_image,
                                     const std::vector<float>& tgt_image, int64_t height,
                                     int64_t width, double beta);

// bounding-box density of a cloud: volume / point count
double point_cloud_density(const std::vector<float>& points);

// scale source coordinates by cbrt(density(target) / density(source))
std::vector<float> style_transfer_3d(const std::vector<float>& src_points,
                                     const std::vector<float>& tgt_points);

StylizedPair make_stylized_pair(const PairedScene& src, const PairedScene& tgt, double beta,
                                bool use_mmst);

// L = KL(sm(p2d) || sm(p3d_m)) + KL(sm(p3d) || sm(p2d_m)); the main
// predictions act as fixed targets, only the mimicry heads learn.
template <typename T>
TensorT<T> mpd_loss(const PredictionSetT<T>& preds);

// Teacher forward on stylized inputs; outputs are plain values with no tape.
template <typename T>
std::pair<TensorT<T>, TensorT<T>> teacher_forward(FullModelT<T>& teacher,
                                                  const SceneInputsT<T>& stylized);

// KL(sm(p_st_2d) || sm(p_s_2d)) + KL(sm(p_st_3d) || sm(p_s_3d)); teacher side fixed.
template <typename T>
TensorT<T> dpd_loss_single(const TensorT<T>& p_st_2d, const TensorT<T>& p_st_3d,
                           const TensorT<T>& p_s_2d, const TensorT<T>& p_s_3d);

// ensemble alignment: P_fus = sm(p_st_2d + p_st_3d), then
// KL(P_fus || sm(p_s_2d)) + KL(P_fus || sm(p_s_3d))
template <typename T>
TensorT<T> dpd_loss_fusion(const TensorT<T>& p_st_2d, const TensorT<T>& p_st_3d,
                           const TensorT<T>& p_s_2d, const TensorT<T>& p_s_3d);

} // namespace xfuse

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xfuse/fusion.hpp"
#include "xfuse/ops.hpp"
#include "xfuse/rng.hpp"
#include "xfuse/scene.hpp"
#include "xfuse/tensor.hpp"

namespace xfuse {

struct ModelConfig {
    int64_t d1 = 32;          // 2D feature width
    int64_t d2 = 32;          // 3D feature width
    int64_t df = 32;          // fusion width
    int64_t db = 16;          // hybrid bottleneck width
    int64_t enc2d_hidden = 8; // first conv width
    int64_t memory_len = 16;  // K
    int64_t class_count = 5;
    AttnNorm attn_norm = AttnNorm::Double;
};

template <typename T>
struct LinearT {
    ParameterT<T> weight; // in x out
    ParameterT<T> bias;   // 1 x out

    TensorT<T> forward(const TensorT<T>& x) const {
        return add_rowvec(matmul(x, weight.value), bias.value);
    }
};

template <typename T>
struct BatchNormStateT {
    ParameterT<T> gamma;
    ParameterT<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
};

// Per-scene model inputs: constant tensors plus index structures.
template <typename T>
struct SceneInputsT {
    TensorT<T> image; // (H*W) x 3
    int64_t height = 0, width = 0;
    TensorT<T> points_centered; // N x 3
    std::vector<int32_t> pixel_index;
    std::vector<int32_t> voxel_cell;
    int64_t voxel_count = 0;
};

template <typename T>
SceneInputsT<T> make_scene_inputs(const PairedScene& scene, double voxel_size);

// stylized-sample variant: same image/pixel association, rescaled points
template <typename T>
SceneInputsT<T> make_scene_inputs(const std::vector<float>& image, int64_t height, int64_t width,
                                  const std::vector<float>& points,
                                  const std::vector<int32_t>& pixel_index, double voxel_size);

template <typename T>
struct FeatureBundleT {
    TensorT<T> f2d;         // N x D1
    TensorT<T> f3d;         // N x D2
    TensorT<T> fus_refined; // N x Df
    TensorT<T> f_mix;       // N x D1
};

// All four classifier outputs, stored as logits.
template <typename T>
struct PredictionSetT {
    TensorT<T> p2d;   // main 2D head on the hybrid feature
    TensorT<T> p2d_m; // 2D mimicry head on the raw 2D feature
    TensorT<T> p3d;   // main 3D head
    TensorT<T> p3d_m; // 3D mimicry head
};

using FeatureBundle = FeatureBundleT<float>;
using PredictionSet = PredictionSetT<float>;

// Student network: toy 2D/3D encoders, shared memory-attention fusion,
// hybrid mix, and the four linear heads.
template <typename T>
struct FullModelT {
    ModelConfig cfg;

    // 2D encoder: two 3x3 local-mixing layers with relu
    LinearT<T> conv1, conv2;
    // 3D encoder: point MLP, voxel-mean aggregation, final linear
    LinearT<T> point_mlp, point_out;
    // fusion: per-modality memory attention, adapter, fusion attention
    MemoryUnitsT<T> mem2d, mem3d, memf;
    LinearT<T> phi1;       // (D1+D2) -> Df, relu
    LinearT<T> phi2;       // Df -> Df, then batchnorm + relu
    BatchNormStateT<T> phi2_bn;
    // hybrid bottleneck: Df -> Db -> concat -> D1
    LinearT<T> mix_in, mix_out;
    // heads
    LinearT<T> head_2d, head_2d_m, head_3d, head_3d_m;

    bool training = true;        // batchnorm mode
    bool update_running = true;  // fold batch stats into running stats

    static FullModelT make(const ModelConfig& cfg, uint64_t seed);

    TensorT<T> encode_2d(const SceneInputsT<T>& in) const;
    TensorT<T> encode_3d(const SceneInputsT<T>& in) const;
    TensorT<T> refine_fusion(const TensorT<T>& f2d, const TensorT<T>& f3d);
    TensorT<T> mix_hybrid(const TensorT<T>& f2d, const TensorT<T>& fus_refined) const;

    FeatureBundleT<T> features(const SceneInputsT<T>& in);
    PredictionSetT<T> predict_all(const FeatureBundleT<T>& bundle) const;
    PredictionSetT<T> forward(const SceneInputsT<T>& in);

    std::vector<ParameterT<T>*> parameters();
    std::vector<std::pair<std::string, std::vector<T>*>> buffers();

    FullModelT clone() const;
};

using FullModel = FullModelT<float>;

} // namespace xfuse

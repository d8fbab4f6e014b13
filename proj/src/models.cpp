#include "xfuse/models.hpp"

#include <cmath>

namespace xfuse {

namespace {

// Kaiming-style uniform fan-in init, drawn in double and cast so the float
// and double instantiations of one seed agree exactly.
template <typename T>
LinearT<T> make_linear(const std::string& name, int64_t in, int64_t out, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::vector<T> w(static_cast<size_t>(in * out));
    for (T& v : w) v = static_cast<T>(rng.uniform(-bound, bound));
    LinearT<T> layer{ParameterT<T>(name + ".w", TensorT<T>::from_data({in, out}, std::move(w))),
                     ParameterT<T>(name + ".b", TensorT<T>::zeros({1, out}))};
    return layer;
}

template <typename T>
MemoryUnitsT<T> make_memory(const std::string& name, int64_t k, int64_t d, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(d));
    auto draw = [&](const std::string& suffix) {
        std::vector<T> m(static_cast<size_t>(k * d));
        for (T& v : m) v = static_cast<T>(rng.uniform(-bound, bound));
        return ParameterT<T>(name + suffix, TensorT<T>::from_data({k, d}, std::move(m)));
    };
    return MemoryUnitsT<T>{draw(".key"), draw(".value")};
}

} // namespace

template <typename T>
SceneInputsT<T> make_scene_inputs(const PairedScene& scene, double voxel_size) {
    return make_scene_inputs<T>(scene.image, scene.height, scene.width, scene.points,
                                scene.pixel_index, voxel_size);
}

template <typename T>
SceneInputsT<T> make_scene_inputs(const std::vector<float>& image, int64_t height, int64_t width,
                                  const std::vector<float>& points,
                                  const std::vector<int32_t>& pixel_index, double voxel_size) {
    SceneInputsT<T> in;
    in.height = height;
    in.width = width;
    std::vector<T> img(image.size());
    for (size_t i = 0; i < image.size(); ++i) img[i] = static_cast<T>(image[i]);
    in.image = TensorT<T>::from_data({height * width, 3}, std::move(img));

    int64_t n = static_cast<int64_t>(points.size()) / 3;
    double cx = 0, cy = 0, cz = 0;
    for (int64_t i = 0; i < n; ++i) {
        cx += points[static_cast<size_t>(3 * i)];
        cy += points[static_cast<size_t>(3 * i + 1)];
        cz += points[static_cast<size_t>(3 * i + 2)];
    }
    cx /= static_cast<double>(n);
    cy /= static_cast<double>(n);
    cz /= static_cast<double>(n);
    std::vector<T> centered(points.size());
    for (int64_t i = 0; i < n; ++i) {
        centered[static_cast<size_t>(3 * i)] = static_cast<T>(points[static_cast<size_t>(3 * i)] - cx);
        centered[static_cast<size_t>(3 * i + 1)] =
            static_cast<T>(points[static_cast<size_t>(3 * i + 1)] - cy);
        centered[static_cast<size_t>(3 * i + 2)] =
            static_cast<T>(points[static_cast<size_t>(3 * i + 2)] - cz);
    }
    in.points_centered = TensorT<T>::from_data({n, 3}, std::move(centered));
    in.pixel_index = pixel_index;
    VoxelGrid grid = voxelize(points, voxel_size);
    in.voxel_cell = grid.cell_of_point;
    in.voxel_count = grid.occupied_cells;
    return in;
}

template <typename T>
FullModelT<T> FullModelT<T>::make(const ModelConfig& cfg, uint64_t seed) {
    Rng rng(mix_seed(seed, 0x30D31));
    FullModelT<T> m;
    m.cfg = cfg;
    m.conv1 = make_linear<T>("enc2d.conv1", 9 * 3, cfg.enc2d_hidden, rng);
    m.conv2 = make_linear<T>("enc2d.conv2", 9 * cfg.enc2d_hidden, cfg.d1, rng);
    m.point_mlp = make_linear<T>("enc3d.mlp", 3, cfg.d2, rng);
    m.point_out = make_linear<T>("enc3d.out", 2 * cfg.d2, cfg.d2, rng);
    m.mem2d = make_memory<T>("fusion.mem2d", cfg.memory_len, cfg.d1, rng);
    m.mem3d = make_memory<T>("fusion.mem3d", cfg.memory_len, cfg.d2, rng);
    m.phi1 = make_linear<T>("fusion.phi1", cfg.d1 + cfg.d2, cfg.df, rng);
    m.memf = make_memory<T>("fusion.memf", cfg.memory_len, cfg.df, rng);
    m.phi2 = make_linear<T>("fusion.phi2", cfg.df, cfg.df, rng);
    m.phi2_bn.gamma = ParameterT<T>("fusion.phi2_bn.gamma", TensorT<T>::filled({1, cfg.df}, T(1)));
    m.phi2_bn.beta = ParameterT<T>("fusion.phi2_bn.beta", TensorT<T>::zeros({1, cfg.df}));
    m.phi2_bn.running_mean.assign(static_cast<size_t>(cfg.df), T(0));
    m.phi2_bn.running_var.assign(static_cast<size_t>(cfg.df), T(1));
    m.mix_in = make_linear<T>("mix.in", cfg.df, cfg.db, rng);
    m.mix_out = make_linear<T>("mix.out", cfg.d1 + cfg.db, cfg.d1, rng);
    m.head_2d = make_linear<T>("head.c1_2d", cfg.d1, cfg.class_count, rng);
    m.head_2d_m = make_linear<T>("head.c2_2d", cfg.d1, cfg.class_count, rng);
    m.head_3d = make_linear<T>("head.c1_3d", cfg.d2, cfg.class_count, rng);
    m.head_3d_m = make_linear<T>("head.c2_3d", cfg.d2, cfg.class_count, rng);
    return m;
}

template <typename T>
TensorT<T> FullModelT<T>::encode_2d(const SceneInputsT<T>& in) const {
    int64_t pixels = in.height * in.width;
    for (int32_t idx : in.pixel_index)
        if (idx < 0 || idx >= pixels)
            throw ContractError("encode_2d: pixel index " + std::to_string(idx) + " outside [0," +
                                std::to_string(pixels) + ")");
    auto h1 = relu(conv1.forward(im2col3x3(in.image, in.height, in.width)));
    auto h2 = relu(conv2.forward(im2col3x3(h1, in.height, in.width)));
    return gather_rows(h2, in.pixel_index);
}

template <typename T>
TensorT<T> FullModelT<T>::encode_3d(const SceneInputsT<T>& in) const {
    if (static_cast<int64_t>(in.voxel_cell.size()) != in.points_centered.rows())
        throw ContractError("encode_3d: voxel grid built from a different cloud (" +
                            std::to_string(in.voxel_cell.size()) + " cells vs " +
                            std::to_string(in.points_centered.rows()) + " points)");
    auto h = relu(point_mlp.forward(in.points_centered));
    auto pooled = segment_mean_broadcast(h, in.voxel_cell, in.voxel_count);
    return relu(point_out.forward(concat_cols(h, pooled)));
}

template <typename T>
TensorT<T> FullModelT<T>::refine_fusion(const TensorT<T>& f2d, const TensorT<T>& f3d) {
    auto f2d_ref = memorized_attention(f2d, mem2d, cfg.attn_norm);
    auto f3d_ref = memorized_attention(f3d, mem3d, cfg.attn_norm);
    auto fused = relu(phi1.forward(concat_cols(f2d_ref, f3d_ref)));
    auto attended = memorized_attention(fused, memf, cfg.attn_norm);
    auto lin = phi2.forward(attended);
    auto normed = batchnorm(lin, phi2_bn.gamma.value, phi2_bn.beta.value, phi2_bn.running_mean,
                            phi2_bn.running_var, training, training && update_running);
    return relu(normed);
}

template <typename T>
TensorT<T> FullModelT<T>::mix_hybrid(const TensorT<T>& f2d, const TensorT<T>& fus_refined) const {
    auto squeezed = relu(mix_in.forward(fus_refined));
    return mix_out.forward(concat_cols(f2d, squeezed));
}

template <typename T>
FeatureBundleT<T> FullModelT<T>::features(const SceneInputsT<T>& in) {
    FeatureBundleT<T> bundle;
    bundle.f2d = encode_2d(in);
    bundle.f3d = encode_3d(in);
    bundle.fus_refined = refine_fusion(bundle.f2d, bundle.f3d);
    bundle.f_mix = mix_hybrid(bundle.f2d, bundle.fus_refined);
    return bundle;
}

template <typename T>
PredictionSetT<T> FullModelT<T>::predict_all(const FeatureBundleT<T>& bundle) const {
    if (!bundle.f_mix.defined())
        throw ContractError("predict_all: hybrid feature missing from bundle");
    PredictionSetT<T> preds;
    preds.p2d = head_2d.forward(bundle.f_mix);
    preds.p2d_m = head_2d_m.forward(bundle.f2d);
    preds.p3d = head_3d.forward(bundle.f3d);
    preds.p3d_m = head_3d_m.forward(bundle.f3d);
    return preds;
}

template <typename T>
PredictionSetT<T> FullModelT<T>::forward(const SceneInputsT<T>& in) {
    auto bundle = features(in);
    return predict_all(bundle);
}

template <typename T>
std::vector<ParameterT<T>*> FullModelT<T>::parameters() {
    return {
        &conv1.weight,   &conv1.bias,    &conv2.weight,    &conv2.bias,       &point_mlp.weight,
        &point_mlp.bias, &point_out.weight, &point_out.bias, &mem2d.key,      &mem2d.value,
        &mem3d.key,      &mem3d.value,   &phi1.weight,     &phi1.bias,        &memf.key,
        &memf.value,     &phi2.weight,   &phi2.bias,       &phi2_bn.gamma,    &phi2_bn.beta,
        &mix_in.weight,  &mix_in.bias,   &mix_out.weight,  &mix_out.bias,     &head_2d.weight,
        &head_2d.bias,   &head_2d_m.weight, &head_2d_m.bias, &head_3d.weight, &head_3d.bias,
        &head_3d_m.weight, &head_3d_m.bias,
    };
}

template <typename T>
std::vector<std::pair<std::string, std::vector<T>*>> FullModelT<T>::buffers() {
    return {{"fusion.phi2_bn.running_mean", &phi2_bn.running_mean},
            {"fusion.phi2_bn.running_var", &phi2_bn.running_var}};
}

template <typename T>
FullModelT<T> FullModelT<T>::clone() const {
    FullModelT<T> copy = *this;
    // deep-copy parameter tensors (impl handles are shared after the default copy)
    auto fix = [](ParameterT<T>& p) {
        p.value = TensorT<T>::from_data(p.value.shape(), p.value.data(), true);
    };
    for (ParameterT<T>* p : copy.parameters()) fix(*p);
    return copy;
}

template struct FullModelT<float>;
template struct FullModelT<double>;

template SceneInputsT<float> make_scene_inputs<float>(const PairedScene&, double);
template SceneInputsT<double> make_scene_inputs<double>(const PairedScene&, double);
template SceneInputsT<float> make_scene_inputs<float>(const std::vector<float>&, int64_t, int64_t,
                                                      const std::vector<float>&,
                                                      const std::vector<int32_t>&, double);
template SceneInputsT<double> make_scene_inputs<double>(const std::vector<float>&, int64_t, int64_t,
                                                        const std::vector<float>&,
                                                        const std::vector<int32_t>&, double);

} // namespace xfuse

#include "xfuse/distill.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "xfuse/fft.hpp"

namespace xfuse {

std::vector<float> style_transfer_2d(const std::vector<float>& src_image,
                                     const std::vector<float>& tgt_image, int64_t height,
                                     int64_t width, double beta) {
    if (src_image.size() != tgt_image.size() ||
        src_image.size() != static_cast<size_t>(height * width * 3))
        throw DimensionError("style_transfer_2d: image sizes disagree");
    int64_t side = static_cast<int64_t>(std::floor(beta * static_cast<double>(std::min(height, width))));
    std::vector<float> out(src_image.size());

    std::vector<std::complex<double>> src_freq(static_cast<size_t>(height * width));
    std::vector<std::complex<double>> tgt_freq(static_cast<size_t>(height * width));
    // DC sits at (cy, cx) after the fftshift reindexing below
    int64_t cy = height / 2, cx = width / 2;
    int64_t r0 = cy - side / 2, c0 = cx - side / 2;

    for (int channel = 0; channel < 3; ++channel) {
        for (int64_t p = 0; p < height * width; ++p) {
            src_freq[static_cast<size_t>(p)] = src_image[static_cast<size_t>(3 * p + channel)];
            tgt_freq[static_cast<size_t>(p)] = tgt_image[static_cast<size_t>(3 * p + channel)];
        }
        dft_2d(src_freq, height, width, false);
        dft_2d(tgt_freq, height, width, false);
        // swap the centered square; (r, c) in shifted coordinates maps to
        // frequency ((r - cy) mod H, (c - cx) mod W)
        for (int64_t r = r0; r < r0 + side; ++r) {
            for (int64_t c = c0; c < c0 + side; ++c) {
                int64_t fr = ((r - cy) % height + height) % height;
                int64_t fc = ((c - cx) % width + width) % width;
                src_freq[static_cast<size_t>(fr * width + fc)] =
                    tgt_freq[static_cast<size_t>(fr * width + fc)];
            }
        }
        dft_2d(src_freq, height, width, true);
        for (int64_t p = 0; p < height * width; ++p) {
            double v = src_freq[static_cast<size_t>(p)].real();
            out[static_cast<size_t>(3 * p + channel)] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    return out;
}

double point_cloud_density(const std::vector<float>& points) {
    int64_t n = static_cast<int64_t>(points.size()) / 3;
    if (n < 2) throw ValidationError("point_cloud_density: need at least 2 points");
    double lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
        lo[a] = points[static_cast<size_t>(a)];
        hi[a] = points[static_cast<size_t>(a)];
    }
    for (int64_t i = 1; i < n; ++i) {
        for (int a = 0; a < 3; ++a) {
            double v = points[static_cast<size_t>(3 * i + a)];
            lo[a] = std::min(lo[a], v);
            hi[a] = std::max(hi[a], v);
        }
    }
    double volume = 1.0;
    for (int a = 0; a < 3; ++a) {
        double extent = hi[a] - lo[a];
        if (!(extent > 0.0))
            throw ValidationError("point_cloud_density: degenerate bounding box on axis " +
                                  std::to_string(a));
        volume *= extent;
    }
    return volume / static_cast<double>(n);
}

std::vector<float> style_transfer_3d(const std::vector<float>& src_points,
                                     const std::vector<float>& tgt_points) {
    double ds = point_cloud_density(src_points);
    double dt = point_cloud_density(tgt_points);
    double scale = std::cbrt(dt / ds);
    std::vector<float> out(src_points.size());
    for (size_t i = 0; i < src_points.size(); ++i)
        out[i] = static_cast<float>(scale * src_points[i]);
    return out;
}

StylizedPair make_stylized_pair(const PairedScene& src, const PairedScene& tgt, double beta,
                                bool use_mmst) {
    StylizedPair pair;
    pair.source_scene_id = src.scene_id;
    pair.target_scene_id = tgt.scene_id;
    if (use_mmst) {
        pair.image_st = style_transfer_2d(src.image, tgt.image, src.height, src.width, beta);
        pair.points_st = style_transfer_3d(src.points, tgt.points);
    } else {
        pair.image_st = src.image;
        pair.points_st = src.points;
    }
    return pair;
}

template <typename T>
TensorT<T> mpd_loss(const PredictionSetT<T>& preds) {
    int64_t n = preds.p2d.rows();
    if (preds.p2d_m.rows() != n || preds.p3d.rows() != n || preds.p3d_m.rows() != n)
        throw ContractError("mpd_loss: prediction row counts disagree");
    auto target_2d = softmax_rows(preds.p2d.detach());
    auto target_3d = softmax_rows(preds.p3d.detach());
    auto a = kl_divergence(target_2d, softmax_rows(preds.p3d_m));
    auto b = kl_divergence(target_3d, softmax_rows(preds.p2d_m));
    return add(a, b);
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> teacher_forward(FullModelT<T>& teacher,
                                                  const SceneInputsT<T>& stylized) {
    NoGradGuard ng;
    bool keep_update = teacher.update_running;
    teacher.update_running = false; // teacher statistics come from the student via EMA
    auto preds = teacher.forward(stylized);
    teacher.update_running = keep_update;
    return {preds.p2d.detach(), preds.p3d.detach()};
}

template <typename T>
TensorT<T> dpd_loss_single(const TensorT<T>& p_st_2d, const TensorT<T>& p_st_3d,
                           const TensorT<T>& p_s_2d, const TensorT<T>& p_s_3d) {
    if (p_st_2d.shape() != p_s_2d.shape() || p_st_3d.shape() != p_s_3d.shape())
        throw ContractError("dpd_loss_single: teacher/student shapes disagree");
    auto a = kl_divergence(softmax_rows(p_st_2d.detach()), softmax_rows(p_s_2d));
    auto b = kl_divergence(softmax_rows(p_st_3d.detach()), softmax_rows(p_s_3d));
    return add(a, b);
}

template <typename T>
TensorT<T> dpd_loss_fusion(const TensorT<T>& p_st_2d, const TensorT<T>& p_st_3d,
                           const TensorT<T>& p_s_2d, const TensorT<T>& p_s_3d) {
    if (p_st_2d.shape() != p_st_3d.shape() || p_st_2d.shape() != p_s_2d.shape() ||
        p_st_2d.shape() != p_s_3d.shape())
        throw ContractError("dpd_loss_fusion: shapes disagree");
    // logits are summed before the softmax (standard ensemble)
    auto fused = softmax_rows(add(p_st_2d.detach(), p_st_3d.detach()));
    auto a = kl_divergence(fused, softmax_rows(p_s_2d));
    auto b = kl_divergence(fused, softmax_rows(p_s_3d));
    return add(a, b);
}

template TensorT<float> mpd_loss<float>(const PredictionSetT<float>&);
template TensorT<double> mpd_loss<double>(const PredictionSetT<double>&);
template std::pair<TensorT<float>, TensorT<float>> teacher_forward<float>(FullModelT<float>&,
                                                                          const SceneInputsT<float>&);
template std::pair<TensorT<double>, TensorT<double>>
teacher_forward<double>(FullModelT<double>&, const SceneInputsT<double>&);
template TensorT<float> dpd_loss_single<float>(const TensorT<float>&, const TensorT<float>&,
                                               const TensorT<float>&, const TensorT<float>&);
template TensorT<double> dpd_loss_single<double>(const TensorT<double>&, const TensorT<double>&,
                                                 const TensorT<double>&, const TensorT<double>&);
template TensorT<float> dpd_loss_fusion<float>(const TensorT<float>&, const TensorT<float>&,
                                               const TensorT<float>&, const TensorT<float>&);
template TensorT<double> dpd_loss_fusion<double>(const TensorT<double>&, const TensorT<double>&,
                                                 const TensorT<double>&, const TensorT<double>&);

} // namespace xfuse

#include "xfuse/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace xfuse {

XdplGranularity xdpl_granularity_from_name(const std::string& name) {
    if (name == "point") return XdplGranularity::Point;
    if (name == "batch") return XdplGranularity::Batch;
    throw ParameterError("unknown xdpl_granularity '" + name + "' (expected point|batch)");
}

std::string xdpl_granularity_name(XdplGranularity g) {
    return g == XdplGranularity::Point ? "point" : "batch";
}

std::vector<PseudoLabelSet> filter_by_class_quantile(std::vector<PseudoLabelSet> raw,
                                                     int64_t class_count, double keep_fraction) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw ParameterError("keep_fraction must lie in (0,1], got " + std::to_string(keep_fraction));

    // one threshold per (modality, class) over the whole split
    for (int modality = 0; modality < 2; ++modality) {
        std::vector<std::vector<float>> conf_per_class(static_cast<size_t>(class_count));
        for (const auto& pl : raw) {
            const auto& labels = modality == 0 ? pl.y2d_hat : pl.y3d_hat;
            const auto& conf = modality == 0 ? pl.confidence_2d : pl.confidence_3d;
            for (size_t i = 0; i < labels.size(); ++i)
                if (labels[i] >= 0) conf_per_class[static_cast<size_t>(labels[i])].push_back(conf[i]);
        }
        std::vector<float> thresholds(static_cast<size_t>(class_count),
                                      -std::numeric_limits<float>::infinity());
        for (int64_t c = 0; c < class_count; ++c) {
            auto& confs = conf_per_class[static_cast<size_t>(c)];
            if (confs.empty()) continue;
            std::sort(confs.begin(), confs.end(), std::greater<float>());
            size_t keep = static_cast<size_t>(
                std::ceil(keep_fraction * static_cast<double>(confs.size())));
            keep = std::min(std::max<size_t>(keep, 1), confs.size());
            thresholds[static_cast<size_t>(c)] = confs[keep - 1];
        }
        for (auto& pl : raw) {
            auto& labels = modality == 0 ? pl.y2d_hat : pl.y3d_hat;
            const auto& conf = modality == 0 ? pl.confidence_2d : pl.confidence_3d;
            for (size_t i = 0; i < labels.size(); ++i) {
                if (labels[i] < 0) continue;
                if (conf[i] < thresholds[static_cast<size_t>(labels[i])]) labels[i] = -1;
            }
        }
    }
    return raw;
}

std::vector<PseudoLabelSet> generate_pseudo_labels(FullModel& model,
                                                   const std::vector<PairedScene>& scenes,
                                                   double voxel_size, double keep_fraction) {
    NoGradGuard ng;
    bool was_training = model.training;
    model.training = false;
    std::vector<PseudoLabelSet> raw;
    raw.reserve(scenes.size());
    for (const auto& scene : scenes) {
        auto inputs = make_scene_inputs<float>(scene, voxel_size);
        auto preds = model.forward(inputs);
        auto prob2d = softmax_rows(preds.p2d);
        auto prob3d = softmax_rows(preds.p3d);
        int64_t n = prob2d.rows(), c = prob2d.cols();
        PseudoLabelSet pl;
        pl.y2d_hat.resize(static_cast<size_t>(n));
        pl.y3d_hat.resize(static_cast<size_t>(n));
        pl.confidence_2d.resize(static_cast<size_t>(n));
        pl.confidence_3d.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) {
            int32_t best2 = 0, best3 = 0;
            for (int64_t j = 1; j < c; ++j) {
                if (prob2d.at(i, j) > prob2d.at(i, best2)) best2 = static_cast<int32_t>(j);
                if (prob3d.at(i, j) > prob3d.at(i, best3)) best3 = static_cast<int32_t>(j);
            }
            pl.y2d_hat[static_cast<size_t>(i)] = best2;
            pl.y3d_hat[static_cast<size_t>(i)] = best3;
            pl.confidence_2d[static_cast<size_t>(i)] = prob2d.at(i, best2);
            pl.confidence_3d[static_cast<size_t>(i)] = prob3d.at(i, best3);
        }
        raw.push_back(std::move(pl));
    }
    model.training = was_training;
    return filter_by_class_quantile(std::move(raw), model.cfg.class_count, keep_fraction);
}

namespace {
constexpr char kPlMagic[4] = {'X', 'F', 'P', 'L'};
constexpr uint32_t kPlVersion = 1;
} // namespace

void write_pseudo_labels(const PseudoLabelSet& pl, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kPlMagic, 4);
    uint32_t version = kPlVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    uint32_t n = static_cast<uint32_t>(pl.y2d_hat.size());
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(pl.y2d_hat.data()), 4 * n);
    out.write(reinterpret_cast<const char*>(pl.y3d_hat.data()), 4 * n);
    out.write(reinterpret_cast<const char*>(pl.confidence_2d.data()), 4 * n);
    out.write(reinterpret_cast<const char*>(pl.confidence_3d.data()), 4 * n);
    if (!out) throw IoError("write failed for " + path.string());
}

PseudoLabelSet read_pseudo_labels(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    size_t offset = 0;
    auto read_raw = [&](void* dst, size_t bytes) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
        if (in.gcount() != static_cast<std::streamsize>(bytes))
            throw FormatError(path.string() + ": truncated at byte offset " + std::to_string(offset));
        offset += bytes;
    };
    read_raw(magic, 4);
    if (std::memcmp(magic, kPlMagic, 4) != 0)
        throw FormatError(path.string() + ": bad magic at byte offset 0");
    uint32_t version;
    read_raw(&version, 4);
    if (version != kPlVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
    uint32_t n;
    read_raw(&n, 4);
    PseudoLabelSet pl;
    pl.y2d_hat.resize(n);
    pl.y3d_hat.resize(n);
    pl.confidence_2d.resize(n);
    pl.confidence_3d.resize(n);
    read_raw(pl.y2d_hat.data(), 4 * n);
    read_raw(pl.y3d_hat.data(), 4 * n);
    read_raw(pl.confidence_2d.data(), 4 * n);
    read_raw(pl.confidence_3d.data(), 4 * n);
    return pl;
}

std::filesystem::path pseudo_label_path(const std::filesystem::path& scene_path) {
    auto out = scene_path;
    out.replace_extension(".xfpl");
    return out;
}

template <typename T>
TensorT<T> xdpl_loss(const PredictionSetT<T>& preds, const PseudoLabelSet& pl,
                     const std::vector<T>& class_weights, XdplGranularity granularity,
                     bool uniform_weight) {
    int64_t n = preds.p2d.rows();
    if (static_cast<int64_t>(pl.y2d_hat.size()) != n || static_cast<int64_t>(pl.y3d_hat.size()) != n)
        throw ContractError("xdpl_loss: pseudo-label count does not match prediction rows");

    // the variance factor is an observed weight, not a gradient path, so it
    // is computed outside the tape
    auto make_weight_rows = [&](const TensorT<T>& var_p, const TensorT<T>& var_q) {
        NoGradGuard ng;
        auto rows = kl_divergence_rows(softmax_rows(var_p.detach()), softmax_rows(var_q.detach()));
        std::vector<T> w(rows.data().size());
        for (size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(std::exp(-double(rows.data()[i])));
        return TensorT<T>::from_data({n, 1}, std::move(w));
    };
    auto make_weight_scalar = [&](const TensorT<T>& var_p, const TensorT<T>& var_q) {
        NoGradGuard ng;
        auto v = kl_divergence(softmax_rows(var_p.detach()), softmax_rows(var_q.detach()));
        return static_cast<T>(std::exp(-double(v.item())));
    };

    auto term = [&](const TensorT<T>& main_logits, const std::vector<int32_t>& labels,
                    const TensorT<T>& var_p, const TensorT<T>& var_q) -> TensorT<T> {
        int64_t kept = 0;
        for (int32_t y : labels)
            if (y >= 0) ++kept;
        if (kept == 0) return TensorT<T>::scalar(T(0));
        if (uniform_weight) return weighted_cross_entropy(main_logits, labels, class_weights);
        if (granularity == XdplGranularity::Batch) {
            T w = make_weight_scalar(var_p, var_q);
            return mul_scalar(weighted_cross_entropy(main_logits, labels, class_weights), w);
        }
        auto weights = make_weight_rows(var_p, var_q);
        auto ce = cross_entropy_rows(main_logits, labels, class_weights);
        return mul_scalar(sum_all(mul(ce, weights)), T(1) / static_cast<T>(kept));
    };

    // 2D supervision weighted by the (3D main, 2D mimic) divergence and vice versa
    auto l1 = term(preds.p2d, pl.y2d_hat, preds.p3d, preds.p2d_m);
    auto l2 = term(preds.p3d, pl.y3d_hat, preds.p2d, preds.p3d_m);
    return add(l1, l2);
}

template TensorT<float> xdpl_loss<float>(const PredictionSetT<float>&, const PseudoLabelSet&,
                                         const std::vector<float>&, XdplGranularity, bool);
template TensorT<double> xdpl_loss<double>(const PredictionSetT<double>&, const PseudoLabelSet&,
                                           const std::vector<double>&, XdplGranularity, bool);

} // namespace xfuse

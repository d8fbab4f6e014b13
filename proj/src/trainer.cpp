#include "xfuse/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "xfuse/optim.hpp"
#include "xfuse/rng.hpp"

namespace xfuse {

std::vector<float> class_weights(const std::vector<int64_t>& histogram) {
    int64_t total = 0;
    for (int64_t h : histogram) {
        if (h < 0) throw ParameterError("class_weights: negative histogram entry");
        total += h;
    }
    if (total == 0) throw ParameterError("class_weights: all-zero histogram");
    std::vector<float> weights(histogram.size());
    for (size_t c = 0; c < histogram.size(); ++c) {
        double f = static_cast<double>(histogram[c]) / static_cast<double>(total);
        weights[c] = static_cast<float>(1.0 / std::log(1.02 + f));
    }
    return weights;
}

std::string metrics_header() {
    return "iter,loss_seg,loss_mpd_s,loss_mpd_t,loss_dpd_sm,loss_dpd_fm,loss_xdpl,total,"
           "val_miou_2d,val_miou_3d,val_miou_xm";
}

namespace {
std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}
} // namespace

std::string metrics_row(const IterationRecord& r) {
    std::ostringstream out;
    out << r.iter << ',' << fmt(r.loss_seg) << ',' << fmt(r.loss_mpd_s) << ',' << fmt(r.loss_mpd_t)
        << ',' << fmt(r.loss_dpd_sm) << ',' << fmt(r.loss_dpd_fm) << ',' << fmt(r.loss_xdpl) << ','
        << fmt(r.total) << ',';
    if (r.val_miou_2d >= 0)
        out << fmt(r.val_miou_2d) << ',' << fmt(r.val_miou_3d) << ',' << fmt(r.val_miou_xm);
    else
        out << ",,";
    return out.str();
}

std::vector<IterationRecord> parse_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != metrics_header())
        throw FormatError(path.string() + ": bad metrics header");
    std::vector<IterationRecord> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        while (fields.size() < 11) fields.emplace_back();
        IterationRecord r;
        r.iter = std::stoll(fields[0]);
        r.loss_seg = std::stod(fields[1]);
        r.loss_mpd_s = std::stod(fields[2]);
        r.loss_mpd_t = std::stod(fields[3]);
        r.loss_dpd_sm = std::stod(fields[4]);
        r.loss_dpd_fm = std::stod(fields[5]);
        r.loss_xdpl = std::stod(fields[6]);
        r.total = std::stod(fields[7]);
        r.val_miou_2d = fields[8].empty() ? -1 : std::stod(fields[8]);
        r.val_miou_3d = fields[9].empty() ? -1 : std::stod(fields[9]);
        r.val_miou_xm = fields[10].empty() ? -1 : std::stod(fields[10]);
        rows.push_back(r);
    }
    return rows;
}

EvalSummary evaluate_model(FullModel& model, const std::vector<PairedScene>& scenes,
                           double voxel_size) {
    NoGradGuard ng;
    bool was_training = model.training;
    model.training = false;
    EvalSummary summary;
    summary.cm_2d = ConfusionMatrix(model.cfg.class_count);
    summary.cm_3d = ConfusionMatrix(model.cfg.class_count);
    summary.cm_xm = ConfusionMatrix(model.cfg.class_count);
    for (const auto& scene : scenes) {
        auto inputs = make_scene_inputs<float>(scene, voxel_size);
        auto preds = model.forward(inputs);
        confusion_update(summary.cm_2d, argmax_rows(preds.p2d), scene.labels);
        confusion_update(summary.cm_3d, argmax_rows(preds.p3d), scene.labels);
        confusion_update(summary.cm_xm, ensemble_xm(preds.p2d, preds.p3d), scene.labels);
    }
    model.training = was_training;
    summary.miou_2d = iou_per_class(summary.cm_2d).miou;
    summary.miou_3d = iou_per_class(summary.cm_3d).miou;
    summary.miou_xm = iou_per_class(summary.cm_xm).miou;
    return summary;
}

Trainer::Trainer(const TrainConfig& cfg, const std::filesystem::path& out_dir)
    : cfg_(cfg), out_dir_(out_dir) {
    std::filesystem::create_directories(out_dir_);
    auto manifest = read_manifest(std::filesystem::path(cfg_.data) / "manifest.txt");

    // with every target-side weight at zero this is a pure source run and
    // target training data is never read
    use_target_ = cfg_.lambda2 > 0 || cfg_.lambda3 > 0 || cfg_.lambda4 > 0 || cfg_.lambda5 > 0;

    int64_t class_count = -1;
    for (const auto& entry : manifest.entries) {
        if (entry.role == SplitRole::SrcTrain) {
            src_train_.push_back(load_training_scene(manifest, entry));
            class_count = src_train_.back().class_count;
        } else if (entry.role == SplitRole::TgtTrain && use_target_) {
            // UDA mode never surfaces target-train labels, whatever the manifest says
            ManifestEntry gated = entry;
            if (cfg_.mode == SplitMode::UDA) gated.labeled = false;
            tgt_train_.push_back(load_training_scene(manifest, gated));
        } else if (entry.role == SplitRole::TgtVal) {
            tgt_val_.push_back(read_scene(manifest.resolve(entry)));
        }
    }
    if (src_train_.empty()) throw ManifestError("manifest has no src_train scenes");
    if (use_target_ && tgt_train_.empty()) throw ManifestError("manifest has no tgt_train scenes");

    // stage 2 needs a pseudo-label file per target-train scene, checked now
    if (cfg_.stage == 2 && use_target_ && cfg_.lambda5 > 0) {
        std::filesystem::path pl_dir =
            cfg_.pseudo_labels.empty() ? std::filesystem::path(cfg_.data) / "scenes"
                                       : std::filesystem::path(cfg_.pseudo_labels);
        size_t ti = 0;
        std::string missing;
        for (const auto& entry : manifest.entries) {
            if (entry.role != SplitRole::TgtTrain) continue;
            auto pl_file = pl_dir / pseudo_label_path(std::filesystem::path(entry.path).filename());
            if (!std::filesystem::exists(pl_file)) {
                missing += (missing.empty() ? "" : ", ") + pl_file.string();
                ++ti;
                continue;
            }
            pseudo_labels_.push_back(read_pseudo_labels(pl_file));
            ++ti;
        }
        if (!missing.empty())
            throw ContractError("stage 2 requires pseudo-label files; missing: " + missing);
    }

    // log-smoothed class weights from source-train labels only
    std::vector<int64_t> histogram(static_cast<size_t>(class_count), 0);
    for (const auto& scene : src_train_)
        for (int32_t y : scene.labels)
            if (y >= 0) histogram[static_cast<size_t>(y)]++;
    class_weights_ = class_weights(histogram);

    student_ = FullModel::make(cfg_.model_config(class_count), cfg_.seed);
    for (const auto& scene : src_train_)
        src_inputs_.push_back(make_scene_inputs<float>(scene, cfg_.voxel_size));
    for (const auto& scene : tgt_train_)
        tgt_inputs_.push_back(make_scene_inputs<float>(scene, cfg_.voxel_size));

    if (cfg_.stage == 2 && cfg_.stage2_init == "checkpoint") {
        if (cfg_.stage1_checkpoint.empty())
            throw ParameterError("stage 2 with stage2_init=checkpoint needs stage1_checkpoint");
        auto by_name = index_arrays(load_checkpoint(cfg_.stage1_checkpoint));
        load_model_state(student_, "student/", by_name);
        teacher_ = student_.clone();
        load_model_state(teacher_, "teacher/", by_name);
    } else {
        teacher_ = student_.clone();
    }

    for (Parameter* p : student_.parameters()) {
        bool is_3d = p->name.rfind("enc3d.", 0) == 0 || p->name.rfind("head.c1_3d", 0) == 0 ||
                     p->name.rfind("head.c2_3d", 0) == 0 || p->name.rfind("fusion.mem3d", 0) == 0;
        (is_3d ? params_3d_ : params_2d_).push_back(p);
    }

    if (!cfg_.resume_from.empty()) load_resume(cfg_.resume_from);
}

double Trainer::lr_at(int64_t iter, double base) const {
    double lr = base;
    for (int64_t drop : cfg_.lr_drop_iters)
        if (iter >= drop) lr /= 10.0;
    return lr;
}

namespace {

// optional train-time transforms: horizontal image flip (with the pixel
// association remapped) and a rotation of the cloud about the vertical axis
// seen only by the 3D encoder
SceneInputsT<float> augmented_inputs(const PairedScene& scene, bool flip, double rot_angle,
                                     double voxel_size) {
    std::vector<float> image = scene.image;
    std::vector<int32_t> pixel_index = scene.pixel_index;
    if (flip) {
        for (int64_t v = 0; v < scene.height; ++v)
            for (int64_t u = 0; u < scene.width; ++u)
                for (int j = 0; j < 3; ++j)
                    image[static_cast<size_t>((v * scene.width + u) * 3 + j)] =
                        scene.image[static_cast<size_t>((v * scene.width + (scene.width - 1 - u)) * 3 + j)];
        for (auto& idx : pixel_index) {
            int64_t v = idx / scene.width, u = idx % scene.width;
            idx = static_cast<int32_t>(v * scene.width + (scene.width - 1 - u));
        }
    }
    std::vector<float> points = scene.points;
    if (rot_angle != 0.0) {
        double c = std::cos(rot_angle), s = std::sin(rot_angle);
        for (size_t i = 0; i < points.size(); i += 3) {
            double x = points[i], z = points[i + 2];
            points[i] = static_cast<float>(c * x + s * z);
            points[i + 2] = static_cast<float>(-s * x + c * z);
        }
    }
    return make_scene_inputs<float>(image, scene.height, scene.width, points, pixel_index,
                                    voxel_size);
}

} // namespace

IterationRecord Trainer::step(int64_t iter) {
    Rng rng(mix_seed(cfg_.seed, 0x57E9000 + static_cast<uint64_t>(iter)));
    int64_t bsz = cfg_.batch_size;

    std::vector<size_t> src_batch, tgt_batch;
    for (int64_t b = 0; b < bsz; ++b)
        src_batch.push_back(static_cast<size_t>(rng.uniform_int(src_train_.size())));
    if (use_target_)
        for (int64_t b = 0; b < bsz; ++b)
            tgt_batch.push_back(static_cast<size_t>(rng.uniform_int(tgt_train_.size())));

    double inv_b = 1.0 / static_cast<double>(bsz);
    IterationRecord rec;
    rec.iter = iter;

    student_.training = true;
    bool augmenting = cfg_.augment_flip || cfg_.augment_rotz;
    auto student_inputs = [&](const PairedScene& scene,
                              const SceneInputsT<float>& plain) -> SceneInputsT<float> {
        if (!augmenting) return plain;
        bool flip = cfg_.augment_flip && rng.uniform() < 0.5;
        double angle = cfg_.augment_rotz ? rng.uniform(0.0, 6.283185307179586) : 0.0;
        if (!flip && angle == 0.0) return plain;
        return augmented_inputs(scene, flip, angle, cfg_.voxel_size);
    };

    // ----- source batch: supervision, source mimicking, teacher alignment ----
    for (size_t si : src_batch) {
        const PairedScene& scene = src_train_[si];
        auto preds = student_.forward(student_inputs(scene, src_inputs_[si]));
        auto seg = add(weighted_cross_entropy(preds.p2d, scene.labels, class_weights_),
                       weighted_cross_entropy(preds.p3d, scene.labels, class_weights_));
        auto contrib = seg;
        rec.loss_seg += inv_b * seg.item();

        if (cfg_.lambda1 > 0) {
            auto mpd = mpd_loss(preds);
            rec.loss_mpd_s += inv_b * mpd.item();
            contrib = add(contrib, mul_scalar(mpd, static_cast<float>(cfg_.lambda1)));
        }
        if ((cfg_.lambda3 > 0 || cfg_.lambda4 > 0)) {
            // stylized copy of this source scene in the style of a random
            // target batch member; without MMST the teacher sees it raw
            StylizedPair stylized;
            if (cfg_.mmst && use_target_) {
                const PairedScene& partner = tgt_train_[tgt_batch[rng.uniform_int(tgt_batch.size())]];
                stylized = make_stylized_pair(scene, partner, cfg_.beta, true);
            } else {
                stylized = make_stylized_pair(scene, scene, cfg_.beta, false);
            }
            auto st_inputs = make_scene_inputs<float>(stylized.image_st, scene.height, scene.width,
                                                      stylized.points_st, scene.pixel_index,
                                                      cfg_.voxel_size);
            auto [p_st_2d, p_st_3d] = teacher_forward(teacher_, st_inputs);
            if (cfg_.lambda3 > 0) {
                auto dpd_sm = dpd_loss_single(p_st_2d, p_st_3d, preds.p2d, preds.p3d);
                rec.loss_dpd_sm += inv_b * dpd_sm.item();
                contrib = add(contrib, mul_scalar(dpd_sm, static_cast<float>(cfg_.lambda3)));
            }
            if (cfg_.lambda4 > 0) {
                auto dpd_fm = dpd_loss_fusion(p_st_2d, p_st_3d, preds.p2d, preds.p3d);
                rec.loss_dpd_fm += inv_b * dpd_fm.item();
                contrib = add(contrib, mul_scalar(dpd_fm, static_cast<float>(cfg_.lambda4)));
            }
        }
        auto scaled = mul_scalar(contrib, static_cast<float>(inv_b));
        backward(scaled);
    }

    // ----- target batch: cross-modal mimicking, pseudo supervision ----------
    bool target_forward = cfg_.lambda2 > 0 || (cfg_.stage == 2 && cfg_.lambda5 > 0) ||
                          cfg_.mode == SplitMode::SSDA;
    for (size_t bi = 0; target_forward && bi < tgt_batch.size(); ++bi) {
        size_t ti = tgt_batch[bi];
        const PairedScene& scene = tgt_train_[ti];
        auto preds = student_.forward(student_inputs(scene, tgt_inputs_[ti]));
        TensorT<float> contrib = Tensor::scalar(0.0f);
        bool any = false;
        if (cfg_.lambda2 > 0) {
            auto mpd = mpd_loss(preds);
            rec.loss_mpd_t += inv_b * mpd.item();
            contrib = add(contrib, mul_scalar(mpd, static_cast<float>(cfg_.lambda2)));
            any = true;
        }
        if (cfg_.stage == 2 && cfg_.lambda5 > 0) {
            auto xdpl = xdpl_loss(preds, pseudo_labels_[ti], class_weights_, cfg_.xdpl_granularity,
                                  cfg_.xdpl_uniform_weight);
            rec.loss_xdpl += inv_b * xdpl.item();
            contrib = add(contrib, mul_scalar(xdpl, static_cast<float>(cfg_.lambda5)));
            any = true;
        }
        // labeled target scenes (SSDA) contribute the supervised loss
        bool has_labels = false;
        for (int32_t y : scene.labels)
            if (y >= 0) { has_labels = true; break; }
        if (has_labels) {
            auto seg = add(weighted_cross_entropy(preds.p2d, scene.labels, class_weights_),
                           weighted_cross_entropy(preds.p3d, scene.labels, class_weights_));
            rec.loss_seg += inv_b * seg.item();
            contrib = add(contrib, seg);
            any = true;
        }
        if (!any) continue;
        auto scaled = mul_scalar(contrib, static_cast<float>(inv_b));
        backward(scaled);
    }

    // distillation must never write gradients into the teacher
    for (Parameter* p : teacher_.parameters())
        if (p->value.has_grad())
            throw ContractError("teacher parameter '" + p->name + "' received a gradient");

    // parameters outside the active loss mix have an exact zero gradient
    for (Parameter* p : student_.parameters())
        if (!p->value.has_grad()) p->value.impl()->ensure_grad();

    // one optimizer step over the accumulated gradients, then the EMA update
    adam_step<float>(params_2d_, static_cast<float>(lr_at(iter, cfg_.lr_2d)));
    adam_step<float>(params_3d_, static_cast<float>(lr_at(iter, cfg_.lr_3d)));
    ema_update<float>(teacher_.parameters(), student_.parameters(),
                      static_cast<float>(cfg_.ema_alpha));
    {
        auto tb = teacher_.buffers();
        auto sb = student_.buffers();
        for (size_t i = 0; i < tb.size(); ++i)
            ema_blend(*tb[i].second, *sb[i].second, static_cast<float>(cfg_.ema_alpha));
    }

    rec.total = rec.loss_seg + cfg_.lambda1 * rec.loss_mpd_s + cfg_.lambda2 * rec.loss_mpd_t +
                cfg_.lambda3 * rec.loss_dpd_sm + cfg_.lambda4 * rec.loss_dpd_fm +
                cfg_.lambda5 * rec.loss_xdpl;
    return rec;
}

EvalSummary Trainer::validate() { return evaluate_model(student_, tgt_val_, cfg_.voxel_size); }

void Trainer::save(const std::filesystem::path& path, int64_t iter) {
    std::vector<NamedArray> arrays = model_state(student_, "student/");
    auto teacher_arrays = model_state(teacher_, "teacher/");
    arrays.insert(arrays.end(), teacher_arrays.begin(), teacher_arrays.end());
    auto opt = optimizer_state(student_, "opt/");
    arrays.insert(arrays.end(), opt.begin(), opt.end());
    auto meta = config_meta(student_.cfg);
    arrays.insert(arrays.end(), meta.begin(), meta.end());
    arrays.push_back({"meta/iter", {1}, {static_cast<float>(iter)}});
    arrays.push_back({"meta/best_val_miou", {1}, {static_cast<float>(best_val_)}});
    save_checkpoint(arrays, path);
}

void Trainer::load_resume(const std::filesystem::path& path) {
    auto by_name = index_arrays(load_checkpoint(path));
    load_model_state(student_, "student/", by_name);
    load_model_state(teacher_, "teacher/", by_name);
    load_optimizer_state(student_, "opt/", by_name);
    auto it = by_name.find("meta/iter");
    if (it == by_name.end()) throw FormatError("resume checkpoint lacks meta/iter");
    start_iter_ = static_cast<int64_t>(it->second.data.at(0));
    auto bv = by_name.find("meta/best_val_miou");
    if (bv != by_name.end()) best_val_ = bv->second.data.at(0);
}

void Trainer::run() {
    std::ofstream metrics(out_dir_ / "metrics.csv");
    if (!metrics) throw IoError("cannot open " + (out_dir_ / "metrics.csv").string());
    metrics << metrics_header() << "\n";

    std::ofstream echo(out_dir_ / "config_resolved.txt");
    echo << render_train_config(cfg_);
    echo.close();

    if (cfg_.iters == 0) {
        save(out_dir_ / "checkpoint_final.xfck", 0);
        return;
    }
    for (int64_t iter = start_iter_ + 1; iter <= cfg_.iters; ++iter) {
        IterationRecord rec = step(iter);
        bool validate_now = (cfg_.val_every > 0 && iter % cfg_.val_every == 0) || iter == cfg_.iters;
        if (validate_now && !tgt_val_.empty()) {
            EvalSummary summary = validate();
            rec.val_miou_2d = summary.miou_2d;
            rec.val_miou_3d = summary.miou_3d;
            rec.val_miou_xm = summary.miou_xm;
            if (summary.miou_xm > best_val_) {
                best_val_ = summary.miou_xm;
                save(out_dir_ / "checkpoint_best.xfck", iter);
            }
        }
        metrics << metrics_row(rec) << "\n";
    }
    metrics.close();
    save(out_dir_ / "checkpoint_final.xfck", cfg_.iters);
}

void run_training(const TrainConfig& cfg, const std::filesystem::path& out_dir) {
    Trainer trainer(cfg, out_dir);
    trainer.run();
}

} // namespace xfuse

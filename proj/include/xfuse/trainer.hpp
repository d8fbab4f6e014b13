#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xfuse/checkpoint.hpp"
#include "xfuse/config.hpp"
#include "xfuse/distill.hpp"
#include "xfuse/evalmetrics.hpp"
#include "xfuse/models.hpp"
#include "xfuse/pseudolabel.hpp"
#include "xfuse/scene_io.hpp"

namespace xfuse {

// w_c = 1 / ln(1.02 + f_c) with f_c the relative class frequency; absent
// classes take the frequency-0 weight.
std::vector<float> class_weights(const std::vector<int64_t>& histogram);

struct IterationRecord {
    int64_t iter = 0;
    double loss_seg = 0, loss_mpd_s = 0, loss_mpd_t = 0;
    double loss_dpd_sm = 0, loss_dpd_fm = 0, loss_xdpl = 0;
    double total = 0;
    // negative means "no validation ran this iteration" (empty CSV fields)
    double val_miou_2d = -1, val_miou_3d = -1, val_miou_xm = -1;
};

std::string metrics_header();
std::string metrics_row(const IterationRecord& r);
std::vector<IterationRecord> parse_metrics_csv(const std::filesystem::path& path);

struct EvalSummary {
    ConfusionMatrix cm_2d, cm_3d, cm_xm;
    double miou_2d = 0, miou_3d = 0, miou_xm = 0;
};

// eval-mode forward over labeled scenes, confusion per branch
EvalSummary evaluate_model(FullModel& model, const std::vector<PairedScene>& scenes,
                           double voxel_size);

class Trainer {
public:
    Trainer(const TrainConfig& cfg, const std::filesystem::path& out_dir);

    IterationRecord step(int64_t iter);
    void run(); // full schedule, metrics file, checkpoints

    FullModel& student() { return student_; }
    FullModel& teacher() { return teacher_; }
    const std::vector<float>& seg_class_weights() const { return class_weights_; }
    int64_t start_iteration() const { return start_iter_; }

    // label-leakage inspection: labels visible to the training loop
    const std::vector<int32_t>& visible_labels(size_t tgt_train_index) const {
        return tgt_train_[tgt_train_index].labels;
    }

    EvalSummary validate();

private:
    double lr_at(int64_t iter, double base) const;
    void save(const std::filesystem::path& path, int64_t iter);
    void load_resume(const std::filesystem::path& path);

    TrainConfig cfg_;
    std::filesystem::path out_dir_;
    bool use_target_ = true;
    std::vector<PairedScene> src_train_, tgt_train_, tgt_val_;
    std::vector<SceneInputsT<float>> src_inputs_, tgt_inputs_;
    std::vector<PseudoLabelSet> pseudo_labels_;
    std::vector<float> class_weights_;
    FullModel student_, teacher_;
    std::vector<Parameter*> params_2d_, params_3d_;
    int64_t start_iter_ = 0;
    double best_val_ = -1.0;
};

void run_training(const TrainConfig& cfg, const std::filesystem::path& out_dir);

} // namespace xfuse

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xfuse/fusion.hpp"
#include "xfuse/pseudolabel.hpp"
#include "xfuse/scene_io.hpp"

namespace xfuse {

// Flat key = value training configuration. Unknown keys are load-time errors.
struct TrainConfig {
    std::string data;          // dataset directory containing manifest.txt
    int stage = 1;             // 1 | 2
    SplitMode mode = SplitMode::UDA;
    uint64_t seed = 42;
    int64_t iters = 2000;
    int64_t batch_size = 4;
    double lr_2d = 1e-3;
    double lr_3d = 1e-3;
    std::vector<int64_t> lr_drop_iters = {1600, 1800};
    double ema_alpha = 0.999;
    double lambda1 = 1.0;
    double lambda2 = 0.1;
    double lambda3 = 0.1;
    double lambda4 = 0.01;
    double lambda5 = 0.0;
    AttnNorm attn_norm = AttnNorm::Double;
    XdplGranularity xdpl_granularity = XdplGranularity::Point;
    bool xdpl_uniform_weight = false; // weight forced to 1 (plain pseudo-labels)
    double beta = 0.06;
    double keep_fraction = 0.9;
    bool mmst = true;
    std::string stage2_init = "checkpoint"; // checkpoint | scratch
    std::string stage1_checkpoint;
    std::string pseudo_labels; // directory of .xfpl files; defaults to the scene dir
    double voxel_size = 0.05;
    int64_t val_every = 200;
    bool augment_flip = false;
    bool augment_rotz = false;
    std::string resume_from;
    // model dimensions
    int64_t d1 = 32, d2 = 32, df = 32, db = 16, enc2d_hidden = 8, memory_len = 16;

    ModelConfig model_config(int64_t class_count) const;
};

TrainConfig parse_train_config(const std::filesystem::path& path);
TrainConfig parse_train_config_text(const std::string& text, const std::string& origin);

// fully resolved key = value echo, defaults included
std::string render_train_config(const TrainConfig& cfg);

} // namespace xfuse

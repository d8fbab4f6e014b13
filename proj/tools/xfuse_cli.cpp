// Command-line surface for the cross-modal adaptation pipeline:
// dataset generation, two-stage training, offline pseudo-labeling,
// evaluation, and the attention benchmark.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "xfuse/checkpoint.hpp"
#include "xfuse/config.hpp"
#include "xfuse/datagen.hpp"
#include "xfuse/fusion.hpp"
#include "xfuse/pseudolabel.hpp"
#include "xfuse/scene_io.hpp"
#include "xfuse/trainer.hpp"

namespace fs = std::filesystem;
using namespace xfuse;

namespace {

std::string class_label(int64_t class_count, int64_t c) {
    if (class_count == static_cast<int64_t>(default_class_names().size()))
        return default_class_names()[static_cast<size_t>(c)];
    return "class" + std::to_string(c);
}

int cmd_gen(const std::string& out, int64_t scenes, uint64_t seed, const std::string& profile_name,
            const std::string& mode_name, double ssda_fraction, int64_t image_size,
            int64_t point_budget, int64_t val_scenes, int64_t test_scenes) {
    DomainProfile profile = domain_profile(profile_name);
    SplitMode mode = mode_name == "ssda" ? SplitMode::SSDA : SplitMode::UDA;
    if (val_scenes < 0) val_scenes = scenes;
    if (test_scenes < 0) test_scenes = scenes;

    fs::create_directories(fs::path(out) / "scenes");
    auto gen_split = [&](SplitRole role, const DomainShiftSpec& spec, uint32_t domain_tag,
                         int64_t count) {
        std::vector<std::string> paths;
        for (int64_t i = 0; i < count; ++i) {
            uint64_t scene_seed =
                mix_seed(seed, static_cast<uint64_t>(role) * 1000000ull + static_cast<uint64_t>(i));
            PairedScene scene = generate_scene(scene_seed, spec, domain_tag, 5, image_size,
                                               image_size, point_budget,
                                               static_cast<uint32_t>(i));
            std::string rel = "scenes/" + role_name(role) + "_" + std::to_string(i) + ".xfus";
            write_scene(scene, fs::path(out) / rel);
            paths.push_back(rel);
        }
        return paths;
    };

    auto src_train = gen_split(SplitRole::SrcTrain, profile.source, kDomainSource, scenes);
    auto tgt_train = gen_split(SplitRole::TgtTrain, profile.target, kDomainTarget, scenes);
    auto tgt_val = gen_split(SplitRole::TgtVal, profile.target, kDomainTarget, val_scenes);
    auto tgt_test = gen_split(SplitRole::TgtTest, profile.target, kDomainTarget, test_scenes);

    DatasetManifest manifest =
        make_split(src_train, tgt_train, tgt_val, tgt_test, mode, ssda_fraction, seed);
    manifest.header = {
        "profile " + profile.name,
        "mode " + std::string(mode == SplitMode::SSDA ? "ssda" : "uda"),
        "seed " + std::to_string(seed),
        "target_gamma " + std::to_string(profile.target.gamma),
        "target_hue_rotation " + std::to_string(profile.target.hue_rotation),
        "target_noise_sigma " + std::to_string(profile.target.noise_sigma),
        "target_density_factor " + std::to_string(profile.target.density_factor),
        "target_layout_seed_offset " + std::to_string(profile.target.layout_seed_offset),
        "lambda " + std::to_string(profile.lambda1) + "," + std::to_string(profile.lambda2) + "," +
            std::to_string(profile.lambda3) + "," + std::to_string(profile.lambda4),
    };
    write_manifest(manifest, fs::path(out) / "manifest.txt");

    std::cout << "src_train " << src_train.size() << "\n"
              << "tgt_train " << tgt_train.size() << "\n"
              << "tgt_val " << tgt_val.size() << "\n"
              << "tgt_test " << tgt_test.size() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, int stage, const std::string& out,
              const std::string& resume) {
    TrainConfig cfg = parse_train_config(config_path);
    if (stage > 0) cfg.stage = stage;
    if (!resume.empty()) cfg.resume_from = resume;
    run_training(cfg, out);
    std::cout << "training complete: " << (fs::path(out) / "metrics.csv").string() << "\n";
    return 0;
}

int cmd_pseudolabel(const std::string& checkpoint_path, const std::string& data,
                    double keep_fraction, const std::string& out) {
    auto by_name = index_arrays(load_checkpoint(checkpoint_path));
    ModelConfig mc = config_from_meta(by_name);
    FullModel model = FullModel::make(mc, 0);
    load_model_state(model, "student/", by_name);

    auto manifest = read_manifest(fs::path(data) / "manifest.txt");
    auto entries = manifest.split(SplitRole::TgtTrain);
    if (entries.empty()) throw ManifestError("manifest has no tgt_train scenes");
    std::vector<PairedScene> scenes;
    for (const auto& e : entries) scenes.push_back(read_scene(manifest.resolve(e)));

    auto sets = generate_pseudo_labels(model, scenes, 0.05, keep_fraction);

    fs::create_directories(out);
    std::vector<int64_t> survivors2d(static_cast<size_t>(mc.class_count), 0);
    std::vector<int64_t> survivors3d(static_cast<size_t>(mc.class_count), 0);
    for (size_t i = 0; i < sets.size(); ++i) {
        auto name = pseudo_label_path(fs::path(entries[i].path).filename());
        write_pseudo_labels(sets[i], fs::path(out) / name);
        for (int32_t y : sets[i].y2d_hat)
            if (y >= 0) survivors2d[static_cast<size_t>(y)]++;
        for (int32_t y : sets[i].y3d_hat)
            if (y >= 0) survivors3d[static_cast<size_t>(y)]++;
    }
    {
        std::ofstream echo(fs::path(out) / "pseudolabel_config.txt");
        echo << "checkpoint = " << checkpoint_path << "\n"
             << "data = " << data << "\n"
             << "keep_fraction = " << keep_fraction << "\n";
    }
    for (int64_t c = 0; c < mc.class_count; ++c)
        std::cout << class_label(mc.class_count, c) << " 2d=" << survivors2d[static_cast<size_t>(c)]
                  << " 3d=" << survivors3d[static_cast<size_t>(c)] << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data, const std::string& split,
             const std::string& out) {
    auto by_name = index_arrays(load_checkpoint(checkpoint_path));
    ModelConfig mc = config_from_meta(by_name);
    FullModel model = FullModel::make(mc, 0);
    load_model_state(model, "student/", by_name);

    auto manifest = read_manifest(fs::path(data) / "manifest.txt");
    SplitRole role = role_from_name(split);
    auto entries = manifest.split(role);
    if (entries.empty()) throw ManifestError("split '" + split + "' is empty or absent");
    std::vector<PairedScene> scenes;
    for (const auto& e : entries) scenes.push_back(read_scene(manifest.resolve(e)));

    EvalSummary summary = evaluate_model(model, scenes, 0.05);

    std::ostringstream report;
    auto emit = [&](const std::string& branch, const ConfusionMatrix& cm) {
        auto res = iou_per_class(cm);
        for (int64_t c = 0; c < cm.class_count; ++c) {
            if (!res.present[static_cast<size_t>(c)]) continue;
            report << split << ',' << branch << ',' << class_label(cm.class_count, c) << ','
                   << res.iou[static_cast<size_t>(c)] << "\n";
        }
        report << split << ',' << branch << ",mIoU," << res.miou << "\n";
    };
    emit("2d", summary.cm_2d);
    emit("3d", summary.cm_3d);
    emit("xm", summary.cm_xm);

    std::cout << report.str();
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw IoError("cannot open " + out + " for writing");
        f << report.str();
    }
    return 0;
}

int cmd_bench_attn(const std::string& n_list_str, int64_t k, int64_t d, int repeats,
                   const std::string& out) {
    std::vector<int64_t> n_list;
    std::stringstream ss(n_list_str);
    std::string item;
    while (std::getline(ss, item, ',')) n_list.push_back(std::stoll(item));
    if (n_list.empty()) throw ParameterError("bench-attn: empty --n-list");

    auto rows = bench_attention(n_list, k, d, repeats);
    std::ostringstream csv;
    csv << "variant,n,k,d,flops,wall_ns\n";
    for (const auto& r : rows)
        csv << r.variant << ',' << r.n << ',' << r.k << ',' << r.d << ',' << r.flops << ','
            << r.wall_ns << "\n";
    std::cout << csv.str();
    if (!out.empty()) {
        std::ofstream f(out);
        if (!f) throw IoError("cannot open " + out + " for writing");
        f << csv.str();
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-modal feature fusion + distillation domain adaptation pipeline"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a paired two-domain dataset");
    std::string gen_out, gen_profile = "daynight", gen_mode = "uda";
    int64_t gen_scenes = 20, gen_image = 64, gen_points = 2048, gen_val = -1, gen_test = -1;
    uint64_t gen_seed = 1;
    double gen_fraction = 0.1;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--scenes", gen_scenes, "scenes per train split");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--profile", gen_profile, "daynight|density|layout");
    gen->add_option("--mode", gen_mode, "uda|ssda")->check(CLI::IsMember({"uda", "ssda"}));
    gen->add_option("--ssda-fraction", gen_fraction, "labeled target fraction (ssda)");
    gen->add_option("--image-size", gen_image, "square image side");
    gen->add_option("--points", gen_points, "point budget per scene");
    gen->add_option("--val-scenes", gen_val, "validation scenes (default --scenes)");
    gen->add_option("--test-scenes", gen_test, "test scenes (default --scenes)");

    // train
    auto* train = app.add_subcommand("train", "run a training stage");
    std::string train_config, train_out, train_resume;
    int train_stage = 0;
    train->add_option("--config", train_config, "config file")->required();
    train->add_option("--stage", train_stage, "1 or 2")->check(CLI::IsMember({1, 2}));
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--resume", train_resume, "checkpoint to resume from");

    // pseudolabel
    auto* pl = app.add_subcommand("pseudolabel", "generate offline pseudo-labels");
    std::string pl_ckpt, pl_data, pl_out;
    double pl_keep = 0.9;
    pl->add_option("--checkpoint", pl_ckpt, "stage-1 checkpoint")->required();
    pl->add_option("--data", pl_data, "dataset directory")->required();
    pl->add_option("--keep-fraction", pl_keep, "per-class keep fraction");
    pl->add_option("--out", pl_out, "output directory for .xfpl files")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string ev_ckpt, ev_data, ev_split = "tgt_test", ev_out;
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--split", ev_split, "src_train|tgt_train|tgt_val|tgt_test");
    ev->add_option("--out", ev_out, "report file");

    // bench-attn
    auto* bench = app.add_subcommand("bench-attn", "attention FLOP/wall-clock table");
    std::string bench_nlist = "512,1024,2048,4096", bench_out;
    int64_t bench_k = 16, bench_d = 32;
    int bench_repeats = 9;
    bench->add_option("--n-list", bench_nlist, "comma-separated point counts");
    bench->add_option("--k", bench_k, "memory length");
    bench->add_option("--d", bench_d, "feature width");
    bench->add_option("--repeats", bench_repeats, "timing repeats (median)");
    bench->add_option("--out", bench_out, "csv file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1; // usage errors exit 1, --help exits 0
    }

    try {
        if (gen->parsed())
            return cmd_gen(gen_out, gen_scenes, gen_seed, gen_profile, gen_mode, gen_fraction,
                           gen_image, gen_points, gen_val, gen_test);
        if (train->parsed()) return cmd_train(train_config, train_stage, train_out, train_resume);
        if (pl->parsed()) return cmd_pseudolabel(pl_ckpt, pl_data, pl_keep, pl_out);
        if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_out);
        if (bench->parsed()) return cmd_bench_attn(bench_nlist, bench_k, bench_d, bench_repeats,
                                                   bench_out);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}

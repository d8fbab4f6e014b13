#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xfuse/scene.hpp"

namespace xfuse {

enum class SplitRole { SrcTrain, TgtTrain, TgtVal, TgtTest };

std::string role_name(SplitRole role);
SplitRole role_from_name(const std::string& name);

struct ManifestEntry {
    std::string path; // relative to the manifest's directory
    SplitRole role = SplitRole::SrcTrain;
    bool labeled = false;
};

struct DatasetManifest {
    std::vector<std::string> header; // free-form echo lines ("key value")
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir; // set on load

    std::vector<ManifestEntry> split(SplitRole role) const;
    std::filesystem::path resolve(const ManifestEntry& e) const { return base_dir / e.path; }
};

// Dataset file, little-endian: magic "XFUS", version u32=1, then
// H,W,N,C,domain_tag,scene_id as u32, image float32[H*W*3], proj float32[12],
// points float32[N*3], labels int32[N], pixel_index int32[N].
void write_scene(const PairedScene& scene, const std::filesystem::path& path);
PairedScene read_scene(const std::filesystem::path& path);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

enum class SplitMode { UDA, SSDA };

// Assigns labeled flags per mode: source train scenes labeled, target train
// unlabeled (UDA) or a seeded ceil(fraction * n) subset labeled (SSDA);
// target val/test labeled for metrics only.
DatasetManifest make_split(const std::vector<std::string>& src_train_paths,
                           const std::vector<std::string>& tgt_train_paths,
                           const std::vector<std::string>& tgt_val_paths,
                           const std::vector<std::string>& tgt_test_paths, SplitMode mode,
                           double ssda_labeled_fraction, uint64_t seed);

// Training-time scene view: labels of entries marked unlabeled are never
// surfaced (stripped to -1 on load).
PairedScene load_training_scene(const DatasetManifest& manifest, const ManifestEntry& entry);

} // namespace xfuse

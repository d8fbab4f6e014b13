#include "xfuse/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "xfuse/rng.hpp"

namespace xfuse {

namespace {

constexpr char kMagic[4] = {'X', 'F', 'U', 'S'};
constexpr uint32_t kVersion = 1;

struct Reader {
    std::ifstream in;
    std::string path;
    size_t offset = 0;

    void read_raw(void* dst, size_t bytes) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
        if (in.gcount() != static_cast<std::streamsize>(bytes))
            throw FormatError(path + ": truncated at byte offset " + std::to_string(offset));
        offset += bytes;
    }

    uint32_t read_u32() {
        uint32_t v;
        read_raw(&v, 4);
        return v;
    }
};

void write_raw(std::ofstream& out, const void* src, size_t bytes) {
    out.write(reinterpret_cast<const char*>(src), static_cast<std::streamsize>(bytes));
}

void write_u32(std::ofstream& out, uint32_t v) { write_raw(out, &v, 4); }

} // namespace

std::string role_name(SplitRole role) {
    switch (role) {
        case SplitRole::SrcTrain: return "src_train";
        case SplitRole::TgtTrain: return "tgt_train";
        case SplitRole::TgtVal: return "tgt_val";
        default: return "tgt_test";
    }
}

SplitRole role_from_name(const std::string& name) {
    if (name == "src_train") return SplitRole::SrcTrain;
    if (name == "tgt_train") return SplitRole::TgtTrain;
    if (name == "tgt_val") return SplitRole::TgtVal;
    if (name == "tgt_test") return SplitRole::TgtTest;
    throw ManifestError("unknown split role '" + name + "'");
}

std::vector<ManifestEntry> DatasetManifest::split(SplitRole role) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.role == role) out.push_back(e);
    return out;
}

void write_scene(const PairedScene& scene, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    int64_t n = scene.point_count();
    write_raw(out, kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<uint32_t>(scene.height));
    write_u32(out, static_cast<uint32_t>(scene.width));
    write_u32(out, static_cast<uint32_t>(n));
    write_u32(out, static_cast<uint32_t>(scene.class_count));
    write_u32(out, scene.domain_tag);
    write_u32(out, scene.scene_id);
    write_raw(out, scene.image.data(), scene.image.size() * 4);
    write_raw(out, scene.proj.data(), 12 * 4);
    write_raw(out, scene.points.data(), scene.points.size() * 4);
    write_raw(out, scene.labels.data(), scene.labels.size() * 4);
    write_raw(out, scene.pixel_index.data(), scene.pixel_index.size() * 4);
    if (!out) throw IoError("write failed for " + path.string());
}

PairedScene read_scene(const std::filesystem::path& path) {
    Reader r;
    r.path = path.string();
    r.in.open(path, std::ios::binary);
    if (!r.in) throw IoError("cannot open " + path.string());
    char magic[4];
    r.read_raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError(path.string() + ": bad magic at byte offset 0");
    uint32_t version = r.read_u32();
    if (version != kVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version) +
                          " at byte offset 4");
    PairedScene scene;
    scene.height = r.read_u32();
    scene.width = r.read_u32();
    uint32_t n = r.read_u32();
    scene.class_count = r.read_u32();
    scene.domain_tag = r.read_u32();
    scene.scene_id = r.read_u32();
    scene.image.resize(static_cast<size_t>(scene.height * scene.width * 3));
    r.read_raw(scene.image.data(), scene.image.size() * 4);
    r.read_raw(scene.proj.data(), 12 * 4);
    scene.points.resize(static_cast<size_t>(n) * 3);
    r.read_raw(scene.points.data(), scene.points.size() * 4);
    scene.labels.resize(n);
    r.read_raw(scene.labels.data(), scene.labels.size() * 4);
    scene.pixel_index.resize(n);
    r.read_raw(scene.pixel_index.data(), scene.pixel_index.size() * 4);
    return scene;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& line : manifest.header) out << "# " << line << "\n";
    for (const auto& e : manifest.entries)
        out << e.path << "," << role_name(e.role) << "," << (e.labeled ? 1 : 0) << "\n";
    if (!out) throw IoError("write failed for " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    DatasetManifest manifest;
    manifest.base_dir = path.parent_path();
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            manifest.header.push_back(line.size() > 2 ? line.substr(2) : "");
            continue;
        }
        std::stringstream ss(line);
        std::string p, role, labeled;
        if (!std::getline(ss, p, ',') || !std::getline(ss, role, ',') || !std::getline(ss, labeled))
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": malformed record '" +
                                line + "'");
        ManifestEntry e;
        e.path = p;
        e.role = role_from_name(role);
        if (labeled == "0")
            e.labeled = false;
        else if (labeled == "1")
            e.labeled = true;
        else
            throw ManifestError(path.string() + ":" + std::to_string(lineno) +
                                ": labeled flag must be 0 or 1, got '" + labeled + "'");
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

DatasetManifest make_split(const std::vector<std::string>& src_train_paths,
                           const std::vector<std::string>& tgt_train_paths,
                           const std::vector<std::string>& tgt_val_paths,
                           const std::vector<std::string>& tgt_test_paths, SplitMode mode,
                           double ssda_labeled_fraction, uint64_t seed) {
    if (mode == SplitMode::SSDA &&
        !(ssda_labeled_fraction > 0.0 && ssda_labeled_fraction < 1.0))
        throw ParameterError("make_split: SSDA labeled fraction must lie in (0,1), got " +
                             std::to_string(ssda_labeled_fraction));
    DatasetManifest manifest;
    for (const auto& p : src_train_paths)
        manifest.entries.push_back({p, SplitRole::SrcTrain, true});

    std::vector<size_t> labeled_targets;
    if (mode == SplitMode::SSDA && !tgt_train_paths.empty()) {
        size_t count = static_cast<size_t>(
            std::ceil(ssda_labeled_fraction * static_cast<double>(tgt_train_paths.size())));
        std::vector<size_t> order(tgt_train_paths.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(mix_seed(seed, 0x551DA));
        rng.shuffle(order.begin(), order.end());
        labeled_targets.assign(order.begin(), order.begin() + static_cast<int64_t>(count));
        std::sort(labeled_targets.begin(), labeled_targets.end());
    }
    for (size_t i = 0; i < tgt_train_paths.size(); ++i) {
        bool labeled = std::binary_search(labeled_targets.begin(), labeled_targets.end(), i);
        manifest.entries.push_back({tgt_train_paths[i], SplitRole::TgtTrain, labeled});
    }
    for (const auto& p : tgt_val_paths) manifest.entries.push_back({p, SplitRole::TgtVal, true});
    for (const auto& p : tgt_test_paths) manifest.entries.push_back({p, SplitRole::TgtTest, true});
    return manifest;
}

PairedScene load_training_scene(const DatasetManifest& manifest, const ManifestEntry& entry) {
    PairedScene scene = read_scene(manifest.resolve(entry));
    if (!entry.labeled) std::fill(scene.labels.begin(), scene.labels.end(), -1);
    return scene;
}

} // namespace xfuse

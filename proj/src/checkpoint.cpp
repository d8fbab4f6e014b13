#include "xfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace xfuse {

namespace {
constexpr char kCkMagic[4] = {'X', 'F', 'C', 'K'};
constexpr uint32_t kCkVersion = 1;
} // namespace

void save_checkpoint(const std::vector<NamedArray>& arrays, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kCkMagic, 4);
    uint32_t version = kCkVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    for (const auto& a : arrays) {
        uint32_t len = static_cast<uint32_t>(a.name.size());
        out.write(reinterpret_cast<const char*>(&len), 4);
        out.write(a.name.data(), len);
        uint32_t rank = static_cast<uint32_t>(a.shape.size());
        out.write(reinterpret_cast<const char*>(&rank), 4);
        for (int64_t e : a.shape) {
            uint32_t ext = static_cast<uint32_t>(e);
            out.write(reinterpret_cast<const char*>(&ext), 4);
        }
        out.write(reinterpret_cast<const char*>(a.data.data()), 4 * static_cast<std::streamsize>(a.data.size()));
    }
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    size_t offset = 0;
    auto read_raw = [&](void* dst, size_t bytes) {
        in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
        if (in.gcount() != static_cast<std::streamsize>(bytes))
            throw FormatError(path.string() + ": truncated at byte offset " + std::to_string(offset));
        offset += bytes;
    };
    char magic[4];
    read_raw(magic, 4);
    if (std::memcmp(magic, kCkMagic, 4) != 0)
        throw FormatError(path.string() + ": bad magic at byte offset 0");
    uint32_t version;
    read_raw(&version, 4);
    if (version != kCkVersion)
        throw FormatError(path.string() + ": unsupported version " + std::to_string(version));

    std::vector<NamedArray> arrays;
    while (true) {
        uint32_t len;
        in.read(reinterpret_cast<char*>(&len), 4);
        if (in.gcount() == 0) break; // clean EOF
        if (in.gcount() != 4)
            throw FormatError(path.string() + ": truncated at byte offset " + std::to_string(offset));
        offset += 4;
        NamedArray a;
        a.name.resize(len);
        read_raw(a.name.data(), len);
        uint32_t rank;
        read_raw(&rank, 4);
        int64_t numel = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            uint32_t ext;
            read_raw(&ext, 4);
            a.shape.push_back(static_cast<int64_t>(ext));
            numel *= ext;
        }
        a.data.resize(static_cast<size_t>(numel));
        read_raw(a.data.data(), 4 * static_cast<size_t>(numel));
        arrays.push_back(std::move(a));
    }
    return arrays;
}

std::vector<NamedArray> model_state(FullModel& model, const std::string& prefix) {
    std::vector<NamedArray> out;
    for (Parameter* p : model.parameters())
        out.push_back({prefix + p->name, p->value.shape(), p->value.data()});
    for (auto& [name, buf] : model.buffers())
        out.push_back({prefix + name, {static_cast<int64_t>(buf->size())}, *buf});
    return out;
}

void load_model_state(FullModel& model, const std::string& prefix,
                      const std::map<std::string, NamedArray>& by_name) {
    for (Parameter* p : model.parameters()) {
        auto it = by_name.find(prefix + p->name);
        if (it == by_name.end())
            throw FormatError("checkpoint missing entry '" + prefix + p->name + "'");
        if (it->second.data.size() != p->value.data().size())
            throw FormatError("checkpoint entry '" + prefix + p->name + "' has wrong size");
        p->value.data() = it->second.data;
    }
    for (auto& [name, buf] : model.buffers()) {
        auto it = by_name.find(prefix + name);
        if (it == by_name.end()) throw FormatError("checkpoint missing entry '" + prefix + name + "'");
        *buf = it->second.data;
    }
}

std::vector<NamedArray> optimizer_state(FullModel& model, const std::string& prefix) {
    std::vector<NamedArray> out;
    for (Parameter* p : model.parameters()) {
        out.push_back({prefix + "m/" + p->name, p->value.shape(), p->adam_m});
        out.push_back({prefix + "v/" + p->name, p->value.shape(), p->adam_v});
        out.push_back({prefix + "t/" + p->name, {1}, {static_cast<float>(p->step_count)}});
    }
    return out;
}

void load_optimizer_state(FullModel& model, const std::string& prefix,
                          const std::map<std::string, NamedArray>& by_name) {
    for (Parameter* p : model.parameters()) {
        auto m = by_name.find(prefix + "m/" + p->name);
        auto v = by_name.find(prefix + "v/" + p->name);
        auto t = by_name.find(prefix + "t/" + p->name);
        if (m == by_name.end() || v == by_name.end() || t == by_name.end())
            throw FormatError("checkpoint missing optimizer state for '" + p->name + "'");
        p->adam_m = m->second.data;
        p->adam_v = v->second.data;
        p->step_count = static_cast<int64_t>(t->second.data.at(0));
    }
}

std::map<std::string, NamedArray> index_arrays(std::vector<NamedArray> arrays) {
    std::map<std::string, NamedArray> by_name;
    for (auto& a : arrays) by_name.emplace(a.name, std::move(a));
    return by_name;
}

std::vector<NamedArray> config_meta(const ModelConfig& cfg) {
    auto scalar = [](const std::string& name, float v) {
        return NamedArray{name, {1}, {v}};
    };
    return {
        scalar("meta/d1", static_cast<float>(cfg.d1)),
        scalar("meta/d2", static_cast<float>(cfg.d2)),
        scalar("meta/df", static_cast<float>(cfg.df)),
        scalar("meta/db", static_cast<float>(cfg.db)),
        scalar("meta/enc2d_hidden", static_cast<float>(cfg.enc2d_hidden)),
        scalar("meta/memory_len", static_cast<float>(cfg.memory_len)),
        scalar("meta/class_count", static_cast<float>(cfg.class_count)),
        scalar("meta/attn_norm", cfg.attn_norm == AttnNorm::Double ? 0.0f : 1.0f),
    };
}

ModelConfig config_from_meta(const std::map<std::string, NamedArray>& by_name) {
    auto scalar = [&](const std::string& name) -> float {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint missing entry '" + name + "'");
        return it->second.data.at(0);
    };
    ModelConfig cfg;
    cfg.d1 = static_cast<int64_t>(scalar("meta/d1"));
    cfg.d2 = static_cast<int64_t>(scalar("meta/d2"));
    cfg.df = static_cast<int64_t>(scalar("meta/df"));
    cfg.db = static_cast<int64_t>(scalar("meta/db"));
    cfg.enc2d_hidden = static_cast<int64_t>(scalar("meta/enc2d_hidden"));
    cfg.memory_len = static_cast<int64_t>(scalar("meta/memory_len"));
    cfg.class_count = static_cast<int64_t>(scalar("meta/class_count"));
    cfg.attn_norm = scalar("meta/attn_norm") == 0.0f ? AttnNorm::Double : AttnNorm::SoftmaxK;
    return cfg;
}

} // namespace xfuse

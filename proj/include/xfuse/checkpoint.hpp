#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xfuse/models.hpp"
#include "xfuse/tensor.hpp"

namespace xfuse {

// Checkpoint file: magic "XFCK", version u32=1, then one record per array:
// name (u32 length + bytes), rank u32, extents u32 each, float32 payload.
// Student and teacher live under separate name prefixes in one file.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

void save_checkpoint(const std::vector<NamedArray>& arrays, const std::filesystem::path& path);
std::vector<NamedArray> load_checkpoint(const std::filesystem::path& path);

// model state (parameters + buffers) under a prefix like "student/"
std::vector<NamedArray> model_state(FullModel& model, const std::string& prefix);
void load_model_state(FullModel& model, const std::string& prefix,
                      const std::map<std::string, NamedArray>& by_name);

// optimizer moments, step counts, and scalar metadata ride along
std::vector<NamedArray> optimizer_state(FullModel& model, const std::string& prefix);
void load_optimizer_state(FullModel& model, const std::string& prefix,
                          const std::map<std::string, NamedArray>& by_name);

std::map<std::string, NamedArray> index_arrays(std::vector<NamedArray> arrays);

// model dimensions stored as scalars so eval can rebuild without the config
std::vector<NamedArray> config_meta(const ModelConfig& cfg);
ModelConfig config_from_meta(const std::map<std::string, NamedArray>& by_name);

} // namespace xfuse

#include "xfuse/config.hpp"

#include <fstream>
#include <sstream>

namespace xfuse {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    throw ParameterError("config key '" + key + "' expects on|off, got '" + v + "'");
}

std::vector<int64_t> parse_int_list(const std::string& v) {
    std::vector<int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stoll(item));
    }
    return out;
}

} // namespace

ModelConfig TrainConfig::model_config(int64_t class_count) const {
    ModelConfig mc;
    mc.d1 = d1;
    mc.d2 = d2;
    mc.df = df;
    mc.db = db;
    mc.enc2d_hidden = enc2d_hidden;
    mc.memory_len = memory_len;
    mc.class_count = class_count;
    mc.attn_norm = attn_norm;
    return mc;
}

TrainConfig parse_train_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_train_config_text(buffer.str(), path.string());
}

TrainConfig parse_train_config_text(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    std::stringstream ss(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        size_t eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ParameterError(origin + ":" + std::to_string(lineno) + ": expected key = value, got '" +
                                 stripped + "'");
        std::string key = trim(stripped.substr(0, eq));
        std::string value = trim(stripped.substr(eq + 1));
        try {
            if (key == "data") cfg.data = value;
            else if (key == "stage") cfg.stage = std::stoi(value);
            else if (key == "mode") {
                if (value == "uda") cfg.mode = SplitMode::UDA;
                else if (value == "ssda") cfg.mode = SplitMode::SSDA;
                else throw ParameterError("mode expects uda|ssda, got '" + value + "'");
            }
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "iters") cfg.iters = std::stoll(value);
            else if (key == "batch_size") cfg.batch_size = std::stoll(value);
            else if (key == "lr_2d") cfg.lr_2d = std::stod(value);
            else if (key == "lr_3d") cfg.lr_3d = std::stod(value);
            else if (key == "lr_drop_iters") cfg.lr_drop_iters = parse_int_list(value);
            else if (key == "ema_alpha") cfg.ema_alpha = std::stod(value);
            else if (key == "lambda1") cfg.lambda1 = std::stod(value);
            else if (key == "lambda2") cfg.lambda2 = std::stod(value);
            else if (key == "lambda3") cfg.lambda3 = std::stod(value);
            else if (key == "lambda4") cfg.lambda4 = std::stod(value);
            else if (key == "lambda5") cfg.lambda5 = std::stod(value);
            else if (key == "attn_norm") cfg.attn_norm = attn_norm_from_name(value);
            else if (key == "xdpl_granularity") cfg.xdpl_granularity = xdpl_granularity_from_name(value);
            else if (key == "xdpl_weighting") {
                if (value == "variance") cfg.xdpl_uniform_weight = false;
                else if (value == "uniform") cfg.xdpl_uniform_weight = true;
                else throw ParameterError("xdpl_weighting expects variance|uniform, got '" + value + "'");
            }
            else if (key == "beta") cfg.beta = std::stod(value);
            else if (key == "keep_fraction") cfg.keep_fraction = std::stod(value);
            else if (key == "mmst") cfg.mmst = parse_bool(value, key);
            else if (key == "stage2_init") {
                if (value != "checkpoint" && value != "scratch")
                    throw ParameterError("stage2_init expects checkpoint|scratch, got '" + value + "'");
                cfg.stage2_init = value;
            }
            else if (key == "stage1_checkpoint") cfg.stage1_checkpoint = value;
            else if (key == "pseudo_labels") cfg.pseudo_labels = value;
            else if (key == "voxel_size") cfg.voxel_size = std::stod(value);
            else if (key == "val_every") cfg.val_every = std::stoll(value);
            else if (key == "augment_flip") cfg.augment_flip = parse_bool(value, key);
            else if (key == "augment_rotz") cfg.augment_rotz = parse_bool(value, key);
            else if (key == "resume_from") cfg.resume_from = value;
            else if (key == "d1") cfg.d1 = std::stoll(value);
            else if (key == "d2") cfg.d2 = std::stoll(value);
            else if (key == "df") cfg.df = std::stoll(value);
            else if (key == "db") cfg.db = std::stoll(value);
            else if (key == "enc2d_hidden") cfg.enc2d_hidden = std::stoll(value);
            else if (key == "memory_len") cfg.memory_len = std::stoll(value);
            else
                throw ParameterError(origin + ":" + std::to_string(lineno) + ": unknown config key '" +
                                     key + "'");
        } catch (const std::invalid_argument&) {
            throw ParameterError(origin + ":" + std::to_string(lineno) + ": bad value '" + value +
                                 "' for key '" + key + "'");
        }
    }
    // basic validation, all at load time
    if (cfg.stage != 1 && cfg.stage != 2)
        throw ParameterError("stage must be 1 or 2, got " + std::to_string(cfg.stage));
    if (cfg.iters < 0) throw ParameterError("iters must be nonnegative");
    if (cfg.batch_size < 1) throw ParameterError("batch_size must be positive");
    if (cfg.lambda1 < 0 || cfg.lambda2 < 0 || cfg.lambda3 < 0 || cfg.lambda4 < 0 || cfg.lambda5 < 0)
        throw ParameterError("loss weights must be nonnegative");
    if (!(cfg.keep_fraction > 0.0 && cfg.keep_fraction <= 1.0))
        throw ParameterError("keep_fraction must lie in (0,1]");
    if (!(cfg.beta >= 0.0 && cfg.beta <= 1.0)) throw ParameterError("beta must lie in [0,1]");
    if (!(cfg.voxel_size > 0.0)) throw ParameterError("voxel_size must be positive");
    return cfg;
}

std::string render_train_config(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "data = " << cfg.data << "\n";
    out << "stage = " << cfg.stage << "\n";
    out << "mode = " << (cfg.mode == SplitMode::UDA ? "uda" : "ssda") << "\n";
    out << "seed = " << cfg.seed << "\n";
    out << "iters = " << cfg.iters << "\n";
    out << "batch_size = " << cfg.batch_size << "\n";
    out << "lr_2d = " << cfg.lr_2d << "\n";
    out << "lr_3d = " << cfg.lr_3d << "\n";
    out << "lr_drop_iters = ";
    for (size_t i = 0; i < cfg.lr_drop_iters.size(); ++i)
        out << (i ? "," : "") << cfg.lr_drop_iters[i];
    out << "\n";
    out << "ema_alpha = " << cfg.ema_alpha << "\n";
    out << "lambda1 = " << cfg.lambda1 << "\n";
    out << "lambda2 = " << cfg.lambda2 << "\n";
    out << "lambda3 = " << cfg.lambda3 << "\n";
    out << "lambda4 = " << cfg.lambda4 << "\n";
    out << "lambda5 = " << cfg.lambda5 << "\n";
    out << "attn_norm = " << attn_norm_name(cfg.attn_norm) << "\n";
    out << "xdpl_granularity = " << xdpl_granularity_name(cfg.xdpl_granularity) << "\n";
    out << "xdpl_weighting = " << (cfg.xdpl_uniform_weight ? "uniform" : "variance") << "\n";
    out << "beta = " << cfg.beta << "\n";
    out << "keep_fraction = " << cfg.keep_fraction << "\n";
    out << "mmst = " << (cfg.mmst ? "on" : "off") << "\n";
    out << "stage2_init = " << cfg.stage2_init << "\n";
    out << "stage1_checkpoint = " << cfg.stage1_checkpoint << "\n";
    out << "pseudo_labels = " << cfg.pseudo_labels << "\n";
    out << "voxel_size = " << cfg.voxel_size << "\n";
    out << "val_every = " << cfg.val_every << "\n";
    out << "augment_flip = " << (cfg.augment_flip ? "on" : "off") << "\n";
    out << "augment_rotz = " << (cfg.augment_rotz ? "on" : "off") << "\n";
    out << "resume_from = " << cfg.resume_from << "\n";
    out << "d1 = " << cfg.d1 << "\n";
    out << "d2 = " << cfg.d2 << "\n";
    out << "df = " << cfg.df << "\n";
    out << "db = " << cfg.db << "\n";
    out << "enc2d_hidden = " << cfg.enc2d_hidden << "\n";
    out << "memory_len = " << cfg.memory_len << "\n";
    return out.str();
}

} // namespace xfuse

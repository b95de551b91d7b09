#include "geofuse/config.hpp"

#include <sstream>

#include "geofuse/io.hpp"

namespace geofuse {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& v, const std::string& where) {
    std::vector<int> out;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError(msg(where, ": empty entry in list '", v, "'"));
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw ConfigError(msg(where, ": '", item, "' is not an integer"));
        }
    }
    if (out.empty()) throw ConfigError(msg(where, ": empty list"));
    return out;
}

attn::AttentionChannels parse_attention(const std::string& v, const std::string& where) {
    attn::AttentionChannels ch;
    ch.pano = ch.overhead = ch.dist = ch.orient = false;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item == "pano")
            ch.pano = true;
        else if (item == "overhead")
            ch.overhead = true;
        else if (item == "dist")
            ch.dist = true;
        else if (item == "orient")
            ch.orient = true;
        else
            throw ConfigError(msg(where, ": unknown attention channel '", item,
                                  "' (expected pano|overhead|dist|orient)"));
    }
    return ch;
}

}  // namespace

ModelConfig parse_config_text(const std::string& text, const std::string& source_name) {
    ModelConfig cfg;
    std::istringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        std::string where = msg(source_name, ":", line_no);
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(msg(where, ": expected 'key = value', got '", line, "'"));
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (val.empty()) throw ConfigError(msg(where, ": empty value for '", key, "'"));
        try {
            if (key == "variant")
                cfg.variant = val;
            else if (key == "task")
                cfg.task = val;
            else if (key == "classes")
                cfg.classes = std::stoi(val);
            else if (key == "ignore_label")
                cfg.ignore_label = std::stoi(val);
            else if (key == "grid")
                cfg.grid = std::stoi(val);
            else if (key == "overhead_size")
                cfg.overhead_size = std::stoi(val);
            else if (key == "pano_height")
                cfg.pano_height = std::stoi(val);
            else if (key == "pano_width")
                cfg.pano_width = std::stoi(val);
            else if (key == "pano_channels")
                cfg.pano_channels = std::stoi(val);
            else if (key == "crop_deg")
                cfg.crop_deg = std::stod(val);
            else if (key == "overhead_widths")
                cfg.overhead_widths = parse_int_list(val, where);
            else if (key == "pano_widths")
                cfg.pano_widths = parse_int_list(val, where);
            else if (key == "fusion_widths")
                cfg.fusion_widths = parse_int_list(val, where);
            else if (key == "decoder_widths")
                cfg.decoder_widths = parse_int_list(val, where);
            else if (key == "attention") {
                cfg.attention = parse_attention(val, where);
                cfg.attention_key_set = true;
            } else if (key == "dist_scale")
                cfg.dist_scale = std::stod(val);
            else if (key == "max_panos")
                cfg.max_panos = std::stoi(val);
            else if (key == "epochs")
                cfg.epochs = std::stoi(val);
            else if (key == "lr")
                cfg.lr = std::stod(val);
            else if (key == "lr_gamma")
                cfg.lr_gamma = std::stod(val);
            else if (key == "seed")
                cfg.seed = std::stoull(val);
            else if (key == "data_dir")
                cfg.data_dir = val;
            else if (key == "out_dir")
                cfg.out_dir = val;
            else
                throw ConfigError(msg(where, ": unknown key '", key, "'"));
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError(msg(where, ": cannot parse value '", val, "' for key '", key, "'"));
        }
    }
    validate_config(cfg);
    return cfg;
}

ModelConfig parse_config_file(const std::filesystem::path& file) {
    return parse_config_text(io::read_text_file(file), file.filename().string());
}

std::string serialize_config(const ModelConfig& cfg) {
    std::ostringstream os;
    auto list = [](const std::vector<int>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(v[i]);
        }
        return s;
    };
    os << "variant = " << cfg.variant << "\n";
    os << "task = " << cfg.task << "\n";
    os << "classes = " << cfg.classes << "\n";
    os << "ignore_label = " << cfg.ignore_label << "\n";
    os << "grid = " << cfg.grid << "\n";
    os << "overhead_size = " << cfg.overhead_size << "\n";
    os << "pano_height = " << cfg.pano_height << "\n";
    os << "pano_width = " << cfg.pano_width << "\n";
    os << "pano_channels = " << cfg.pano_channels << "\n";
    os << "crop_deg = " << cfg.crop_deg << "\n";
    os << "overhead_widths = " << list(cfg.overhead_widths) << "\n";
    os << "pano_widths = " << list(cfg.pano_widths) << "\n";
    os << "fusion_widths = " << list(cfg.fusion_widths) << "\n";
    os << "decoder_widths = " << list(cfg.decoder_widths) << "\n";
    if (cfg.variant != "remote") {
        std::string a;
        auto addf = [&a](bool on, const char* name) {
            if (!on) return;
            if (!a.empty()) a += ",";
            a += name;
        };
        addf(cfg.attention.pano, "pano");
        addf(cfg.attention.overhead, "overhead");
        addf(cfg.attention.dist, "dist");
        addf(cfg.attention.orient, "orient");
        os << "attention = " << a << "\n";
    }
    os << "dist_scale = " << cfg.dist_scale << "\n";
    os << "max_panos = " << cfg.max_panos << "\n";
    os << "epochs = " << cfg.epochs << "\n";
    os << "lr = " << cfg.lr << "\n";
    os << "lr_gamma = " << cfg.lr_gamma << "\n";
    os << "seed = " << cfg.seed << "\n";
    if (!cfg.data_dir.empty()) os << "data_dir = " << cfg.data_dir << "\n";
    if (!cfg.out_dir.empty()) os << "out_dir = " << cfg.out_dir << "\n";
    return os.str();
}

void validate_config(const ModelConfig& cfg) {
    auto fail = [](auto... parts) { throw ConfigError(msg(parts...)); };
    if (cfg.variant != "full" && cfg.variant != "remote" && cfg.variant != "proximate")
        fail("variant must be full|remote|proximate, got '", cfg.variant, "'");
    if (cfg.task != "classification" && cfg.task != "regression")
        fail("task must be classification|regression, got '", cfg.task, "'");
    if (cfg.task == "classification" && cfg.classes < 2)
        fail("classification needs at least 2 classes, got ", cfg.classes);
    if (cfg.overhead_size % 32 != 0)
        fail("overhead_size ", cfg.overhead_size,
             " must be divisible by 32 (two fusion max-pools below the stride-8 stage)");
    if (cfg.grid != cfg.overhead_size / 8)
        fail("grid ", cfg.grid, " must equal overhead_size/8 = ", cfg.overhead_size / 8,
             " so the dense grid aligns with the deep overhead features");
    if (cfg.pano_height < 16 || cfg.pano_width < 32)
        fail("panorama dims ", cfg.pano_height, "x", cfg.pano_width, " too small to encode");
    if (cfg.overhead_widths.size() != 3)
        fail("overhead_widths needs 3 entries, got ", cfg.overhead_widths.size());
    if (cfg.pano_widths.size() != 4)
        fail("pano_widths needs 4 entries, got ", cfg.pano_widths.size());
    if (cfg.fusion_widths.size() != 2)
        fail("fusion_widths needs 2 entries, got ", cfg.fusion_widths.size());
    if (cfg.decoder_widths.size() != 5)
        fail("decoder_widths needs 5 entries, got ", cfg.decoder_widths.size());
    for (const auto* v : {&cfg.overhead_widths, &cfg.pano_widths, &cfg.fusion_widths,
                          &cfg.decoder_widths})
        for (int w : *v)
            if (w < 1) fail("layer widths must be positive");
    if (cfg.max_panos < 1) fail("max_panos must be >= 1");
    if (cfg.variant == "remote" && cfg.attention_key_set)
        fail("variant = remote uses no ground-level imagery; an attention channel set "
             "contradicts it");
    if (cfg.variant == "proximate" && cfg.attention_key_set && cfg.attention.overhead)
        fail("variant = proximate has no overhead features; attention channel 'overhead' "
             "contradicts it");
    if (cfg.variant != "remote" && cfg.attention.count() == 0 && cfg.attention_key_set)
        fail("attention channel set is empty");
    if (cfg.epochs < 0) fail("epochs must be >= 0");
    if (cfg.lr <= 0) fail("lr must be positive");
    if (cfg.crop_deg < 0 || cfg.crop_deg >= 90) fail("crop_deg must be in [0,90)");
}

}  // namespace geofuse

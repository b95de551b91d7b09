#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "geofuse/attention.hpp"
#include "geofuse/errors.hpp"

namespace geofuse {

// Model configuration, read from line-oriented `key = value` text. Unknown
// keys are errors (with the line number); '#' starts a comment.
struct ModelConfig {
    std::string variant = "full";         // full | remote | proximate
    std::string task = "classification";  // classification | regression
    int classes = 4;
    int ignore_label = 255;
    int grid = 8;          // G
    int overhead_size = 64;  // S, square overhead input
    int pano_height = 64;
    int pano_width = 256;
    int pano_channels = 32;  // C
    double crop_deg = 40.0;
    std::vector<int> overhead_widths = {10, 14, 20};     // three stride-2 stages
    std::vector<int> pano_widths = {6, 10, 14, 20};      // four stride-2 stages
    std::vector<int> fusion_widths = {28, 40};           // two fusion blocks
    std::vector<int> decoder_widths = {32, 28, 20, 14, 10};
    attn::AttentionChannels attention;
    bool attention_key_set = false;  // remote forbids an explicit attention set
    double dist_scale = 1.0;
    int max_panos = 4;  // K slots, shorter scenes padded with masked entries

    int epochs = 25;
    double lr = 1e-4;
    double lr_gamma = 0.96;
    uint64_t seed = 0;

    std::string data_dir;
    std::string out_dir;

    // four stride-2 stages with same padding: each halves with ceil rounding
    static int ceil_div16(int x) {
        for (int i = 0; i < 4; ++i) x = (x + 1) / 2;
        return x;
    }
    int pano_feat_h() const { return ceil_div16(pano_height); }
    int pano_feat_w() const { return ceil_div16(pano_width); }
    bool regression() const { return task == "regression"; }
    int head_channels() const { return regression() ? 2 : classes; }
};

ModelConfig parse_config_text(const std::string& text, const std::string& source_name);
ModelConfig parse_config_file(const std::filesystem::path& file);
std::string serialize_config(const ModelConfig& cfg);

// Cross-field consistency: widths, divisibility, variant/ablation clashes.
void validate_config(const ModelConfig& cfg);

}  // namespace geofuse

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geofuse/errors.hpp"
#include "geofuse/tensor.hpp"

namespace geofuse::io {

// Raw raster formats, all with the same 12-byte header
//   magic(4) | u32le width | u32le height
// followed by the payload:
//   .gfi  "GFI1"  u8 RGB triplets, row-major
//   .gfl  "GFL1"  u8 class labels (255 = unknown)
//   .gfr  "GFR1"  f32le values (negative = unknown)

struct RgbImage {
    int w = 0, h = 0;
    std::vector<uint8_t> rgb;  // 3 per pixel

    uint8_t* px(int r, int c) { return rgb.data() + (static_cast<size_t>(r) * w + c) * 3; }
    const uint8_t* px(int r, int c) const {
        return rgb.data() + (static_cast<size_t>(r) * w + c) * 3;
    }
};

struct LabelRaster {
    int w = 0, h = 0;
    std::vector<uint8_t> labels;
};

struct FloatRaster {
    int w = 0, h = 0;
    std::vector<float> values;
};

void write_rgb(const std::filesystem::path& file, const RgbImage& img);
RgbImage read_rgb(const std::filesystem::path& file);
void write_labels(const std::filesystem::path& file, const LabelRaster& r);
LabelRaster read_labels(const std::filesystem::path& file);
void write_float_raster(const std::filesystem::path& file, const FloatRaster& r);
FloatRaster read_float_raster(const std::filesystem::path& file);

// Binary PGM (P5), values scaled x255 and clamped; used for attention maps.
void write_pgm(const std::filesystem::path& file, const Tensor& map, float scale = 255.0f);

// image <-> tensor conversion ([3,H,W] in [0,1])
Tensor image_to_tensor(const RgbImage& img);

std::string read_text_file(const std::filesystem::path& file);
void write_text_file(const std::filesystem::path& file, const std::string& content);

// FNV-1a over a file's bytes; used for dataset regeneration checks.
uint64_t file_hash(const std::filesystem::path& file);

// One dataset record per line, tab separated:
// scene_id overhead label K pano*K camlat,camlon*K centerlat,centerlon gsd
struct SceneRecord {
    int scene_id = 0;
    std::string overhead_path;
    std::string label_path;
    std::vector<std::string> pano_paths;
    std::vector<std::pair<double, double>> cameras;  // lat, lon
    double center_lat = 0.0, center_lon = 0.0;
    double gsd = 0.0;
};

void write_manifest(const std::filesystem::path& file, const std::vector<SceneRecord>& records);
std::vector<SceneRecord> read_manifest(const std::filesystem::path& file);

}  // namespace geofuse::io

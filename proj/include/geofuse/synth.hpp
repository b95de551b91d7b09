#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "geofuse/geo.hpp"
#include "geofuse/io.hpp"
#include "geofuse/rng.hpp"

namespace geofuse::synth {

// Procedural scenes: a grid of parcels, each with a ground type (visible
// overhead), a tower whose walls carry a facade color (visible only in
// panoramas; every roof looks the same from above), and a tower height
// (regression target, also invisible overhead). Free-standing white walls
// occlude views, so image content matters for weighting panoramas.
//
// The per-pixel class label is 2*base + facade, which makes half the label
// information recoverable only through the ground-level imagery.

struct SynthParams {
    int overhead_px = 64;
    double gsd = 1.0;  // meters per overhead pixel
    int pano_h = 64;
    int pano_w = 256;
    double crop_deg = 40.0;
    int n_panos = 4;
    int parcels_per_side = 4;
    int n_walls = 6;
    double camera_height_m = 2.0;
    int border_px = 2;  // unknown-label band
    geo::GeoLocation anchor{40.7, -73.95};
};

// Axis-aligned box in integer centimeters on the local tangent plane
// (x east, y north, origin at the scene center), z from 0 to height.
struct Box {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0, height = 0;  // cm

    bool contains_xy_cm(double x, double y) const {
        return x >= x0 && x < x1 && y >= y0 && y < y1;
    }
};

struct Parcel {
    int base = 0;    // ground type in {0,1}
    int facade = 0;  // wall color in {0,1}, hidden from the overhead view
    int tower_height_cm = 0;
    Box tower;
};

struct World {
    uint64_t seed = 0;
    int side_cm = 0;
    int parcels_per_side = 0;
    std::vector<Parcel> parcels;  // indexed [iy_south * P + ix_east]
    std::vector<Box> walls;      // white occluders

    const Parcel& parcel_at_cm(double x_cm, double y_cm) const;
    int class_at_cm(double x_cm, double y_cm) const;  // 2*base + facade
};

inline constexpr int kNumClasses = 4;
inline constexpr uint8_t kUnknownLabel = 255;

// Flat RGB colors in [0,1]; quantized to u8 on render.
struct Palette {
    std::array<float, 3> ground[2] = {{0.30f, 0.55f, 0.25f}, {0.60f, 0.50f, 0.30f}};
    std::array<float, 3> facade[2] = {{0.85f, 0.12f, 0.10f}, {0.10f, 0.20f, 0.88f}};
    std::array<float, 3> roof = {0.25f, 0.25f, 0.28f};
    std::array<float, 3> wall = {0.93f, 0.93f, 0.90f};
    std::array<float, 3> sky = {0.55f, 0.72f, 0.95f};
    std::array<float, 3> outside = {0.45f, 0.46f, 0.42f};
};

const Palette& palette();

World generate_world(uint64_t seed, const SynthParams& p);

io::RgbImage render_overhead(const World& w, const SynthParams& p);
io::LabelRaster render_labels(const World& w, const SynthParams& p);
io::FloatRaster render_heights(const World& w, const SynthParams& p);

// Equirectangular ray cast from (cam_x, cam_y, camera_height); the center
// column faces north, consistent with geo::pano_ray_field.
io::RgbImage render_panorama(const World& w, double cam_x_m, double cam_y_m,
                             const SynthParams& p);

// First surface hit along a ray; exposed so tests can march the same scene
// independently.
struct Hit {
    enum Kind { none, ground, tower_side, tower_top, wall, sky } kind = none;
    double t = 0.0;
    int parcel = -1;  // for tower hits and ground inside the footprint
};
Hit cast_ray(const World& w, double ox_m, double oy_m, double oz_m,
             const std::array<double, 3>& dir);

struct Scene {
    int scene_id = 0;
    World world;
    std::vector<std::pair<double, double>> camera_xy_m;
    std::vector<geo::GeoLocation> cameras;
    geo::GeoLocation center;
    io::RgbImage overhead;
    io::LabelRaster labels;
    io::FloatRaster heights;
    std::vector<io::RgbImage> panos;
};

Scene make_scene(int scene_id, uint64_t dataset_seed, const SynthParams& p);

// Writes scenes plus train/val/test manifests and a dataset.meta file.
// Splits are disjoint by scene and deterministic under the seed.
void generate_dataset(const std::filesystem::path& out_dir, int n_scenes, uint64_t seed,
                      const SynthParams& p, const std::string& task, double train_ratio,
                      double val_ratio);

}  // namespace geofuse::synth

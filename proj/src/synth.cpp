#include "geofuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace geofuse::synth {

const Palette& palette() {
    static Palette p;
    return p;
}

const Parcel& World::parcel_at_cm(double x_cm, double y_cm) const {
    double half = side_cm / 2.0;
    double parcel_cm = static_cast<double>(side_cm) / parcels_per_side;
    int ix = static_cast<int>(std::floor((x_cm + half) / parcel_cm));
    int iy = static_cast<int>(std::floor((y_cm + half) / parcel_cm));
    ix = std::clamp(ix, 0, parcels_per_side - 1);
    iy = std::clamp(iy, 0, parcels_per_side - 1);
    return parcels[static_cast<size_t>(iy) * parcels_per_side + static_cast<size_t>(ix)];
}

int World::class_at_cm(double x_cm, double y_cm) const {
    const Parcel& p = parcel_at_cm(x_cm, y_cm);
    return 2 * p.base + p.facade;
}

World generate_world(uint64_t seed, const SynthParams& p) {
    int side_cm = static_cast<int>(std::llround(p.overhead_px * p.gsd * 100.0));
    int P = p.parcels_per_side;
    int parcel_cm = side_cm / P;
    for (uint64_t attempt = 0;; ++attempt) {
        Rng rng = Rng::substream(seed, "world", attempt);
        World w;
        w.seed = seed;
        w.side_cm = side_cm;
        w.parcels_per_side = P;
        w.parcels.resize(static_cast<size_t>(P) * P);
        for (int iy = 0; iy < P; ++iy)
            for (int ix = 0; ix < P; ++ix) {
                Parcel& pc = w.parcels[static_cast<size_t>(iy) * P + static_cast<size_t>(ix)];
                pc.base = static_cast<int>(rng.uniform_index(2));
                pc.facade = static_cast<int>(rng.uniform_index(2));
                pc.tower_height_cm = 600 + 300 * static_cast<int>(rng.uniform_index(3));
                int cx = -side_cm / 2 + ix * parcel_cm + parcel_cm / 2;
                int cy = -side_cm / 2 + iy * parcel_cm + parcel_cm / 2;
                int half_w = 350;  // 7 m towers
                pc.tower = Box{cx - half_w, cy - half_w, cx + half_w, cy + half_w,
                               pc.tower_height_cm};
            }
        for (int i = 0; i < p.n_walls; ++i) {
            bool ns = rng.uniform_index(2) == 0;  // wall running north-south
            int len = 800 + static_cast<int>(rng.uniform_index(7)) * 100;     // 8..14 m
            int height = 450 + static_cast<int>(rng.uniform_index(7)) * 50;   // 4.5..7.5 m
            int thick = 40;
            int margin = 100;
            int cx = -side_cm / 2 + margin +
                     static_cast<int>(rng.uniform_index(static_cast<uint64_t>(side_cm - 2 * margin)));
            int cy = -side_cm / 2 + margin +
                     static_cast<int>(rng.uniform_index(static_cast<uint64_t>(side_cm - 2 * margin)));
            Box b;
            if (ns) {
                b = Box{cx - thick / 2, cy - len / 2, cx + thick / 2, cy + len / 2, height};
            } else {
                b = Box{cx - len / 2, cy - thick / 2, cx + len / 2, cy + thick / 2, height};
            }
            b.x0 = std::max(b.x0, -side_cm / 2);
            b.y0 = std::max(b.y0, -side_cm / 2);
            b.x1 = std::min(b.x1, side_cm / 2);
            b.y1 = std::min(b.y1, side_cm / 2);
            w.walls.push_back(b);
        }
        // keep scenes non-degenerate: at least two classes present
        bool seen[kNumClasses] = {};
        int distinct = 0;
        for (const Parcel& pc : w.parcels) {
            int cls = 2 * pc.base + pc.facade;
            if (!seen[cls]) {
                seen[cls] = true;
                ++distinct;
            }
        }
        if (distinct >= 2) return w;
    }
}

namespace {

uint8_t quant(float v) {
    return static_cast<uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
}

void put_rgb(io::RgbImage& img, int r, int c, const std::array<float, 3>& rgb, float shade = 1.0f) {
    uint8_t* px = img.px(r, c);
    px[0] = quant(rgb[0] * shade);
    px[1] = quant(rgb[1] * shade);
    px[2] = quant(rgb[2] * shade);
}

struct PixelCenter {
    double x_cm, y_cm;
};

PixelCenter pixel_center(int r, int c, const SynthParams& p) {
    double side_cm = p.overhead_px * p.gsd * 100.0;
    double x = (c + 0.5) * p.gsd * 100.0 - side_cm / 2.0;
    double y = side_cm / 2.0 - (r + 0.5) * p.gsd * 100.0;
    return {x, y};
}

}  // namespace

io::RgbImage render_overhead(const World& w, const SynthParams& p) {
    const Palette& pal = palette();
    io::RgbImage img;
    img.w = img.h = p.overhead_px;
    img.rgb.assign(static_cast<size_t>(p.overhead_px) * p.overhead_px * 3, 0);
    for (int r = 0; r < p.overhead_px; ++r)
        for (int c = 0; c < p.overhead_px; ++c) {
            auto [x, y] = pixel_center(r, c, p);
            const Parcel& pc = w.parcel_at_cm(x, y);
            // tallest surface wins the orthographic view
            int best_h = -1;
            std::array<float, 3> color = pal.ground[pc.base];
            if (pc.tower.contains_xy_cm(x, y)) {
                best_h = pc.tower.height;
                color = pal.roof;  // same roof for every facade type
            }
            for (const Box& wall : w.walls)
                if (wall.contains_xy_cm(x, y) && wall.height > best_h) {
                    best_h = wall.height;
                    color = pal.wall;
                }
            put_rgb(img, r, c, color);
        }
    return img;
}

io::LabelRaster render_labels(const World& w, const SynthParams& p) {
    io::LabelRaster lr;
    lr.w = lr.h = p.overhead_px;
    lr.labels.assign(static_cast<size_t>(p.overhead_px) * p.overhead_px, 0);
    for (int r = 0; r < p.overhead_px; ++r)
        for (int c = 0; c < p.overhead_px; ++c) {
            bool border = r < p.border_px || c < p.border_px || r >= p.overhead_px - p.border_px ||
                          c >= p.overhead_px - p.border_px;
            if (border) {
                lr.labels[static_cast<size_t>(r) * p.overhead_px + static_cast<size_t>(c)] =
                    kUnknownLabel;
                continue;
            }
            auto [x, y] = pixel_center(r, c, p);
            lr.labels[static_cast<size_t>(r) * p.overhead_px + static_cast<size_t>(c)] =
                static_cast<uint8_t>(w.class_at_cm(x, y));
        }
    return lr;
}

io::FloatRaster render_heights(const World& w, const SynthParams& p) {
    io::FloatRaster fr;
    fr.w = fr.h = p.overhead_px;
    fr.values.assign(static_cast<size_t>(p.overhead_px) * p.overhead_px, -1.0f);
    for (int r = 0; r < p.overhead_px; ++r)
        for (int c = 0; c < p.overhead_px; ++c) {
            bool border = r < p.border_px || c < p.border_px || r >= p.overhead_px - p.border_px ||
                          c >= p.overhead_px - p.border_px;
            if (border) continue;
            auto [x, y] = pixel_center(r, c, p);
            fr.values[static_cast<size_t>(r) * p.overhead_px + static_cast<size_t>(c)] =
                static_cast<float>(w.parcel_at_cm(x, y).tower_height_cm) / 100.0f;
        }
    return fr;
}

namespace {

// slab intersection; reports entry distance and the axis the ray entered
// through (0 x, 1 y, 2 z-top)
bool intersect_box(const Box& b, double ox, double oy, double oz,
                   const std::array<double, 3>& d, double* t_enter, int* axis) {
    double lo[3] = {b.x0 / 100.0, b.y0 / 100.0, 0.0};
    double hi[3] = {b.x1 / 100.0, b.y1 / 100.0, b.height / 100.0};
    double o[3] = {ox, oy, oz};
    double tmin = -1e30, tmax = 1e30;
    int enter_axis = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[static_cast<size_t>(a)]) < 1e-12) {
            if (o[a] < lo[a] || o[a] > hi[a]) return false;
            continue;
        }
        double inv = 1.0 / d[static_cast<size_t>(a)];
        double t0 = (lo[a] - o[a]) * inv;
        double t1 = (hi[a] - o[a]) * inv;
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tmin) {
            tmin = t0;
            enter_axis = a;
        }
        tmax = std::min(tmax, t1);
        if (tmin > tmax) return false;
    }
    if (tmax < 1e-9 || tmin < 1e-9) return false;  // behind the camera or inside
    *t_enter = tmin;
    *axis = enter_axis;
    return true;
}

}  // namespace

Hit cast_ray(const World& w, double ox_m, double oy_m, double oz_m,
             const std::array<double, 3>& dir) {
    Hit best;
    best.t = 1e30;
    for (size_t i = 0; i < w.parcels.size(); ++i) {
        double t;
        int axis;
        if (intersect_box(w.parcels[i].tower, ox_m, oy_m, oz_m, dir, &t, &axis) && t < best.t) {
            best.t = t;
            best.kind = axis == 2 ? Hit::tower_top : Hit::tower_side;
            best.parcel = static_cast<int>(i);
        }
    }
    for (const Box& wall : w.walls) {
        double t;
        int axis;
        if (intersect_box(wall, ox_m, oy_m, oz_m, dir, &t, &axis) && t < best.t) {
            best.t = t;
            best.kind = Hit::wall;
            best.parcel = -1;
        }
    }
    if (dir[2] < -1e-12) {
        double t = oz_m / -dir[2];
        if (t > 1e-9 && t < best.t) {
            best.t = t;
            best.kind = Hit::ground;
            double hx = ox_m + t * dir[0], hy = oy_m + t * dir[1];
            double half = w.side_cm / 200.0;
            best.parcel = (std::abs(hx) < half && std::abs(hy) < half)
                              ? static_cast<int>(&w.parcel_at_cm(hx * 100.0, hy * 100.0) -
                                                 w.parcels.data())
                              : -1;
        }
    }
    if (best.kind == Hit::none) {
        best.kind = Hit::sky;
        best.t = 0.0;
    }
    return best;
}

io::RgbImage render_panorama(const World& w, double cam_x_m, double cam_y_m,
                             const SynthParams& p) {
    const Palette& pal = palette();
    geo::RayField rays = geo::pano_ray_field(p.pano_h, p.pano_w, p.crop_deg);
    io::RgbImage img;
    img.w = p.pano_w;
    img.h = p.pano_h;
    img.rgb.assign(static_cast<size_t>(p.pano_w) * p.pano_h * 3, 0);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < p.pano_h; ++r)
        for (int c = 0; c < p.pano_w; ++c) {
            Hit hit = cast_ray(w, cam_x_m, cam_y_m, p.camera_height_m, rays.at(r, c));
            std::array<float, 3> color = pal.sky;
            float shade = 1.0f;
            switch (hit.kind) {
                case Hit::ground:
                    color = hit.parcel >= 0
                                ? pal.ground[w.parcels[static_cast<size_t>(hit.parcel)].base]
                                : pal.outside;
                    break;
                case Hit::tower_top:
                    color = pal.roof;
                    break;
                case Hit::tower_side: {
                    color = pal.facade[w.parcels[static_cast<size_t>(hit.parcel)].facade];
                    // simple face shading keyed off the entry direction
                    const auto& d = rays.at(r, c);
                    shade = std::abs(d[0]) > std::abs(d[1]) ? 0.9f : (d[1] > 0 ? 0.8f : 1.0f);
                    break;
                }
                case Hit::wall:
                    shade = 0.95f;
                    color = pal.wall;
                    break;
                default:
                    break;
            }
            put_rgb(img, r, c, color, shade);
        }
    return img;
}

Scene make_scene(int scene_id, uint64_t dataset_seed, const SynthParams& p) {
    Scene s;
    s.scene_id = scene_id;
    uint64_t scene_seed = Rng::derive(dataset_seed, "scene", static_cast<uint64_t>(scene_id));
    s.world = generate_world(scene_seed, p);
    s.center = p.anchor;

    double side_m = p.overhead_px * p.gsd;
    Rng cam_rng = Rng::substream(scene_seed, "cams");
    for (int k = 0; k < p.n_panos; ++k) {
        // one camera per quadrant keeps coverage even
        int qx = k % 2, qy = (k / 2) % 2;
        double x = 0, y = 0;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
            x = (qx == 0 ? -1 : 0) * side_m / 2 + 2.0 + cam_rng.uniform() * (side_m / 2 - 4.0);
            y = (qy == 0 ? -1 : 0) * side_m / 2 + 2.0 + cam_rng.uniform() * (side_m / 2 - 4.0);
            placed = true;
            double xc = x * 100.0, yc = y * 100.0;
            double margin = 100.0;  // 1 m clearance
            for (const Parcel& pc : s.world.parcels)
                if (xc > pc.tower.x0 - margin && xc < pc.tower.x1 + margin &&
                    yc > pc.tower.y0 - margin && yc < pc.tower.y1 + margin)
                    placed = false;
            for (const Box& wall : s.world.walls)
                if (xc > wall.x0 - margin && xc < wall.x1 + margin && yc > wall.y0 - margin &&
                    yc < wall.y1 + margin)
                    placed = false;
        }
        require(placed, "could not place camera ", k, " in scene ", scene_id);
        s.camera_xy_m.emplace_back(x, y);
        s.cameras.push_back(geo::offset_by_meters(p.anchor, x, y));
    }

    s.overhead = render_overhead(s.world, p);
    s.labels = render_labels(s.world, p);
    s.heights = render_heights(s.world, p);
    for (const auto& [cx, cy] : s.camera_xy_m)
        s.panos.push_back(render_panorama(s.world, cx, cy, p));
    return s;
}

void generate_dataset(const std::filesystem::path& out_dir, int n_scenes, uint64_t seed,
                      const SynthParams& p, const std::string& task, double train_ratio,
                      double val_ratio) {
    require(n_scenes >= 3, "need at least 3 scenes for train/val/test splits, got ", n_scenes);
    require(task == "classification" || task == "regression", "unknown task '", task, "'");
    require(train_ratio > 0 && val_ratio > 0 && train_ratio + val_ratio < 1.0,
            "split ratios must be positive and sum below 1");
    std::filesystem::create_directories(out_dir / "scenes");

    std::vector<io::SceneRecord> records;
    char name[64];
    for (int i = 0; i < n_scenes; ++i) {
        Scene s = make_scene(i, seed, p);
        io::SceneRecord rec;
        rec.scene_id = i;
        std::snprintf(name, sizeof(name), "scenes/s%05d_overhead.gfi", i);
        rec.overhead_path = name;
        io::write_rgb(out_dir / name, s.overhead);
        if (task == "classification") {
            std::snprintf(name, sizeof(name), "scenes/s%05d_labels.gfl", i);
            rec.label_path = name;
            io::write_labels(out_dir / name, s.labels);
        } else {
            std::snprintf(name, sizeof(name), "scenes/s%05d_height.gfr", i);
            rec.label_path = name;
            io::write_float_raster(out_dir / name, s.heights);
        }
        for (int k = 0; k < p.n_panos; ++k) {
            std::snprintf(name, sizeof(name), "scenes/s%05d_pano%d.gfi", i, k);
            rec.pano_paths.push_back(name);
            io::write_rgb(out_dir / name, s.panos[static_cast<size_t>(k)]);
            rec.cameras.emplace_back(s.cameras[static_cast<size_t>(k)].lat,
                                     s.cameras[static_cast<size_t>(k)].lon);
        }
        rec.center_lat = s.center.lat;
        rec.center_lon = s.center.lon;
        rec.gsd = p.gsd;
        records.push_back(std::move(rec));
    }

    // deterministic shuffle, then contiguous split
    std::vector<int> order(static_cast<size_t>(n_scenes));
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng = Rng::substream(seed, "split");
    for (int i = n_scenes - 1; i > 0; --i) {
        int j = static_cast<int>(split_rng.uniform_index(static_cast<uint64_t>(i + 1)));
        std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }
    int n_train = static_cast<int>(std::llround(n_scenes * train_ratio));
    int n_val = static_cast<int>(std::llround(n_scenes * val_ratio));
    n_train = std::clamp(n_train, 1, n_scenes - 2);
    n_val = std::clamp(n_val, 1, n_scenes - n_train - 1);
    auto slice = [&](int lo, int hi) {
        std::vector<io::SceneRecord> out;
        std::vector<int> ids(order.begin() + lo, order.begin() + hi);
        std::sort(ids.begin(), ids.end());
        for (int id : ids) out.push_back(records[static_cast<size_t>(id)]);
        return out;
    };
    io::write_manifest(out_dir / "train.tsv", slice(0, n_train));
    io::write_manifest(out_dir / "val.tsv", slice(n_train, n_train + n_val));
    io::write_manifest(out_dir / "test.tsv", slice(n_train + n_val, n_scenes));

    std::ostringstream meta;
    meta << "seed " << seed << "\n"
         << "n_scenes " << n_scenes << "\n"
         << "task " << task << "\n"
         << "overhead_px " << p.overhead_px << "\n"
         << "gsd " << p.gsd << "\n"
         << "pano_h " << p.pano_h << "\n"
         << "pano_w " << p.pano_w << "\n"
         << "crop_deg " << p.crop_deg << "\n"
         << "n_panos " << p.n_panos << "\n"
         << "parcels_per_side " << p.parcels_per_side << "\n"
         << "n_walls " << p.n_walls << "\n";
    io::write_text_file(out_dir / "dataset.meta", meta.str());
}

}  // namespace geofuse::synth

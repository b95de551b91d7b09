#include "geofuse/dataset.hpp"

namespace geofuse {

Dataset::Dataset(const std::filesystem::path& dir, const std::string& split, bool with_panos) {
    auto manifest = dir / (split + ".tsv");
    if (!std::filesystem::exists(manifest))
        throw IoError(msg("no manifest for split '", split, "' at ", manifest.string()));
    std::vector<io::SceneRecord> records = io::read_manifest(manifest);
    scenes_.reserve(records.size());
    for (const auto& rec : records) {
        LoadedScene s;
        s.scene_id = rec.scene_id;
        s.overhead = io::image_to_tensor(io::read_rgb(dir / rec.overhead_path));
        if (rec.label_path.size() >= 4 &&
            rec.label_path.substr(rec.label_path.size() - 4) == ".gfr") {
            s.regression = true;
            io::FloatRaster fr = io::read_float_raster(dir / rec.label_path);
            s.target = fr.values;
            s.target_mask.resize(s.target.size());
            for (size_t i = 0; i < s.target.size(); ++i)
                s.target_mask[i] = s.target[i] >= 0.0f ? 1 : 0;
        } else {
            io::LabelRaster lr = io::read_labels(dir / rec.label_path);
            s.labels.assign(lr.labels.begin(), lr.labels.end());
        }
        for (size_t k = 0; k < rec.pano_paths.size(); ++k) {
            s.cameras.emplace_back(rec.cameras[k].first, rec.cameras[k].second);
            if (with_panos)
                s.panos.push_back(io::image_to_tensor(io::read_rgb(dir / rec.pano_paths[k])));
        }
        s.center = geo::GeoLocation(rec.center_lat, rec.center_lon);
        s.gsd = rec.gsd;
        regression_ = s.regression;
        scenes_.push_back(std::move(s));
    }
}

}  // namespace geofuse

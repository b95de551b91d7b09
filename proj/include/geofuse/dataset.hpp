#pragma once

#include <filesystem>
#include <vector>

#include "geofuse/geo.hpp"
#include "geofuse/io.hpp"
#include "geofuse/tensor.hpp"

namespace geofuse {

struct LoadedScene {
    int scene_id = 0;
    Tensor overhead;               // [3,S,S], values in [0,1]
    std::vector<int32_t> labels;   // S*S, 255 = unknown (classification datasets)
    std::vector<float> target;     // S*S height targets (regression datasets)
    std::vector<uint8_t> target_mask;
    std::vector<Tensor> panos;     // [3,Hp,Wp] each; empty when panos not loaded
    std::vector<geo::GeoLocation> cameras;
    geo::GeoLocation center;
    double gsd = 1.0;
    bool regression = false;
};

// Loads one split of a generated dataset fully into memory. When
// `with_panos` is false the panorama files are never opened (the remote
// variant trains without ground-level imagery on disk).
class Dataset {
  public:
    Dataset(const std::filesystem::path& dir, const std::string& split, bool with_panos);

    size_t size() const { return scenes_.size(); }
    const LoadedScene& at(size_t i) const { return scenes_[i]; }
    bool regression() const { return regression_; }

  private:
    std::vector<LoadedScene> scenes_;
    bool regression_ = false;
};

}  // namespace geofuse

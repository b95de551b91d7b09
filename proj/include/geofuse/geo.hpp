#pragma once

#include <array>
#include <vector>

#include "geofuse/errors.hpp"

namespace geofuse::geo {

// Spherical earth; the paper's distances are haversine.
inline constexpr double kEarthRadiusM = 6371000.0;

struct GeoLocation {
    double lat = 0.0;  // degrees in [-90, 90]
    double lon = 0.0;  // degrees in (-180, 180], normalized at construction

    GeoLocation() = default;
    GeoLocation(double lat_deg, double lon_deg);
};

// great-circle distance in meters
double haversine(const GeoLocation& a, const GeoLocation& b);

// initial great-circle bearing, degrees clockwise from north in [0, 360)
double bearing(const GeoLocation& from, const GeoLocation& to);

// Per-pixel unit view rays in the local east-north-up frame of the camera.
// Column floor(W/2) points exactly north before any rotation; rows span
// [-(90-crop), +(90-crop)] degrees of elevation at pixel centers.
struct RayField {
    int h = 0;
    int w = 0;
    double crop_deg = 0.0;
    std::vector<std::array<double, 3>> rays;  // row-major h*w, ENU unit vectors

    const std::array<double, 3>& at(int r, int c) const {
        return rays[static_cast<size_t>(r) * static_cast<size_t>(w) + static_cast<size_t>(c)];
    }
};

RayField pano_ray_field(int feat_h, int feat_w, double crop_deg);

// Rotate every ray about the zenith so that [0,1,0] points from the camera
// toward the target.
RayField rotate_toward_target(const RayField& rays, const GeoLocation& camera,
                              const GeoLocation& target);

// G x G grid of cell-center geolocations aligned with an overhead image.
struct GeoGrid {
    int grid = 0;
    int image_px = 0;
    double gsd_m = 0.0;
    GeoLocation center;
    std::vector<GeoLocation> cells;  // row-major, north-west cell first

    const GeoLocation& at(int r, int c) const {
        return cells[static_cast<size_t>(r) * static_cast<size_t>(grid) + static_cast<size_t>(c)];
    }
    double cell_spacing_m() const { return gsd_m * image_px / grid; }
};

GeoGrid overhead_geogrid(const GeoLocation& center, int image_px, double gsd_m, int grid);

// Local tangent-plane conversions used by both the grid and the synthetic
// world (east/north offsets in meters relative to an anchor).
GeoLocation offset_by_meters(const GeoLocation& anchor, double east_m, double north_m);

struct GeoMaps {
    int h = 0;
    int w = 0;
    std::vector<double> dist;    // h*w, constant haversine(camera, target)
    std::vector<double> orient;  // h*w*3, target-relative rotated rays
};

GeoMaps distance_orientation_maps(const RayField& rays, const GeoLocation& camera,
                                  const GeoLocation& target);

}  // namespace geofuse::geo

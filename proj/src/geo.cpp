#include "geofuse/geo.hpp"

#include <cmath>

namespace geofuse::geo {

namespace {
constexpr double kDegToRad = M_PI / 180.0;
constexpr double kRadToDeg = 180.0 / M_PI;
}  // namespace

GeoLocation::GeoLocation(double lat_deg, double lon_deg) : lat(lat_deg), lon(lon_deg) {
    require(lat >= -90.0 && lat <= 90.0, "latitude ", lat, " outside [-90, 90]");
    // normalize longitude into (-180, 180]
    while (lon <= -180.0) lon += 360.0;
    while (lon > 180.0) lon -= 360.0;
}

double haversine(const GeoLocation& a, const GeoLocation& b) {
    double p1 = a.lat * kDegToRad, p2 = b.lat * kDegToRad;
    double dp = (b.lat - a.lat) * kDegToRad;
    double dl = (b.lon - a.lon) * kDegToRad;
    double s = std::sin(dp / 2.0), t = std::sin(dl / 2.0);
    double h = s * s + std::cos(p1) * std::cos(p2) * t * t;
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

double bearing(const GeoLocation& from, const GeoLocation& to) {
    require(std::abs(from.lat - to.lat) > 1e-12 || std::abs(from.lon - to.lon) > 1e-12,
            "undefined bearing between coincident points (", from.lat, ",", from.lon, ")");
    double p1 = from.lat * kDegToRad, p2 = to.lat * kDegToRad;
    double dl = (to.lon - from.lon) * kDegToRad;
    double y = std::sin(dl) * std::cos(p2);
    double x = std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl);
    double th = std::atan2(y, x) * kRadToDeg;
    if (th < 0.0) th += 360.0;
    if (th >= 360.0) th -= 360.0;
    return th;
}

RayField pano_ray_field(int feat_h, int feat_w, double crop_deg) {
    require(feat_w >= 2, "ray field width must be >= 2, got ", feat_w);
    require(feat_h >= 1, "ray field height must be >= 1, got ", feat_h);
    require(crop_deg >= 0.0 && crop_deg < 90.0, "crop ", crop_deg, " outside [0, 90)");
    RayField f;
    f.h = feat_h;
    f.w = feat_w;
    f.crop_deg = crop_deg;
    f.rays.resize(static_cast<size_t>(feat_h) * static_cast<size_t>(feat_w));
    double max_el = 90.0 - crop_deg;
    for (int r = 0; r < feat_h; ++r) {
        // pixel-center elevation, linear in the equirectangular sense
        double el = max_el * (1.0 - (2.0 * r + 1.0) / feat_h) * kDegToRad;
        double ce = std::cos(el), se = std::sin(el);
        for (int c = 0; c < feat_w; ++c) {
            // column floor(W/2) is exactly north; azimuth clockwise from north
            double az = (c - feat_w / 2) * (360.0 / feat_w) * kDegToRad;
            f.rays[static_cast<size_t>(r) * static_cast<size_t>(feat_w) + static_cast<size_t>(c)] = {
                std::sin(az) * ce, std::cos(az) * ce, se};
        }
    }
    return f;
}

RayField rotate_toward_target(const RayField& rays, const GeoLocation& camera,
                              const GeoLocation& target) {
    double beta = bearing(camera, target) * kDegToRad;
    double cb = std::cos(beta), sb = std::sin(beta);
    RayField out = rays;
    for (auto& v : out.rays) {
        // rotate by -bearing about the zenith: a ray whose azimuth equals the
        // bearing lands on [0,1,0]
        double x = v[0], y = v[1];
        v[0] = x * cb - y * sb;
        v[1] = y * cb + x * sb;
    }
    return out;
}

GeoLocation offset_by_meters(const GeoLocation& anchor, double east_m, double north_m) {
    double dlat = north_m / kEarthRadiusM * kRadToDeg;
    double dlon = east_m / (kEarthRadiusM * std::cos(anchor.lat * kDegToRad)) * kRadToDeg;
    return GeoLocation(anchor.lat + dlat, anchor.lon + dlon);
}

GeoGrid overhead_geogrid(const GeoLocation& center, int image_px, double gsd_m, int grid) {
    require(grid >= 1, "grid must be >= 1, got ", grid);
    require(image_px % grid == 0, "grid ", grid, " must divide image size ", image_px);
    GeoGrid g;
    g.grid = grid;
    g.image_px = image_px;
    g.gsd_m = gsd_m;
    g.center = center;
    g.cells.reserve(static_cast<size_t>(grid) * static_cast<size_t>(grid));
    double cell_m = gsd_m * image_px / grid;
    for (int r = 0; r < grid; ++r)
        for (int c = 0; c < grid; ++c) {
            double east = (c - (grid - 1) / 2.0) * cell_m;
            double north = ((grid - 1) / 2.0 - r) * cell_m;
            g.cells.push_back(offset_by_meters(center, east, north));
        }
    return g;
}

GeoMaps distance_orientation_maps(const RayField& rays, const GeoLocation& camera,
                                  const GeoLocation& target) {
    GeoMaps m;
    m.h = rays.h;
    m.w = rays.w;
    double d = haversine(camera, target);
    m.dist.assign(static_cast<size_t>(rays.h) * static_cast<size_t>(rays.w), d);
    RayField rot = rotate_toward_target(rays, camera, target);
    m.orient.resize(m.dist.size() * 3);
    for (size_t i = 0; i < rot.rays.size(); ++i) {
        m.orient[i * 3 + 0] = rot.rays[i][0];
        m.orient[i * 3 + 1] = rot.rays[i][1];
        m.orient[i * 3 + 2] = rot.rays[i][2];
    }
    return m;
}

}  // namespace geofuse::geo

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "geofuse/geo.hpp"
#include "geofuse/rng.hpp"

using namespace geofuse;
using geofuse::geo::GeoLocation;

namespace {

GeoLocation random_loc(Rng& rng, double lat_range = 80.0) {
    return GeoLocation(rng.uniform(-lat_range, lat_range), rng.uniform(-179.0, 179.0));
}

// independent spherical-trig route: project the great-circle direction into
// the local north/east tangent basis
double bearing_oracle(const GeoLocation& a, const GeoLocation& b) {
    auto unit = [](const GeoLocation& g) {
        double lat = g.lat * M_PI / 180.0, lon = g.lon * M_PI / 180.0;
        return std::array<double, 3>{std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon),
                                     std::sin(lat)};
    };
    auto A = unit(a), B = unit(b);
    double dot = A[0] * B[0] + A[1] * B[1] + A[2] * B[2];
    std::array<double, 3> t{B[0] - dot * A[0], B[1] - dot * A[1], B[2] - dot * A[2]};
    double lat = a.lat * M_PI / 180.0, lon = a.lon * M_PI / 180.0;
    std::array<double, 3> north{-std::sin(lat) * std::cos(lon), -std::sin(lat) * std::sin(lon),
                                std::cos(lat)};
    std::array<double, 3> east{-std::sin(lon), std::cos(lon), 0.0};
    double bn = t[0] * north[0] + t[1] * north[1] + t[2] * north[2];
    double be = t[0] * east[0] + t[1] * east[1] + t[2] * east[2];
    double th = std::atan2(be, bn) * 180.0 / M_PI;
    if (th < 0) th += 360.0;
    return th;
}

}  // namespace

TEST_CASE("haversine basics") {
    GeoLocation a(40.7, -73.95);
    CHECK(geo::haversine(a, a) == 0.0);
    // one degree of longitude on the equator
    double d = geo::haversine(GeoLocation(0, 0), GeoLocation(0, 1));
    CHECK(std::abs(d - 111194.93) < 0.01);
}

TEST_CASE("haversine symmetry, positivity, triangle inequality") {
    Rng rng(31);
    for (int i = 0; i < 200; ++i) {
        GeoLocation a = random_loc(rng), b = random_loc(rng), c = random_loc(rng);
        double ab = geo::haversine(a, b);
        CHECK(ab == geo::haversine(b, a));  // exact
        CHECK(ab >= 0.0);
        CHECK(geo::haversine(a, c) <= ab + geo::haversine(b, c) + 1e-6);
    }
    GeoLocation p(10.0, 20.0), q(10.0001, 20.0);
    CHECK(geo::haversine(p, q) > 0.0);
}

TEST_CASE("bearing cardinal directions and oracle") {
    GeoLocation cam(40.0, -74.0);
    CHECK(geo::bearing(cam, GeoLocation(41.0, -74.0)) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(geo::bearing(GeoLocation(0, 0), GeoLocation(0, 1)) == doctest::Approx(90.0));
    Rng rng(32);
    for (int i = 0; i < 200; ++i) {
        GeoLocation a = random_loc(rng), b = random_loc(rng);
        double d1 = geo::bearing(a, b);
        double d2 = bearing_oracle(a, b);
        double diff = std::abs(d1 - d2);
        if (diff > 180.0) diff = 360.0 - diff;
        CHECK(diff < 1e-9);
    }
    CHECK_THROWS_WITH_AS(geo::bearing(cam, cam), doctest::Contains("undefined bearing"),
                         ContractViolation);
}

TEST_CASE("pano_ray_field geometry") {
    // odd height so a row sits exactly on the horizon
    geo::RayField f = geo::pano_ray_field(9, 32, 40.0);
    const auto& center = f.at(4, 16);
    CHECK(center[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(center[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(center[2] == doctest::Approx(0.0).epsilon(1e-12));
    const auto& east = f.at(4, 24);  // +90 degrees azimuth
    CHECK(east[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(east[1]) < 1e-12);

    geo::RayField g = geo::pano_ray_field(8, 32, 40.0);
    for (const auto& r : g.rays) {
        double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
        CHECK(std::abs(n - 1.0) < 1e-9);
    }
    // elevation bounds respect the crop
    double max_el = 0.0;
    for (const auto& r : g.rays) max_el = std::max(max_el, std::abs(r[2]));
    CHECK(max_el <= std::sin(50.0 * M_PI / 180.0) + 1e-12);

    CHECK_THROWS_AS(geo::pano_ray_field(8, 32, 95.0), ContractViolation);
    CHECK_THROWS_AS(geo::pano_ray_field(8, 1, 40.0), ContractViolation);
}

TEST_CASE("rotate_toward_target alignment") {
    GeoLocation cam(40.7, -73.95);
    geo::RayField f = geo::pano_ray_field(9, 32, 40.0);
    {
        // target due north: identity rotation
        geo::RayField r = geo::rotate_toward_target(f, cam, geo::offset_by_meters(cam, 0, 100));
        for (size_t i = 0; i < f.rays.size(); ++i)
            for (int a = 0; a < 3; ++a) CHECK(std::abs(r.rays[i][a] - f.rays[i][a]) < 1e-9);
    }
    {
        // on the equator due east is an exact great-circle bearing of 90
        GeoLocation eq(0.0, 10.0);
        geo::RayField r = geo::rotate_toward_target(f, eq, GeoLocation(0.0, 10.01));
        const auto& v = r.at(4, 24);  // was due east
        CHECK(std::abs(v[0]) < 1e-9);
        CHECK(v[1] == doctest::Approx(1.0).epsilon(1e-9));
    }
    {
        // post-condition: a ray whose azimuth equals the bearing maps to
        // [0,1,0] within 1e-9, for arbitrary camera/target pairs
        Rng rng(35);
        for (int i = 0; i < 50; ++i) {
            GeoLocation c = random_loc(rng);
            GeoLocation t = geo::offset_by_meters(c, rng.uniform(-200, 200), rng.uniform(-200, 200));
            if (std::abs(c.lat - t.lat) < 1e-12 && std::abs(c.lon - t.lon) < 1e-12) continue;
            double beta = geo::bearing(c, t) * M_PI / 180.0;
            geo::RayField one;
            one.h = 1;
            one.w = 2;
            one.rays = {{std::sin(beta), std::cos(beta), 0.0}, {0.0, 0.0, 1.0}};
            geo::RayField rr = geo::rotate_toward_target(one, c, t);
            CHECK(std::abs(rr.rays[0][0]) < 1e-9);
            CHECK(std::abs(rr.rays[0][1] - 1.0) < 1e-9);
            // zenith ray untouched
            CHECK(rr.rays[1][2] == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    {
        // norms preserved and pairwise dot products invariant
        Rng rng(33);
        GeoLocation tgt = geo::offset_by_meters(cam, rng.uniform(-50, 50), rng.uniform(-50, 50));
        geo::RayField r = geo::rotate_toward_target(f, cam, tgt);
        for (int i = 0; i < 50; ++i) {
            size_t p = rng.uniform_index(f.rays.size());
            size_t q = rng.uniform_index(f.rays.size());
            double d0 = 0, d1 = 0;
            for (int a = 0; a < 3; ++a) {
                d0 += f.rays[p][a] * f.rays[q][a];
                d1 += r.rays[p][a] * r.rays[q][a];
            }
            CHECK(std::abs(d0 - d1) < 1e-9);
        }
    }
    {
        // opposite bearings compose to the identity
        GeoLocation east = geo::offset_by_meters(cam, 100, 0);
        GeoLocation west = geo::offset_by_meters(cam, -100, 0);
        geo::RayField r = geo::rotate_toward_target(geo::rotate_toward_target(f, cam, east), cam, west);
        for (size_t i = 0; i < f.rays.size(); ++i)
            for (int a = 0; a < 3; ++a) CHECK(std::abs(r.rays[i][a] - f.rays[i][a]) < 1e-9);
    }
}

TEST_CASE("overhead_geogrid cell layout and spacing") {
    GeoLocation center(40.7, -73.95);
    {
        geo::GeoGrid g = geo::overhead_geogrid(center, 64, 1.0, 1);
        CHECK(g.cells.size() == 1);
        CHECK(g.at(0, 0).lat == doctest::Approx(center.lat).epsilon(1e-12));
        CHECK(g.at(0, 0).lon == doctest::Approx(center.lon).epsilon(1e-12));
    }
    {
        geo::GeoGrid g = geo::overhead_geogrid(center, 256, 0.3, 32);
        CHECK(g.cell_spacing_m() == doctest::Approx(2.4));
        // adjacent cells measured back through haversine
        double d_row = geo::haversine(g.at(5, 7), g.at(5, 8));
        double d_col = geo::haversine(g.at(5, 7), g.at(6, 7));
        CHECK(std::abs(d_row - 2.4) < 1e-3);
        CHECK(std::abs(d_col - 2.4) < 1e-3);
        // north-west first: row 0 has the highest latitude
        CHECK(g.at(0, 0).lat > g.at(31, 0).lat);
        CHECK(g.at(0, 0).lon < g.at(0, 31).lon);
    }
    {
        // spacing within 0.1% of gsd * (image/grid) below 60 degrees latitude
        Rng rng(34);
        for (int i = 0; i < 20; ++i) {
            GeoLocation c(rng.uniform(-59.0, 59.0), rng.uniform(-179.0, 179.0));
            geo::GeoGrid g = geo::overhead_geogrid(c, 128, 0.5, 16);
            double want = g.cell_spacing_m();
            double got = geo::haversine(g.at(8, 3), g.at(8, 4));
            CHECK(std::abs(got - want) / want < 1e-3);
        }
    }
    CHECK_THROWS_AS(geo::overhead_geogrid(center, 64, 1.0, 0), ContractViolation);
    CHECK_THROWS_AS(geo::overhead_geogrid(center, 64, 1.0, 7), ContractViolation);
}

TEST_CASE("distance_orientation_maps contract") {
    GeoLocation cam(40.7, -73.95);
    geo::RayField f = geo::pano_ray_field(8, 32, 40.0);
    GeoLocation tgt = geo::offset_by_meters(cam, -100, 0);  // 100 m due west
    geo::GeoMaps m = geo::distance_orientation_maps(f, cam, tgt);
    CHECK(m.h == 8);
    CHECK(m.w == 32);
    CHECK(m.dist.size() == 8 * 32);
    CHECK(m.orient.size() == 8 * 32 * 3);
    double mn = m.dist[0], mx = m.dist[0];
    for (double d : m.dist) {
        mn = std::min(mn, d);
        mx = std::max(mx, d);
    }
    CHECK(mx - mn == 0.0);  // tiled constant
    CHECK(mn == doctest::Approx(100.0).epsilon(1e-6));
    // the column looking due west (azimuth -90, column 8) ends up toward the
    // target; at 100 m the great-circle bearing deviates from the tangent
    // direction by a few microdegrees, hence the loose tolerance
    geo::RayField rot = geo::rotate_toward_target(f, cam, tgt);
    size_t west_col = 8;
    for (int r = 0; r < 8; ++r) {
        const auto& v = rot.at(r, static_cast<int>(west_col));
        double horiz = std::hypot(v[0], v[1]);
        CHECK(std::abs(v[0]) < 1e-4);
        CHECK(v[1] == doctest::Approx(horiz).epsilon(1e-6));
    }
    for (size_t i = 0; i < m.dist.size(); ++i) {
        double n = std::hypot(std::hypot(m.orient[i * 3], m.orient[i * 3 + 1]), m.orient[i * 3 + 2]);
        CHECK(std::abs(n - 1.0) < 1e-9);
    }
}

#include "geofuse/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace geofuse::io {

namespace {

void write_header(std::ostream& os, const char* magic, uint32_t w, uint32_t h) {
    os.write(magic, 4);
    unsigned char b[8] = {
        static_cast<unsigned char>(w & 0xff),        static_cast<unsigned char>((w >> 8) & 0xff),
        static_cast<unsigned char>((w >> 16) & 0xff), static_cast<unsigned char>((w >> 24) & 0xff),
        static_cast<unsigned char>(h & 0xff),        static_cast<unsigned char>((h >> 8) & 0xff),
        static_cast<unsigned char>((h >> 16) & 0xff), static_cast<unsigned char>((h >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::pair<uint32_t, uint32_t> read_header(std::istream& is, const char* magic,
                                          const std::filesystem::path& file) {
    char m[4];
    is.read(m, 4);
    if (!is || std::memcmp(m, magic, 4) != 0)
        throw IoError(msg("bad magic in ", file.string(), ", expected ", magic));
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint32_t w = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                 (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    uint32_t h = static_cast<uint32_t>(b[4]) | (static_cast<uint32_t>(b[5]) << 8) |
                 (static_cast<uint32_t>(b[6]) << 16) | (static_cast<uint32_t>(b[7]) << 24);
    return {w, h};
}

std::ofstream open_out(const std::filesystem::path& file) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw IoError(msg("cannot write ", file.string()));
    return os;
}

std::ifstream open_in(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError(msg("cannot open ", file.string()));
    return is;
}

}  // namespace

void write_rgb(const std::filesystem::path& file, const RgbImage& img) {
    auto os = open_out(file);
    write_header(os, "GFI1", static_cast<uint32_t>(img.w), static_cast<uint32_t>(img.h));
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    if (!os) throw IoError(msg("short write to ", file.string()));
}

RgbImage read_rgb(const std::filesystem::path& file) {
    auto is = open_in(file);
    auto [w, h] = read_header(is, "GFI1", file);
    RgbImage img;
    img.w = static_cast<int>(w);
    img.h = static_cast<int>(h);
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!is) throw IoError(msg("truncated image ", file.string()));
    return img;
}

void write_labels(const std::filesystem::path& file, const LabelRaster& r) {
    auto os = open_out(file);
    write_header(os, "GFL1", static_cast<uint32_t>(r.w), static_cast<uint32_t>(r.h));
    os.write(reinterpret_cast<const char*>(r.labels.data()),
             static_cast<std::streamsize>(r.labels.size()));
    if (!os) throw IoError(msg("short write to ", file.string()));
}

LabelRaster read_labels(const std::filesystem::path& file) {
    auto is = open_in(file);
    auto [w, h] = read_header(is, "GFL1", file);
    LabelRaster r;
    r.w = static_cast<int>(w);
    r.h = static_cast<int>(h);
    r.labels.resize(static_cast<size_t>(w) * h);
    is.read(reinterpret_cast<char*>(r.labels.data()), static_cast<std::streamsize>(r.labels.size()));
    if (!is) throw IoError(msg("truncated label raster ", file.string()));
    return r;
}

void write_float_raster(const std::filesystem::path& file, const FloatRaster& r) {
    auto os = open_out(file);
    write_header(os, "GFR1", static_cast<uint32_t>(r.w), static_cast<uint32_t>(r.h));
    os.write(reinterpret_cast<const char*>(r.values.data()),
             static_cast<std::streamsize>(r.values.size() * 4));
    if (!os) throw IoError(msg("short write to ", file.string()));
}

FloatRaster read_float_raster(const std::filesystem::path& file) {
    auto is = open_in(file);
    auto [w, h] = read_header(is, "GFR1", file);
    FloatRaster r;
    r.w = static_cast<int>(w);
    r.h = static_cast<int>(h);
    r.values.resize(static_cast<size_t>(w) * h);
    is.read(reinterpret_cast<char*>(r.values.data()),
            static_cast<std::streamsize>(r.values.size() * 4));
    if (!is) throw IoError(msg("truncated raster ", file.string()));
    return r;
}

void write_pgm(const std::filesystem::path& file, const Tensor& map, float scale) {
    require(map.ndim() == 2, "PGM export expects a 2-d map, got ", shape_str(map.shape));
    int h = map.dim(0), w = map.dim(1);
    auto os = open_out(file);
    os << "P5\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w));
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            float v = map.v[static_cast<size_t>(r) * w + c] * scale;
            row[static_cast<size_t>(c)] =
                static_cast<uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
        os.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!os) throw IoError(msg("short write to ", file.string()));
}

Tensor image_to_tensor(const RgbImage& img) {
    Tensor t(Shape{3, img.h, img.w});
    int64_t hw = static_cast<int64_t>(img.h) * img.w;
    for (int64_t i = 0; i < hw; ++i)
        for (int ch = 0; ch < 3; ++ch)
            t.v[static_cast<size_t>(ch * hw + i)] =
                static_cast<float>(img.rgb[static_cast<size_t>(i * 3 + ch)]) / 255.0f;
    return t;
}

std::string read_text_file(const std::filesystem::path& file) {
    auto is = open_in(file);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& file, const std::string& content) {
    auto os = open_out(file);
    os << content;
    if (!os) throw IoError(msg("short write to ", file.string()));
}

uint64_t file_hash(const std::filesystem::path& file) {
    auto is = open_in(file);
    uint64_t h = 0xcbf29ce484222325ull;
    char buf[65536];
    while (is) {
        is.read(buf, sizeof(buf));
        std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<uint8_t>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

void write_manifest(const std::filesystem::path& file, const std::vector<SceneRecord>& records) {
    auto os = open_out(file);
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.9f", v);
        return std::string(buf);
    };
    for (const auto& r : records) {
        os << r.scene_id << "\t" << r.overhead_path << "\t" << r.label_path << "\t"
           << r.pano_paths.size();
        for (const auto& p : r.pano_paths) os << "\t" << p;
        for (const auto& [lat, lon] : r.cameras) os << "\t" << fmt(lat) << "," << fmt(lon);
        os << "\t" << fmt(r.center_lat) << "," << fmt(r.center_lon);
        os << "\t" << fmt(r.gsd) << "\n";
    }
    if (!os) throw IoError(msg("short write to ", file.string()));
}

std::vector<SceneRecord> read_manifest(const std::filesystem::path& file) {
    auto is = open_in(file);
    std::vector<SceneRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> f;
        size_t start = 0;
        while (true) {
            size_t tab = line.find('\t', start);
            f.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (f.size() < 4) throw IoError(msg(file.string(), ":", line_no, ": malformed record"));
        SceneRecord r;
        r.scene_id = std::stoi(f[0]);
        r.overhead_path = f[1];
        r.label_path = f[2];
        size_t k = static_cast<size_t>(std::stoul(f[3]));
        if (f.size() != 4 + 2 * k + 2)
            throw IoError(msg(file.string(), ":", line_no, ": expected ", 4 + 2 * k + 2,
                              " fields for K=", k, ", got ", f.size()));
        for (size_t i = 0; i < k; ++i) r.pano_paths.push_back(f[4 + i]);
        auto parse_pair = [&](const std::string& s) {
            size_t comma = s.find(',');
            if (comma == std::string::npos)
                throw IoError(msg(file.string(), ":", line_no, ": bad lat,lon pair '", s, "'"));
            return std::make_pair(std::stod(s.substr(0, comma)), std::stod(s.substr(comma + 1)));
        };
        for (size_t i = 0; i < k; ++i) r.cameras.push_back(parse_pair(f[4 + k + i]));
        auto [clat, clon] = parse_pair(f[4 + 2 * k]);
        r.center_lat = clat;
        r.center_lon = clon;
        r.gsd = std::stod(f[4 + 2 * k + 1]);
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace geofuse::io

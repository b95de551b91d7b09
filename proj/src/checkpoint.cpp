#include "geofuse/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace geofuse {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

std::string file_for(const std::string& name) {
    std::string f = name;
    for (char& c : f)
        if (c == '.' || c == '/') c = '_';
    return f + ".gft";
}

}  // namespace

void save_tensor(const std::filesystem::path& file, const Tensor& t) {
    std::ofstream os(file, std::ios::binary);
    if (!os) throw IoError(msg("cannot write tensor file ", file.string()));
    os.write("GFT1", 4);
    unsigned char dtype = 0;  // fp32
    unsigned char ndim = static_cast<unsigned char>(t.ndim());
    os.write(reinterpret_cast<const char*>(&dtype), 1);
    os.write(reinterpret_cast<const char*>(&ndim), 1);
    for (int d : t.shape) put_u32(os, static_cast<uint32_t>(d));
    // payload is little-endian fp32, row-major; this build targets LE hosts
    os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
    if (!os) throw IoError(msg("short write to ", file.string()));
}

Tensor load_tensor(const std::filesystem::path& file) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw IoError(msg("cannot open tensor file ", file.string()));
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "GFT1", 4) != 0)
        throw IoError(msg("bad magic in tensor file ", file.string()));
    unsigned char dtype = 0, ndim = 0;
    is.read(reinterpret_cast<char*>(&dtype), 1);
    is.read(reinterpret_cast<char*>(&ndim), 1);
    if (dtype != 0) throw IoError(msg("unsupported dtype tag ", static_cast<int>(dtype), " in ", file.string()));
    Shape shape(ndim);
    for (int i = 0; i < ndim; ++i) shape[static_cast<size_t>(i)] = static_cast<int>(get_u32(is));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * 4));
    if (!is) throw IoError(msg("truncated tensor file ", file.string()));
    return t;
}

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<const Param*>& params, int64_t iteration, double lr) {
    std::filesystem::create_directories(dir);
    std::ofstream mf(dir / "manifest.txt");
    if (!mf) throw IoError(msg("cannot write checkpoint manifest in ", dir.string()));
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", lr);
    mf << "iteration " << iteration << "\n";
    mf << "lr " << buf << "\n";
    for (const Param* p : params) {
        std::string f = file_for(p->name);
        save_tensor(dir / f, p->value);
        mf << "param " << p->name << " " << f << "\n";
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.txt");
    if (!mf) throw IoError(msg("cannot open checkpoint manifest in ", dir.string()));
    Checkpoint ck;
    std::string line;
    while (std::getline(mf, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string kind;
        ss >> kind;
        if (kind == "iteration") {
            ss >> ck.iteration;
        } else if (kind == "lr") {
            ss >> ck.lr;
        } else if (kind == "param") {
            std::string name, file;
            ss >> name >> file;
            ck.tensors[name] = load_tensor(dir / file);
        } else {
            throw IoError(msg("unknown manifest entry '", kind, "' in ", dir.string()));
        }
    }
    return ck;
}

}  // namespace geofuse

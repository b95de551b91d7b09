#include "geofuse/attention.hpp"

namespace geofuse::attn {

AttentionNetParams AttentionNetParams::init(int in_channels, uint64_t seed) {
    AttentionNetParams p;
    p.in_channels = in_channels;
    auto uniform_init = [&](const char* name, Shape s, double half_range) {
        Rng rng = Rng::substream(seed, name);
        Tensor t(std::move(s));
        for (auto& v : t.v) v = static_cast<float>(rng.uniform(-half_range, half_range));
        return t;
    };
    // small uniform weights, zero bias: the initial maps sit near 0.5
    p.conv3_w = Param("attn.conv3.w", uniform_init("attn.conv3.w", {1, in_channels, 3, 3}, 0.05));
    p.conv3_b = Param("attn.conv3.b", Tensor(Shape{1}, 0.0f));
    p.conv5_w = Param("attn.conv5.w", uniform_init("attn.conv5.w", {1, in_channels, 5, 5}, 0.05));
    p.conv5_b = Param("attn.conv5.b", Tensor(Shape{1}, 0.0f));
    p.conv1_w = Param("attn.conv1.w", uniform_init("attn.conv1.w", {1, 2, 1, 1}, 0.05));
    p.conv1_b = Param("attn.conv1.b", Tensor(Shape{1}, 0.0f));
    return p;
}

std::vector<Param*> AttentionNetParams::params() {
    return {&conv3_w, &conv3_b, &conv5_w, &conv5_b, &conv1_w, &conv1_b};
}

Tape::Id build_augmented_input(Tape& tape, Tape::Id pano_feat, Tape::Id overhead_vec,
                               const geo::GeoLocation& camera, const geo::GeoLocation& target,
                               const geo::RayField& rays, float dist_scale,
                               const AttentionChannels& channels) {
    const Shape& fs = tape.shape(pano_feat);
    require(fs.size() == 3, "pano feature must be [C,H,W], got ", shape_str(fs));
    int C = fs[0], H = fs[1], W = fs[2];
    require(rays.h == H && rays.w == W, "ray field ", rays.h, "x", rays.w,
            " does not match feature map ", H, "x", W);

    geo::GeoMaps maps = geo::distance_orientation_maps(rays, camera, target);
    std::vector<Tape::Id> parts;

    if (channels.dist) {
        std::vector<float> dist(static_cast<size_t>(H) * W,
                                static_cast<float>(maps.dist[0]) * dist_scale);
        parts.push_back(tape.input({1, 1, H, W}, std::move(dist)));
    }
    if (channels.orient) {
        // geo hands back interleaved xyz; the tensor wants channel planes
        std::vector<float> orient(static_cast<size_t>(3) * H * W);
        for (int i = 0; i < H * W; ++i)
            for (int a = 0; a < 3; ++a)
                orient[static_cast<size_t>(a) * H * W + static_cast<size_t>(i)] =
                    static_cast<float>(maps.orient[static_cast<size_t>(i) * 3 + static_cast<size_t>(a)]);
        parts.push_back(tape.input({1, 3, H, W}, std::move(orient)));
    }
    if (channels.pano) {
        Tape::Id f4 = tape.reshape(pano_feat, {1, C, H, W});
        parts.push_back(tape.channel_pool(f4, kernels::PoolMode::max));
        parts.push_back(tape.channel_pool(f4, kernels::PoolMode::avg));
    }
    if (channels.overhead) {
        const Shape& os = tape.shape(overhead_vec);
        require(os.size() == 1, "overhead feature at target must be a vector, got ", shape_str(os));
        int N = os[0];
        Tape::Id tiled = tape.tile_hw(overhead_vec, H, W);       // [N,H,W]
        Tape::Id t4 = tape.reshape(tiled, {1, N, H, W});
        parts.push_back(tape.channel_pool(t4, kernels::PoolMode::max));
        parts.push_back(tape.channel_pool(t4, kernels::PoolMode::avg));
    }
    require(!parts.empty(), "attention input has no channels enabled");
    Tape::Id cat = tape.concat_ch(parts);  // [1,Cin,H,W]
    return tape.reshape(cat, {channels.count(), H, W});
}

AttentionNodes infer_attention(Tape& tape, Tape::Id aug, AttentionNetParams& params) {
    const Shape& s = tape.shape(aug);
    require(s.size() == 3, "augmented input must be [Cin,H,W], got ", shape_str(s));
    require(s[0] == params.in_channels, "augmented input has ", s[0],
            " channels, attention net expects ", params.in_channels);
    int H = s[1], W = s[2];
    Tape::Id x = tape.reshape(aug, {1, s[0], H, W});
    Tape::Id w3 = tape.param(params.conv3_w);
    Tape::Id b3 = tape.param(params.conv3_b);
    Tape::Id w5 = tape.param(params.conv5_w);
    Tape::Id b5 = tape.param(params.conv5_b);
    Tape::Id w1 = tape.param(params.conv1_w);
    Tape::Id b1 = tape.param(params.conv1_b);
    Tape::Id a3 = tape.conv2d(x, w3, b3, 1, Padding::same);
    Tape::Id a5 = tape.conv2d(x, w5, b5, 1, Padding::same);
    Tape::Id cat = tape.concat_ch({a3, a5});
    Tape::Id logits = tape.conv2d(cat, w1, b1, 1, Padding::same);
    Tape::Id p = tape.sigmoid(logits);  // [1,1,H,W]
    AttentionNodes out;
    out.map = tape.reshape(p, {H, W});
    Tape::Id tot = tape.sum_hw(p);  // [1,1]
    out.total = tape.reshape(tot, {1});
    return out;
}

ReducedNodes reduce(Tape& tape, Tape::Id pano_feat, const AttentionNodes& attn) {
    ReducedNodes out;
    out.vector = tape.frobenius_reduce(pano_feat, attn.map);
    out.total = attn.total;
    return out;
}

AttentionMap extract_attention(const Tape& tape, const AttentionNodes& nodes) {
    AttentionMap m;
    m.values = tape.tensor(nodes.map);
    m.total = tape.val(nodes.total)[0];
    return m;
}

GeometryMaps make_geometry_maps(const std::vector<geo::GeoLocation>& cameras,
                                const geo::GeoGrid& grid, const geo::RayField& rays) {
    GeometryMaps gm;
    gm.k = static_cast<int>(cameras.size());
    gm.g = grid.grid;
    gm.h = rays.h;
    gm.w = rays.w;
    int T = gm.g * gm.g;
    int64_t HW = static_cast<int64_t>(gm.h) * gm.w;
    gm.dist.resize(static_cast<size_t>(gm.k) * static_cast<size_t>(T));
    gm.orient.resize(static_cast<size_t>(gm.k) * static_cast<size_t>(T) * 3 * static_cast<size_t>(HW));
    for (int k = 0; k < gm.k; ++k)
        for (int t = 0; t < T; ++t) {
            const geo::GeoLocation& target = grid.at(t / gm.g, t % gm.g);
            geo::GeoMaps maps = geo::distance_orientation_maps(rays, cameras[static_cast<size_t>(k)], target);
            gm.dist[static_cast<size_t>(k) * static_cast<size_t>(T) + static_cast<size_t>(t)] =
                static_cast<float>(maps.dist[0]);
            float* base = gm.orient.data() +
                          (static_cast<int64_t>(k) * T + t) * 3 * HW;
            for (int64_t i = 0; i < HW; ++i)
                for (int a = 0; a < 3; ++a)
                    base[a * HW + i] = static_cast<float>(maps.orient[static_cast<size_t>(i) * 3 + static_cast<size_t>(a)]);
        }
    return gm;
}

}  // namespace geofuse::attn

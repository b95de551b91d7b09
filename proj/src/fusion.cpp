#include "geofuse/fusion.hpp"

namespace geofuse::fusion {

FuseTargetNodes fuse_target(Tape& tape, const PanoSet& panos, Tape::Id overhead_vec,
                            const geo::GeoLocation& target, attn::AttentionNetParams& params,
                            const FusionContext& ctx) {
    int K = static_cast<int>(panos.panos.size());
    require(K >= 1, "fuse_target needs at least one panorama slot");
    int n_valid = 0;
    for (const auto& p : panos.panos) n_valid += p.valid ? 1 : 0;
    require(n_valid >= 1, "fuse_target: zero valid panoramas");

    std::vector<Tape::Id> reduced;   // [C] per pano (masked slots get zeros)
    std::vector<Tape::Id> feature_nodes(static_cast<size_t>(K), -1);
    std::vector<float> total_vals(static_cast<size_t>(K), 0.0f);
    std::vector<Tape::Id> total_nodes(static_cast<size_t>(K), -1);
    std::vector<uint8_t> valid(static_cast<size_t>(K), 0);
    int C = -1;

    for (int k = 0; k < K; ++k) {
        const PanoEntry& p = panos.panos[static_cast<size_t>(k)];
        if (C < 0 && p.valid) C = p.feature.dim(0);
        if (!p.valid) continue;
        require(p.feature.dim(0) == C, "panorama ", k, " has ", p.feature.dim(0),
                " channels, expected ", C);
        valid[static_cast<size_t>(k)] = 1;
    }
    require(C > 0, "fuse_target: no valid panorama features");

    for (int k = 0; k < K; ++k) {
        const PanoEntry& p = panos.panos[static_cast<size_t>(k)];
        if (!p.valid) {
            reduced.push_back(tape.input(Shape{C}, std::vector<float>(static_cast<size_t>(C), 0.0f)));
            continue;
        }
        Tape::Id feat = tape.input(p.feature, true);
        feature_nodes[static_cast<size_t>(k)] = feat;
        Tape::Id aug = attn::build_augmented_input(tape, feat, overhead_vec, p.camera, target,
                                                   ctx.rays, ctx.dist_scale, ctx.channels);
        attn::AttentionNodes an = attn::infer_attention(tape, aug, params);
        attn::ReducedNodes rn = attn::reduce(tape, feat, an);
        reduced.push_back(rn.vector);
        total_nodes[static_cast<size_t>(k)] = rn.total;
        total_vals[static_cast<size_t>(k)] = tape.val(rn.total)[0];
    }

    // softmax across panoramas over the recorded totals; masked slots are
    // excluded via the sentinel mask and come out exactly zero
    std::vector<Tape::Id> total_list;
    for (int k = 0; k < K; ++k) {
        if (total_nodes[static_cast<size_t>(k)] >= 0) {
            total_list.push_back(total_nodes[static_cast<size_t>(k)]);
        } else {
            total_list.push_back(tape.input(Shape{1}, std::vector<float>{0.0f}));
        }
    }
    // [K,1] column of totals
    std::vector<Tape::Id> as_rows;
    for (Tape::Id id : total_list) as_rows.push_back(id);
    Tape::Id totals = tape.stack_rows(as_rows);           // [K,1]
    Tape::Id weights = tape.softmax(totals, 0, &valid);   // [K,1]
    Tape::Id kmat = tape.stack_rows(reduced);             // [K,C]
    Tape::Id fused3 = tape.weighted_fuse(kmat, weights, 1);  // [C,1,1]
    FuseTargetNodes out;
    out.fused = tape.reshape(fused3, {C});
    const auto& wv = tape.val(weights);
    out.weights.assign(wv.begin(), wv.end());
    out.totals = total_vals;
    out.feature_nodes = std::move(feature_nodes);
    return out;
}

DenseGridNodes build_dense_grid(Tape& tape, const PanoSet& panos, Tape::Id overhead_feat,
                                const geo::GeoGrid& grid, attn::AttentionNetParams& params,
                                const FusionContext& ctx, Param& bn_gamma, Param& bn_beta,
                                BnRunning& bn_running, bool train) {
    const Shape& os = tape.shape(overhead_feat);
    require(os.size() == 3 && os[1] == grid.grid && os[2] == grid.grid,
            "overhead feature map ", shape_str(os), " is not aligned with the ", grid.grid, "x",
            grid.grid, " grid");
    int G = grid.grid;
    int K = static_cast<int>(panos.panos.size());
    DenseGridNodes out;
    out.weights.assign(static_cast<size_t>(K) * G * G, 0.0f);

    std::vector<Tape::Id> cell_vectors;
    cell_vectors.reserve(static_cast<size_t>(G) * G);
    for (int r = 0; r < G; ++r)
        for (int c = 0; c < G; ++c) {
            Tape::Id vec = tape.slice_pixel(overhead_feat, r, c);
            FuseTargetNodes ft = fuse_target(tape, panos, vec, grid.at(r, c), params, ctx);
            cell_vectors.push_back(ft.fused);
            for (int k = 0; k < K; ++k)
                out.weights[(static_cast<size_t>(k) * G + static_cast<size_t>(r)) * G + static_cast<size_t>(c)] =
                    ft.weights[static_cast<size_t>(k)];
        }
    // assemble [G*G, C] then lay out channel-major as [C,G,G]
    Tape::Id cells = tape.stack_rows(cell_vectors);  // [G*G, C]
    int C = tape.shape(cells)[1];
    // identity weights: a single "pano" with weight 1 per cell reuses the
    // fused vectors as-is while producing the [C,G,G] layout
    Tape::Id ones = tape.input(Shape{1, G * G}, std::vector<float>(static_cast<size_t>(G) * G, 1.0f));
    out.grid = tape.weighted_fuse(cells, ones, G);  // [C,G,G]
    Tape::Id grid4 = tape.reshape(out.grid, {1, C, G, G});
    Tape::Id gamma = tape.param(bn_gamma);
    Tape::Id beta = tape.param(bn_beta);
    out.normalized = tape.batchnorm2d(grid4, gamma, beta, bn_running, train);
    return out;
}

Tensor weight_map(const DenseGridNodes& grid_nodes, int pano_index, int grid_dim) {
    Tensor t(Shape{grid_dim, grid_dim});
    for (int i = 0; i < grid_dim * grid_dim; ++i)
        t.v[static_cast<size_t>(i)] =
            grid_nodes.weights[static_cast<size_t>(pano_index) * grid_dim * grid_dim + static_cast<size_t>(i)];
    return t;
}

}  // namespace geofuse::fusion

#pragma once

#include <vector>

#include "geofuse/attention.hpp"
#include "geofuse/geo.hpp"
#include "geofuse/tape.hpp"

namespace geofuse::fusion {

struct PanoEntry {
    Tensor feature;  // [C,H,W]
    geo::GeoLocation camera;
    bool valid = true;
};

// Up to K panoramas per scene; short scenes are padded with masked slots so
// batch shapes stay static.
struct PanoSet {
    std::vector<PanoEntry> panos;
};

struct FusionContext {
    geo::RayField rays;  // feature-resolution ray field shared by all panoramas
    attn::AttentionChannels channels;
    float dist_scale = 1.0f;
};

struct FuseTargetNodes {
    Tape::Id fused;               // [C]
    std::vector<float> weights;   // per panorama; exactly 0 for masked slots
    std::vector<float> totals;    // total attention per panorama (0 for masked)
    std::vector<Tape::Id> feature_nodes;  // leaf per panorama, -1 for masked
};

// Reduce every valid panorama with geospatial attention, then combine with a
// softmax over the recorded total attention values. Masked panoramas get a
// -inf sentinel inside the softmax and contribute exactly zero weight.
FuseTargetNodes fuse_target(Tape& tape, const PanoSet& panos, Tape::Id overhead_vec,
                            const geo::GeoLocation& target, attn::AttentionNetParams& params,
                            const FusionContext& ctx);

struct DenseGridNodes {
    Tape::Id grid = -1;        // [C,G,G] pre-normalization
    Tape::Id normalized = -1;  // [1,C,G,G] after the grid batchnorm
    std::vector<float> weights;  // [K,G,G] per-cell softmax weights
};

// fuse_target applied independently per grid cell, then the grid batch
// normalization. overhead_feat is a [N,G,G] tape node aligned with the grid.
DenseGridNodes build_dense_grid(Tape& tape, const PanoSet& panos, Tape::Id overhead_feat,
                                const geo::GeoGrid& grid, attn::AttentionNetParams& params,
                                const FusionContext& ctx, Param& bn_gamma, Param& bn_beta,
                                BnRunning& bn_running, bool train);

// Per-panorama per-cell weight map for export (Fig. 6-style visualization).
Tensor weight_map(const DenseGridNodes& grid_nodes, int pano_index, int grid_dim);

}  // namespace geofuse::fusion

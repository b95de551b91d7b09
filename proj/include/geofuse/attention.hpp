#pragma once

#include <vector>

#include "geofuse/geo.hpp"
#include "geofuse/rng.hpp"
#include "geofuse/tape.hpp"

namespace geofuse::attn {

// Which augmented-input channels feed the attention net. The fixed channel
// order of the full 8-channel input is:
//   [dist(1), orient(3), pano_max(1), pano_avg(1), ovh_max(1), ovh_avg(1)]
// Ablations drop whole groups but never reorder the survivors.
struct AttentionChannels {
    bool pano = true;
    bool overhead = true;
    bool dist = true;
    bool orient = true;

    int count() const { return 2 * pano + 2 * overhead + 1 * dist + 3 * orient; }
    bool operator==(const AttentionChannels&) const = default;
};

// The three shared convolutions of the attention net. One parameter set
// serves every (panorama, target) pair.
struct AttentionNetParams {
    Param conv3_w, conv3_b;  // [1,Cin,3,3]
    Param conv5_w, conv5_b;  // [1,Cin,5,5]
    Param conv1_w, conv1_b;  // [1,2,1,1]
    int in_channels = 8;

    static AttentionNetParams init(int in_channels, uint64_t seed);
    std::vector<Param*> params();
};

// Extracted attention map for export and inspection.
struct AttentionMap {
    Tensor values;  // [H,W], every entry in (0,1)
    float total = 0.0f;
};

struct AttentionNodes {
    Tape::Id map;    // [H,W]
    Tape::Id total;  // [1]
};

// Augmented input for a single (panorama, target) pair: geometry maps from
// the geo module plus channel-pooled panorama and tiled overhead features.
Tape::Id build_augmented_input(Tape& tape, Tape::Id pano_feat, Tape::Id overhead_vec,
                               const geo::GeoLocation& camera, const geo::GeoLocation& target,
                               const geo::RayField& rays, float dist_scale = 1.0f,
                               const AttentionChannels& channels = {});

// P = sigmoid(conv1(concat(conv3(aug), conv5(aug)))), no intermediate
// nonlinearity.
AttentionNodes infer_attention(Tape& tape, Tape::Id aug, AttentionNetParams& params);

struct ReducedNodes {
    Tape::Id vector;  // [C]
    Tape::Id total;   // [1]
};

// Eq-style reduction: k_c = <f_c, P>_F, carrying the total attention along.
ReducedNodes reduce(Tape& tape, Tape::Id pano_feat, const AttentionNodes& attn);

AttentionMap extract_attention(const Tape& tape, const AttentionNodes& nodes);

// Precomputed per-scene geometry constants for the batched attention path:
// distances camera->cell and target-relative rotated rays for every
// (panorama, cell) pair. These never change during training, so callers
// cache them per scene.
struct GeometryMaps {
    int k = 0, g = 0, h = 0, w = 0;
    std::vector<float> dist;    // [K, G*G] meters
    std::vector<float> orient;  // [K*G*G, 3, H, W] channel-planar
};

GeometryMaps make_geometry_maps(const std::vector<geo::GeoLocation>& cameras,
                                const geo::GeoGrid& grid, const geo::RayField& rays);

}  // namespace geofuse::attn

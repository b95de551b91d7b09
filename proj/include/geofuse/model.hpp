#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>

#include "geofuse/attention.hpp"
#include "geofuse/config.hpp"
#include "geofuse/dataset.hpp"
#include "geofuse/fusion.hpp"
#include "geofuse/metrics.hpp"
#include "geofuse/optim.hpp"
#include "geofuse/tape.hpp"

namespace geofuse {

// conv + batchnorm pair used by the encoders, fusion blocks and decoder
struct ConvBn {
    Param w, b, bn_g, bn_b;
    BnRunning run;
    int stride = 1;
};

struct EvalResult {
    double miou = 0, acc = 0, rmse = 0, rmse_log = 0;
    int64_t counted = 0, ignored = 0;
    bool regression = false;
};

// The near/remote network: overhead and panorama encoders, geospatial
// attention fusion into the dense grid, fusion blocks, U-Net style decoder
// with five upsampling steps, and a task head. Variants:
//   full       complete pipeline
//   remote     overhead only; panoramas are never touched
//   proximate  dense grid only; no overhead features or skip connections
class Model {
  public:
    explicit Model(ModelConfig cfg);

    struct ForwardNodes {
        Tape::Id logits = -1;     // [1,head,S,S]
        Tape::Id loss = -1;       // scalar (when requested)
        Tape::Id pano_feats = -1;  // [K,C,Hf,Wf]
        Tape::Id attention = -1;   // [K*G*G,1,Hf,Wf]
        Tape::Id totals = -1;      // [K,G*G]
        Tape::Id weights = -1;     // [K,G*G]
        Tape::Id grid_pre = -1;    // [C,G,G] before the grid batchnorm
        Tape::Id overhead_hi = -1;  // [1,c2,S/4,S/4]
        Tape::Id overhead_lo = -1;  // [1,c3,S/8,S/8]
        std::vector<uint8_t> valid;  // panorama slots
        int decoder_inputs = 0;
    };

    ForwardNodes forward(Tape& tape, const LoadedScene& scene, bool train, bool with_loss = true);

    std::vector<Param*> params();
    const ModelConfig& config() const { return cfg_; }
    const attn::AttentionChannels& attention_channels() const { return channels_; }
    attn::AttentionNetParams& attention_params() { return attn_; }

    // Applies checkpoint tensors; throws naming any missing/mismatched field.
    void load_weights(const std::map<std::string, Tensor>& tensors);

    const attn::GeometryMaps& geometry_for(const LoadedScene& scene);

  private:
    Tape::Id conv_bn_relu(Tape& tape, Tape::Id x, ConvBn& layer, bool train);

    ModelConfig cfg_;
    attn::AttentionChannels channels_;

    std::vector<ConvBn> pano_enc_;
    Param pano_proj_w_, pano_proj_b_, pano_ln_g_, pano_ln_b_;
    std::vector<ConvBn> ovh_enc_;
    attn::AttentionNetParams attn_;
    Param grid_bn_g_, grid_bn_b_;
    BnRunning grid_run_;
    std::vector<ConvBn> fus1_, fus2_;
    std::vector<ConvBn> dec_;  // five double-conv blocks, two ConvBn each
    Param head_w_, head_b_;

    std::map<int, attn::GeometryMaps> geom_cache_;
    std::vector<Param*> param_list_;
};

// One pass over the training split in seeded shuffle order, one Adam step
// per scene. Returns the mean training loss. NaN losses abort, naming the
// scene.
double train_epoch(Model& model, Adam& opt, const Dataset& train, uint64_t seed, int epoch);

EvalResult evaluate(Model& model, const Dataset& ds);

struct MetricsRow {
    int epoch = 0;
    double loss = 0, miou = 0, acc = 0, rmse = 0, rmse_log = 0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> parse_metrics_csv(const std::string& text);

// Full training run: per-epoch lr decay and validation metrics; optional
// resume state. Writes nothing; the caller owns all files.
std::vector<MetricsRow> run_training(Model& model, Adam& opt, const Dataset& train,
                                     const Dataset& val, int start_epoch = 0);

}  // namespace geofuse

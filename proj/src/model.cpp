#include "geofuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace geofuse {

namespace {

Tensor he_uniform(Shape s, uint64_t seed, const std::string& name) {
    Rng rng = Rng::substream(seed, name);
    Tensor t(s);
    int64_t fan_in = 1;
    for (size_t i = 1; i < s.size(); ++i) fan_in *= s[i];
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.v) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

ConvBn make_conv_bn(const std::string& name, int cin, int cout, int k, int stride,
                    uint64_t init_seed) {
    ConvBn l;
    l.w = Param(name + ".w", he_uniform({cout, cin, k, k}, init_seed, name + ".w"));
    l.b = Param(name + ".b", Tensor(Shape{cout}, 0.0f));
    l.bn_g = Param(name + ".bn.g", Tensor(Shape{cout}, 1.0f));
    l.bn_b = Param(name + ".bn.b", Tensor(Shape{cout}, 0.0f));
    l.run = BnRunning(cout);
    l.stride = stride;
    return l;
}

}  // namespace

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    validate_config(cfg_);
    channels_ = cfg_.attention;
    if (cfg_.variant == "proximate") channels_.overhead = false;

    uint64_t init = Rng::derive(cfg_.seed, "init");
    int C = cfg_.pano_channels;
    int Hf = cfg_.pano_feat_h(), Wf = cfg_.pano_feat_w();

    if (cfg_.variant != "remote") {
        int cin = 3;
        for (size_t i = 0; i < cfg_.pano_widths.size(); ++i) {
            pano_enc_.push_back(make_conv_bn(msg("pano_enc.", i), cin,
                                             cfg_.pano_widths[i], 3, 2, init));
            cin = cfg_.pano_widths[i];
        }
        pano_proj_w_ = Param("pano.proj.w", he_uniform({C, cin, 1, 1}, init, "pano.proj.w"));
        pano_proj_b_ = Param("pano.proj.b", Tensor(Shape{C}, 0.0f));
        // layer normalization spans all non-batch axes of the pano feature map
        pano_ln_g_ = Param("pano.ln.g", Tensor(Shape{C, Hf, Wf}, 1.0f));
        pano_ln_b_ = Param("pano.ln.b", Tensor(Shape{C, Hf, Wf}, 0.0f));
        attn_ = attn::AttentionNetParams::init(channels_.count(), init);
        grid_bn_g_ = Param("grid_bn.g", Tensor(Shape{C}, 1.0f));
        grid_bn_b_ = Param("grid_bn.b", Tensor(Shape{C}, 0.0f));
        grid_run_ = BnRunning(C);
    }
    if (cfg_.variant != "proximate") {
        int cin = 3;
        for (size_t i = 0; i < cfg_.overhead_widths.size(); ++i) {
            ovh_enc_.push_back(make_conv_bn(msg("ovh_enc.", i), cin,
                                            cfg_.overhead_widths[i], 3, 2, init));
            cin = cfg_.overhead_widths[i];
        }
    }

    int c2 = cfg_.overhead_widths[1], c3 = cfg_.overhead_widths[2];
    int f1 = cfg_.fusion_widths[0], f2 = cfg_.fusion_widths[1];
    int fus_in = cfg_.variant == "full"      ? c3 + C
                 : cfg_.variant == "remote"  ? c3
                                             : C;
    int widths1[3] = {fus_in, f1, f1};
    for (int i = 0; i < 3; ++i)
        fus1_.push_back(make_conv_bn(msg("fus1.", i), widths1[i], f1, 3, 1, init));
    int widths2[3] = {f1, f2, f2};
    for (int i = 0; i < 3; ++i)
        fus2_.push_back(make_conv_bn(msg("fus2.", i), widths2[i], f2, 3, 1, init));

    bool skips = cfg_.variant != "proximate";
    const auto& d = cfg_.decoder_widths;
    int dec_in[5] = {f2, d[0] + f1, d[1] + (skips ? c3 : 0), d[2] + (skips ? c2 : 0), d[3]};
    for (int i = 0; i < 5; ++i) {
        dec_.push_back(make_conv_bn(msg("dec.", i, ".a"), dec_in[i], d[static_cast<size_t>(i)], 3, 1, init));
        dec_.push_back(make_conv_bn(msg("dec.", i, ".b"), d[static_cast<size_t>(i)], d[static_cast<size_t>(i)], 3, 1, init));
    }
    Rng head_rng = Rng::substream(init, "head.w");
    Tensor hw(Shape{cfg_.head_channels(), d[4], 1, 1});
    for (auto& v : hw.v) v = static_cast<float>(head_rng.uniform(-0.01, 0.01));
    head_w_ = Param("head.w", std::move(hw));
    head_b_ = Param("head.b", Tensor(Shape{cfg_.head_channels()}, 0.0f));

    // fixed registration order defines the checkpoint layout
    auto reg = [this](ConvBn& l) {
        param_list_.push_back(&l.w);
        param_list_.push_back(&l.b);
        param_list_.push_back(&l.bn_g);
        param_list_.push_back(&l.bn_b);
    };
    for (auto& l : pano_enc_) reg(l);
    if (cfg_.variant != "remote") {
        param_list_.push_back(&pano_proj_w_);
        param_list_.push_back(&pano_proj_b_);
        param_list_.push_back(&pano_ln_g_);
        param_list_.push_back(&pano_ln_b_);
        for (Param* p : attn_.params()) param_list_.push_back(p);
        param_list_.push_back(&grid_bn_g_);
        param_list_.push_back(&grid_bn_b_);
    }
    for (auto& l : ovh_enc_) reg(l);
    for (auto& l : fus1_) reg(l);
    for (auto& l : fus2_) reg(l);
    for (auto& l : dec_) reg(l);
    param_list_.push_back(&head_w_);
    param_list_.push_back(&head_b_);
}

std::vector<Param*> Model::params() { return param_list_; }

void Model::load_weights(const std::map<std::string, Tensor>& tensors) {
    for (Param* p : param_list_) {
        auto it = tensors.find(p->name);
        if (it == tensors.end())
            throw ContractViolation(msg("checkpoint is missing parameter '", p->name, "'"));
        if (it->second.shape != p->value.shape)
            throw ContractViolation(msg("checkpoint parameter '", p->name, "' has shape ",
                                        shape_str(it->second.shape), ", model expects ",
                                        shape_str(p->value.shape)));
        p->value = it->second;
    }
    if (tensors.size() != param_list_.size()) {
        for (const auto& [name, t] : tensors) {
            bool found = false;
            for (Param* p : param_list_) found = found || p->name == name;
            if (!found)
                throw ContractViolation(msg("checkpoint parameter '", name,
                                            "' does not exist in this model configuration"));
        }
    }
}

const attn::GeometryMaps& Model::geometry_for(const LoadedScene& scene) {
    auto it = geom_cache_.find(scene.scene_id);
    if (it != geom_cache_.end()) return it->second;
    geo::GeoGrid grid =
        geo::overhead_geogrid(scene.center, cfg_.overhead_size, scene.gsd, cfg_.grid);
    geo::RayField rays = geo::pano_ray_field(cfg_.pano_feat_h(), cfg_.pano_feat_w(), cfg_.crop_deg);
    std::vector<geo::GeoLocation> cams = scene.cameras;
    cams.resize(static_cast<size_t>(cfg_.max_panos), scene.center);  // padded slots are masked
    return geom_cache_.emplace(scene.scene_id, attn::make_geometry_maps(cams, grid, rays))
        .first->second;
}

Tape::Id Model::conv_bn_relu(Tape& tape, Tape::Id x, ConvBn& layer, bool train) {
    Tape::Id w = tape.param(layer.w);
    Tape::Id b = tape.param(layer.b);
    Tape::Id y = tape.conv2d(x, w, b, layer.stride, Padding::same);
    Tape::Id g = tape.param(layer.bn_g);
    Tape::Id be = tape.param(layer.bn_b);
    return tape.relu(tape.batchnorm2d(y, g, be, layer.run, train));
}

Model::ForwardNodes Model::forward(Tape& tape, const LoadedScene& scene, bool train,
                                   bool with_loss) {
    int S = cfg_.overhead_size, G = cfg_.grid, K = cfg_.max_panos;
    int C = cfg_.pano_channels, Hf = cfg_.pano_feat_h(), Wf = cfg_.pano_feat_w();
    int T = G * G;
    ForwardNodes out;

    Tape::Id hi = -1, lo = -1;
    if (cfg_.variant != "proximate") {
        require(scene.overhead.shape == Shape{3, S, S}, "overhead image has shape ",
                shape_str(scene.overhead.shape), ", config expects [3,", S, ",", S, "]");
        Tape::Id x = tape.reshape(tape.input(scene.overhead), {1, 3, S, S});
        x = conv_bn_relu(tape, x, ovh_enc_[0], train);
        x = conv_bn_relu(tape, x, ovh_enc_[1], train);
        hi = x;  // stride 4
        lo = conv_bn_relu(tape, x, ovh_enc_[2], train);  // stride 8, aligned with the grid
        out.overhead_hi = hi;
        out.overhead_lo = lo;
    }

    Tape::Id gridn = -1;
    if (cfg_.variant != "remote") {
        // panorama encoder over all K slots at once
        require(!scene.panos.empty(), "scene ", scene.scene_id,
                " has no panoramas loaded but variant '", cfg_.variant, "' needs them");
        Tensor batch(Shape{K, 3, cfg_.pano_height, cfg_.pano_width}, 0.0f);
        out.valid.assign(static_cast<size_t>(K), 0);
        for (int k = 0; k < K && k < static_cast<int>(scene.panos.size()); ++k) {
            const Tensor& p = scene.panos[static_cast<size_t>(k)];
            require(p.shape == Shape{3, cfg_.pano_height, cfg_.pano_width}, "panorama ", k,
                    " has shape ", shape_str(p.shape), ", config expects [3,", cfg_.pano_height,
                    ",", cfg_.pano_width, "]");
            std::copy(p.v.begin(), p.v.end(),
                      batch.v.begin() +
                          static_cast<int64_t>(k) * 3 * cfg_.pano_height * cfg_.pano_width);
            out.valid[static_cast<size_t>(k)] = 1;
        }
        int n_valid = 0;
        for (uint8_t v : out.valid) n_valid += v;
        require(n_valid >= 1, "scene ", scene.scene_id, " has zero valid panoramas");

        Tape::Id px = tape.input(batch);
        for (auto& l : pano_enc_) px = conv_bn_relu(tape, px, l, train);
        Tape::Id pw = tape.param(pano_proj_w_);
        Tape::Id pb = tape.param(pano_proj_b_);
        px = tape.conv2d(px, pw, pb, 1, Padding::same);
        Tape::Id lng = tape.param(pano_ln_g_);
        Tape::Id lnb = tape.param(pano_ln_b_);
        Tape::Id F = tape.relu(tape.layer_norm(px, lng, lnb));
        out.pano_feats = F;

        // augmented attention input, fixed channel order
        const attn::GeometryMaps& gm = geometry_for(scene);
        std::vector<Tape::Id> parts;
        if (channels_.dist) {
            std::vector<float> dist(static_cast<size_t>(K) * T * Hf * Wf);
            for (int k = 0; k < K; ++k)
                for (int t = 0; t < T; ++t) {
                    float d = gm.dist[static_cast<size_t>(k) * T + static_cast<size_t>(t)] *
                              static_cast<float>(cfg_.dist_scale);
                    std::fill_n(dist.begin() + (static_cast<int64_t>(k) * T + t) * Hf * Wf,
                                Hf * Wf, d);
                }
            parts.push_back(tape.input({K * T, 1, Hf, Wf}, std::move(dist)));
        }
        if (channels_.orient)
            parts.push_back(tape.input({K * T, 3, Hf, Wf}, gm.orient));
        if (channels_.pano) {
            Tape::Id pooled = tape.concat_ch({tape.channel_pool(F, kernels::PoolMode::max),
                                              tape.channel_pool(F, kernels::PoolMode::avg)});
            parts.push_back(tape.repeat_batch(pooled, T));
        }
        if (channels_.overhead) {
            require(lo >= 0, "overhead channels requested without overhead features");
            Tape::Id pooled = tape.concat_ch({tape.channel_pool(lo, kernels::PoolMode::max),
                                              tape.channel_pool(lo, kernels::PoolMode::avg)});
            Tape::Id cellwise = tape.reshape(pooled, {2, G, G});
            parts.push_back(tape.tile_cells(cellwise, K, Hf, Wf));
        }
        Tape::Id aug = tape.concat_ch(parts);
        require(tape.shape(aug)[1] == channels_.count(), "attention input has ",
                tape.shape(aug)[1], " channels, the ablation set expects ", channels_.count());

        Tape::Id w3 = tape.param(attn_.conv3_w);
        Tape::Id b3 = tape.param(attn_.conv3_b);
        Tape::Id w5 = tape.param(attn_.conv5_w);
        Tape::Id b5 = tape.param(attn_.conv5_b);
        Tape::Id w1 = tape.param(attn_.conv1_w);
        Tape::Id b1 = tape.param(attn_.conv1_b);
        Tape::Id a3 = tape.conv2d(aug, w3, b3, 1, Padding::same);
        Tape::Id a5 = tape.conv2d(aug, w5, b5, 1, Padding::same);
        Tape::Id P = tape.sigmoid(tape.conv2d(tape.concat_ch({a3, a5}), w1, b1, 1, Padding::same));
        out.attention = P;

        out.totals = tape.reshape(tape.sum_hw(P), {K, T});
        out.weights = tape.softmax(out.totals, 0, &out.valid);
        Tape::Id kmat = tape.frob_reduce_batch(F, P);
        out.grid_pre = tape.weighted_fuse(kmat, out.weights, G);
        Tape::Id g4 = tape.reshape(out.grid_pre, {1, C, G, G});
        Tape::Id gg = tape.param(grid_bn_g_);
        Tape::Id gb = tape.param(grid_bn_b_);
        gridn = tape.batchnorm2d(g4, gg, gb, grid_run_, train);
    }

    // fusion blocks on the grid-aligned features
    Tape::Id fus_in;
    out.decoder_inputs = 0;
    if (cfg_.variant == "full")
        fus_in = tape.concat_ch({lo, gridn});
    else if (cfg_.variant == "remote")
        fus_in = lo;
    else
        fus_in = gridn;
    int expect_fus_in = cfg_.variant == "full"
                            ? cfg_.overhead_widths[2] + C
                            : (cfg_.variant == "remote" ? cfg_.overhead_widths[2] : C);
    require(tape.shape(fus_in)[1] == expect_fus_in, "fusion input has ", tape.shape(fus_in)[1],
            " channels, expected ", expect_fus_in);

    Tape::Id x = fus_in;
    for (auto& l : fus1_) x = conv_bn_relu(tape, x, l, train);
    Tape::Id skip_f1 = tape.maxpool2(x);  // [f1, S/16]
    x = skip_f1;
    for (auto& l : fus2_) x = conv_bn_relu(tape, x, l, train);
    x = tape.maxpool2(x);  // [f2, S/32]
    ++out.decoder_inputs;  // deepest fusion map

    bool skips = cfg_.variant != "proximate";
    auto dc = [&](int i, Tape::Id in) {
        Tape::Id y = conv_bn_relu(tape, in, dec_[static_cast<size_t>(2 * i)], train);
        return conv_bn_relu(tape, y, dec_[static_cast<size_t>(2 * i + 1)], train);
    };
    x = dc(0, tape.upsample_nearest2(x));      // S/16
    x = tape.concat_ch({x, skip_f1});
    ++out.decoder_inputs;
    x = dc(1, tape.upsample_nearest2(x));      // S/8
    if (skips) {
        x = tape.concat_ch({x, lo});
        ++out.decoder_inputs;
    }
    x = dc(2, tape.upsample_nearest2(x));      // S/4
    if (skips) {
        x = tape.concat_ch({x, hi});
        ++out.decoder_inputs;
    }
    x = dc(3, tape.upsample_nearest2(x));      // S/2
    x = dc(4, tape.upsample_nearest2(x));      // S
    require(!skips || out.decoder_inputs == 4, "decoder must consume exactly four maps, got ",
            out.decoder_inputs);

    Tape::Id hw = tape.param(head_w_);
    Tape::Id hb = tape.param(head_b_);
    out.logits = tape.conv2d(x, hw, hb, 1, Padding::same);
    require(tape.shape(out.logits) == Shape{1, cfg_.head_channels(), S, S},
            "head produced ", shape_str(tape.shape(out.logits)));

    if (with_loss) {
        if (cfg_.regression()) {
            require(!scene.target.empty(), "scene ", scene.scene_id, " has no regression target");
            Tape::Id mean = tape.slice_channel(out.logits, 0);
            Tape::Id logvar = tape.slice_channel(out.logits, 1);
            Tensor target(Shape{1, 1, S, S}, scene.target);
            out.loss = tape.uncertainty_loss(mean, logvar, target, scene.target_mask);
        } else {
            require(!scene.labels.empty(), "scene ", scene.scene_id, " has no labels");
            out.loss = tape.cross_entropy(out.logits, scene.labels, cfg_.ignore_label);
        }
    }
    return out;
}

double train_epoch(Model& model, Adam& opt, const Dataset& train, uint64_t seed, int epoch) {
    require(train.size() > 0, "empty training split");
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::substream(seed, "shuffle", static_cast<uint64_t>(epoch));
    for (size_t i = order.size() - 1; i > 0; --i) {
        size_t j = rng.uniform_index(i + 1);
        std::swap(order[i], order[j]);
    }
    double total = 0.0;
    for (size_t idx : order) {
        const LoadedScene& scene = train.at(idx);
        Tape tape;
        Model::ForwardNodes fn = model.forward(tape, scene, /*train=*/true);
        float loss = tape.val(fn.loss)[0];
        if (!std::isfinite(loss))
            throw NumericalError(msg("NaN loss at scene ", scene.scene_id, " (epoch ", epoch, ")"));
        tape.backward(fn.loss);
        opt.step();
        opt.zero_grad();
        total += static_cast<double>(loss);
    }
    return total / static_cast<double>(train.size());
}

EvalResult evaluate(Model& model, const Dataset& ds) {
    require(ds.size() > 0, "empty evaluation split");
    EvalResult r;
    const ModelConfig& cfg = model.config();
    r.regression = cfg.regression();
    metrics::ConfusionAccumulator acc(cfg.classes);
    std::vector<float> pred_all, target_all;
    std::vector<uint8_t> mask_all;
    for (size_t i = 0; i < ds.size(); ++i) {
        const LoadedScene& scene = ds.at(i);
        Tape tape;
        Model::ForwardNodes fn = model.forward(tape, scene, /*train=*/false, /*with_loss=*/false);
        const auto& logits = tape.val(fn.logits);
        int S = cfg.overhead_size;
        int64_t HW = static_cast<int64_t>(S) * S;
        if (r.regression) {
            pred_all.insert(pred_all.end(), logits.begin(), logits.begin() + HW);
            target_all.insert(target_all.end(), scene.target.begin(), scene.target.end());
            mask_all.insert(mask_all.end(), scene.target_mask.begin(), scene.target_mask.end());
        } else {
            std::vector<int32_t> pred(static_cast<size_t>(HW));
            for (int64_t p = 0; p < HW; ++p) {
                int best = 0;
                float bv = logits[static_cast<size_t>(p)];
                for (int k = 1; k < cfg.classes; ++k) {
                    float v = logits[static_cast<size_t>(k * HW + p)];
                    if (v > bv) {
                        bv = v;
                        best = k;
                    }
                }
                pred[static_cast<size_t>(p)] = best;
            }
            acc.accumulate(pred, scene.labels, cfg.ignore_label);
        }
    }
    if (r.regression) {
        auto m = metrics::rmse_rmselog(pred_all, target_all, mask_all);
        r.rmse = m.rmse;
        r.rmse_log = m.rmse_log;
        for (uint8_t v : mask_all) r.counted += v ? 1 : 0;
        r.ignored = static_cast<int64_t>(mask_all.size()) - r.counted;
    } else {
        auto m = metrics::miou_acc(acc);
        r.miou = m.miou;
        r.acc = m.acc;
        r.counted = acc.total_counted();
        r.ignored = acc.ignored();
    }
    return r;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "epoch,loss,miou,acc,rmse,rmse_log\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch, r.loss, r.miou,
                      r.acc, r.rmse, r.rmse_log);
        os << buf;
    }
    return os.str();
}

std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
    std::vector<MetricsRow> rows;
    std::istringstream ss(text);
    std::string line;
    bool first = true;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            continue;  // header
        }
        MetricsRow r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &r.epoch, &r.loss, &r.miou, &r.acc,
                        &r.rmse, &r.rmse_log) != 6)
            throw IoError(msg("malformed metrics row '", line, "'"));
        rows.push_back(r);
    }
    return rows;
}

std::vector<MetricsRow> run_training(Model& model, Adam& opt, const Dataset& train,
                                     const Dataset& val, int start_epoch) {
    std::vector<MetricsRow> rows;
    const ModelConfig& cfg = model.config();
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        double loss = train_epoch(model, opt, train, cfg.seed, epoch);
        opt.epoch_end();
        EvalResult ev = evaluate(model, val);
        MetricsRow row;
        row.epoch = epoch;
        row.loss = loss;
        row.miou = ev.miou;
        row.acc = ev.acc;
        row.rmse = ev.rmse;
        row.rmse_log = ev.rmse_log;
        rows.push_back(row);
    }
    return rows;
}

}  // namespace geofuse

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "geofuse/checkpoint.hpp"
#include "geofuse/model.hpp"
#include "geofuse/synth.hpp"

using namespace geofuse;
namespace fs = std::filesystem;

namespace {

// one shared tiny dataset on disk for all model tests
struct Fixture {
    fs::path dir;
    synth::SynthParams sp;

    Fixture() {
        dir = fs::temp_directory_path() / "geofuse_model_ds";
        sp.overhead_px = 32;
        sp.gsd = 1.0;
        sp.pano_h = 32;
        sp.pano_w = 128;
        sp.n_panos = 2;
        sp.parcels_per_side = 2;
        sp.n_walls = 2;
        if (!fs::exists(dir / "train.tsv"))
            synth::generate_dataset(dir, 14, 5, sp, "classification", 0.7, 0.15);
    }
};

Fixture& fixture() {
    static Fixture f;
    return f;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.overhead_size = 32;
    cfg.grid = 4;
    cfg.pano_height = 32;
    cfg.pano_width = 128;
    cfg.pano_channels = 12;
    cfg.max_panos = 2;
    cfg.overhead_widths = {6, 8, 10};
    cfg.pano_widths = {4, 6, 8, 10};
    cfg.fusion_widths = {12, 16};
    cfg.decoder_widths = {12, 10, 8, 8, 8};
    cfg.dist_scale = 0.05;
    cfg.lr = 2e-3;
    cfg.seed = 11;
    return cfg;
}

}  // namespace

TEST_CASE("config files parse, serialize, and reject bad input") {
    ModelConfig cfg = tiny_config();
    std::string text = serialize_config(cfg);
    ModelConfig back = parse_config_text(text, "roundtrip");
    CHECK(back.overhead_size == 32);
    CHECK(back.pano_widths == cfg.pano_widths);
    CHECK(back.attention.count() == 8);

    CHECK_THROWS_WITH_AS(parse_config_text("bogus_key = 1\n", "t"),
                         doctest::Contains("t:1: unknown key 'bogus_key'"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("grid = 4\n\nfoo = 2\n", "t"),
                         doctest::Contains("t:3"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("overhead_size = 48\n", "t"), ConfigError);  // not /32
    CHECK_THROWS_AS(parse_config_text("grid = 5\n", "t"), ConfigError);
    // contradictory variant/ablation combinations
    CHECK_THROWS_AS(parse_config_text("variant = remote\nattention = pano\n", "t"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("variant = proximate\nattention = overhead,dist\n", "t"),
                    ConfigError);
    // proximate with a clean set is fine
    ModelConfig prox = parse_config_text("variant = proximate\nattention = pano,dist,orient\n", "t");
    CHECK(prox.variant == "proximate");
}

TEST_CASE("panorama feature dims use ceil division per stride-2 stage") {
    ModelConfig cfg;
    cfg.pano_height = 128;
    cfg.pano_width = 500;  // the ResNet-style rounding chain: 500->250->125->63->32
    CHECK(cfg.pano_feat_h() == 8);
    CHECK(cfg.pano_feat_w() == 32);
    cfg.pano_height = 64;
    cfg.pano_width = 256;
    CHECK(cfg.pano_feat_h() == 4);
    CHECK(cfg.pano_feat_w() == 16);
}

TEST_CASE("forward pass produces the documented desk shapes") {
    Fixture& f = fixture();
    Dataset ds(f.dir, "train", true);
    Model model(tiny_config());
    Tape tape;
    Model::ForwardNodes fn = model.forward(tape, ds.at(0), /*train=*/true);
    CHECK(tape.shape(fn.pano_feats) == Shape{2, 12, 2, 8});
    CHECK(tape.shape(fn.attention) == Shape{2 * 16, 1, 2, 8});
    CHECK(tape.shape(fn.totals) == Shape{2, 16});
    CHECK(tape.shape(fn.grid_pre) == Shape{12, 4, 4});
    CHECK(tape.shape(fn.logits) == Shape{1, 4, 32, 32});
    CHECK(fn.decoder_inputs == 4);
    // attention values live strictly inside (0,1); per-cell weights sum to 1
    for (float v : tape.val(fn.attention)) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    const auto& w = tape.val(fn.weights);
    for (int t = 0; t < 16; ++t)
        CHECK(std::abs(w[static_cast<size_t>(t)] + w[static_cast<size_t>(16 + t)] - 1.0f) < 1e-6f);
}

TEST_CASE("full variant backward reaches the attention parameters") {
    Fixture& f = fixture();
    Dataset ds(f.dir, "train", true);
    Model model(tiny_config());
    Tape tape;
    Model::ForwardNodes fn = model.forward(tape, ds.at(1), /*train=*/true);
    tape.backward(fn.loss);
    auto nonzero = [](const Param& p) {
        for (float g : p.grad.v)
            if (g != 0.0f) return true;
        return false;
    };
    attn::AttentionNetParams& ap = model.attention_params();
    CHECK(nonzero(ap.conv3_w));
    CHECK(nonzero(ap.conv5_w));
    CHECK(nonzero(ap.conv1_w));
}

TEST_CASE("batched fusion equals the per-cell reference implementation exactly") {
    Fixture& f = fixture();
    Dataset ds(f.dir, "train", true);
    const LoadedScene& scene = ds.at(2);
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    Tape tape;
    Model::ForwardNodes fn = model.forward(tape, scene, /*train=*/false, /*with_loss=*/false);

    // reference path: spec-shaped fuse_target per cell over the same inputs
    Tensor pano_feats = tape.tensor(fn.pano_feats);   // [K,C,Hf,Wf]
    Tensor lo = tape.tensor(fn.overhead_lo);          // [1,c3,G,G]
    int K = cfg.max_panos, C = cfg.pano_channels;
    int Hf = cfg.pano_feat_h(), Wf = cfg.pano_feat_w(), G = cfg.grid;
    int c3 = cfg.overhead_widths[2];

    fusion::PanoSet set;
    for (int k = 0; k < K; ++k) {
        fusion::PanoEntry e;
        e.feature = Tensor(Shape{C, Hf, Wf});
        std::copy(pano_feats.v.begin() + static_cast<int64_t>(k) * C * Hf * Wf,
                  pano_feats.v.begin() + static_cast<int64_t>(k + 1) * C * Hf * Wf,
                  e.feature.v.begin());
        e.camera = scene.cameras[static_cast<size_t>(k)];
        set.panos.push_back(std::move(e));
    }
    fusion::FusionContext ctx;
    ctx.rays = geo::pano_ray_field(Hf, Wf, cfg.crop_deg);
    ctx.channels = model.attention_channels();
    ctx.dist_scale = static_cast<float>(cfg.dist_scale);
    geo::GeoGrid grid = geo::overhead_geogrid(scene.center, cfg.overhead_size, scene.gsd, G);

    Param bn_g("t.g", Tensor(Shape{C}, 1.0f));
    Param bn_b("t.b", Tensor(Shape{C}, 0.0f));
    BnRunning run(C);
    Tape ref_tape;
    Tape::Id ovh = ref_tape.input(Tensor(Shape{c3, G, G}, std::vector<float>(lo.v)));
    fusion::DenseGridNodes ref = fusion::build_dense_grid(
        ref_tape, set, ovh, grid, model.attention_params(), ctx, bn_g, bn_b, run, false);

    const auto& got = tape.val(fn.grid_pre);
    const auto& want = ref_tape.val(ref.grid);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == want[i]);

    // weights agree too
    const auto& wm = tape.val(fn.weights);
    for (int k = 0; k < K; ++k)
        for (int t = 0; t < G * G; ++t)
            CHECK(wm[static_cast<size_t>(k * G * G + t)] ==
                  ref.weights[static_cast<size_t>(k * G * G + t)]);
}

TEST_CASE("remote variant ignores panoramas bit for bit") {
    Fixture& f = fixture();
    Dataset ds(f.dir, "train", true);
    ModelConfig cfg = tiny_config();
    cfg.variant = "remote";
    Model model(cfg);
    LoadedScene scene = ds.at(0);

    Tape t1;
    auto logits1 = t1.val(model.forward(t1, scene, false, false).logits);
    // perturb every panorama pixel
    for (auto& p : scene.panos)
        for (auto& v : p.v) v = 1.0f - v;
    Model model2(cfg);  // fresh BN state, same init
    Tape t2;
    auto logits2 = t2.val(model2.forward(t2, scene, false, false).logits);
    REQUIRE(logits1.size() == logits2.size());
    for (size_t i = 0; i < logits1.size(); ++i) CHECK(logits1[i] == logits2[i]);
}

TEST_CASE("proximate variant ignores overhead pixels bit for bit") {
    Fixture& f = fixture();
    Dataset ds(f.dir, "train", true);
    ModelConfig cfg = tiny_config();
    cfg.variant = "proximate";
    cfg.attention.overhead = false;
    Model model(cfg);
    LoadedScene scene = ds.at(0);

    Tape t1;
    auto logits1 = t1.val(model.forward(t1, scene, false, false).logits);
    for (auto& v : scene.overhead.v) v = 1.0f - v;
    Model model2(cfg);
    Tape t2;
    auto logits2 = t2.val(model2.forward(t2, scene, false, false).logits);
    for (size_t i = 0; i < logits1.size(); ++i) CHECK(logits1[i] == logits2[i]);
    // output shape matches the full variant
    CHECK(t2.shape(model2.forward(t2, ds.at(1), false, false).logits) == Shape{1, 4, 32, 32});
}

TEST_CASE("ablation sets resize the attention net input") {
    ModelConfig cfg = tiny_config();
    cfg.attention = {false, false, true, true};  // d, theta
    Model geom(cfg);
    CHECK(geom.attention_params().in_channels == 4);
    CHECK(geom.attention_params().conv3_w.value.shape == Shape{1, 4, 3, 3});
    cfg.attention = {true, false, false, false};  // pano only
    Model pano(cfg);
    CHECK(pano.attention_params().in_channels == 2);
}

TEST_CASE("training is deterministic under a fixed seed") {
    Fixture& f = fixture();
    Dataset train(f.dir, "train", true);
    Dataset val(f.dir, "val", true);
    ModelConfig cfg = tiny_config();
    cfg.epochs = 2;
    auto run = [&]() {
        Model model(cfg);
        AdamConfig ac;
        ac.lr = cfg.lr;
        ac.gamma = cfg.lr_gamma;
        Adam opt(model.params(), ac);
        return run_training(model, opt, train, val);
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].loss == b[i].loss);
        CHECK(a[i].miou == b[i].miou);
        CHECK(a[i].acc == b[i].acc);
    }
}

TEST_CASE("10-scene overfit run drives the loss below 0.1") {
    Fixture& f = fixture();
    Dataset train(f.dir, "train", true);
    REQUIRE(train.size() == 10);
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    AdamConfig ac;
    ac.lr = cfg.lr;
    ac.gamma = 1.0;  // no decay while overfitting
    Adam opt(model.params(), ac);
    double loss = 1e9;
    int epoch = 0;
    for (; epoch < 200 && loss >= 0.1; ++epoch)
        loss = train_epoch(model, opt, train, cfg.seed, epoch);
    INFO("converged at epoch ", epoch, " loss ", loss);
    CHECK(loss < 0.1);
}

TEST_CASE("checkpoint round trip restores the model and rejects mismatches") {
    ModelConfig cfg = tiny_config();
    Model model(cfg);
    auto dir = fs::temp_directory_path() / "geofuse_model_ckpt";
    fs::remove_all(dir);
    std::vector<const Param*> params;
    for (Param* p : model.params()) params.push_back(p);
    save_checkpoint(dir, params, 3, 1.5e-3);

    Checkpoint ck = load_checkpoint(dir);
    Model fresh(cfg);
    fresh.load_weights(ck.tensors);
    for (size_t i = 0; i < fresh.params().size(); ++i)
        CHECK(fresh.params()[i]->value.v == model.params()[i]->value.v);

    // a config with different widths must refuse the checkpoint, naming the field
    ModelConfig other = cfg;
    other.pano_channels = 16;
    Model wrong(other);
    CHECK_THROWS_WITH_AS(wrong.load_weights(ck.tensors), doctest::Contains("pano.proj.w"),
                         ContractViolation);

    // missing parameter
    ck.tensors.erase("head.w");
    Model fresh2(cfg);
    CHECK_THROWS_WITH_AS(fresh2.load_weights(ck.tensors), doctest::Contains("head.w"),
                         ContractViolation);
    fs::remove_all(dir);
}

TEST_CASE("epoch decay composes with resume: lr continues the schedule") {
    ModelConfig cfg = tiny_config();
    AdamConfig ac;
    ac.lr = cfg.lr;
    ac.gamma = cfg.lr_gamma;
    Model m(cfg);
    Adam opt(m.params(), ac);
    for (int e = 0; e < 3; ++e) opt.epoch_end();
    double lr3 = opt.lr();
    CHECK(lr3 == doctest::Approx(cfg.lr * std::pow(cfg.lr_gamma, 3)).epsilon(1e-12));
    // a resumed optimizer starting from the stored lr continues identically
    Adam opt2(m.params(), ac);
    opt2.set_lr(lr3);
    opt2.epoch_end();
    opt.epoch_end();
    CHECK(opt.lr() == opt2.lr());
}

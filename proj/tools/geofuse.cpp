#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "geofuse/checkpoint.hpp"
#include "geofuse/config.hpp"
#include "geofuse/dataset.hpp"
#include "geofuse/gradcheck.hpp"
#include "geofuse/model.hpp"
#include "geofuse/synth.hpp"
#include "geofuse/version.hpp"

namespace fs = std::filesystem;
using namespace geofuse;

namespace {

void setup_threads() {
    if (const char* env = std::getenv("GEOFUSE_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) kernels::set_threads(n);
    }
}

struct TrainArgs {
    std::string config_file;
    std::string data_dir;
    std::string out_dir;
    std::string resume;
};

void write_run_manifest(const fs::path& out, const ModelConfig& cfg) {
    std::ostringstream os;
    os << "source_hash " << kSourceHash << "\n"
       << "seed " << cfg.seed << "\n"
       << "config config_snapshot.cfg\n"
       << "metrics metrics.csv\n"
       << "checkpoint checkpoint\n";
    io::write_text_file(out / "run_manifest.txt", os.str());
}

int cmd_train(const TrainArgs& args) {
    ModelConfig cfg = parse_config_file(args.config_file);
    if (!args.data_dir.empty()) cfg.data_dir = args.data_dir;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    if (cfg.data_dir.empty() || cfg.out_dir.empty())
        throw ConfigError("train needs --data and --out (or data_dir/out_dir in the config)");
    fs::create_directories(cfg.out_dir);

    bool with_panos = cfg.variant != "remote";
    Dataset train_ds(cfg.data_dir, "train", with_panos);
    Dataset val_ds(cfg.data_dir, "val", with_panos);
    if (train_ds.regression() != cfg.regression())
        throw ConfigError(msg("dataset task does not match config task '", cfg.task, "'"));

    Model model(cfg);
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    acfg.gamma = cfg.lr_gamma;
    Adam opt(model.params(), acfg);

    int start_epoch = 0;
    if (!args.resume.empty()) {
        Checkpoint ck = load_checkpoint(args.resume);
        model.load_weights(ck.tensors);
        opt.set_lr(ck.lr);
        start_epoch = static_cast<int>(ck.iteration);
    }

    std::vector<MetricsRow> rows = run_training(model, opt, train_ds, val_ds, start_epoch);
    io::write_text_file(fs::path(cfg.out_dir) / "metrics.csv", metrics_csv(rows));

    std::vector<const Param*> params;
    for (Param* p : model.params()) params.push_back(p);
    save_checkpoint(fs::path(cfg.out_dir) / "checkpoint", params, cfg.epochs, opt.lr());
    io::write_text_file(fs::path(cfg.out_dir) / "checkpoint" / "config.cfg",
                        serialize_config(cfg));
    io::write_text_file(fs::path(cfg.out_dir) / "config_snapshot.cfg", serialize_config(cfg));
    write_run_manifest(cfg.out_dir, cfg);

    if (!rows.empty()) {
        const MetricsRow& last = rows.back();
        std::printf("epoch %d done: loss=%.6f miou=%.4f acc=%.4f rmse=%.4f rmse_log=%.4f\n",
                    last.epoch, last.loss, last.miou, last.acc, last.rmse, last.rmse_log);
    }
    return kExitOk;
}

std::pair<Model, ModelConfig> model_from_checkpoint(const std::string& ckpt_dir) {
    ModelConfig cfg = parse_config_file(fs::path(ckpt_dir) / "config.cfg");
    Model model(cfg);
    Checkpoint ck = load_checkpoint(ckpt_dir);
    model.load_weights(ck.tensors);
    return {std::move(model), cfg};
}

int cmd_eval(const std::string& ckpt_dir, const std::string& data_dir, const std::string& split,
             const std::string& out_csv, const std::string& compare_csv) {
    auto [model, cfg] = model_from_checkpoint(ckpt_dir);
    Dataset ds(data_dir, split, cfg.variant != "remote");
    EvalResult r = evaluate(model, ds);

    std::printf("split=%s scenes=%zu counted=%lld ignored=%lld\n", split.c_str(), ds.size(),
                static_cast<long long>(r.counted), static_cast<long long>(r.ignored));
    std::printf("%10s %10s %10s %10s\n", "mIOU", "Acc", "RMSE", "RMSE log");
    std::printf("%10.4f %10.4f %10.4f %10.4f\n", r.miou, r.acc, r.rmse, r.rmse_log);

    MetricsRow row;
    row.epoch = cfg.epochs;
    row.miou = r.miou;
    row.acc = r.acc;
    row.rmse = r.rmse;
    row.rmse_log = r.rmse_log;
    if (!out_csv.empty()) io::write_text_file(out_csv, metrics_csv({row}));

    if (!compare_csv.empty()) {
        auto other = parse_metrics_csv(io::read_text_file(compare_csv));
        if (other.empty()) throw IoError(msg("no rows in ", compare_csv));
        const MetricsRow& o = other.back();
        std::printf("%10s %10s %10s %10s  (delta vs %s)\n", "dmIOU", "dAcc", "dRMSE", "dRMSElog",
                    compare_csv.c_str());
        std::printf("%+10.4f %+10.4f %+10.4f %+10.4f\n", r.miou - o.miou, r.acc - o.acc,
                    r.rmse - o.rmse, r.rmse_log - o.rmse_log);
    }
    return kExitOk;
}

int cmd_attnviz(const std::string& ckpt_dir, const std::string& data_dir, const std::string& split,
                int scene_id, int pano, const std::vector<std::string>& targets,
                const std::string& out_dir) {
    auto [model, cfg] = model_from_checkpoint(ckpt_dir);
    if (cfg.variant == "remote")
        throw ConfigError("the remote variant has no attention maps to export");
    Dataset ds(data_dir, split, true);
    const LoadedScene* scene = nullptr;
    for (size_t i = 0; i < ds.size(); ++i)
        if (ds.at(i).scene_id == scene_id) scene = &ds.at(i);
    if (!scene) throw ContractViolation(msg("scene ", scene_id, " not found in split ", split));
    if (pano < 0 || pano >= cfg.max_panos)
        throw ContractViolation(msg("panorama index ", pano, " outside [0,", cfg.max_panos, ")"));

    fs::create_directories(out_dir);
    Tape tape;
    Model::ForwardNodes fn = model.forward(tape, *scene, /*train=*/false, /*with_loss=*/false);
    int G = cfg.grid, Hf = cfg.pano_feat_h(), Wf = cfg.pano_feat_w();
    const auto& P = tape.val(fn.attention);  // [K*G*G,1,Hf,Wf]

    char name[128];
    for (const std::string& spec : targets) {
        int r = -1, c = -1;
        if (std::sscanf(spec.c_str(), "%d,%d", &r, &c) != 2 || r < 0 || r >= G || c < 0 || c >= G)
            throw ContractViolation(msg("bad target cell '", spec, "', expected r,c within ", G,
                                        "x", G));
        Tensor map(Shape{Hf, Wf});
        int64_t off = (static_cast<int64_t>(pano) * G * G + r * G + c) *
                      static_cast<int64_t>(Hf) * Wf;
        for (int i = 0; i < Hf * Wf; ++i)
            map.v[static_cast<size_t>(i)] = P[static_cast<size_t>(off + i)];
        std::snprintf(name, sizeof(name), "scene%d_pano%d_t%d_%d.pgm", scene_id, pano, r, c);
        io::write_pgm(fs::path(out_dir) / name, map);
    }

    // per-panorama total attention over the grid (normalized by map area)
    const auto& totals = tape.val(fn.totals);  // [K,G*G]
    Tensor tot(Shape{G, G});
    for (int t = 0; t < G * G; ++t)
        tot.v[static_cast<size_t>(t)] =
            totals[static_cast<size_t>(pano * G * G + t)] / static_cast<float>(Hf * Wf);
    std::snprintf(name, sizeof(name), "scene%d_pano%d_total.pgm", scene_id, pano);
    io::write_pgm(fs::path(out_dir) / name, tot);

    // per-cell softmax weight of this panorama
    const auto& weights = tape.val(fn.weights);
    Tensor wmap(Shape{G, G});
    for (int t = 0; t < G * G; ++t)
        wmap.v[static_cast<size_t>(t)] = weights[static_cast<size_t>(pano * G * G + t)];
    std::snprintf(name, sizeof(name), "scene%d_pano%d_weight.pgm", scene_id, pano);
    io::write_pgm(fs::path(out_dir) / name, wmap);
    std::printf("wrote %zu attention maps to %s\n", targets.size() + 2, out_dir.c_str());
    return kExitOk;
}

int cmd_gradcheck(uint64_t seed, int n_seeds, const std::string& sabotage) {
    auto results = run_gradient_suite(seed, n_seeds, sabotage);
    bool all_ok = true;
    for (const auto& r : results) {
        std::printf("%-20s max_rel_err=%.3e threshold=%.0e %s\n", r.op.c_str(), r.max_rel_err,
                    r.threshold, r.passed ? "PASS" : "FAIL");
        all_ok = all_ok && r.passed;
    }
    std::printf("%zu ops checked, %s\n", results.size(), all_ok ? "all passed" : "FAILURES");
    if (!all_ok) throw NumericalError("gradient check failed");
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    setup_threads();
    CLI::App app{"geofuse: geospatial attention fusion for near/remote sensing"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    int g_scenes = 200;
    uint64_t g_seed = 0;
    std::string g_out, g_task = "classification";
    synth::SynthParams sp;
    gen->add_option("--scenes", g_scenes, "number of scenes");
    gen->add_option("--seed", g_seed, "dataset seed");
    gen->add_option("--out", g_out, "output directory")->required();
    gen->add_option("--task", g_task, "classification|regression");
    gen->add_option("--overhead-size", sp.overhead_px, "overhead image size in px");
    gen->add_option("--gsd", sp.gsd, "meters per overhead pixel");
    gen->add_option("--pano-height", sp.pano_h, "panorama height in px");
    gen->add_option("--pano-width", sp.pano_w, "panorama width in px");
    gen->add_option("--panos", sp.n_panos, "panoramas per scene");
    gen->add_option("--walls", sp.n_walls, "occluder walls per scene");
    gen->add_option("--parcels", sp.parcels_per_side, "parcels per side");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    TrainArgs ta;
    train->add_option("--config", ta.config_file, "config file")->required();
    train->add_option("--data", ta.data_dir, "dataset directory");
    train->add_option("--out", ta.out_dir, "output directory");
    train->add_option("--resume", ta.resume, "checkpoint directory to resume from");

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string e_ckpt, e_data, e_split = "test", e_out, e_compare;
    eval->add_option("--checkpoint", e_ckpt, "checkpoint directory")->required();
    eval->add_option("--data", e_data, "dataset directory")->required();
    eval->add_option("--split", e_split, "train|val|test");
    eval->add_option("--out", e_out, "metrics CSV output path");
    eval->add_option("--compare", e_compare, "prior metrics CSV for a delta row");

    // attnviz
    auto* viz = app.add_subcommand("attnviz", "export attention maps as PGM");
    std::string v_ckpt, v_data, v_split = "test", v_out = ".";
    int v_scene = 0, v_pano = 0;
    std::vector<std::string> v_targets;
    viz->add_option("--checkpoint", v_ckpt, "checkpoint directory")->required();
    viz->add_option("--data", v_data, "dataset directory")->required();
    viz->add_option("--split", v_split, "train|val|test");
    viz->add_option("--scene", v_scene, "scene id")->required();
    viz->add_option("--pano", v_pano, "panorama index");
    viz->add_option("--targets", v_targets, "target cells as r,c")->required();
    viz->add_option("--out", v_out, "output directory");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every op");
    uint64_t c_seed = 42;
    int c_nseeds = 5;
    std::string c_sabotage;
    gc->add_option("--seed", c_seed, "base seed");
    gc->add_option("--seeds", c_nseeds, "number of seeds per op");
    gc->add_option("--sabotage", c_sabotage, "test hook: corrupt this op's analytic gradient");

    try {
        app.parse(argc, argv);
        if (gen->parsed()) {
            if (g_scenes < 3)
                throw CLI::ValidationError("--scenes", "need at least 3 scenes for the splits");
            synth::generate_dataset(g_out, g_scenes, g_seed, sp, g_task, 0.7, 0.15);
            std::printf("wrote %d scenes to %s\n", g_scenes, g_out.c_str());
            return kExitOk;
        }
        if (train->parsed()) return cmd_train(ta);
        if (eval->parsed()) return cmd_eval(e_ckpt, e_data, e_split, e_out, e_compare);
        if (viz->parsed()) return cmd_attnviz(v_ckpt, v_data, v_split, v_scene, v_pano, v_targets, v_out);
        if (gc->parsed()) return cmd_gradcheck(c_seed, c_nseeds, c_sabotage);
        return kExitUsage;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const ContractViolation& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return kExitContract;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return kExitNumerical;
    }
}

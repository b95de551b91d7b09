#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "geofuse/checkpoint.hpp"
#include "geofuse/config.hpp"
#include "geofuse/io.hpp"
#include "geofuse/model.hpp"

using namespace geofuse;
namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    std::string cmd = std::string(GEOFUSE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    int code = std::system(cmd.c_str());
    return WEXITSTATUS(code);
}

std::string run_cli_capture(const std::string& args, int* exit_code = nullptr) {
    fs::path tmp = fs::temp_directory_path() / "geofuse_cli_out.txt";
    std::string cmd =
        std::string(GEOFUSE_CLI_PATH) + " " + args + " >" + tmp.string() + " 2>&1";
    int code = std::system(cmd.c_str());
    if (exit_code) *exit_code = WEXITSTATUS(code);
    return io::read_text_file(tmp);
}

struct CliFixture {
    fs::path base = fs::temp_directory_path() / "geofuse_cli";
    fs::path ds = base / "ds";
    fs::path run = base / "run";

    CliFixture() {
        if (fs::exists(base / ".ready")) return;
        fs::remove_all(base);
        fs::create_directories(base);
        REQUIRE(run_cli("gen --scenes 12 --seed 3 --out " + ds.string() +
                        " --overhead-size 32 --pano-height 32 --pano-width 128 --panos 2 "
                        "--parcels 2 --walls 2") == 0);
        std::ofstream cfg(base / "tiny.cfg");
        cfg << "overhead_size = 32\ngrid = 4\npano_height = 32\npano_width = 128\n"
               "pano_channels = 12\nmax_panos = 2\noverhead_widths = 6,8,10\n"
               "pano_widths = 4,6,8,10\nfusion_widths = 12,16\ndecoder_widths = 12,10,8,8,8\n"
               "dist_scale = 0.05\nepochs = 2\nlr = 2e-3\nseed = 9\n";
        cfg.close();
        REQUIRE(run_cli("train --config " + (base / "tiny.cfg").string() + " --data " +
                        ds.string() + " --out " + run.string()) == 0);
        std::ofstream ready(base / ".ready");
    }
};

CliFixture& fixture() {
    static CliFixture f;
    return f;
}

}  // namespace

TEST_CASE("gen is deterministic and validates its arguments") {
    CliFixture& f = fixture();
    fs::path other = f.base / "ds2";
    REQUIRE(run_cli("gen --scenes 12 --seed 3 --out " + other.string() +
                    " --overhead-size 32 --pano-height 32 --pano-width 128 --panos 2 "
                    "--parcels 2 --walls 2") == 0);
    auto recs = io::read_manifest(f.ds / "train.tsv");
    for (const auto& r : recs) {
        CHECK(io::file_hash(f.ds / r.overhead_path) == io::file_hash(other / r.overhead_path));
        CHECK(io::file_hash(f.ds / r.label_path) == io::file_hash(other / r.label_path));
    }
    CHECK(run_cli("gen --scenes 0 --out " + (f.base / "dsx").string()) == 1);
    CHECK(run_cli("gen") == 1);  // missing required --out
    fs::remove_all(other);
}

TEST_CASE("train writes metrics, checkpoint, snapshot, and run manifest") {
    CliFixture& f = fixture();
    CHECK(fs::exists(f.run / "metrics.csv"));
    CHECK(fs::exists(f.run / "checkpoint" / "manifest.txt"));
    CHECK(fs::exists(f.run / "checkpoint" / "config.cfg"));
    CHECK(fs::exists(f.run / "config_snapshot.cfg"));
    std::string manifest = io::read_text_file(f.run / "run_manifest.txt");
    CHECK(manifest.find("source_hash ") != std::string::npos);
    CHECK(manifest.find("metrics metrics.csv") != std::string::npos);
    CHECK(manifest.find("checkpoint checkpoint") != std::string::npos);
    auto rows = parse_metrics_csv(io::read_text_file(f.run / "metrics.csv"));
    CHECK(rows.size() == 2);
    CHECK(rows[0].epoch == 0);
}

TEST_CASE("config errors carry line numbers and exit with the usage code") {
    CliFixture& f = fixture();
    fs::path bad = f.base / "bad.cfg";
    io::write_text_file(bad, "overhead_size = 32\nnonsense = 1\n");
    int code;
    std::string out = run_cli_capture(
        "train --config " + bad.string() + " --data " + f.ds.string() + " --out " +
            (f.base / "never").string(),
        &code);
    CHECK(code == 1);
    CHECK(out.find("bad.cfg:2") != std::string::npos);
    CHECK(out.find("unknown key") != std::string::npos);
}

TEST_CASE("remote training never reads panorama files") {
    CliFixture& f = fixture();
    fs::path ds_nopano = f.base / "ds_nopano";
    fs::remove_all(ds_nopano);
    fs::create_directories(ds_nopano);
    fs::copy(f.ds, ds_nopano, fs::copy_options::recursive);
    // panoramas gone from disk entirely
    for (const auto& entry : fs::directory_iterator(ds_nopano / "scenes"))
        if (entry.path().string().find("pano") != std::string::npos) fs::remove(entry.path());
    std::string remote_cfg = (f.base / "remote.cfg").string();
    io::write_text_file(remote_cfg,
                        "variant = remote\noverhead_size = 32\ngrid = 4\npano_height = 32\n"
                        "pano_width = 128\npano_channels = 12\nmax_panos = 2\n"
                        "overhead_widths = 6,8,10\npano_widths = 4,6,8,10\n"
                        "fusion_widths = 12,16\ndecoder_widths = 12,10,8,8,8\n"
                        "epochs = 1\nseed = 9\n");
    CHECK(run_cli("train --config " + remote_cfg + " --data " + ds_nopano.string() + " --out " +
                  (f.base / "run_remote").string()) == 0);
    fs::remove_all(ds_nopano);
}

TEST_CASE("eval is repeatable and emits a comparison delta row") {
    CliFixture& f = fixture();
    fs::path csv1 = f.base / "eval1.csv", csv2 = f.base / "eval2.csv";
    REQUIRE(run_cli("eval --checkpoint " + (f.run / "checkpoint").string() + " --data " +
                    f.ds.string() + " --split test --out " + csv1.string()) == 0);
    REQUIRE(run_cli("eval --checkpoint " + (f.run / "checkpoint").string() + " --data " +
                    f.ds.string() + " --split test --out " + csv2.string()) == 0);
    CHECK(io::read_text_file(csv1) == io::read_text_file(csv2));

    int code;
    std::string out = run_cli_capture("eval --checkpoint " + (f.run / "checkpoint").string() +
                                          " --data " + f.ds.string() +
                                          " --split test --compare " + csv1.string(),
                                      &code);
    CHECK(code == 0);
    CHECK(out.find("delta") != std::string::npos);
    CHECK(out.find("counted=") != std::string::npos);
    // repeated evaluation of the same checkpoint gives a zero delta
    CHECK(out.find("+0.0000") != std::string::npos);
}

TEST_CASE("resume continues the learning-rate schedule from the saved epoch") {
    CliFixture& f = fixture();
    fs::path resumed = f.base / "run_resumed";
    fs::remove_all(resumed);
    std::string cfg4 = (f.base / "tiny4.cfg").string();
    std::string text = io::read_text_file(f.base / "tiny.cfg");
    text.replace(text.find("epochs = 2"), 10, "epochs = 4");
    io::write_text_file(cfg4, text);
    REQUIRE(run_cli("train --config " + cfg4 + " --data " + f.ds.string() + " --out " +
                    resumed.string() + " --resume " + (f.run / "checkpoint").string()) == 0);
    // saved lr after 2 epochs is lr*gamma^2; after two more it is lr*gamma^4
    Checkpoint ck = load_checkpoint(resumed / "checkpoint");
    CHECK(ck.lr == doctest::Approx(2e-3 * std::pow(0.96, 4)).epsilon(1e-10));
    auto rows = parse_metrics_csv(io::read_text_file(resumed / "metrics.csv"));
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].epoch == 2);
    CHECK(rows[1].epoch == 3);
    fs::remove_all(resumed);
}

TEST_CASE("attnviz exports one PGM per target plus grid maps; zero params give gray 128") {
    CliFixture& f = fixture();
    // zero the attention net inside a copy of the trained checkpoint
    ModelConfig cfg = parse_config_file(f.run / "checkpoint" / "config.cfg");
    Model model(cfg);
    Checkpoint ck = load_checkpoint(f.run / "checkpoint");
    model.load_weights(ck.tensors);
    for (Param* p : model.attention_params().params())
        std::fill(p->value.v.begin(), p->value.v.end(), 0.0f);
    fs::path zeroed = f.base / "ckpt_zero";
    fs::remove_all(zeroed);
    std::vector<const Param*> params;
    for (Param* p : model.params()) params.push_back(p);
    save_checkpoint(zeroed, params, cfg.epochs, 1e-3);
    io::write_text_file(zeroed / "config.cfg", serialize_config(cfg));

    fs::path viz = f.base / "viz";
    fs::remove_all(viz);
    auto test_recs = io::read_manifest(f.ds / "test.tsv");
    REQUIRE(!test_recs.empty());
    int scene_id = test_recs[0].scene_id;
    REQUIRE(run_cli("attnviz --checkpoint " + zeroed.string() + " --data " + f.ds.string() +
                    " --split test --scene " + std::to_string(scene_id) +
                    " --pano 1 --targets 0,0 --targets 2,3 --out " + viz.string()) == 0);
    char name[128];
    std::snprintf(name, sizeof(name), "scene%d_pano1_t0_0.pgm", scene_id);
    REQUIRE(fs::exists(viz / name));
    std::snprintf(name, sizeof(name), "scene%d_pano1_t2_3.pgm", scene_id);
    REQUIRE(fs::exists(viz / name));
    std::snprintf(name, sizeof(name), "scene%d_pano1_total.pgm", scene_id);
    CHECK(fs::exists(viz / name));
    std::snprintf(name, sizeof(name), "scene%d_pano1_weight.pgm", scene_id);
    CHECK(fs::exists(viz / name));

    // flat 0.5 maps render as uniform gray 128
    std::snprintf(name, sizeof(name), "scene%d_pano1_t0_0.pgm", scene_id);
    std::ifstream pgm(viz / name, std::ios::binary);
    std::string header;
    std::getline(pgm, header);
    CHECK(header == "P5");
    int w, h, maxv;
    pgm >> w >> h >> maxv;
    pgm.get();
    std::vector<uint8_t> bytes(static_cast<size_t>(w) * h);
    pgm.read(reinterpret_cast<char*>(bytes.data()), w * h);
    for (uint8_t b : bytes) CHECK(static_cast<int>(b) == 128);

    // bad pano / scene ids are contract violations
    CHECK(run_cli("attnviz --checkpoint " + zeroed.string() + " --data " + f.ds.string() +
                  " --split test --scene 9999 --pano 0 --targets 0,0 --out " + viz.string()) == 2);
    CHECK(run_cli("attnviz --checkpoint " + zeroed.string() + " --data " + f.ds.string() +
                  " --split test --scene " + std::to_string(scene_id) +
                  " --pano 7 --targets 0,0 --out " + viz.string()) == 2);
}

TEST_CASE("gradcheck covers every op once, passes, and the sabotage hook trips it") {
    int code;
    std::string out = run_cli_capture("gradcheck --seed 42 --seeds 1", &code);
    CHECK(code == 0);
    std::set<std::string> ops;
    std::istringstream ss(out);
    std::string line;
    int pass_lines = 0;
    while (std::getline(ss, line)) {
        if (line.find("max_rel_err") == std::string::npos) continue;
        ++pass_lines;
        CHECK(ops.insert(line.substr(0, line.find(' '))).second);  // listed exactly once
        CHECK(line.find("PASS") != std::string::npos);
    }
    CHECK(pass_lines >= 25);
    CHECK(run_cli("gradcheck --seed 42 --seeds 1 --sabotage conv2d") == 3);
}

TEST_CASE("eval with a mismatched dataset path exits with the usage code") {
    CliFixture& f = fixture();
    CHECK(run_cli("eval --checkpoint " + (f.run / "checkpoint").string() +
                  " --data /nonexistent/dir --split test") == 1);
}

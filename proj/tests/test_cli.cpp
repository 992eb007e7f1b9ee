#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "cli.hpp"
#include "doctest.h"
#include "hsicl/io.hpp"
#include "hsicl/train.hpp"

using namespace hsicl;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "hsicl");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

struct Workspace {
    fs::path dir;
    Workspace() {
        dir = fs::temp_directory_path() / ("hsicl-cli-" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Workspace() { fs::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
    std::string write(const std::string& name, const std::string& text) const {
        write_file_atomic(path(name), text);
        return path(name);
    }
};

const char* kTinyScene = "rows = 16\ncols = 16\nbands = 16\nendmembers = 3\nsnr_db = 30\nseed = 5\nname = tiny\n";
const char* kTinyTrain =
    "patch_size = 4\nstride = 2\nbatch_size = 16\nepochs = 2\npresets = small\nseeds = 1\n";

}  // namespace

TEST_CASE("synth with the paper dimensions") {
    Workspace ws;
    const auto cfg = std::string(HSICL_SOURCE_DIR) + "/configs/paper-scene.cfg";
    auto r = run_cli({"synth", "--config", cfg, "--out", ws.path("scene.hsb")});
    REQUIRE(r.code == 0);
    const auto h = read_bundle_header(ws.path("scene.hsb"));
    CHECK(h.bands == 224);
    CHECK(h.rows == 100);
    CHECK(h.cols == 100);
    CHECK(h.label_dim == 4);
}

TEST_CASE("spectral flip twice through the CLI restores the file") {
    Workspace ws;
    const auto cfg = ws.write("tiny.cfg", kTinyScene);
    REQUIRE(run_cli({"synth", "--config", cfg, "--out", ws.path("a.hsb")}).code == 0);
    auto r1 = run_cli({"augment", "--in", ws.path("a.hsb"), "--op", "spectral-flip", "--out", ws.path("b.hsb"),
                       "--preview", ws.path("p.csv")});
    REQUIRE(r1.code == 0);
    REQUIRE(run_cli({"augment", "--in", ws.path("b.hsb"), "--op", "spectral-flip", "--out", ws.path("c.hsb")}).code ==
            0);
    CHECK(read_file(ws.path("c.hsb")) == read_file(ws.path("a.hsb")));
    CHECK(read_file(ws.path("b.hsb")) != read_file(ws.path("a.hsb")));
    CHECK(read_file(ws.path("p.csv")).rfind("band,original,transformed\n", 0) == 0);
}

TEST_CASE("train, eval and ablate") {
    Workspace ws;
    const auto scene = ws.write("tiny.cfg", kTinyScene);
    const auto tcfg = ws.write("train.cfg", kTinyTrain);
    REQUIRE(run_cli({"synth", "--config", scene, "--out", ws.path("s.hsb")}).code == 0);

    auto tr = run_cli({"train", "--config", tcfg, "--data", ws.path("s.hsb"), "--out", ws.path("run"), "--arm",
                       "spectral+spatial"});
    CAPTURE(tr.err);
    REQUIRE(tr.code == 0);
    for (const char* f : {"config.cfg", "params.ckpt", "train_log.csv", "metrics.txt"})
        CHECK(fs::exists(ws.dir / "run" / f));
    auto ev = run_cli({"eval", "--run", ws.path("run"), "--data", ws.path("s.hsb")});
    CHECK(ev.code == 0);
    CHECK(ev.out.find("r2 = ") != std::string::npos);

    auto ab = run_cli({"ablate", "--config", tcfg, "--data", ws.path("s.hsb"), "--seeds", "1,2,3", "--out",
                       ws.path("report.txt")});
    CAPTURE(ab.err);
    REQUIRE(ab.code == 0);
    for (Arm arm : kAllArms) CHECK(ab.out.find(std::string(arm_title(arm))) != std::string::npos);
    const auto report = parse_report(read_file(ws.path("report.txt")));
    CHECK(report.runs.size() == 12);
    CHECK(ab.out.find("+/-") != std::string::npos);

    // Same command, same files: identical report.
    REQUIRE(run_cli({"ablate", "--config", tcfg, "--data", ws.path("s.hsb"), "--seeds", "1,2,3", "--out",
                     ws.path("report2.txt")})
                .code == 0);
    CHECK(read_file(ws.path("report2.txt")) == read_file(ws.path("report.txt")));
}

TEST_CASE("exit codes") {
    Workspace ws;
    SUBCASE("unknown flag prints usage") {
        auto r = run_cli({"synth", "--bogus"});
        CHECK(r.code == 1);
        CHECK(r.err.find("Usage") != std::string::npos);
    }
    SUBCASE("no subcommand") { CHECK(run_cli({}).code == 1); }
    SUBCASE("corrupt bundle is a data error") {
        const auto bad = ws.write("bad.hsb", "HSB1 not really");
        auto r = run_cli({"augment", "--in", bad, "--op", "spectral-flip"});
        CHECK(r.code == 2);
        CHECK(r.err.find("error") != std::string::npos);
    }
    SUBCASE("divergent training is a numerical failure") {
        const auto scene = ws.write("tiny.cfg", kTinyScene);
        REQUIRE(run_cli({"synth", "--config", scene, "--out", ws.path("a.hsb")}).code == 0);
        const auto cfg = ws.write("hot.cfg", std::string(kTinyTrain) + "lr = 1e300\ngrad_clip = 0\n");
        auto r = run_cli({"train", "--config", cfg, "--data", ws.path("a.hsb"), "--out", ws.path("run")});
        CAPTURE(r.err);
        CHECK(r.code == 3);
    }
    SUBCASE("bad operator parameter is a usage error") {
        const auto cfg = ws.write("tiny.cfg", kTinyScene);
        REQUIRE(run_cli({"synth", "--config", cfg, "--out", ws.path("a.hsb")}).code == 0);
        auto r = run_cli({"augment", "--in", ws.path("a.hsb"), "--op", "band-erasure", "--param", "fraction"});
        CHECK(r.code == 1);
    }
}

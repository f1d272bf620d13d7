#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "oneseg/voldata.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args, const fs::path& capture) {
    const std::string cmd = std::string(ONESEG_CLI) + " " + args + " > " + capture.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(capture);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

const char* kSmall =
    "--set synth.depth=4 --set synth.height=24 --set synth.width=24 --set synth.radius=5 "
    "--set gabor.scales=2 --set gabor.orientations=4 --set encoder.channels=4 --set encoder.layers=1,1 "
    "--set recon.patch=5 --set train.epochs=1";

}  // namespace

TEST_CASE("synth, train, screen, propagate and evaluate from the command line") {
    testutil::TempDir dir("cli");
    const auto cap = dir / "stdout.txt";
    const std::string small = kSmall;

    REQUIRE(run("synth --out " + (dir / "data").string() + " --volumes 2 --seed 3 " + small, cap).code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "data")) files += e.path().extension() == ".oseg";
    CHECK(files == 4);
    CHECK(fs::exists(dir / "data" / "manifest.txt"));

    const auto manifest = (dir / "data" / "manifest.txt").string();
    const auto ckpt = (dir / "ckpt").string();
    REQUIRE(run("train --manifest " + manifest + " --out " + ckpt + " --seed 3 " + small, cap).code == 0);
    CHECK(fs::exists(dir / "ckpt" / "train_report.csv"));
    CHECK(fs::exists(dir / "ckpt" / "params.txt"));

    const auto screened = run("screen --manifest " + manifest + " --checkpoint " + ckpt + " --role test " + small, cap);
    CHECK(screened.code == 0);
    CHECK(std::count(screened.out.begin(), screened.out.end(), '\n') == 2);

    const auto vol = (dir / "data" / "vol_000.oseg").string();
    const auto mask = (dir / "data" / "vol_000_mask.oseg").string();
    REQUIRE(fs::exists(vol));
    const auto first = run("propagate --volume " + vol + " --checkpoint " + ckpt + " " + small, cap);
    CHECK(first.code == 0);
    const std::size_t rep = std::stoul(first.out);
    CHECK(rep < 4);
    std::size_t after = 0;
    for (const auto& e : fs::directory_iterator(dir.path())) after += e.is_regular_file() && e.path() != cap;
    CHECK(after == 0);

    const auto pred = (dir / "vol_000_pred.oseg").string();
    CHECK(run("propagate --volume " + vol + " --checkpoint " + ckpt + " --mask " + mask + " --rep-index " +
                  std::to_string(rep) + " --out " + pred + " " + small,
              cap)
              .code == 0);
    REQUIRE(fs::exists(pred));

    const auto eval = run("evaluate --pred " + pred + " --gt " + mask, cap);
    CHECK(eval.code == 0);
    CHECK(eval.out.rfind("volume_id,dice,ravd,assd\nvol_000,", 0) == 0);

    CHECK(run("propagate --volume " + vol + " --checkpoint " + ckpt + " --rep-index 9 " + small, cap).code == 1);
}

TEST_CASE("usage errors exit with status 1") {
    testutil::TempDir dir("cli_err");
    const auto cap = dir / "stdout.txt";
    CHECK(run("train --no-such-flag", cap).code == 1);
    CHECK(run("synth --out " + (dir / "x").string() + " --set nope=1", cap).code == 1);
    CHECK(run("evaluate --pred " + (dir / "missing.oseg").string() + " --gt " + (dir / "missing.oseg").string(), cap).code == 1);
    CHECK(run("--help", cap).code == 0);
}

TEST_CASE("gradient check subcommand passes") {
    testutil::TempDir dir("cli_gc");
    const auto r = run("gradcheck --seed 2", dir / "out.txt");
    CHECK(r.code == 0);
    CHECK(r.out.find("max relative error") != std::string::npos);
}

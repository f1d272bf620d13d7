#include <doctest.h>

#include <fstream>

#include "oneseg/config.hpp"
#include "oneseg/pipeline.hpp"
#include "test_util.hpp"

using namespace oneseg;

TEST_CASE("defaults validate and map onto module configs") {
    RunConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.train().lr == 1e-4);
    CHECK(c.train().patch == 13);
    CHECK(c.encoder().stride() == 2);
    CHECK(c.gabor().scales * c.gabor().orientations == 32);
    CHECK(c.synth().depth == 12);
    CHECK(c.bottleneck());
}

TEST_CASE("unknown keys and malformed values are rejected") {
    RunConfig c;
    CHECK_THROWS_AS(c.set("train.learning_rate", "1"), ValidationError);
    c.set("train.epochs", "three");
    CHECK_THROWS_AS(c.validate(), ValidationError);
    RunConfig d;
    d.set("recon.patch", "12");
    CHECK_THROWS_AS(d.validate(), ValidationError);
}

TEST_CASE("config files override defaults") {
    testutil::TempDir dir("cfg");
    {
        std::ofstream f(dir / "a.txt");
        f << "# comment\ntrain.lr = 0.001\n\nencoder.layers = 1,1,1\n";
    }
    RunConfig c;
    c.load_file(dir / "a.txt");
    CHECK(c.train().lr == 0.001);
    CHECK(c.encoder().stride() == 1);
    CHECK(c.explicitly_set("train.lr"));
    CHECK(!c.explicitly_set("train.epochs"));
    {
        std::ofstream f(dir / "b.txt");
        f << "bogus.key = 1\n";
    }
    CHECK_THROWS_AS(c.load_file(dir / "b.txt"), ValidationError);
}

TEST_CASE("the master seed fills only seeds left unset") {
    RunConfig c;
    c.set("train.seed", "42");
    c.apply_seed(7);
    CHECK(c.get("train.seed") == "42");
    CHECK(c.get("encoder.seed") == std::to_string(derive_seed(7, 1)));
    CHECK(c.get("synth.seed") == std::to_string(derive_seed(7, 3)));
    CHECK(derive_seed(7, 1) != derive_seed(7, 2));
    CHECK(derive_seed(7, 1) != derive_seed(8, 1));
    CHECK(derive_seed(7, 1) == derive_seed(7, 1));
}

TEST_CASE("text form lists every key once, sorted") {
    RunConfig c;
    const auto text = c.to_text();
    std::size_t lines = 0;
    std::string prev;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line); ++lines) {
        const auto key = line.substr(0, line.find(" = "));
        CHECK(key > prev);
        prev = key;
    }
    CHECK(lines == RunConfig::defaults().size());
}

TEST_CASE("ablations adjust the configuration") {
    RunConfig c;
    apply_ablation(c, Ablation::no_cycle);
    CHECK(c.train().lambda2 == 0.0);
    RunConfig d;
    apply_ablation(d, Ablation::no_bottleneck);
    CHECK(!d.bottleneck());
    CHECK(parse_ablation("no-screening") == Ablation::no_screening);
    CHECK_THROWS_AS(parse_ablation("nothing"), ValidationError);
    CHECK(median({3.0, 1.0, 2.0, 10.0}) == 2.5);
}

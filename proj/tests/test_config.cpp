#include <catch2/catch_amalgamated.hpp>

#include "ktf/config.hpp"
#include "support/tmpdir.hpp"

using namespace ktf;
using namespace ktf::test;

TEST_CASE("default config echoes the full-size model", "[config]") {
    RunConfig c;
    const auto dump = dump_config(c);
    CHECK(dump.find("d_model=512\n") != std::string::npos);
    CHECK(dump.find("heads=8\n") != std::string::npos);
    CHECK(dump.find("encoder_layers=4\n") != std::string::npos);
    CHECK(dump.find("decoder_layers=4\n") != std::string::npos);
    CHECK(dump.find("batch_size=64\n") != std::string::npos);
    CHECK(dump.find("seq_len=1024\n") != std::string::npos);
    CHECK(dump.find("holdout_fraction=0.025") != std::string::npos);
    CHECK(dump.find("new_user_fraction=0.2") != std::string::npos);
    CHECK(dump.find("group_cap=50\n") != std::string::npos);
    CHECK(dump.find("time_weighted=on\n") != std::string::npos);
    CHECK(dump.find("continuous_embedding=on\n") != std::string::npos);
    // one line per knob, every line key=value
    std::istringstream is(dump);
    std::string line;
    int64_t lines = 0;
    while (std::getline(is, line)) {
        ++lines;
        CHECK(line.find('=') != std::string::npos);
    }
    CHECK(lines >= 40);
}

TEST_CASE("unknown keys are rejected by name", "[config]") {
    RunConfig c;
    CHECK_THROWS_WITH(apply_config_value(c, "learning_rate", "0.1"),
                      Catch::Matchers::ContainsSubstring("learning_rate"));
    CHECK_THROWS_AS(apply_config_value(c, "d_modle", "512"), ConfigError);
}

TEST_CASE("value parsing catches malformed numbers and bools", "[config]") {
    RunConfig c;
    CHECK_THROWS_AS(apply_config_value(c, "d_model", "big"), ConfigError);
    CHECK_THROWS_AS(apply_config_value(c, "d_model", "12x"), ConfigError);
    CHECK_THROWS_AS(apply_config_value(c, "peak_lr", "1e"), ConfigError);
    CHECK_THROWS_AS(apply_config_value(c, "time_weighted", "maybe"), ConfigError);

    apply_config_value(c, "time_weighted", "off");
    CHECK_FALSE(c.model.time_weighted);
    apply_config_value(c, "time_weighted", "1");
    CHECK(c.model.time_weighted);
    apply_config_value(c, "time_weighted", "false");
    CHECK_FALSE(c.model.time_weighted);
    apply_config_value(c, "peak_lr", "2.5e-4");
    CHECK(c.train.lr.peak == 2.5e-4);
}

TEST_CASE("seq_len and seed fan out to every consumer", "[config]") {
    RunConfig c;
    apply_config_value(c, "seq_len", "256");
    CHECK(c.train.seq_len == 256);
    CHECK(c.model.seq_len == 256);
    apply_config_value(c, "seed", "42");
    CHECK(c.seed == 42);
    CHECK(c.train.seed == 42);
    CHECK(c.overridden.count("seq_len") == 1);
    CHECK(c.overridden.count("seed") == 1);
    CHECK(c.overridden.count("d_model") == 0);
}

TEST_CASE("config files allow comments and blanks, reject junk", "[config]") {
    TmpDir tmp("ktf-config");
    write_file(tmp.file("good.cfg"),
               "# desk run\n"
               "d_model = 64\n"
               "\n"
               "heads=4   # narrow\n"
               "out_dir = runs/a\n");
    RunConfig c;
    load_config_file(c, tmp.file("good.cfg"));
    CHECK(c.model.d_model == 64);
    CHECK(c.model.heads == 4);
    CHECK(c.out_dir == "runs/a");
    CHECK(c.train.batch_size == 64);  // untouched default

    write_file(tmp.file("bad.cfg"), "d_model 64\n");
    RunConfig c2;
    CHECK_THROWS_WITH(load_config_file(c2, tmp.file("bad.cfg")),
                      Catch::Matchers::ContainsSubstring(":1"));
    RunConfig c3;
    CHECK_THROWS_AS(load_config_file(c3, tmp.file("missing.cfg")), ConfigError);
}

TEST_CASE("flags override file values which override defaults", "[config]") {
    TmpDir tmp("ktf-config");
    write_file(tmp.file("run.cfg"), "batch_size=8\nd_model=128\n");
    RunConfig c;
    load_config_file(c, tmp.file("run.cfg"));
    apply_config_value(c, "batch_size", "2");  // flag wins
    CHECK(c.train.batch_size == 2);
    CHECK(c.model.d_model == 128);   // file wins over default
    CHECK(c.model.heads == 8);       // default survives
}

TEST_CASE("effective-config dump reloads to an identical dump", "[config]") {
    RunConfig c;
    apply_config_value(c, "d_model", "48");
    apply_config_value(c, "heads", "3");
    apply_config_value(c, "num_contents", "101");
    apply_config_value(c, "seed", "9");
    apply_config_value(c, "lag_x_max", "12345.5");
    apply_config_value(c, "out_dir", "runs/x");

    TmpDir tmp("ktf-config");
    write_file(tmp.file("effective.cfg"), dump_config(c));
    RunConfig r;
    load_config_file(r, tmp.file("effective.cfg"));
    CHECK(dump_config(r) == dump_config(c));
}

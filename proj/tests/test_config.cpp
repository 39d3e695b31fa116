#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cabr/config.hpp"

using namespace cabr;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    out << text;
}

}  // namespace

TEST_CASE("defaults match the documented values") {
    const AppConfig cfg = default_config();
    CHECK(cfg.train.epochs == 1200);
    CHECK(cfg.train.lr == doctest::Approx(1e-4));
    CHECK(cfg.train.plateau_patience == 20);
    CHECK(cfg.train.batch_size == 48);
    CHECK(cfg.train.patch_h == 64);
    CHECK(cfg.train.patch_w == 496);
    CHECK(cfg.train.stripe_width_min == 1);
    CHECK(cfg.train.stripe_width_max == 11);
    CHECK(cfg.synth.p_low == 10.0);
    CHECK(cfg.synth.p_high == 85.0);
    CHECK(cfg.synth.p_base == 30.0);
    CHECK(cfg.synth.p_low_t == 50.0);
    CHECK(cfg.synth.p_high_t == 90.0);
    CHECK(cfg.model.base_channels == 16);
    CHECK(cfg.model.gs_mode == GsMode::AbsBma);
    CHECK(cfg.model.threshold == 0.5f);
    CHECK(cfg.model.window_height == 64);
}

TEST_CASE("config round-trips through dump and load") {
    AppConfig cfg = default_config();
    cfg.train.epochs = 31;
    cfg.model.gs_mode = std::nullopt;
    cfg.synth.sigma = 3.5;
    const auto path = temp_path("cabr_t_cfg.json");
    write_config(cfg, path);
    const AppConfig back = load_config(path);
    CHECK(back.train.epochs == 31);
    CHECK(!back.model.gs_mode.has_value());
    CHECK(back.synth.sigma == doctest::Approx(3.5));
    CHECK(dump_config(back) == dump_config(cfg));
}

TEST_CASE("partial configs keep defaults elsewhere") {
    const auto path = temp_path("cabr_t_cfg_partial.json");
    write_text(path, R"({"train": {"epochs": 3}})");
    const AppConfig cfg = load_config(path);
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.train.batch_size == 48);
    CHECK(cfg.model.base_channels == 16);
}

TEST_CASE("synth section feeds the trainer copy") {
    const auto path = temp_path("cabr_t_cfg_synth.json");
    write_text(path, R"({"synth": {"sigma": 2.0, "p_low": 5}})");
    const AppConfig cfg = load_config(path);
    CHECK(cfg.train.synth.sigma == doctest::Approx(2.0));
    CHECK(cfg.train.synth.p_low == doctest::Approx(5.0));
}

TEST_CASE("unknown keys are rejected by name") {
    const auto path = temp_path("cabr_t_cfg_bad.json");
    write_text(path, R"({"train": {"epoch": 3}})");
    CHECK_THROWS_WITH_AS(load_config(path), doctest::Contains("train.epoch"), FormatError);

    write_text(path, R"({"trainer": {}})");
    CHECK_THROWS_AS(load_config(path), FormatError);

    write_text(path, R"({"train": {"epochs": "три"}})");
    CHECK_THROWS_AS(load_config(path), FormatError);

    write_text(path, "{nonsense");
    CHECK_THROWS_AS(load_config(path), FormatError);
}

TEST_CASE("enum names round-trip") {
    CHECK(backbone_from_name("gated") == Backbone::GatedTwoBranch);
    CHECK(backbone_from_name("shared") == Backbone::GatedSharedSplit);
    CHECK(backbone_from_name("conv") == Backbone::PlainConv);
    CHECK_THROWS_AS(backbone_from_name("mlp"), ArgumentError);
    CHECK(gs_mode_from_name("none") == std::nullopt);
    CHECK(gs_mode_from_name("absbma") == GsMode::AbsBma);
    CHECK_THROWS_AS(gs_mode_from_name("slope"), ArgumentError);
    CHECK(gs_mode_name(GsMode::Naive) == "naive");
}

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "cabr/phantom.hpp"

using namespace cabr;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("no vessels and no noise gives an empty scene") {
    PhantomParams p;
    p.height = 64;
    p.width = 64;
    p.vessel_count_min = p.vessel_count_max = 0;
    p.background_level = 0;
    p.background_sigma = 0.0;
    Rng rng(1);
    const auto [img, mask] = generate_phantom(p, rng);
    for (auto v : img.data) {
        CHECK(v == 0);
    }
    CHECK(std::count(mask.data.begin(), mask.data.end(), 1) == 0);
}

TEST_CASE("straight horizontal vessel of thickness 3 masks a 3-row band") {
    const int h = 32, w = 48;
    std::vector<float> field(static_cast<std::size_t>(h) * w, 0.f);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
    VesselPath path;
    for (double x = -2.0; x <= w + 2.0; x += 0.125) {
        path.emplace_back(15.0, x);
    }
    render_vessel(field, mask, h, w, path, 3.0, 200.0);
    for (int x = 10; x < 38; ++x) {  // columns away from the endpoints
        for (int y = 0; y < h; ++y) {
            const bool in_band = y >= 14 && y <= 16;
            CHECK(mask[static_cast<std::size_t>(y) * w + x] == (in_band ? 1 : 0));
        }
    }
    // the field peaks at the centerline
    for (int x = 10; x < 38; ++x) {
        CHECK(field[15 * w + x] == doctest::Approx(200.f).epsilon(1e-2));
    }
}

TEST_CASE("same seed reproduces the same phantom") {
    PhantomParams p;
    p.height = 96;
    p.width = 96;
    p.seed = 77;
    Rng a(p.seed), b(p.seed);
    const auto [ia, ma] = generate_phantom(p, a);
    const auto [ib, mb] = generate_phantom(p, b);
    CHECK(ia.data == ib.data);
    CHECK(ma.data == mb.data);
}

TEST_CASE("mask ignores the background noise draw") {
    PhantomParams quiet;
    quiet.height = 96;
    quiet.width = 96;
    quiet.background_sigma = 0.0;
    PhantomParams loud = quiet;
    loud.background_sigma = 25.0;
    Rng a(5), b(5);
    const auto [ia, ma] = generate_phantom(quiet, a);
    const auto [ib, mb] = generate_phantom(loud, b);
    CHECK(ma.data == mb.data);
    CHECK(ia.data != ib.data);
}

TEST_CASE("centerline pixels outshine the background") {
    // single vessel of known peak; statistical over phantoms and noise draws
    PhantomParams p;
    p.height = 128;
    p.width = 128;
    p.vessel_count_min = p.vessel_count_max = 1;
    p.thickness_min = p.thickness_max = 4;
    p.peak_min = p.peak_max = 200;
    p.background_level = 30;
    p.background_sigma = 8.0;
    double vessel_sum = 0.0, bg_sum = 0.0;
    long long vessel_n = 0, bg_n = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const auto [img, mask] = generate_phantom(p, rng);
        for (std::size_t i = 0; i < img.data.size(); ++i) {
            if (mask.data[i]) {
                vessel_sum += img.data[i];
                ++vessel_n;
            } else {
                bg_sum += img.data[i];
                ++bg_n;
            }
        }
    }
    REQUIRE(vessel_n > 0);
    const double vessel_mean = vessel_sum / static_cast<double>(vessel_n);
    const double bg_mean = bg_sum / static_cast<double>(bg_n);
    // mask pixels include the 25%-profile skirt; a quarter of the peak less
    // three sigmas must still separate them from the background
    CHECK(vessel_mean - bg_mean >= 0.25 * 200 - 3 * 8.0);
    CHECK(bg_mean == doctest::Approx(30.0).epsilon(0.15));
}

TEST_CASE("corpus generation writes files and a stable manifest") {
    const auto dir0 = temp_dir("cabr_t_corpus0");
    PhantomParams p;
    p.height = 64;
    p.width = 64;
    p.seed = 123;
    const auto empty = generate_corpus(0, p, dir0.string());
    CHECK(empty.empty());
    CHECK(load_manifest((dir0 / "manifest.json").string()).empty());

    const auto dir1 = temp_dir("cabr_t_corpus1");
    const auto items = generate_corpus(3, p, dir1.string(), 2);
    REQUIRE(items.size() == 3);
    for (const auto& item : items) {
        CHECK(std::filesystem::exists(item.image_path));
        CHECK(std::filesystem::exists(item.mask_path));
        CHECK(std::filesystem::exists(item.label_path));
        CHECK(load_labels(item.label_path).count_set() == 0);
    }
    const auto reloaded = load_manifest((dir1 / "manifest.json").string());
    REQUIRE(reloaded.size() == 3);
    CHECK(reloaded[1].seed == p.seed + 1);

    // regeneration is byte-identical
    const auto dir2 = temp_dir("cabr_t_corpus2");
    const auto again = generate_corpus(3, p, dir2.string(), 1);
    for (std::size_t i = 0; i < items.size(); ++i) {
        CHECK(read_bytes(items[i].image_path) == read_bytes(again[i].image_path));
        CHECK(read_bytes(items[i].mask_path) == read_bytes(again[i].mask_path));
    }
}

TEST_CASE("phantom params validation") {
    PhantomParams p;
    p.thickness_max = 200;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    p = {};
    p.vessel_count_min = 5;
    p.vessel_count_max = 2;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    p = {};
    p.background_sigma = -1;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
}

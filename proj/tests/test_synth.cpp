#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "cabr/synth.hpp"

using namespace cabr;

namespace {

// 16x16 image holding every intensity exactly once.
OctaImage full_range_image() {
    OctaImage img(16, 16);
    std::iota(img.data.begin(), img.data.end(), 0);
    return img;
}

// Checks one remapped value against its step's target interval; degenerate
// (empty) intervals collapse to their lower endpoint.
void check_containment(int input, int output, const Breakpoints& bp) {
    if (input < bp.t_low || (bp.t_low == bp.t_high && input <= bp.t_high)) {
        if (bp.l_t > bp.b) {
            CHECK(output >= bp.b);
            CHECK(output < bp.l_t);
        } else {
            CHECK(output == bp.b);
        }
    } else if (input < bp.t_high) {
        if (bp.h_t > bp.l_t) {
            CHECK(output >= bp.l_t);
            CHECK(output < bp.h_t);
        } else {
            CHECK(output == bp.l_t);
        }
    } else {
        if (bp.i_max > bp.h_t) {
            CHECK(output >= bp.h_t);
            CHECK(output < bp.i_max);
        } else {
            CHECK(output == bp.h_t);
        }
    }
}

}  // namespace

TEST_CASE("breakpoints from the uniform multiset") {
    const OctaImage img = full_range_image();
    const Breakpoints bp = compute_breakpoints(img, SynthParams{});
    CHECK(bp.t_low == 25);
    CHECK(bp.t_high == 217);
    CHECK(bp.b == 76);
    CHECK(bp.l_t == 127);
    CHECK(bp.h_t == 230);  // ceil(0.9*256)-1 = index 230
    CHECK(bp.i_max == 255);
}

TEST_CASE("breakpoints degenerate cases") {
    OctaImage constant(4, 4, 42);
    const Breakpoints bp = compute_breakpoints(constant, SynthParams{});
    CHECK(bp.t_low == 42);
    CHECK(bp.t_high == 42);
    CHECK(bp.b == 42);
    CHECK(bp.l_t == 42);
    CHECK(bp.h_t == 42);
    CHECK(bp.i_max == 42);

    OctaImage two(2, 2);
    two.data = {0, 0, 255, 255};
    SynthParams p;
    p.p_low = 10;
    CHECK(compute_breakpoints(two, p).t_low == 0);
}

TEST_CASE("synth params invariants are enforced") {
    SynthParams p;
    p.p_low = 90;
    p.p_high = 85;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    p = {};
    p.sigma = -1;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
    p = {};
    p.p_base = 60;
    CHECK_THROWS_AS(p.validate(), ArgumentError);
}

TEST_CASE("adbma leaves unlabeled rows untouched") {
    const OctaImage img = full_range_image();
    const Breakpoints bp = compute_breakpoints(img, SynthParams{});
    Rng rng(5);

    CHECK(adbma_stripe(img, RowLabels(16, 0), bp, 8.0, rng).data == img.data);

    RowLabels some(16, 0);
    some.labels[3] = some.labels[4] = 1;
    const OctaImage out = adbma_stripe(img, some, bp, 8.0, rng);
    for (int y = 0; y < 16; ++y) {
        if (some.labels[y]) {
            continue;
        }
        for (int x = 0; x < 16; ++x) {
            CHECK(out.at(y, x) == img.at(y, x));
        }
    }
}

TEST_CASE("adbma endpoint values at sigma=0") {
    const OctaImage img = full_range_image();
    const Breakpoints bp = compute_breakpoints(img, SynthParams{});
    RowLabels all(16, 1);
    Rng rng(6);
    const OctaImage out = adbma_stripe(img, all, bp, 0.0, rng);
    // input equal to t_low maps exactly onto l_t
    CHECK(out.data[bp.t_low] == bp.l_t);
    // the maximum lands on the first integer below i_max under the 1/256 shrink
    CHECK(out.data[255] == bp.i_max - 1);
}

TEST_CASE("adbma containment, uplift and order at sigma=0") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng img_rng(100 + seed);
        OctaImage img(16, 32);
        std::uniform_int_distribution<int> pix(0, 255);
        for (auto& v : img.data) {
            v = static_cast<std::uint8_t>(pix(img_rng));
        }
        // make the sweep exhaustive over all 256 intensities
        for (int i = 0; i < 256; ++i) {
            img.data[i] = static_cast<std::uint8_t>(i);
        }
        const Breakpoints bp = compute_breakpoints(img, SynthParams{});
        RowLabels all(16, 1);
        Rng rng(seed);
        const OctaImage out = adbma_stripe(img, all, bp, 0.0, rng);
        for (std::size_t i = 0; i < img.data.size(); ++i) {
            check_containment(img.data[i], out.data[i], bp);
            CHECK(out.data[i] >= std::min<int>(bp.b, img.data[i]));
        }
        // order preservation within steps 2 and 3
        auto step_of = [&](int p) {
            if (p < bp.t_low || (bp.t_low == bp.t_high && p <= bp.t_high)) return 1;
            return p < bp.t_high ? 2 : 3;
        };
        for (int step : {2, 3}) {
            int prev_out = -1;
            for (int p = 0; p < 256; ++p) {
                if (step_of(p) != step) {
                    continue;
                }
                const auto it = std::find(img.data.begin(), img.data.end(),
                                          static_cast<std::uint8_t>(p));
                const int o = out.data[static_cast<std::size_t>(it - img.data.begin())];
                CHECK(o >= prev_out);
                prev_out = o;
            }
        }
    }
}

TEST_CASE("adbma is deterministic under a fixed seed") {
    const OctaImage img = full_range_image();
    const Breakpoints bp = compute_breakpoints(img, SynthParams{});
    RowLabels all(16, 1);
    Rng a(9), b(9);
    CHECK(adbma_stripe(img, all, bp, 8.0, a).data == adbma_stripe(img, all, bp, 8.0, b).data);
}

TEST_CASE("adbma shape mismatch") {
    const OctaImage img = full_range_image();
    const Breakpoints bp = compute_breakpoints(img, SynthParams{});
    Rng rng(1);
    CHECK_THROWS_AS(adbma_stripe(img, RowLabels(5, 1), bp, 0.0, rng), ArgumentError);
}

TEST_CASE("gauss stripe") {
    const OctaImage img = full_range_image();
    RowLabels all(16, 1);
    Rng rng(2);
    CHECK(gauss_stripe(img, all, 0.0, 0.0, rng).data == img.data);
    CHECK(gauss_stripe(img, RowLabels(16, 0), 0.0, 100.0, rng).data == img.data);

    OctaImage px(1, 1, 200);
    CHECK(gauss_stripe(px, RowLabels(1, 1), 0.0, 100.0, rng).data[0] == 255);
}

TEST_CASE("center stripe placement") {
    Rng rng(3);
    RowLabels one = sample_center_stripe(64, 1, 1, rng);
    CHECK(one.count_set() == 1);
    CHECK(one.labels[31] == 1);

    RowLabels eleven = sample_center_stripe(64, 11, 11, rng);
    CHECK(eleven.count_set() == 11);
    for (int y = 26; y <= 36; ++y) {
        CHECK(eleven.labels[y] == 1);
    }

    RowLabels wide = sample_center_stripe(4, 3, 3, rng);
    CHECK(wide.labels == std::vector<std::uint8_t>{1, 1, 1, 0});

    CHECK(sample_center_stripe(8, 0, 0, rng).count_set() == 0);
    CHECK_THROWS_AS(sample_center_stripe(8, 1, 8, rng), ArgumentError);
    CHECK_THROWS_AS(sample_center_stripe(8, 3, 2, rng), ArgumentError);
}

TEST_CASE("random row blocks") {
    Rng rng(4);
    CHECK(sample_random_rows(50, 0, 0, rng).count_set() == 0);
    const RowLabels l20 = sample_random_rows(100, 20, 20, rng);
    CHECK(l20.count_set() == 20);
    // contiguous
    const auto first = std::find(l20.labels.begin(), l20.labels.end(), 1);
    const auto last = std::find(l20.labels.rbegin(), l20.labels.rend(), 1);
    CHECK(std::distance(first, last.base()) == 20);
    CHECK(sample_random_rows(10, 100, 100, rng).count_set() == 10);
    CHECK_THROWS_AS(sample_random_rows(10, 30, 20, rng), ArgumentError);
}

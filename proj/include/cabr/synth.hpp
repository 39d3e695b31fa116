#pragma once

#include <optional>
#include <vector>

#include "cabr/image.hpp"

namespace cabr {

/// Percentile hyperparameters of the adaptive stripe synthesis.
/// (p_low, p_high) split the source intensities; (p_base, p_low_t, p_high_t)
/// define the target intervals.
struct SynthParams {
    double p_low = 10.0;
    double p_high = 85.0;
    double p_base = 30.0;
    double p_low_t = 50.0;
    double p_high_t = 90.0;
    double sigma = 8.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Concrete intensity thresholds realized from SynthParams on one image.
struct Breakpoints {
    int t_low = 0;   // source split: below -> step 1
    int t_high = 0;  // source split: at or above -> step 3
    int b = 0;       // target base
    int l_t = 0;     // target low
    int h_t = 0;     // target high
    int i_max = 0;   // image maximum
};

/// Per-pixel record of the remapping, for distribution checks.
struct AdbmaTrace {
    struct Entry {
        int step;         // 1..3
        double pre_clip;  // affine target plus noise, before rounding/clipping
        int lo;           // target interval [lo, hi); lo==hi marks a point
        int hi;
    };
    std::vector<Entry> entries;
};

Breakpoints compute_breakpoints(const OctaImage& image, const SynthParams& params);

/// Remap the intensities of rows with label 1:
///   step 1: p < t_low          -> uniform integer in [b, l_t)
///   step 2: t_low <= p < t_high -> affine onto [l_t, h_t) plus N(0,sigma)
///   step 3: p >= t_high         -> affine onto [h_t, i_max) (1/256-shrunk) plus N(0,sigma)
///   step 4: round to nearest even, clip to [0,255]
/// With sigma=0 the rounded result is clamped into its half-open target interval.
OctaImage adbma_stripe(const OctaImage& image, const RowLabels& rows, const Breakpoints& bp,
                       double sigma, Rng& rng, AdbmaTrace* trace = nullptr);

/// Ablation baseline: selected pixels become clip(round(p + offset + N(0,sigma))).
OctaImage gauss_stripe(const OctaImage& image, const RowLabels& rows, double sigma, double offset,
                       Rng& rng);

/// Offset that lifts a Gaussian stripe to artifact-like brightness.
double gauss_default_offset(const OctaImage& image);

/// Centered stripe of uniform random width in [width_min, width_max].
RowLabels sample_center_stripe(int patch_height, int width_min, int width_max, Rng& rng);

/// Contiguous block covering a uniform random fraction (percent) of the rows.
RowLabels sample_random_rows(int patch_height, double fraction_min, double fraction_max, Rng& rng);

}  // namespace cabr

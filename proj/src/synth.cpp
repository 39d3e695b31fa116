#include "cabr/synth.hpp"

#include <algorithm>
#include <cmath>

namespace cabr {

void SynthParams::validate() const {
    if (!(0.0 <= p_low && p_low < p_high && p_high <= 100.0)) {
        throw ArgumentError("SynthParams: need 0 <= p_low < p_high <= 100");
    }
    if (!(0.0 <= p_base && p_base < p_low_t && p_low_t < p_high_t && p_high_t <= 100.0)) {
        throw ArgumentError("SynthParams: need 0 <= p_base < p_low_t < p_high_t <= 100");
    }
    if (sigma < 0.0) {
        throw ArgumentError("SynthParams: sigma must be >= 0");
    }
}

Breakpoints compute_breakpoints(const OctaImage& image, const SynthParams& params) {
    params.validate();
    Breakpoints bp;
    bp.t_low = percentile(image, params.p_low);
    bp.t_high = percentile(image, params.p_high);
    bp.b = percentile(image, params.p_base);
    bp.l_t = percentile(image, params.p_low_t);
    bp.h_t = percentile(image, params.p_high_t);
    bp.i_max = *std::max_element(image.data.begin(), image.data.end());
    return bp;
}

namespace {

constexpr double kEps = 1.0 / 256.0;

inline int round_clip255(double v) {
    const double r = std::nearbyint(v);  // default mode: to nearest even
    return static_cast<int>(std::clamp(r, 0.0, 255.0));
}

}  // namespace

OctaImage adbma_stripe(const OctaImage& image, const RowLabels& rows, const Breakpoints& bp,
                       double sigma, Rng& rng, AdbmaTrace* trace) {
    if (rows.size() != image.height) {
        throw ArgumentError("adbma_stripe: label length " + std::to_string(rows.size()) +
                            " != image height " + std::to_string(image.height));
    }
    if (sigma < 0.0) {
        throw ArgumentError("adbma_stripe: sigma must be >= 0");
    }
    OctaImage out = image;
    std::uniform_int_distribution<int> step1(bp.b, std::max(bp.b, bp.l_t - 1));
    std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);

    for (int y = 0; y < image.height; ++y) {
        if (!rows.labels[y]) {
            continue;
        }
        for (int x = 0; x < image.width; ++x) {
            const int p = image.at(y, x);
            int step;
            double target;
            int lo, hi;
            // t_low == t_high routes everything at or below through step 1.
            if (p < bp.t_low || (bp.t_low == bp.t_high && p <= bp.t_high)) {
                step = 1;
                target = step1(rng);
                lo = bp.b;
                hi = bp.l_t;
            } else if (p < bp.t_high) {
                step = 2;
                target = bp.l_t + static_cast<double>(p - bp.t_low) * (bp.h_t - bp.l_t) /
                                      (bp.t_high - bp.t_low);
                lo = bp.l_t;
                hi = bp.h_t;
            } else {
                step = 3;
                if (bp.i_max == bp.t_high) {
                    target = bp.h_t;
                } else {
                    target = bp.h_t + static_cast<double>(p - bp.t_high) * (bp.i_max - bp.h_t) *
                                          (1.0 - kEps) / (bp.i_max - bp.t_high);
                }
                lo = bp.h_t;
                hi = bp.i_max;
            }
            if (step != 1 && sigma > 0.0) {
                target += noise(rng);
            }
            if (trace) {
                trace->entries.push_back({step, target, lo, hi});
            }
            int v = round_clip255(target);
            if (sigma == 0.0 && hi > lo) {
                v = std::clamp(v, lo, hi - 1);
            }
            out.at(y, x) = static_cast<std::uint8_t>(v);
        }
    }
    return out;
}

OctaImage gauss_stripe(const OctaImage& image, const RowLabels& rows, double sigma, double offset,
                       Rng& rng) {
    if (rows.size() != image.height) {
        throw ArgumentError("gauss_stripe: label length " + std::to_string(rows.size()) +
                            " != image height " + std::to_string(image.height));
    }
    if (sigma < 0.0) {
        throw ArgumentError("gauss_stripe: sigma must be >= 0");
    }
    OctaImage out = image;
    std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
    for (int y = 0; y < image.height; ++y) {
        if (!rows.labels[y]) {
            continue;
        }
        for (int x = 0; x < image.width; ++x) {
            double v = image.at(y, x) + offset;
            if (sigma > 0.0) {
                v += noise(rng);
            }
            out.at(y, x) = static_cast<std::uint8_t>(round_clip255(v));
        }
    }
    return out;
}

double gauss_default_offset(const OctaImage& image) {
    return percentile(image, 90.0) - percentile(image, 50.0);
}

RowLabels sample_center_stripe(int patch_height, int width_min, int width_max, Rng& rng) {
    if (width_min < 0 || width_min > width_max || width_max >= patch_height) {
        throw ArgumentError("sample_center_stripe: need 0 <= width_min <= width_max < patch_height");
    }
    std::uniform_int_distribution<int> dist(width_min, width_max);
    const int w = dist(rng);
    RowLabels labels(patch_height);
    const int start = (patch_height - w) / 2;
    for (int i = 0; i < w; ++i) {
        labels.labels[start + i] = 1;
    }
    return labels;
}

RowLabels sample_random_rows(int patch_height, double fraction_min, double fraction_max, Rng& rng) {
    if (!(0.0 <= fraction_min && fraction_min <= fraction_max && fraction_max <= 100.0)) {
        throw ArgumentError("sample_random_rows: need 0 <= fraction_min <= fraction_max <= 100");
    }
    std::uniform_real_distribution<double> fdist(fraction_min, fraction_max);
    const double f = fraction_min == fraction_max ? fraction_min : fdist(rng);
    const int count = std::clamp(
        static_cast<int>(std::lround(f * patch_height / 100.0)), 0, patch_height);
    RowLabels labels(patch_height);
    if (count == 0) {
        return labels;
    }
    std::uniform_int_distribution<int> sdist(0, patch_height - count);
    const int start = sdist(rng);
    for (int i = 0; i < count; ++i) {
        labels.labels[start + i] = 1;
    }
    return labels;
}

}  // namespace cabr

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cabr/common.hpp"

namespace cabr {

/// 8-bit grayscale intensity field, row-major.
struct OctaImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    OctaImage() = default;
    OctaImage(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
};

/// Binary vasculature mask, values in {0,1}, row-major.
struct VesselMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> data;

    VesselMask() = default;
    VesselMask(int h, int w, std::uint8_t fill = 0)
        : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return data.size(); }
};

/// Per-row artifact indicator, length = image height. labels[i]=1 marks a BMA row.
struct RowLabels {
    std::vector<std::uint8_t> labels;

    RowLabels() = default;
    explicit RowLabels(int h, std::uint8_t fill = 0) : labels(h, fill) {}

    int size() const { return static_cast<int>(labels.size()); }
    bool any() const;
    int count_set() const;
};

/// Horizontal-derivative response map; signed only in Naive mode.
struct GradientMap {
    int height = 0;
    int width = 0;
    std::vector<float> data;

    GradientMap() = default;
    GradientMap(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0.f) {}

    float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

enum class GsMode { Naive, Abs, AbsBma };

// ---- file I/O (binary PGM P5, maxval 255; labels one '0'/'1' per line) ----

OctaImage load_image_pgm(const std::string& path);
VesselMask load_mask_pgm(const std::string& path);  // binarized at threshold 128
void write_pgm(const OctaImage& image, const std::string& path);
void write_pgm(const VesselMask& mask, const std::string& path);  // stored as 0/255

RowLabels load_labels(const std::string& path);
void write_labels(const RowLabels& labels, const std::string& path);

/// Color PPM with the enhanced intensities in gray and BMA rows tinted red.
void write_overlay_ppm(const OctaImage& image, const RowLabels& labels, const std::string& path);

// ---- statistics and filters ----

/// Nearest-rank percentile over all pixels: sorted[ceil(k/100*N)-1], clamped.
int percentile(const OctaImage& image, double k);

/// 3x3 x-derivative Sobel response with reflection borders, exact integer arithmetic.
/// Kernel rows sum to zero, so adding a per-row constant leaves the response unchanged.
std::vector<std::int64_t> sobel_x_response(std::span<const std::int64_t> data, int height, int width);

GradientMap sobel_horizontal_gradient(const OctaImage& image);

/// Sobel response shaped per mode and scaled to [-1,1] by the global max |response|.
GradientMap gradient_statistics(const OctaImage& image, const RowLabels& labels, GsMode mode);

/// Broadcast row labels into an HxW binary map.
VesselMask stripe_map(const RowLabels& labels, int width);

/// Label rows whose mean exceeds the median row mean by z robust standard
/// deviations (1.4826*MAD). With MAD=0, any strictly positive deviation counts
/// (unless z is infinite).
RowLabels detect_bma_rows(const OctaImage& image, double z_threshold);

/// Elementwise product of image and mask.
OctaImage enhance(const OctaImage& image, const VesselMask& mask);

/// Mirror rows without repeating the edge row: padded row -1 equals source row 1.
OctaImage reflect_pad_rows(const OctaImage& image, int top, int bottom);
VesselMask reflect_pad_rows(const VesselMask& mask, int top, int bottom);

/// Fold an arbitrary integer index into [0, n) by reflection without edge repeat.
int reflect_index(int i, int n);

}  // namespace cabr

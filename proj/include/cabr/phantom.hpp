#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cabr/image.hpp"

namespace cabr {

/// Synthetic vessel-image generator parameters.
struct PhantomParams {
    int height = 496;
    int width = 496;
    int vessel_count_min = 10;
    int vessel_count_max = 22;
    int thickness_min = 1;
    int thickness_max = 8;
    int peak_min = 140;
    int peak_max = 255;
    int background_level = 32;
    double background_sigma = 10.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Point sequence of one smoothed vessel centerline.
using VesselPath = std::vector<std::pair<double, double>>;  // (y, x)

/// Stamps one vessel with a Gaussian cross-section into the float field and
/// marks the mask where the profile exceeds 25% of the peak (distance < t/2).
void render_vessel(std::vector<float>& field, std::vector<std::uint8_t>& mask_data, int height,
                   int width, const VesselPath& path, double thickness, double peak);

/// Catmull-Rom smoothed random-walk centerline through `waypoints` points.
VesselPath random_vessel_path(int height, int width, int waypoints, Rng& rng);

/// Draws random curvilinear vessels over a noisy background. The mask comes
/// from the noiseless field, so it is independent of the background draw.
std::pair<OctaImage, VesselMask> generate_phantom(const PhantomParams& params, Rng& rng);

struct CorpusItem {
    std::string id;
    std::string image_path;
    std::string mask_path;
    std::string label_path;
    std::string gt_path;  // equals mask_path for clean corpora
    std::uint64_t seed = 0;
};

/// Writes n (image, mask) PGM pairs with all-clear label files plus a JSON
/// manifest. Item seeds derive from params.seed, so a manifest regenerates
/// byte-identically.
std::vector<CorpusItem> generate_corpus(int n, const PhantomParams& params,
                                        const std::string& out_dir, int threads = 1);

std::vector<CorpusItem> load_manifest(const std::string& path);
void write_manifest(const std::vector<CorpusItem>& items, const std::string& path);

}  // namespace cabr

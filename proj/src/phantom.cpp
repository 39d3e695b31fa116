#include "cabr/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace cabr {

void PhantomParams::validate() const {
    if (height < 8 || width < 8) {
        throw ArgumentError("PhantomParams: height and width must be >= 8");
    }
    if (vessel_count_min < 0 || vessel_count_min > vessel_count_max) {
        throw ArgumentError("PhantomParams: bad vessel_count range");
    }
    if (thickness_min < 1 || thickness_min > thickness_max || thickness_max >= height / 4) {
        throw ArgumentError("PhantomParams: thickness range must be within [1, height/4)");
    }
    if (peak_min < 0 || peak_min > peak_max || peak_max > 255) {
        throw ArgumentError("PhantomParams: peak range must be within [0,255]");
    }
    if (background_level < 0 || background_level > 255) {
        throw ArgumentError("PhantomParams: background_level must be in [0,255]");
    }
    if (background_sigma < 0.0) {
        throw ArgumentError("PhantomParams: background_sigma must be >= 0");
    }
}

VesselPath random_vessel_path(int height, int width, int waypoints, Rng& rng) {
    std::uniform_real_distribution<double> uy(-0.1 * height, 1.1 * height);
    std::uniform_real_distribution<double> ux(-0.1 * width, 1.1 * width);
    std::vector<std::pair<double, double>> pts(waypoints);
    for (auto& p : pts) {
        p = {uy(rng), ux(rng)};
    }
    // Catmull-Rom through the waypoints, endpoints duplicated.
    auto point = [&](int i) {
        return pts[std::clamp(i, 0, waypoints - 1)];
    };
    VesselPath path;
    for (int seg = 0; seg < waypoints - 1; ++seg) {
        const auto [y0, x0] = point(seg - 1);
        const auto [y1, x1] = point(seg);
        const auto [y2, x2] = point(seg + 1);
        const auto [y3, x3] = point(seg + 2);
        const double chord = std::hypot(y2 - y1, x2 - x1);
        const int steps = std::max(2, static_cast<int>(std::ceil(chord / 0.4)));
        for (int s = 0; s < steps; ++s) {
            const double t = static_cast<double>(s) / steps;
            const double t2 = t * t, t3 = t2 * t;
            const double y = 0.5 * ((2 * y1) + (-y0 + y2) * t +
                                    (2 * y0 - 5 * y1 + 4 * y2 - y3) * t2 +
                                    (-y0 + 3 * y1 - 3 * y2 + y3) * t3);
            const double x = 0.5 * ((2 * x1) + (-x0 + x2) * t +
                                    (2 * x0 - 5 * x1 + 4 * x2 - x3) * t2 +
                                    (-x0 + 3 * x1 - 3 * x2 + x3) * t3);
            path.emplace_back(y, x);
        }
    }
    return path;
}

void render_vessel(std::vector<float>& field, std::vector<std::uint8_t>& mask_data, int height,
                   int width, const VesselPath& path, double thickness, double peak) {
    // Gaussian cross-section whose 25%-of-peak contour sits at distance t/2.
    const double sigma = thickness / (2.0 * std::sqrt(2.0 * std::log(4.0)));
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double half = thickness / 2.0;
    const int radius = std::max(2, static_cast<int>(std::ceil(3.2 * sigma)));
    for (const auto& [cy, cx] : path) {
        const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - radius);
        const int y1 = std::min(height - 1, static_cast<int>(std::ceil(cy)) + radius);
        const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - radius);
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(cx)) + radius);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double dy = y - cy;
                const double dx = x - cx;
                const double d2 = dy * dy + dx * dx;
                const float v = static_cast<float>(peak * std::exp(-d2 * inv2s2));
                auto& cell = field[static_cast<std::size_t>(y) * width + x];
                cell = std::max(cell, v);
                if (d2 < half * half) {
                    mask_data[static_cast<std::size_t>(y) * width + x] = 1;
                }
            }
        }
    }
}

std::pair<OctaImage, VesselMask> generate_phantom(const PhantomParams& params, Rng& rng) {
    params.validate();
    const int h = params.height;
    const int w = params.width;
    std::vector<float> field(static_cast<std::size_t>(h) * w, 0.f);
    VesselMask mask(h, w);

    std::uniform_int_distribution<int> count_dist(params.vessel_count_min, params.vessel_count_max);
    std::uniform_int_distribution<int> thick_dist(params.thickness_min, params.thickness_max);
    std::uniform_int_distribution<int> peak_dist(params.peak_min, params.peak_max);
    std::uniform_int_distribution<int> waypoint_dist(5, 9);

    const int count = count_dist(rng);
    for (int i = 0; i < count; ++i) {
        const int thickness = thick_dist(rng);
        const int peak = peak_dist(rng);
        const VesselPath path = random_vessel_path(h, w, waypoint_dist(rng), rng);
        render_vessel(field, mask.data, h, w, path, thickness, peak);
    }

    OctaImage img(h, w);
    std::normal_distribution<double> noise(0.0, params.background_sigma);
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = params.background_level + field[i];
        if (params.background_sigma > 0.0) {
            v += noise(rng);
        }
        img.data[i] = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
    }
    return {std::move(img), std::move(mask)};
}

std::vector<CorpusItem> generate_corpus(int n, const PhantomParams& params,
                                        const std::string& out_dir, int threads) {
    if (n < 0) {
        throw ArgumentError("generate_corpus: n must be >= 0");
    }
    params.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError(out_dir + ": cannot create directory: " + ec.message());
    }

    std::vector<CorpusItem> items(n);
    for (int i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "phantom_%04d", i);
        CorpusItem& item = items[i];
        item.id = buf;
        item.image_path = (fs::path(out_dir) / (item.id + ".pgm")).string();
        item.mask_path = (fs::path(out_dir) / (item.id + "_mask.pgm")).string();
        item.label_path = (fs::path(out_dir) / (item.id + "_labels.txt")).string();
        item.gt_path = item.mask_path;
        item.seed = params.seed + static_cast<std::uint64_t>(i);
    }

    auto render_item = [&](int i) {
        PhantomParams p = params;
        p.seed = items[i].seed;
        Rng rng(p.seed);
        auto [img, mask] = generate_phantom(p, rng);
        write_pgm(img, items[i].image_path);
        write_pgm(mask, items[i].mask_path);
        write_labels(RowLabels(img.height, 0), items[i].label_path);
    };
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) {
            render_item(i);
        }
    } else {
        std::vector<std::thread> pool;
        const int t = std::min(threads, n);
        for (int ti = 0; ti < t; ++ti) {
            pool.emplace_back([&, ti]() {
                for (int i = ti; i < n; i += t) {
                    render_item(i);
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
    }

    write_manifest(items, (fs::path(out_dir) / "manifest.json").string());
    return items;
}

std::vector<CorpusItem> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(path + ": cannot open for reading");
    }
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": manifest is not valid JSON: " + e.what());
    }
    if (!j.is_array()) {
        throw FormatError(path + ": manifest must be a JSON array");
    }
    std::vector<CorpusItem> items;
    for (const auto& e : j) {
        CorpusItem item;
        item.id = e.at("id").get<std::string>();
        item.image_path = e.at("image").get<std::string>();
        item.mask_path = e.at("mask").get<std::string>();
        item.label_path = e.at("labels").get<std::string>();
        item.gt_path = e.value("gt", item.mask_path);
        item.seed = e.value("seed", std::uint64_t{0});
        items.push_back(std::move(item));
    }
    return items;
}

void write_manifest(const std::vector<CorpusItem>& items, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& item : items) {
        nlohmann::json e = {{"id", item.id},
                            {"image", item.image_path},
                            {"mask", item.mask_path},
                            {"labels", item.label_path},
                            {"seed", item.seed}};
        if (item.gt_path != item.mask_path) {
            e["gt"] = item.gt_path;
        }
        j.push_back(std::move(e));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError(path + ": cannot open for writing");
    }
    out << j.dump(2) << "\n";
    if (!out) {
        throw IoError(path + ": write failed");
    }
}

}  // namespace cabr

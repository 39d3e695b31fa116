#include "cabr/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace cabr {

bool RowLabels::any() const {
    return std::any_of(labels.begin(), labels.end(), [](std::uint8_t v) { return v != 0; });
}

int RowLabels::count_set() const {
    return static_cast<int>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

// ---- PGM ----

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_pnm_token(std::istream& in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (!std::isspace(ch)) {
            tok.push_back(static_cast<char>(ch));
            while ((ch = in.peek()) != EOF && !std::isspace(ch)) {
                tok.push_back(static_cast<char>(in.get()));
            }
            return tok;
        }
    }
    return tok;
}

int parse_pnm_int(std::istream& in, const std::string& field, const std::string& path) {
    const std::string tok = next_pnm_token(in);
    if (tok.empty()) {
        throw FormatError(path + ": missing PGM field '" + field + "'");
    }
    for (char c : tok) {
        if (!std::isdigit(static_cast<unsigned char>(c))) {
            throw FormatError(path + ": PGM field '" + field + "' is not a number: '" + tok + "'");
        }
    }
    long v = std::strtol(tok.c_str(), nullptr, 10);
    if (v <= 0 || v > std::numeric_limits<int>::max()) {
        throw FormatError(path + ": PGM field '" + field + "' out of range: " + tok);
    }
    return static_cast<int>(v);
}

std::vector<std::uint8_t> load_pgm_payload(const std::string& path, int& height, int& width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError(path + ": cannot open for reading");
    }
    const std::string magic = next_pnm_token(in);
    if (magic != "P5") {
        throw FormatError(path + ": unsupported PGM magic '" + magic + "' (want binary P5)");
    }
    width = parse_pnm_int(in, "width", path);
    height = parse_pnm_int(in, "height", path);
    const int maxval = parse_pnm_int(in, "maxval", path);
    if (maxval != 255) {
        throw FormatError(path + ": PGM maxval must be 255, got " + std::to_string(maxval));
    }
    in.get();  // single whitespace byte after maxval
    std::vector<std::uint8_t> data(static_cast<std::size_t>(height) * width);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (static_cast<std::size_t>(in.gcount()) != data.size()) {
        throw FormatError(path + ": PGM payload truncated (expected " + std::to_string(data.size()) +
                          " bytes, got " + std::to_string(in.gcount()) + ")");
    }
    return data;
}

void write_pgm_payload(const std::string& path, int height, int width,
                       const std::uint8_t* data) {
    if (height <= 0 || width <= 0) {
        throw ArgumentError(path + ": refusing to write zero-size PGM");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(path + ": cannot open for writing");
    }
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(height) * width);
    if (!out) {
        throw IoError(path + ": write failed");
    }
}

}  // namespace

OctaImage load_image_pgm(const std::string& path) {
    OctaImage img;
    img.data = load_pgm_payload(path, img.height, img.width);
    return img;
}

VesselMask load_mask_pgm(const std::string& path) {
    VesselMask mask;
    mask.data = load_pgm_payload(path, mask.height, mask.width);
    for (auto& v : mask.data) {
        v = v >= 128 ? 1 : 0;
    }
    return mask;
}

void write_pgm(const OctaImage& image, const std::string& path) {
    write_pgm_payload(path, image.height, image.width, image.data.data());
}

void write_pgm(const VesselMask& mask, const std::string& path) {
    std::vector<std::uint8_t> bytes(mask.data.size());
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        bytes[i] = mask.data[i] ? 255 : 0;
    }
    write_pgm_payload(path, mask.height, mask.width, bytes.data());
}

RowLabels load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(path + ": cannot open for reading");
    }
    RowLabels labels;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        if (line != "0" && line != "1") {
            throw FormatError(path + ":" + std::to_string(lineno) +
                              ": label line must be '0' or '1', got '" + line + "'");
        }
        labels.labels.push_back(line == "1" ? 1 : 0);
    }
    return labels;
}

void write_labels(const RowLabels& labels, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError(path + ": cannot open for writing");
    }
    for (std::uint8_t v : labels.labels) {
        out << (v ? '1' : '0') << '\n';
    }
    if (!out) {
        throw IoError(path + ": write failed");
    }
}

void write_overlay_ppm(const OctaImage& image, const RowLabels& labels, const std::string& path) {
    if (labels.size() != image.height) {
        throw ArgumentError("overlay: label length " + std::to_string(labels.size()) +
                            " != image height " + std::to_string(image.height));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(path + ": cannot open for writing");
    }
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
        const bool stripe = labels.labels[y] != 0;
        for (int x = 0; x < image.width; ++x) {
            const std::uint8_t g = image.at(y, x);
            if (stripe) {
                row[3 * x + 0] = 255;
                row[3 * x + 1] = static_cast<std::uint8_t>(g / 2);
                row[3 * x + 2] = static_cast<std::uint8_t>(g / 2);
            } else {
                row[3 * x + 0] = row[3 * x + 1] = row[3 * x + 2] = g;
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) {
        throw IoError(path + ": write failed");
    }
}

// ---- statistics and filters ----

int percentile(const OctaImage& image, double k) {
    if (image.data.empty()) {
        throw ArgumentError("percentile: empty image");
    }
    if (!(k >= 0.0 && k <= 100.0)) {
        throw ArgumentError("percentile: k must be in [0,100], got " + std::to_string(k));
    }
    const auto n = static_cast<long long>(image.data.size());
    long long idx = static_cast<long long>(std::ceil(k * static_cast<double>(n) / 100.0)) - 1;
    idx = std::clamp<long long>(idx, 0, n - 1);
    std::vector<std::uint8_t> sorted(image.data);
    std::nth_element(sorted.begin(), sorted.begin() + idx, sorted.end());
    return sorted[static_cast<std::size_t>(idx)];
}

int reflect_index(int i, int n) {
    if (n == 1) {
        return 0;
    }
    const int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

std::vector<std::int64_t> sobel_x_response(std::span<const std::int64_t> data, int height, int width) {
    if (height < 3 || width < 3) {
        throw ArgumentError("sobel: image must be at least 3x3, got " + std::to_string(height) +
                            "x" + std::to_string(width));
    }
    std::vector<std::int64_t> out(static_cast<std::size_t>(height) * width);
    auto src = [&](int y, int x) -> std::int64_t {
        return data[static_cast<std::size_t>(reflect_index(y, height)) * width +
                    reflect_index(x, width)];
    };
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::int64_t r = (src(y - 1, x + 1) - src(y - 1, x - 1)) +
                                   2 * (src(y, x + 1) - src(y, x - 1)) +
                                   (src(y + 1, x + 1) - src(y + 1, x - 1));
            out[static_cast<std::size_t>(y) * width + x] = r;
        }
    }
    return out;
}

GradientMap sobel_horizontal_gradient(const OctaImage& image) {
    std::vector<std::int64_t> widened(image.data.begin(), image.data.end());
    const auto resp = sobel_x_response(widened, image.height, image.width);
    GradientMap map(image.height, image.width);
    for (std::size_t i = 0; i < resp.size(); ++i) {
        map.data[i] = static_cast<float>(resp[i]);
    }
    return map;
}

GradientMap gradient_statistics(const OctaImage& image, const RowLabels& labels, GsMode mode) {
    if (labels.size() != image.height) {
        throw ArgumentError("gradient_statistics: label length " + std::to_string(labels.size()) +
                            " != image height " + std::to_string(image.height));
    }
    GradientMap map = sobel_horizontal_gradient(image);
    float max_abs = 0.f;
    for (float v : map.data) {
        max_abs = std::max(max_abs, std::fabs(v));
    }
    const float scale = max_abs > 0.f ? 1.f / max_abs : 0.f;
    for (int y = 0; y < map.height; ++y) {
        const bool in_stripe = labels.labels[y] != 0;
        for (int x = 0; x < map.width; ++x) {
            float v = map.at(y, x) * scale;
            switch (mode) {
                case GsMode::Naive:
                    break;
                case GsMode::Abs:
                    v = std::fabs(v);
                    break;
                case GsMode::AbsBma:
                    v = in_stripe ? std::fabs(v) : 0.f;
                    break;
            }
            map.at(y, x) = v;
        }
    }
    return map;
}

VesselMask stripe_map(const RowLabels& labels, int width) {
    VesselMask map(labels.size(), width);
    for (int y = 0; y < map.height; ++y) {
        if (labels.labels[y]) {
            std::fill_n(map.data.begin() + static_cast<std::size_t>(y) * width, width, std::uint8_t{1});
        }
    }
    return map;
}

RowLabels detect_bma_rows(const OctaImage& image, double z_threshold) {
    if (image.height < 3) {
        throw ArgumentError("detect_bma_rows: need at least 3 rows");
    }
    std::vector<double> means(image.height);
    for (int y = 0; y < image.height; ++y) {
        long long sum = 0;
        for (int x = 0; x < image.width; ++x) {
            sum += image.at(y, x);
        }
        means[y] = static_cast<double>(sum) / image.width;
    }
    auto median_of = [](std::vector<double> v) {
        const std::size_t mid = v.size() / 2;
        std::nth_element(v.begin(), v.begin() + mid, v.end());
        double m = v[mid];
        if (v.size() % 2 == 0) {
            std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
            m = 0.5 * (m + v[mid - 1]);
        }
        return m;
    };
    const double med = median_of(means);
    std::vector<double> dev(means.size());
    for (std::size_t i = 0; i < means.size(); ++i) {
        dev[i] = std::fabs(means[i] - med);
    }
    const double mad = median_of(dev);

    RowLabels labels(image.height);
    for (int y = 0; y < image.height; ++y) {
        const double d = means[y] - med;
        bool hit;
        if (mad > 0.0) {
            hit = d > z_threshold * 1.4826 * mad;
        } else {
            // Degenerate spread: any strictly positive deviation counts.
            hit = !std::isinf(z_threshold) && d > 0.0;
        }
        labels.labels[y] = hit ? 1 : 0;
    }
    return labels;
}

OctaImage enhance(const OctaImage& image, const VesselMask& mask) {
    if (image.height != mask.height || image.width != mask.width) {
        throw ArgumentError("enhance: image and mask shapes differ");
    }
    OctaImage out(image.height, image.width);
    for (std::size_t i = 0; i < image.data.size(); ++i) {
        out.data[i] = mask.data[i] ? image.data[i] : 0;
    }
    return out;
}

namespace {

template <typename Grid>
Grid reflect_pad_rows_impl(const Grid& src, int top, int bottom, const char* what) {
    if (top < 0 || bottom < 0 || top >= src.height || bottom >= src.height) {
        throw ArgumentError(std::string(what) + ": padding must be in [0, height), got top=" +
                            std::to_string(top) + " bottom=" + std::to_string(bottom) +
                            " height=" + std::to_string(src.height));
    }
    Grid out(src.height + top + bottom, src.width);
    for (int y = 0; y < out.height; ++y) {
        const int sy = reflect_index(y - top, src.height);
        std::copy_n(src.data.begin() + static_cast<std::size_t>(sy) * src.width, src.width,
                    out.data.begin() + static_cast<std::size_t>(y) * src.width);
    }
    return out;
}

}  // namespace

OctaImage reflect_pad_rows(const OctaImage& image, int top, int bottom) {
    return reflect_pad_rows_impl(image, top, bottom, "reflect_pad_rows");
}

VesselMask reflect_pad_rows(const VesselMask& mask, int top, int bottom) {
    return reflect_pad_rows_impl(mask, top, bottom, "reflect_pad_rows");
}

}  // namespace cabr

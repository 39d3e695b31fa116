#include "cabr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

namespace cabr {

const char* subset_name(Subset s) {
    switch (s) {
        case Subset::Easy: return "easy";
        case Subset::Medium: return "medium";
        case Subset::Hard: return "hard";
    }
    return "easy";
}

namespace {

struct DiceCounts {
    long long inter = 0;
    long long pred = 0;
    long long gt = 0;
};

DiceCounts dice_counts(const VesselMask& pred, const VesselMask& gt, const RowLabels& labels) {
    if (pred.height != gt.height || pred.width != gt.width) {
        throw ArgumentError("dice_score: mask shapes differ");
    }
    if (labels.size() != pred.height) {
        throw ArgumentError("dice_score: label length != mask height");
    }
    DiceCounts c;
    for (int y = 0; y < pred.height; ++y) {
        if (!labels.labels[y]) {
            continue;
        }
        for (int x = 0; x < pred.width; ++x) {
            const int p = pred.at(y, x) ? 1 : 0;
            const int g = gt.at(y, x) ? 1 : 0;
            c.inter += p & g;
            c.pred += p;
            c.gt += g;
        }
    }
    return c;
}

double dice_from_counts(const DiceCounts& c) {
    if (c.pred == 0 && c.gt == 0) {
        return 1.0;
    }
    if (c.pred == 0 || c.gt == 0) {
        return 0.0;
    }
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.gt);
}

}  // namespace

double dice_score(const VesselMask& pred, const VesselMask& gt, const RowLabels& labels) {
    return dice_from_counts(dice_counts(pred, gt, labels));
}

double noise_level(const RowLabels& labels) {
    if (labels.size() == 0) {
        return 0.0;
    }
    return static_cast<double>(labels.count_set()) / labels.size();
}

Subset classify_subset(double noise) {
    if (noise < 0.02) {
        return Subset::Easy;
    }
    if (noise < 0.04) {
        return Subset::Medium;
    }
    return Subset::Hard;
}

EvalReport evaluate_dataset(const CabrNet& net, const std::vector<CorpusItem>& corpus,
                            const EvalOptions& options) {
    if (corpus.empty()) {
        throw ArgumentError("evaluate_dataset: empty corpus");
    }
    const int n = static_cast<int>(corpus.size());
    std::vector<EvalRecord> records(n);
    std::vector<DiceCounts> counts(n);

    auto eval_item = [&](int i, Workspace& ws) {
        const CorpusItem& item = corpus[i];
        const OctaImage image = load_image_pgm(item.image_path);
        const VesselMask mask = load_mask_pgm(item.mask_path);
        const VesselMask gt =
            item.gt_path == item.mask_path ? mask : load_mask_pgm(item.gt_path);
        RowLabels labels = load_labels(item.label_path);
        if (labels.size() != image.height) {
            throw FormatError(item.label_path + ": label count != image height");
        }
        const VesselMask pred =
            infer_image(net, mask, image, labels, options.window_height, ws);
        EvalRecord& rec = records[i];
        rec.id = item.id;
        rec.noise_level = noise_level(labels);
        rec.subset = classify_subset(rec.noise_level);
        counts[i] = dice_counts(pred, gt, labels);
        rec.dice = dice_from_counts(counts[i]);
    };

    if (options.threads <= 1 || n <= 1) {
        Workspace ws;
        for (int i = 0; i < n; ++i) {
            eval_item(i, ws);
        }
    } else {
        const int t = std::min(options.threads, n);
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(t);
        for (int ti = 0; ti < t; ++ti) {
            pool.emplace_back([&, ti]() {
                try {
                    Workspace ws;
                    for (int i = ti; i < n; i += t) {
                        eval_item(i, ws);
                    }
                } catch (...) {
                    errors[ti] = std::current_exception();
                }
            });
        }
        for (auto& th : pool) {
            th.join();
        }
        for (auto& e : errors) {
            if (e) {
                std::rethrow_exception(e);
            }
        }
    }

    EvalReport report;
    report.records = std::move(records);
    report.pooled = options.pooled;
    std::array<double, 4> sums{};
    std::array<DiceCounts, 4> pooled{};
    for (int i = 0; i < n; ++i) {
        const auto& rec = report.records[i];
        const int s = static_cast<int>(rec.subset);
        for (int slot : {s, 3}) {
            sums[slot] += rec.dice;
            ++report.count[slot];
            pooled[slot].inter += counts[i].inter;
            pooled[slot].pred += counts[i].pred;
            pooled[slot].gt += counts[i].gt;
        }
    }
    for (int s = 0; s < 4; ++s) {
        if (report.count[s] == 0) {
            report.mean[s] = std::numeric_limits<double>::quiet_NaN();
        } else if (options.pooled) {
            report.mean[s] = dice_from_counts(pooled[s]);
        } else {
            report.mean[s] = sums[s] / report.count[s];
        }
    }
    return report;
}

void write_eval_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError(path + ": cannot open for writing");
    }
    out << "id,noise_level,subset,dice\n";
    char buf[128];
    for (const auto& rec : report.records) {
        std::snprintf(buf, sizeof(buf), "%s,%.6f,%s,%.4f\n", rec.id.c_str(), rec.noise_level,
                      subset_name(rec.subset), rec.dice);
        out << buf;
    }
    if (!out) {
        throw IoError(path + ": write failed");
    }
}

namespace {

std::string format_mean(double v) {
    if (std::isnan(v)) {
        return "-";
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", 100.0 * v);
    return buf;
}

}  // namespace

std::string format_eval_table(const EvalReport& report) {
    static const char* names[4] = {"Easy", "Medium", "Hard", "All"};
    std::string out;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%-8s %8s %8s\n", "Subset", "Dice(%)", "Images");
    out += buf;
    for (int s = 0; s < 4; ++s) {
        std::snprintf(buf, sizeof(buf), "%-8s %8s %8d\n", names[s],
                      format_mean(report.mean[s]).c_str(), report.count[s]);
        out += buf;
    }
    return out;
}

std::string format_eval_diff(const EvalReport& a, const std::string& label_a, const EvalReport& b,
                             const std::string& label_b) {
    static const char* names[4] = {"Easy", "Medium", "Hard", "All"};
    std::string out;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-8s %12s %12s %8s\n", "Subset", label_a.c_str(),
                  label_b.c_str(), "Diff");
    out += buf;
    for (int s = 0; s < 4; ++s) {
        std::string diff = "-";
        if (!std::isnan(a.mean[s]) && !std::isnan(b.mean[s])) {
            char d[32];
            std::snprintf(d, sizeof(d), "%+.2f", 100.0 * (a.mean[s] - b.mean[s]));
            diff = d;
        }
        std::snprintf(buf, sizeof(buf), "%-8s %12s %12s %8s\n", names[s],
                      format_mean(a.mean[s]).c_str(), format_mean(b.mean[s]).c_str(), diff.c_str());
        out += buf;
    }
    return out;
}

std::vector<CorpusItem> make_striped_corpus(const std::vector<CorpusItem>& clean,
                                            const StripeSpec& spec, const std::string& out_dir) {
    if (spec.widths.empty() || spec.stripes_per_image < 1) {
        throw ArgumentError("make_striped_corpus: need at least one stripe width");
    }
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw IoError(out_dir + ": cannot create directory: " + ec.message());
    }
    std::vector<CorpusItem> out;
    Rng rng(spec.seed);
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const CorpusItem& src = clean[i];
        const OctaImage image = load_image_pgm(src.image_path);
        RowLabels labels(image.height);
        for (int s = 0; s < spec.stripes_per_image; ++s) {
            const int w = spec.widths[(i * spec.stripes_per_image + s) % spec.widths.size()];
            if (w <= 0 || w >= image.height) {
                throw ArgumentError("make_striped_corpus: stripe width out of range");
            }
            std::uniform_int_distribution<int> start_dist(0, image.height - w);
            const int start = start_dist(rng);
            for (int r = 0; r < w; ++r) {
                labels.labels[start + r] = 1;
            }
        }
        OctaImage corrupted;
        if (spec.gauss) {
            corrupted = gauss_stripe(image, labels, spec.synth.sigma, gauss_default_offset(image),
                                     rng);
        } else {
            const Breakpoints bp = compute_breakpoints(image, spec.synth);
            corrupted = adbma_stripe(image, labels, bp, spec.synth.sigma, rng);
        }

        CorpusItem item;
        item.id = src.id + "_bma";
        item.image_path = (fs::path(out_dir) / (item.id + ".pgm")).string();
        item.label_path = (fs::path(out_dir) / (item.id + "_labels.txt")).string();
        item.mask_path = src.mask_path;
        item.gt_path = src.gt_path;
        item.seed = spec.seed;
        write_pgm(corrupted, item.image_path);
        write_labels(labels, item.label_path);
        out.push_back(std::move(item));
    }
    write_manifest(out, (fs::path(out_dir) / "manifest.json").string());
    return out;
}

}  // namespace cabr

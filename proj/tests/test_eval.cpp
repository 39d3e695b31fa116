#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cabr/eval.hpp"

using namespace cabr;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::create_directories(dir);
    return dir;
}

// Set-based reference: collects restricted coordinates and intersects.
double dice_oracle(const VesselMask& pred, const VesselMask& gt, const RowLabels& labels) {
    std::vector<long long> a, b;
    for (int y = 0; y < pred.height; ++y) {
        if (!labels.labels[y]) {
            continue;
        }
        for (int x = 0; x < pred.width; ++x) {
            const long long key = static_cast<long long>(y) * pred.width + x;
            if (pred.at(y, x)) {
                a.push_back(key);
            }
            if (gt.at(y, x)) {
                b.push_back(key);
            }
        }
    }
    if (a.empty() && b.empty()) {
        return 1.0;
    }
    if (a.empty() || b.empty()) {
        return 0.0;
    }
    std::vector<long long> inter;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    return 2.0 * static_cast<double>(inter.size()) / static_cast<double>(a.size() + b.size());
}

}  // namespace

TEST_CASE("dice_score basics") {
    VesselMask gt(4, 4), pred(4, 4);
    RowLabels stripe(4, 0);
    stripe.labels[1] = stripe.labels[2] = 1;

    gt.at(1, 0) = gt.at(1, 1) = gt.at(2, 0) = gt.at(2, 3) = 1;
    pred = gt;
    pred.at(0, 0) = 1;  // outside the stripe, must not matter
    CHECK(dice_score(pred, gt, stripe) == 1.0);

    VesselMask disjoint(4, 4);
    disjoint.at(1, 2) = disjoint.at(2, 1) = 1;
    CHECK(dice_score(disjoint, gt, stripe) == 0.0);

    // |A| = |B| = 4, |A and B| = 2
    VesselMask half(4, 4);
    half.at(1, 0) = half.at(2, 0) = half.at(1, 3) = half.at(2, 2) = 1;
    CHECK(dice_score(half, gt, stripe) == doctest::Approx(0.5));

    CHECK(dice_score(VesselMask(4, 4), VesselMask(4, 4), stripe) == 1.0);
    CHECK(dice_score(half, VesselMask(4, 4), stripe) == 0.0);

    VesselMask wrong(3, 4);
    CHECK_THROWS_AS(dice_score(wrong, gt, stripe), ArgumentError);
}

TEST_CASE("dice_score matches the set oracle and is symmetric") {
    Rng rng(31);
    std::bernoulli_distribution bit(0.35);
    std::bernoulli_distribution row(0.4);
    for (int trial = 0; trial < 300; ++trial) {
        VesselMask a(8, 8), b(8, 8);
        RowLabels labels(8);
        for (auto& v : a.data) {
            v = bit(rng) ? 1 : 0;
        }
        for (auto& v : b.data) {
            v = bit(rng) ? 1 : 0;
        }
        for (auto& v : labels.labels) {
            v = row(rng) ? 1 : 0;
        }
        const double d = dice_score(a, b, labels);
        CHECK(d == dice_oracle(a, b, labels));
        CHECK(d == dice_score(b, a, labels));

        // relabeling non-stripe rows leaves the score unchanged
        VesselMask a2 = a;
        for (int y = 0; y < 8; ++y) {
            if (!labels.labels[y]) {
                for (int x = 0; x < 8; ++x) {
                    a2.at(y, x) ^= 1;
                }
            }
        }
        CHECK(dice_score(a2, b, labels) == d);
    }
}

TEST_CASE("noise level") {
    CHECK(noise_level(RowLabels(10, 0)) == 0.0);
    RowLabels two(100, 0);
    two.labels[3] = two.labels[50] = 1;
    CHECK(noise_level(two) == doctest::Approx(0.02));
    CHECK(noise_level(RowLabels(7, 1)) == 1.0);
}

TEST_CASE("subset thresholds are half-open exactly") {
    CHECK(classify_subset(0.019) == Subset::Easy);
    CHECK(classify_subset(0.02) == Subset::Medium);
    CHECK(classify_subset(0.04) == Subset::Hard);
    CHECK(classify_subset(std::nextafter(0.02, 0.0)) == Subset::Easy);
    CHECK(classify_subset(std::nextafter(0.02, 1.0)) == Subset::Medium);
    CHECK(classify_subset(std::nextafter(0.04, 0.0)) == Subset::Medium);
    CHECK(classify_subset(std::nextafter(0.04, 1.0)) == Subset::Hard);
    CHECK(classify_subset(0.0) == Subset::Easy);
    CHECK(classify_subset(1.0) == Subset::Hard);
}

TEST_CASE("evaluate_dataset on clean labels scores perfect recovery") {
    const auto dir = temp_dir("cabr_t_evalclean");
    OctaImage img(64, 32, 120);
    VesselMask mask(64, 32);
    mask.at(5, 5) = mask.at(20, 7) = 1;
    write_pgm(img, (dir / "img.pgm").string());
    write_pgm(mask, (dir / "mask.pgm").string());
    write_labels(RowLabels(64, 0), (dir / "labels.txt").string());
    CorpusItem item{"clean", (dir / "img.pgm").string(), (dir / "mask.pgm").string(),
                    (dir / "labels.txt").string(), (dir / "mask.pgm").string(), 0};

    Rng rng(41);
    CabrConfig mc;
    mc.base_channels = 4;
    CabrNet net = build_cabr(mc);
    net.init(rng);

    EvalOptions opts;
    opts.window_height = 16;
    const EvalReport report = evaluate_dataset(net, {item}, opts);
    REQUIRE(report.records.size() == 1);
    CHECK(report.records[0].dice == 1.0);
    CHECK(report.mean[3] == doctest::Approx(1.0));

    CHECK_THROWS_AS(evaluate_dataset(net, {}, opts), ArgumentError);
}

TEST_CASE("evaluate_dataset groups records into subsets") {
    const auto dir = temp_dir("cabr_t_evalgroup");
    Rng rng(42);
    std::uniform_int_distribution<int> pix(0, 255);
    std::bernoulli_distribution bit(0.3);

    std::vector<CorpusItem> corpus;
    const int stripe_rows[3] = {4, 14, 30};  // of 496 rows: easy, medium, hard
    for (int i = 0; i < 3; ++i) {
        OctaImage img(496, 64);
        for (auto& v : img.data) {
            v = static_cast<std::uint8_t>(pix(rng));
        }
        VesselMask mask(496, 64);
        for (auto& v : mask.data) {
            v = bit(rng) ? 1 : 0;
        }
        RowLabels labels(496, 0);
        for (int r = 0; r < stripe_rows[i]; ++r) {
            labels.labels[100 + r] = 1;
        }
        const std::string base = (dir / ("it" + std::to_string(i))).string();
        write_pgm(img, base + ".pgm");
        write_pgm(mask, base + "_mask.pgm");
        write_labels(labels, base + "_labels.txt");
        corpus.push_back({"it" + std::to_string(i), base + ".pgm", base + "_mask.pgm",
                          base + "_labels.txt", base + "_mask.pgm", 0});
    }

    CabrConfig mc;
    mc.base_channels = 4;
    CabrNet net = build_cabr(mc);
    net.init(rng);
    EvalOptions opts;
    opts.window_height = 64;
    opts.threads = 2;
    const EvalReport report = evaluate_dataset(net, corpus, opts);
    CHECK(report.count[0] == 1);
    CHECK(report.count[1] == 1);
    CHECK(report.count[2] == 1);
    CHECK(report.count[3] == 3);
    CHECK(report.records[0].subset == Subset::Easy);
    CHECK(report.records[1].subset == Subset::Medium);
    CHECK(report.records[2].subset == Subset::Hard);

    const auto csv_path = (dir / "report.csv").string();
    write_eval_csv(report, csv_path);
    std::ifstream csv(csv_path);
    std::string line;
    std::getline(csv, line);
    CHECK(line == "id,noise_level,subset,dice");
    int rows = 0;
    while (std::getline(csv, line)) {
        rows += !line.empty();
    }
    CHECK(rows == 3);

    const std::string table = format_eval_table(report);
    CHECK(table.find("Easy") != std::string::npos);
    CHECK(table.find("All") != std::string::npos);
    const std::string diff = format_eval_diff(report, "a", report, "b");
    CHECK(diff.find("+0.00") != std::string::npos);
}

TEST_CASE("striped corpus derives labels, keeps gt, and is seed-stable") {
    const auto dir = temp_dir("cabr_t_evalstrip");
    OctaImage img(64, 32);
    Rng rng(43);
    std::uniform_int_distribution<int> pix(0, 255);
    for (auto& v : img.data) {
        v = static_cast<std::uint8_t>(pix(rng));
    }
    VesselMask mask(64, 32);
    mask.at(3, 3) = 1;
    write_pgm(img, (dir / "c.pgm").string());
    write_pgm(mask, (dir / "c_mask.pgm").string());
    write_labels(RowLabels(64, 0), (dir / "c_labels.txt").string());
    const std::vector<CorpusItem> clean = {{"c", (dir / "c.pgm").string(),
                                            (dir / "c_mask.pgm").string(),
                                            (dir / "c_labels.txt").string(),
                                            (dir / "c_mask.pgm").string(), 0}};
    StripeSpec spec;
    spec.widths = {4};
    spec.seed = 9;
    const auto a = make_striped_corpus(clean, spec, (dir / "outa").string());
    const auto b = make_striped_corpus(clean, spec, (dir / "outb").string());
    REQUIRE(a.size() == 1);
    CHECK(a[0].gt_path == clean[0].gt_path);
    const RowLabels la = load_labels(a[0].label_path);
    CHECK(la.count_set() == 4);
    const OctaImage ia = load_image_pgm(a[0].image_path);
    const OctaImage ib = load_image_pgm(b[0].image_path);
    CHECK(ia.data == ib.data);
    // corrupted only inside the stripe
    for (int y = 0; y < 64; ++y) {
        if (!la.labels[y]) {
            for (int x = 0; x < 32; ++x) {
                CHECK(ia.at(y, x) == img.at(y, x));
            }
        }
    }
}

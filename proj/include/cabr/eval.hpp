#pragma once

#include <array>
#include <string>
#include <vector>

#include "cabr/model.hpp"
#include "cabr/phantom.hpp"
#include "cabr/synth.hpp"

namespace cabr {

enum class Subset { Easy, Medium, Hard };

const char* subset_name(Subset s);

/// Sorensen-Dice over pixels in rows with label 1 only. Both restricted sets
/// empty scores 1.0; exactly one empty scores 0.0.
double dice_score(const VesselMask& pred, const VesselMask& gt, const RowLabels& labels);

/// Fraction of BMA rows: count(l=1) / H.
double noise_level(const RowLabels& labels);

/// noise < 2% easy, 2% <= noise < 4% medium, noise >= 4% hard.
Subset classify_subset(double noise);

struct EvalRecord {
    std::string id;
    double noise_level = 0.0;
    Subset subset = Subset::Easy;
    double dice = 0.0;
};

struct EvalReport {
    std::vector<EvalRecord> records;
    // Means indexed Easy, Medium, Hard, All; NaN where a subset is empty.
    std::array<double, 4> mean{};
    std::array<int, 4> count{};
    bool pooled = false;
};

struct EvalOptions {
    int window_height = 64;
    int threads = 1;
    /// Pool intersection/size counts over images instead of averaging
    /// per-image Dice values.
    bool pooled = false;
};

EvalReport evaluate_dataset(const CabrNet& net, const std::vector<CorpusItem>& corpus,
                            const EvalOptions& options = {});

void write_eval_csv(const EvalReport& report, const std::string& path);
std::string format_eval_table(const EvalReport& report);
std::string format_eval_diff(const EvalReport& a, const std::string& label_a, const EvalReport& b,
                             const std::string& label_b);

struct StripeSpec {
    std::vector<int> widths = {1, 4, 8};
    int stripes_per_image = 1;
    SynthParams synth;
    bool gauss = false;  // corrupt with the Gaussian baseline instead
    std::uint64_t seed = 0;
};

/// Derives a striped evaluation corpus from a clean one: corrupted images,
/// label files marking the synthetic stripes, and gt entries pointing at the
/// clean masks. Widths cycle across images.
std::vector<CorpusItem> make_striped_corpus(const std::vector<CorpusItem>& clean,
                                            const StripeSpec& spec, const std::string& out_dir);

}  // namespace cabr

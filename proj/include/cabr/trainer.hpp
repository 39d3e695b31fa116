#pragma once

#include <string>
#include <vector>

#include "cabr/model.hpp"
#include "cabr/phantom.hpp"
#include "cabr/synth.hpp"

namespace cabr {

enum class SynthMode { AdBma, Gauss };

std::string synth_mode_name(SynthMode m);
SynthMode synth_mode_from_name(const std::string& name);

struct TrainConfig {
    int epochs = 1200;
    int steps_per_epoch = 50;
    int batch_size = 48;
    double lr = 1e-4;
    int plateau_patience = 20;
    int patch_h = 64;
    int patch_w = 496;
    int stripe_width_min = 1;
    int stripe_width_max = 11;
    SynthParams synth;
    SynthMode synth_mode = SynthMode::AdBma;
    std::uint64_t seed = 0;
    int threads = 1;
    /// Restrict the loss support to stripe rows (default: full patch).
    bool loss_stripe_only = false;
    int val_patches = 16;
    std::string log_path;         // per-epoch CSV, empty to skip
    std::string checkpoint_path;  // best checkpoint, empty to skip

    void validate() const;
};

/// In-memory training item: clean image, its mask, and real BMA row labels.
struct TrainItem {
    std::string id;
    OctaImage image;
    VesselMask mask;
    RowLabels labels;
};

std::vector<TrainItem> load_train_items(const std::vector<CorpusItem>& corpus);

/// One self-supervised sample: synthetically corrupted clear-area patch.
struct TrainSample {
    Tensor input;        // (1,4,ph,pw)
    Tensor target;       // (1,1,ph,pw) clean mask patch
    Tensor loss_weight;  // (1,1,ph,pw)
    RowLabels stripe;    // synthetic stripe rows within the patch
};

/// Samples a patch whose rows are all clear (rejection, <= 1000 tries),
/// lays a centered synthetic stripe, corrupts the image patch, recomputes the
/// gradient channel on the corrupted patch, and assembles the model input.
TrainSample extract_training_patch(const CabrNet& net, const TrainItem& item,
                                   const TrainConfig& cfg, Rng& rng);

/// Horizontal and vertical flips (p=0.5 each), applied consistently to every
/// channel, the target, the loss weight, and the stripe labels.
void augment(TrainSample& sample, Rng& rng);

/// Halves the learning rate after `patience` epochs without improvement.
struct PlateauScheduler {
    double lr = 1e-4;
    int patience = 20;
    int bad_epochs = 0;
    double best = -1.0;

    /// Observes one epoch's metric; returns the rate for the next epoch.
    double observe(double metric);
};

struct EpochLog {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_dice = 0.0;
};

struct TrainReport {
    std::vector<EpochLog> log;
    double best_val_dice = -1.0;
    int best_epoch = -1;
};

/// Initializes the net from cfg.seed and runs the self-supervised loop with a
/// masked Dice loss, Adam, and the plateau schedule. The net holds the best
/// parameters (by held-out synthetic-stripe Dice) on return. Deterministic for
/// a fixed thread count; gradients reduce in sample order, so any thread count
/// reproduces the single-threaded bytes.
TrainReport fit(CabrNet& net, const std::vector<TrainItem>& dataset, const TrainConfig& cfg);

void write_train_log(const TrainReport& report, const std::string& path);

}  // namespace cabr

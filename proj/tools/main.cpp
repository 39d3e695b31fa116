#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cabr/config.hpp"
#include "cabr/eval.hpp"
#include "cabr/gradcheck.hpp"
#include "cabr/image.hpp"
#include "cabr/model.hpp"
#include "cabr/phantom.hpp"
#include "cabr/synth.hpp"
#include "cabr/trainer.hpp"

namespace {

using namespace cabr;

RowLabels parse_rows(const std::string& spec, int height) {
    const auto colon = spec.find(':');
    if (colon == std::string::npos) {
        throw ArgumentError("--rows expects start:end, got '" + spec + "'");
    }
    const int a = std::stoi(spec.substr(0, colon));
    const int b = std::stoi(spec.substr(colon + 1));
    if (a < 0 || b <= a || b > height) {
        throw ArgumentError("--rows " + spec + " out of range for height " +
                            std::to_string(height));
    }
    RowLabels labels(height);
    for (int y = a; y < b; ++y) {
        labels.labels[y] = 1;
    }
    return labels;
}

std::vector<int> parse_widths(const std::string& csv) {
    std::vector<int> widths;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        const auto comma = csv.find(',', pos);
        const std::string tok = csv.substr(pos, comma == std::string::npos ? csv.size() - pos
                                                                           : comma - pos);
        widths.push_back(std::stoi(tok));
        if (comma == std::string::npos) {
            break;
        }
        pos = comma + 1;
    }
    if (widths.empty()) {
        throw ArgumentError("--widths must list at least one stripe width");
    }
    return widths;
}

struct CommonOpts {
    std::string config_path;
    std::string dump_config_path;
};

AppConfig resolve_config(const CommonOpts& opts) {
    return opts.config_path.empty() ? default_config() : load_config(opts.config_path);
}

void maybe_dump(const AppConfig& cfg, const CommonOpts& opts) {
    if (!opts.dump_config_path.empty()) {
        write_config(cfg, opts.dump_config_path);
    }
}

void add_common(CLI::App* sub, CommonOpts& opts) {
    sub->add_option("--config", opts.config_path, "JSON config file (flags win over it)");
    sub->add_option("--dump-config", opts.dump_config_path, "Write the effective config here");
}

}  // namespace

int main(int argc, char** argv) {
    blas::ensure_fast_kernels(argv);
    blas::set_threads(1);  // parallelism is worker-level, keep GEMMs single-threaded

    CLI::App app{"Content-aware bulk-motion-artifact removal for angiography-style images"};
    app.require_subcommand(1);

    // ---- phantom ----
    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic vessel corpus");
    CommonOpts phantom_common;
    add_common(phantom, phantom_common);
    int phantom_count = 0;
    std::string phantom_out;
    std::uint64_t phantom_seed = 0;
    int phantom_threads = 1;
    phantom->add_option("--count", phantom_count, "Number of phantoms")->required();
    phantom->add_option("--out", phantom_out, "Output directory")->required();
    auto* phantom_seed_opt = phantom->add_option("--seed", phantom_seed, "Base RNG seed");
    phantom->add_option("--threads", phantom_threads, "Parallel workers");
    phantom->callback([&]() {
        AppConfig cfg = resolve_config(phantom_common);
        if (phantom_seed_opt->count()) {
            cfg.phantom.seed = phantom_seed;
        }
        maybe_dump(cfg, phantom_common);
        const auto items = generate_corpus(phantom_count, cfg.phantom, phantom_out,
                                           phantom_threads);
        std::printf("wrote %zu phantoms to %s\n", items.size(), phantom_out.c_str());
    });

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "Apply a synthetic stripe to one image");
    CommonOpts synth_common;
    add_common(synth, synth_common);
    std::string synth_image, synth_labels, synth_rows, synth_out, synth_mode = "adbma";
    std::string synth_row_csv, synth_out_labels;
    int synth_row = -1;
    std::uint64_t synth_seed = 0;
    synth->add_option("--image", synth_image, "Clean input PGM")->required();
    synth->add_option("--labels", synth_labels, "Row-label file marking rows to corrupt");
    synth->add_option("--rows", synth_rows, "Row range start:end to corrupt");
    synth->add_option("--out", synth_out, "Corrupted output PGM")->required();
    synth->add_option("--out-labels", synth_out_labels, "Write the stripe labels here");
    synth->add_option("--mode", synth_mode, "adbma|gauss")
        ->check(CLI::IsMember({"adbma", "gauss"}));
    synth->add_option("--row-csv", synth_row_csv,
                      "CSV of per-column clean/corrupted intensities for one row");
    synth->add_option("--row", synth_row, "Row index for --row-csv (default: stripe center)");
    auto* synth_seed_opt = synth->add_option("--seed", synth_seed, "RNG seed");
    synth->callback([&]() {
        AppConfig cfg = resolve_config(synth_common);
        if (synth_seed_opt->count()) {
            cfg.synth.seed = synth_seed;
        }
        maybe_dump(cfg, synth_common);
        const OctaImage image = load_image_pgm(synth_image);
        RowLabels labels;
        if (!synth_labels.empty() && !synth_rows.empty()) {
            throw ArgumentError("give either --labels or --rows, not both");
        } else if (!synth_labels.empty()) {
            labels = load_labels(synth_labels);
            if (labels.size() != image.height) {
                throw FormatError(synth_labels + ": label count != image height");
            }
        } else if (!synth_rows.empty()) {
            labels = parse_rows(synth_rows, image.height);
        } else {
            throw ArgumentError("one of --labels or --rows is required");
        }
        Rng rng(cfg.synth.seed);
        OctaImage corrupted;
        if (synth_mode == "adbma") {
            corrupted = adbma_stripe(image, labels, compute_breakpoints(image, cfg.synth),
                                     cfg.synth.sigma, rng);
        } else {
            corrupted = gauss_stripe(image, labels, cfg.synth.sigma, gauss_default_offset(image),
                                     rng);
        }
        write_pgm(corrupted, synth_out);
        if (!synth_out_labels.empty()) {
            write_labels(labels, synth_out_labels);
        }
        if (!synth_row_csv.empty()) {
            int row = synth_row;
            if (row < 0) {
                for (int y = 0; y < image.height; ++y) {
                    if (labels.labels[y]) {
                        row = y;
                        break;
                    }
                }
                // center of the first stripe
                int end = row;
                while (end < image.height && labels.labels[end]) {
                    ++end;
                }
                row = row + (end - 1 - row) / 2;
            }
            if (row < 0 || row >= image.height) {
                throw ArgumentError("--row out of range");
            }
            std::ofstream csv(synth_row_csv, std::ios::trunc);
            if (!csv) {
                throw IoError(synth_row_csv + ": cannot open for writing");
            }
            csv << "col,clean,synth\n";
            for (int x = 0; x < image.width; ++x) {
                csv << x << "," << int(image.at(row, x)) << "," << int(corrupted.at(row, x))
                    << "\n";
            }
        }
        std::printf("wrote %s\n", synth_out.c_str());
    });

    // ---- train ----
    auto* train = app.add_subcommand("train", "Run the self-supervised training loop");
    CommonOpts train_common;
    add_common(train, train_common);
    std::string train_corpus, train_ckpt, train_log;
    int train_epochs = 0, train_steps = 0, train_batch = 0, train_threads = 0;
    int train_channels = 0, train_patch_h = 0, train_patch_w = 0;
    double train_lr = 0.0;
    std::uint64_t train_seed = 0;
    std::string train_synth_mode, train_gs_mode, train_backbone;
    train->add_option("--corpus", train_corpus, "Training corpus manifest")->required();
    train->add_option("--out-checkpoint", train_ckpt, "Best-checkpoint path")->required();
    train->add_option("--log", train_log, "Per-epoch CSV log path");
    auto* o_epochs = train->add_option("--epochs", train_epochs, "Training epochs");
    auto* o_steps = train->add_option("--steps", train_steps, "Batches per epoch");
    auto* o_batch = train->add_option("--batch", train_batch, "Batch size");
    auto* o_lr = train->add_option("--lr", train_lr, "Initial learning rate");
    auto* o_seed = train->add_option("--seed", train_seed, "RNG seed");
    auto* o_threads = train->add_option("--threads", train_threads, "Worker threads");
    auto* o_channels = train->add_option("--channels", train_channels, "First-level channels");
    auto* o_patch_h = train->add_option("--patch-h", train_patch_h, "Patch height");
    auto* o_patch_w = train->add_option("--patch-w", train_patch_w, "Patch width");
    auto* o_synth_mode = train->add_option("--synth-mode", train_synth_mode, "adbma|gauss")
                             ->check(CLI::IsMember({"adbma", "gauss"}));
    auto* o_gs_mode = train->add_option("--gs-mode", train_gs_mode, "none|naive|abs|absbma")
                          ->check(CLI::IsMember({"none", "naive", "abs", "absbma"}));
    auto* o_backbone = train->add_option("--backbone", train_backbone, "gated|shared|conv")
                           ->check(CLI::IsMember({"gated", "shared", "conv"}));
    train->callback([&]() {
        AppConfig cfg = resolve_config(train_common);
        if (o_epochs->count()) cfg.train.epochs = train_epochs;
        if (o_steps->count()) cfg.train.steps_per_epoch = train_steps;
        if (o_batch->count()) cfg.train.batch_size = train_batch;
        if (o_lr->count()) cfg.train.lr = train_lr;
        if (o_seed->count()) cfg.train.seed = train_seed;
        if (o_threads->count()) cfg.train.threads = train_threads;
        if (o_channels->count()) cfg.model.base_channels = train_channels;
        if (o_patch_h->count()) cfg.train.patch_h = train_patch_h;
        if (o_patch_w->count()) cfg.train.patch_w = train_patch_w;
        if (o_synth_mode->count()) cfg.train.synth_mode = synth_mode_from_name(train_synth_mode);
        if (o_gs_mode->count()) cfg.model.gs_mode = gs_mode_from_name(train_gs_mode);
        if (o_backbone->count()) cfg.model.backbone = backbone_from_name(train_backbone);
        maybe_dump(cfg, train_common);

        cfg.train.checkpoint_path = train_ckpt;
        cfg.train.log_path = train_log;
        const auto items = load_train_items(load_manifest(train_corpus));
        CabrNet net = build_cabr(cfg.model);
        const TrainReport report = fit(net, items, cfg.train);
        std::printf("trained %d epochs; best val dice %.4f at epoch %d; checkpoint %s\n",
                    cfg.train.epochs, report.best_val_dice, report.best_epoch,
                    train_ckpt.c_str());
    });

    // ---- infer ----
    auto* infer = app.add_subcommand("infer", "Correct the mask across BMA rows of one image");
    std::string infer_image_path, infer_mask, infer_labels, infer_ckpt, infer_out, infer_overlay;
    int infer_window = 0;
    infer->add_option("--image", infer_image_path, "Input image PGM")->required();
    infer->add_option("--mask", infer_mask, "Defective mask PGM")->required();
    infer->add_option("--labels", infer_labels, "Row-label file")->required();
    infer->add_option("--checkpoint", infer_ckpt, "Trained checkpoint")->required();
    infer->add_option("--out-mask", infer_out, "Corrected mask PGM")->required();
    infer->add_option("--overlay", infer_overlay, "Enhanced overlay PPM with stripes tinted");
    auto* o_window = infer->add_option("--window", infer_window, "Inference window height");
    infer->callback([&]() {
        CabrNet net = load_checkpoint(infer_ckpt);
        const OctaImage image = load_image_pgm(infer_image_path);
        const VesselMask mask = load_mask_pgm(infer_mask);
        const RowLabels labels = load_labels(infer_labels);
        if (labels.size() != image.height) {
            throw FormatError(infer_labels + ": label count != image height");
        }
        const int window = o_window->count() ? infer_window : net.cfg.window_height;
        Workspace ws;
        const VesselMask out = infer_image(net, mask, image, labels, window, ws);
        write_pgm(out, infer_out);
        if (!infer_overlay.empty()) {
            write_overlay_ppm(enhance(image, out), labels, infer_overlay);
        }
        std::printf("wrote %s\n", infer_out.c_str());
    });

    // ---- enhance ----
    auto* enh = app.add_subcommand("enhance", "Multiply an image by its vessel mask");
    std::string enh_image, enh_mask, enh_out;
    enh->add_option("--image", enh_image, "Input image PGM")->required();
    enh->add_option("--mask", enh_mask, "Vessel mask PGM")->required();
    enh->add_option("--out", enh_out, "Enhanced output PGM")->required();
    enh->callback([&]() {
        const OctaImage image = load_image_pgm(enh_image);
        const VesselMask mask = load_mask_pgm(enh_mask);
        write_pgm(enhance(image, mask), enh_out);
        std::printf("wrote %s\n", enh_out.c_str());
    });

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Row-restricted Dice over a corpus");
    CommonOpts eval_common;
    add_common(eval, eval_common);
    std::string eval_corpus, eval_ckpt, eval_report;
    int eval_threads = 0, eval_window = 0;
    bool eval_pooled = false;
    eval->add_option("--corpus", eval_corpus, "Evaluation corpus manifest")->required();
    eval->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->required();
    eval->add_option("--report", eval_report, "Per-image CSV report path")->required();
    auto* o_eval_threads = eval->add_option("--threads", eval_threads, "Parallel workers");
    auto* o_eval_window = eval->add_option("--window", eval_window, "Inference window height");
    eval->add_flag("--pooled", eval_pooled, "Pool pixel counts instead of per-image averaging");
    eval->callback([&]() {
        AppConfig cfg = resolve_config(eval_common);
        CabrNet net = load_checkpoint(eval_ckpt);
        EvalOptions opts = cfg.eval;
        opts.window_height = o_eval_window->count() ? eval_window : net.cfg.window_height;
        if (o_eval_threads->count()) {
            opts.threads = eval_threads;
        }
        if (eval_pooled) {
            opts.pooled = true;
        }
        maybe_dump(cfg, eval_common);
        const EvalReport report = evaluate_dataset(net, load_manifest(eval_corpus), opts);
        write_eval_csv(report, eval_report);
        std::printf("%s", format_eval_table(report).c_str());
    });

    // ---- evalset ----
    auto* evalset = app.add_subcommand(
        "evalset", "Derive a striped evaluation corpus from a clean corpus");
    CommonOpts evalset_common;
    add_common(evalset, evalset_common);
    std::string es_corpus, es_out, es_widths = "1,4,8", es_mode = "adbma";
    int es_per_image = 1;
    std::uint64_t es_seed = 0;
    evalset->add_option("--corpus", es_corpus, "Clean corpus manifest")->required();
    evalset->add_option("--out", es_out, "Output directory")->required();
    evalset->add_option("--widths", es_widths, "Comma-separated stripe widths");
    evalset->add_option("--per-image", es_per_image, "Stripes per image");
    evalset->add_option("--mode", es_mode, "adbma|gauss")
        ->check(CLI::IsMember({"adbma", "gauss"}));
    evalset->add_option("--seed", es_seed, "RNG seed");
    evalset->callback([&]() {
        AppConfig cfg = resolve_config(evalset_common);
        maybe_dump(cfg, evalset_common);
        StripeSpec spec;
        spec.widths = parse_widths(es_widths);
        spec.stripes_per_image = es_per_image;
        spec.synth = cfg.synth;
        spec.gauss = es_mode == "gauss";
        spec.seed = es_seed;
        const auto items = make_striped_corpus(load_manifest(es_corpus), spec, es_out);
        std::printf("wrote %zu striped items to %s\n", items.size(), es_out.c_str());
    });

    // ---- gradcheck ----
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
    double gc_tolerance = 1e-3;
    gradcheck->add_option("--tolerance", gc_tolerance, "Max relative error");
    bool gradcheck_failed = false;
    gradcheck->callback([&]() {
        const GradCheckReport report = run_gradcheck_suite(gc_tolerance);
        for (const auto& c : report.cases) {
            std::printf("%-24s %-4s max_rel_err=%.3e (%zu coords)\n", c.name.c_str(),
                        c.pass ? "ok" : "FAIL", c.max_rel_err, c.checked);
        }
        std::printf("gradcheck %s in %.1fs (tolerance %.1e)\n",
                    report.all_pass() ? "passed" : "FAILED", report.seconds, report.tolerance);
        gradcheck_failed = !report.all_pass();
    });

    // ---- params ----
    auto* params = app.add_subcommand("params", "Print the trainable parameter count");
    int params_channels = 16;
    std::string params_variant = "gated";
    params->add_option("--channels", params_channels, "First-level channels");
    params->add_option("--variant", params_variant, "gated|shared|conv|lightweight")
        ->check(CLI::IsMember({"gated", "shared", "conv", "lightweight"}));
    params->callback([&]() {
        CabrConfig cfg;
        cfg.base_channels = params_channels;
        if (params_variant == "lightweight") {
            cfg.lightweight = true;
            cfg.backbone = Backbone::GatedSharedSplit;
        } else {
            cfg.backbone = backbone_from_name(params_variant);
        }
        std::printf("%zu\n", build_cabr(cfg).parameter_count());
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const ArgumentError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return gradcheck_failed ? 3 : 0;
}

#include "cabr/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace cabr {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) {
            throw FormatError("config: unknown key '" + where + "." + key + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const json::exception& e) {
            throw FormatError(std::string("config: bad value for '") + key + "': " + e.what());
        }
    }
}

void read_model(const json& j, CabrConfig& cfg) {
    reject_unknown(j, {"base_channels", "backbone", "lightweight", "gs_mode", "mask_fill",
                       "threshold", "window_height"},
                   "model");
    read(j, "base_channels", cfg.base_channels);
    if (j.contains("backbone")) {
        cfg.backbone = backbone_from_name(j.at("backbone").get<std::string>());
    }
    read(j, "lightweight", cfg.lightweight);
    if (j.contains("gs_mode")) {
        cfg.gs_mode = gs_mode_from_name(j.at("gs_mode").get<std::string>());
    }
    read(j, "mask_fill", cfg.mask_fill);
    read(j, "threshold", cfg.threshold);
    read(j, "window_height", cfg.window_height);
}

void read_synth(const json& j, SynthParams& p) {
    reject_unknown(j, {"p_low", "p_high", "p_base", "p_low_t", "p_high_t", "sigma", "seed"},
                   "synth");
    read(j, "p_low", p.p_low);
    read(j, "p_high", p.p_high);
    read(j, "p_base", p.p_base);
    read(j, "p_low_t", p.p_low_t);
    read(j, "p_high_t", p.p_high_t);
    read(j, "sigma", p.sigma);
    read(j, "seed", p.seed);
}

void read_train(const json& j, TrainConfig& cfg) {
    reject_unknown(j,
                   {"epochs", "steps_per_epoch", "batch_size", "lr", "plateau_patience", "patch_h",
                    "patch_w", "stripe_width_min", "stripe_width_max", "synth_mode", "seed",
                    "threads", "loss_stripe_only", "val_patches"},
                   "train");
    read(j, "epochs", cfg.epochs);
    read(j, "steps_per_epoch", cfg.steps_per_epoch);
    read(j, "batch_size", cfg.batch_size);
    read(j, "lr", cfg.lr);
    read(j, "plateau_patience", cfg.plateau_patience);
    read(j, "patch_h", cfg.patch_h);
    read(j, "patch_w", cfg.patch_w);
    read(j, "stripe_width_min", cfg.stripe_width_min);
    read(j, "stripe_width_max", cfg.stripe_width_max);
    if (j.contains("synth_mode")) {
        cfg.synth_mode = synth_mode_from_name(j.at("synth_mode").get<std::string>());
    }
    read(j, "seed", cfg.seed);
    read(j, "threads", cfg.threads);
    read(j, "loss_stripe_only", cfg.loss_stripe_only);
    read(j, "val_patches", cfg.val_patches);
}

void read_phantom(const json& j, PhantomParams& p) {
    reject_unknown(j,
                   {"height", "width", "vessel_count_min", "vessel_count_max", "thickness_min",
                    "thickness_max", "peak_min", "peak_max", "background_level",
                    "background_sigma", "seed"},
                   "phantom");
    read(j, "height", p.height);
    read(j, "width", p.width);
    read(j, "vessel_count_min", p.vessel_count_min);
    read(j, "vessel_count_max", p.vessel_count_max);
    read(j, "thickness_min", p.thickness_min);
    read(j, "thickness_max", p.thickness_max);
    read(j, "peak_min", p.peak_min);
    read(j, "peak_max", p.peak_max);
    read(j, "background_level", p.background_level);
    read(j, "background_sigma", p.background_sigma);
    read(j, "seed", p.seed);
}

void read_eval(const json& j, EvalOptions& opts) {
    reject_unknown(j, {"window_height", "threads", "pooled"}, "eval");
    read(j, "window_height", opts.window_height);
    read(j, "threads", opts.threads);
    read(j, "pooled", opts.pooled);
}

}  // namespace

AppConfig default_config() {
    return {};
}

AppConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(path + ": cannot open for reading");
    }
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": not valid JSON: " + e.what());
    }
    reject_unknown(j, {"model", "synth", "train", "phantom", "eval"}, "");
    AppConfig cfg;
    if (j.contains("model")) read_model(j.at("model"), cfg.model);
    if (j.contains("synth")) read_synth(j.at("synth"), cfg.synth);
    if (j.contains("train")) read_train(j.at("train"), cfg.train);
    if (j.contains("phantom")) read_phantom(j.at("phantom"), cfg.phantom);
    if (j.contains("eval")) read_eval(j.at("eval"), cfg.eval);
    cfg.train.synth = cfg.synth;
    return cfg;
}

std::string dump_config(const AppConfig& cfg) {
    json j;
    j["model"] = {{"base_channels", cfg.model.base_channels},
                  {"backbone", backbone_name(cfg.model.backbone)},
                  {"lightweight", cfg.model.lightweight},
                  {"gs_mode", gs_mode_name(cfg.model.gs_mode)},
                  {"mask_fill", cfg.model.mask_fill},
                  {"threshold", cfg.model.threshold},
                  {"window_height", cfg.model.window_height}};
    j["synth"] = {{"p_low", cfg.synth.p_low},       {"p_high", cfg.synth.p_high},
                  {"p_base", cfg.synth.p_base},     {"p_low_t", cfg.synth.p_low_t},
                  {"p_high_t", cfg.synth.p_high_t}, {"sigma", cfg.synth.sigma},
                  {"seed", cfg.synth.seed}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"steps_per_epoch", cfg.train.steps_per_epoch},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"plateau_patience", cfg.train.plateau_patience},
                  {"patch_h", cfg.train.patch_h},
                  {"patch_w", cfg.train.patch_w},
                  {"stripe_width_min", cfg.train.stripe_width_min},
                  {"stripe_width_max", cfg.train.stripe_width_max},
                  {"synth_mode", synth_mode_name(cfg.train.synth_mode)},
                  {"seed", cfg.train.seed},
                  {"threads", cfg.train.threads},
                  {"loss_stripe_only", cfg.train.loss_stripe_only},
                  {"val_patches", cfg.train.val_patches}};
    j["phantom"] = {{"height", cfg.phantom.height},
                    {"width", cfg.phantom.width},
                    {"vessel_count_min", cfg.phantom.vessel_count_min},
                    {"vessel_count_max", cfg.phantom.vessel_count_max},
                    {"thickness_min", cfg.phantom.thickness_min},
                    {"thickness_max", cfg.phantom.thickness_max},
                    {"peak_min", cfg.phantom.peak_min},
                    {"peak_max", cfg.phantom.peak_max},
                    {"background_level", cfg.phantom.background_level},
                    {"background_sigma", cfg.phantom.background_sigma},
                    {"seed", cfg.phantom.seed}};
    j["eval"] = {{"window_height", cfg.eval.window_height},
                 {"threads", cfg.eval.threads},
                 {"pooled", cfg.eval.pooled}};
    return j.dump(2) + "\n";
}

void write_config(const AppConfig& cfg, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError(path + ": cannot open for writing");
    }
    out << dump_config(cfg);
    if (!out) {
        throw IoError(path + ": write failed");
    }
}

}  // namespace cabr

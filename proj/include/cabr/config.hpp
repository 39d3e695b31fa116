#pragma once

#include <string>

#include "cabr/eval.hpp"
#include "cabr/model.hpp"
#include "cabr/phantom.hpp"
#include "cabr/trainer.hpp"

namespace cabr {

/// Whole-application configuration, one JSON section per module.
/// Unknown keys are rejected.
struct AppConfig {
    CabrConfig model;
    SynthParams synth;
    TrainConfig train;
    PhantomParams phantom;
    EvalOptions eval;
};

AppConfig default_config();
AppConfig load_config(const std::string& path);
std::string dump_config(const AppConfig& cfg);
void write_config(const AppConfig& cfg, const std::string& path);

}  // namespace cabr

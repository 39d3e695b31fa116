#pragma once

#include <vector>

#include "cabr/nn.hpp"

namespace cabr {

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;
    double tolerance = 1e-3;
    double seconds = 0.0;
    bool all_pass() const;
};

/// Central-difference checks for every layer type plus a full network pass.
GradCheckReport run_gradcheck_suite(double tolerance = 1e-3);

}  // namespace cabr

#pragma once

#include <cstddef>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace mbsde {

/// Outcome of checking one inequality on sampled configurations.
///
/// `min_margin` is min(LHS - RHS) (or its analogue) over all samples, so a
/// report passes when `min_margin >= -tolerance`. `fitted_constants` holds the
/// tightest constants observed for inequalities that only assert existence.
struct EstimateReport {
    std::string estimate;
    std::size_t samples = 0;
    double min_margin = std::numeric_limits<double>::infinity();
    std::map<std::string, double> fitted_constants;
    std::vector<double> worst_sample;
    std::size_t violations = 0;
    double tolerance = 1e-6;
    bool pass = false;

    void finalize() { pass = min_margin >= -tolerance; }
};

}  // namespace mbsde

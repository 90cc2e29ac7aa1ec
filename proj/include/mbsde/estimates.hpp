#pragma once

#include "mbsde/drift.hpp"
#include "mbsde/gauges.hpp"
#include "mbsde/report.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mbsde {

/// Sampling setup shared by the estimate checks.
///
/// Pairs (x, x') are drawn with x uniform in `region` and x' at a distance in
/// [delta_min, delta_max] along a random direction. Unset bounds fall back to a
/// per-estimate default suited to the inequality.
struct EstimateParams {
    std::size_t samples = 500;
    std::uint64_t seed = 1;
    int workers = 1;
    SampleRegion region;  // empty center: sphere equator point (π/2, 0) or the chart midpoint
    std::optional<double> delta_min;
    std::optional<double> delta_max;
    /// β > 1 of the near-diagonal Ψ_a bound.
    double beta = 1.25;
    /// ε of the DΨ·f splitting bound.
    double split_epsilon = 0.5;
    /// Cap on constants whose existence is asserted; margins are measured against it.
    double constant_cap = 1e3;
    double tolerance = 1e-6;
    /// Drift for "2majdpsi" (default: f = z 1).
    std::optional<DriftSpec> drift;
    int dim_w = 2;
};

/// Registry names, in a fixed order.
const std::vector<std::string>& estimate_names();

/// Samples configurations and checks the named inequality. Throws RegistryError
/// for an unknown name and UnsupportedError for an incompatible gauge/manifold.
EstimateReport verify_estimate(const std::string& name, const ChartManifold& m, const GaugeFunction& g,
                               const EstimateParams& params);

/// Largest y such that the near-diagonal conditions behind the β-bound hold on (0, y]:
/// (a-1)cos²y - sin²y >= (a-1)/2, cos y sin y / y >= 1/2 and y cot y (1+h(2y))/(1+cos 2y) <= β.
double near_diagonal_limit(double a, double beta);

/// Smallest c with c⁻¹ δ^p <= Ψ <= c δ^p on sampled pairs.
double gauge_equivalence_constant(const GaugeFunction& g, const ChartManifold& m, const EstimateParams& params);

/// Smallest eigenvalue of the full Hessian for pairs drawn from the ball of radius
/// delta_max around the region center. Reports "r_conv", the largest radius of a
/// fixed ladder such that the eigenvalue stays >= -1e-8 for pairs inside it.
EstimateReport convexity_report(const GaugeFunction& g, const ChartManifold& m, const EstimateParams& params);

}  // namespace mbsde

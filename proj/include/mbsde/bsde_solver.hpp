#pragma once

#include "mbsde/drift.hpp"
#include "mbsde/forward_sde.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mbsde {

/// -½ Σ_jk Γ_jk(x) ([z]^k | [z]^j) + f(b, x, z), with [z]^k the k-th row of the n × d_w frame.
Vec md_drift(const ChartManifold& m, const DriftSpec& d, const Vec& b, const Vec& x, const Mat& z);

/// Distance used for path metrics: Riemannian distance on flat and sphere charts,
/// the metric norm of the chart difference (at x) on custom charts.
double state_distance(const ChartManifold& m, const Vec& x, const Vec& y);

enum class PicardStart { zero, random };

struct SolverOptions {
    int picard_max = 30;
    double picard_tol = 1e-6;
    int basis_degree = 3;
    int fixed_point_max = 20;
    double fixed_point_tol = 1e-10;
    int workers = 1;
    /// Frame used by the first sweep for the drift: zero, or Gaussian entries of size `init_scale`.
    PicardStart start = PicardStart::zero;
    double init_scale = 0.5;
    std::uint64_t init_seed = 7;
    /// Confinement domain; states outside {χ <= c + band} are retracted to {χ = c}.
    std::optional<DomainGauge> domain;
    double projection_band = 1e-9;
    /// Fraction of projected states above which `domain_escape_warning` is set.
    double projection_warning = 0.05;
    /// Per-path stopping indices: the solution is frozen from index stop[p] on.
    std::vector<int> stop;
};

/// Discrete solution of the coordinate BSDE on a shared grid.
struct BsdeSolution {
    TimeGrid grid{std::vector<double>{0.0, 1.0}};
    int paths = 0;
    int dim = 0;
    int dim_w = 0;
    std::vector<Mat> X;  // N+1 slices, P × n
    std::vector<Mat> Z;  // N slices, P × (n·d_w), row-major frame entries
    DrivingPaths driving;
    std::vector<double> picard_residuals;
    int iterations = 0;
    double projected_fraction = 0.0;
    bool domain_escape_warning = false;
    std::size_t fixed_point_failures = 0;
    /// Forward Euler re-simulation X̂_{i+1} = X̂_i + md_drift Δt + Z_i ΔW_i from X̂_0 = X_0.
    std::vector<Mat> X_forward;
    /// RMS chart gap between X_N and X̂_N.
    double forward_residual = 0.0;
    std::vector<int> stop;

    Vec x(int path, int step) const { return X[step].row(path).transpose(); }
    Mat z(int path, int step) const;
    int steps() const { return grid.steps(); }
};

/// Backward regression scheme with outer Picard iterations. Sweep k evaluates the drift
/// at the frame Z^{(k-1)} of the previous sweep (Z^{(0)} per `options.start`) and stops
/// once the sup-path L² change between sweeps is below `picard_tol`; the fixed point
/// solves X_i = E[X_{i+1}|B_i] - md_drift(B_i, X_i, Z_i) Δt with Z_i = E[X_{i+1} ᵗΔW_i|B_i]/Δt.
/// Throws ConvergenceError (with the residual trace) when picard_max is reached.
BsdeSolution solve_bsde(const ChartManifold& m, const DriftSpec& d, const TerminalCondition& tc,
                        const DrivingPaths& driving, const SolverOptions& options = {});

BsdeSolution solve_bsde(const ChartManifold& m, const DriftSpec& d, const TerminalCondition& tc,
                        const DiffusionSpec& spec, const TimeGrid& grid, int paths, std::uint64_t seed,
                        const SolverOptions& options = {});

/// sqrt(E[sup_i δ²(X_i, X'_i)]) over the common paths.
double sup_path_distance(const ChartManifold& m, const BsdeSolution& a, const BsdeSolution& b);

/// Sampling setup for the drift audits.
struct AuditParams {
    std::size_t samples = 2000;
    std::uint64_t seed = 1;
    int dim_d = 1;
    int dim_w = 1;
    double b_scale = 1.0;
    double z_scale = 1.0;
    /// Chart region for x, x' (empty center: the chart midpoint, or (π/2, 0) on the sphere).
    SampleRegion region;
    double tolerance = 1e-9;
};

/// (Dχ(x) | f(b, x, z))_r on sampled boundary points of the domain.
struct OutwardReport {
    std::size_t samples = 0;
    double infimum = 0.0;
    /// Weak condition: infimum >= -tolerance.
    bool holds = false;
    /// Strict condition: infimum >= ζ > 0, with ζ = infimum.
    bool holds_strict = false;
    double zeta = 0.0;
    bool strict = false;
    bool pass = false;
    std::vector<double> worst_sample;  // b, x, z entries
};

OutwardReport check_pointing_outward(const DriftSpec& d, const DomainGauge& dg, const ChartManifold& m,
                                     const AuditParams& params, bool strict);

/// Empirical constants of the drift against the declared L and L₂.
struct DriftAudit {
    std::size_t samples = 0;
    double lipschitz_ratio = 0.0;
    double bound_value = 0.0;
    double declared_L = 0.0;
    double declared_L2 = 0.0;
    bool lipschitz_ok = false;
    bool bound_ok = false;
    bool pass = false;
    std::vector<double> worst_sample;
};

DriftAudit drift_spec_audit(const DriftSpec& d, const ChartManifold& m, const AuditParams& params);

}  // namespace mbsde

#pragma once

#include "mbsde/bsde_solver.hpp"
#include "mbsde/gauges.hpp"
#include "mbsde/report.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace mbsde {

/// Constants of A_t = λt + μ ∫ (|Z|²_r + |Z'|²_r) ds and the gauge Ψ of S_t = e^{A_t} Ψ(X_t, X'_t).
struct SubmartingaleParams {
    double lambda = 0.0;
    double mu = 0.0;
    GaugeFunction gauge = GaugeFunction::sin_power_from_e(1.5, 1.0);
    double e_factor = 1.5;

    /// Ψ_a with a = 1 + (e-1)/4 and μ = eK/4 on a ball of radius γπ/(2√K); needs 1 < e < 1/γ.
    static SubmartingaleParams regular_ball(double e, double K, double gamma, double lambda = 0.0);
};

/// One configuration (b, x, x', z, z') at which the drift of S is evaluated.
struct PairState {
    Vec b;
    Vec x, x2;
    Mat z, z2;
};

/// ½ Σ_c ᵗu_c Hess Ψ u_c + DΨ·(f(b,x,z), f(b,x',z')) + (λ + μ(|z|²_r + |z'|²_r)) Ψ,
/// with u_c = (z_c, z'_c) the columns of the stacked frame.
double submartingale_sum(const SubmartingaleParams& p, const ChartManifold& m, const DriftSpec& d,
                         const PairState& s);

/// Pair states with x, x' in the geodesic ball `ball`. A fraction `near_fraction` of the
/// pairs is drawn at distance below `near_max`, and frames cycle through independent z',
/// z' close to τz and z' = τz, where the Hessian has the least room.
struct PairSampling {
    SampleRegion ball;
    std::size_t samples = 10000;
    std::uint64_t seed = 1;
    int dim_d = 2;
    int dim_w = 2;
    double b_scale = 1.0;
    double z_scale = 1.0;
    double near_fraction = 0.5;
    double near_max = 0.05;
};

std::vector<PairState> sample_pair_states(const ChartManifold& m, const GaugeFunction& g, const PairSampling& s);

/// Grid {0, 1, 2, 4, ..., 2^10} searched by calibrate_lambda.
const std::vector<double>& lambda_grid();

struct LambdaCalibration {
    double lambda = 0.0;
    bool found = false;
    /// Sum at the chosen λ; minimum over the states.
    EstimateReport report;
};

/// Smallest λ of the grid for which the sum is >= -tolerance on every state.
/// The sum is affine in λ, so each state is evaluated once.
LambdaCalibration calibrate_lambda(const SubmartingaleParams& p, const ChartManifold& m, const DriftSpec& d,
                                   const std::vector<PairState>& states, double tolerance = 1e-6,
                                   int workers = 1);

/// Minimum of the sum over the states, as an EstimateReport (margin = sum).
EstimateReport submartingale_report(const SubmartingaleParams& p, const ChartManifold& m, const DriftSpec& d,
                                    const std::vector<PairState>& states, double tolerance = 1e-6,
                                    int workers = 1);

/// Discrete A and S along two solutions on shared noise (N+1 entries, one value per path).
struct SProcess {
    std::vector<Vec> A;
    std::vector<Vec> S;
};

SProcess s_process(const ChartManifold& m, const BsdeSolution& a, const BsdeSolution& b,
                   const SubmartingaleParams& p);

/// Per-path ∫ |Z|²_r dt by left-endpoint quadrature.
std::vector<double> frame_energy(const ChartManifold& m, const BsdeSolution& sol);

/// (E[sup_i S_i^q])^{1/q} for each q.
std::map<double, double> lq_norms(const SProcess& s, const std::vector<double>& qs = {1.1, 1.25, 1.5});

/// One-sided test of E[V_{i+1} - V_i | B_i] >= 0. At each step the increment is regressed
/// on the solver basis in B_i (active paths only); at every active path the fitted value
/// is compared with its heteroskedasticity-robust standard error.
struct IncrementTest {
    std::vector<double> step_min_t;  // min over paths of fitted / SE, per step
    double worst_t = 0.0;
    int worst_step = -1;
    double threshold = 3.0;
    bool pass = false;
};

IncrementTest conditional_increment_test(const PathEnsemble& regressors, const std::vector<Vec>& values,
                                         const std::vector<int>& stop = {}, int degree = 3,
                                         double threshold = 3.0);

/// Two-sided test that a pooled drift regression y ≈ basis(state)·β has β = 0:
/// every coefficient within `threshold` robust standard errors.
struct DriftTest {
    std::vector<double> coefficients;
    std::vector<double> std_errors;
    double max_abs_t = 0.0;
    std::size_t samples = 0;
    double threshold = 3.0;
    bool pass = false;
};

DriftTest pooled_drift_test(const Mat& states, const Vec& rates, int degree = 3, double threshold = 3.0);

/// h(X̂_N) - h(X̂_0) minus the discrete sum of the three terms of Itô's formula, along the
/// forward re-simulation X̂: Dh Z ΔW (left point), ½ Σ_c Hess h(z_c, z_c) Δt and Dh f Δt.
struct ItoResidual {
    double max_abs = 0.0;
    double rms = 0.0;
    double mean = 0.0;
};

ItoResidual ito_residual(const ChartManifold& m, const DriftSpec& d, const BsdeSolution& sol, const ScalarField& h,
                         double step = 1e-4);

/// log(r_coarse / r_fine) / log(dt_coarse / dt_fine).
double scaling_exponent(double r_coarse, double dt_coarse, double r_fine, double dt_fine);

/// Test functions φ with Hess φ + 2αφ <= 0 used for exponential integrability.
struct TestFunction {
    enum class Kind { cos_euclidean, cos_ball };

    Kind kind = Kind::cos_euclidean;
    /// cos_euclidean: φ(x) = cos(a |x - center|) on |x - center| <= r0.
    double a = 1.0;
    double r0 = 0.5;
    /// cos_ball: φ(x) = cos(β √K δ(center, x)) on the ball of radius γπ/(2√K).
    double beta = 1.5;
    double gamma = 0.5;
    double K = 1.0;
    Vec center;  // empty: chart midpoint, or (π/2, 0) on the sphere

    /// a = sqrt(2π C_r μ), r0 = π/(4a).
    static TestFunction cos_euclidean(double mu, double C_r = 1.0);
    static TestFunction cos_ball(double beta, double gamma, double K);

    double radius() const;
    double value(const ChartManifold& m, const Vec& x) const;
};

struct IntegrabilityParams {
    std::size_t samples = 1000;
    std::uint64_t seed = 1;
    double tolerance = 1e-6;
};

/// Samples x in the domain of φ and unit u, and reports min -(Hess φ<u,u> + 2αφ|u|²_r).
/// Throws DomainError for parameters outside the admissible ranges.
EstimateReport integrability_gauge_check(const TestFunction& phi, const ChartManifold& m, double alpha,
                                         const IntegrabilityParams& params = {});

/// sqrt(E[sup_i δ²(X_i, X'_i)]).
double uniqueness_gap(const ChartManifold& m, const BsdeSolution& a, const BsdeSolution& b);

/// ρ√K < π/2 and the center's cut locus avoids the ball.
bool regular_ball_check(double rho, double K, bool cut_locus_ok = true);

/// Two martingales on the equator of the unit sphere with the same terminal value.
///
/// X runs along the equator from (1,0,0), X' is its mirror image in the plane {x = 0}
/// (starting from (-1,0,0)), and both stop on that plane. The driving noise is a
/// symmetric walk with steps ±h, where h divides π/2, so the stopped values are exactly
/// (0, ±1, 0); Δt = h² is the grid step closest to horizon/steps.
struct NonuniquenessResult {
    TimeGrid grid{std::vector<double>{0.0, 1.0}};
    int paths = 0;
    int lattice = 0;  // π/2 = lattice · h
    std::vector<int> stop;
    Mat terminal, terminal_mirror;  // embedded X_ζ, X'_ζ (P × 3)
    std::vector<Vec> sample_phi;    // φ along the first recorded paths (X' has φ' = π - φ)
    double initial_distance = 0.0;
    std::size_t unstopped = 0;
    double max_terminal_gap = 0.0;
    double max_md_drift = 0.0;
    DriftTest drift, drift_mirror;
    bool pass = false;
};

NonuniquenessResult nonuniqueness_demo(int steps = 4000, int paths = 2000, std::uint64_t seed = 1,
                                       double horizon = 40.0, int record = 0);

}  // namespace mbsde

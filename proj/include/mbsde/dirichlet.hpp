#pragma once

#include "mbsde/bsde_solver.hpp"
#include "mbsde/forward_sde.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace mbsde {

/// Bounded source region M₁ ⊂ ℝᵈ: a disk (ball), an interval or a box.
struct SourceDomain {
    enum class Kind { disk, interval, box };

    Kind kind = Kind::disk;
    Vec center;  // disk
    double radius = 1.0;
    Vec lower, upper;  // interval, box

    static SourceDomain disk(Vec center, double radius);
    static SourceDomain interval(double a, double b);
    static SourceDomain box(Vec lower, Vec upper);

    int dim() const;
    /// Signed distance to the boundary, positive inside.
    double boundary_distance(const Vec& x) const;
    bool inside(const Vec& x) const { return boundary_distance(x) > 0.0; }
    bool on_boundary(const Vec& x, double tol = 1e-12) const { return std::abs(boundary_distance(x)) <= tol; }
    Vec nearest_boundary(const Vec& x) const;
    /// Outward unit normal at nearest_boundary(x).
    Vec normal(const Vec& x) const;
    double diameter() const;
};

/// Boundary data φ̄ : ∂M₁ → target chart.
struct BoundaryMap {
    std::string name;
    std::function<Vec(const Vec&)> F;

    Vec operator()(const Vec& x) const { return F(x); }

    static BoundaryMap constant(Vec p);
    /// φ̄(x) = x_k as a one-dimensional point.
    static BoundaryMap coordinate(int k);
    /// φ̄(x) = x_0² - x_1².
    static BoundaryMap harmonic_quadratic();
    /// φ̄(x) = exp_center(scale E x) for the orthonormal frame E at the center.
    static BoundaryMap exp_image(const ChartManifold& m, Vec center, double scale);
};

struct DirichletProblem {
    SourceDomain domain;
    /// Diffusion on the source; the start point is replaced by each query point.
    DiffusionSpec diffusion;
    BoundaryMap boundary;
    DriftSpec drift;
    ChartManifold target = ChartManifold::flat(1);
    std::optional<DomainGauge> gauge;
    double horizon_cap = 3.0;
    /// Fraction of paths still inside at horizon_cap above which the estimate is refused.
    double truncation_limit = 0.1;
    /// Shift the boundary inward by 0.5826 |σᵗn| √Δt to offset the overshoot of discrete monitoring.
    bool exit_correction = true;
};

struct FieldEstimate {
    std::vector<Vec> query_points;
    std::vector<Vec> values;
    std::vector<Vec> std_errors;
    std::vector<double> truncation_mass;
    std::vector<double> mean_exit_time;
    /// Largest χ(φ(x)) - c over the query points (only with a target gauge).
    double confinement_excess = -std::numeric_limits<double>::infinity();
};

/// Predicate "still running" used for the exit time, including the continuity correction.
PointPredicate running_predicate(const DirichletProblem& p, double dt);

/// φ(x) = X₀ˣ of the BSDE with terminal value φ̄(B^x_ζ) on paths frozen after ζ.
/// Paths still inside at horizon_cap use φ̄ at the boundary point nearest B^x_{T}.
/// Throws DomainError for queries outside the closure of M₁ and ReliabilityError when
/// the truncated fraction exceeds truncation_limit.
FieldEstimate solve_dirichlet(const DirichletProblem& p, const std::vector<Vec>& queries, int steps, int paths,
                              std::uint64_t seed, SolverOptions options = {});

struct StoppingReport {
    MomentEstimate moment;
    double truncation_mass = 0.0;
    double mean_time = 0.0;
};

/// E[exp(ξζ)] for the exit time of the diffusion started at x, truncated at horizon_cap.
StoppingReport stopping_integrability(const DirichletProblem& p, const Vec& x, int steps, int paths, double xi,
                                      std::uint64_t seed, int workers = 1);

/// Generator ½ Σ (σσᵗ)_jk ∂_jk φ + b·∇φ minus f(x, φ, ∇φ σ) at the interior nodes of a
/// regular query grid, with the standard error of the stencil combination.
struct PdeResidual {
    std::vector<Vec> nodes;
    std::vector<Vec> residual;
    std::vector<Vec> std_error;
    double max_t = 0.0;
    double threshold = 3.0;
    bool pass = false;
};

PdeResidual pde_residual(const FieldEstimate& estimate, const DirichletProblem& p, double threshold = 3.0);

/// Regular grid with `per_axis` points per coordinate on [lo, hi]^d.
std::vector<Vec> regular_grid(int dim, double lo, double hi, int per_axis);

}  // namespace mbsde

#pragma once

#include "mbsde/linalg.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace mbsde {

/// Coordinate region on which a chart is valid: an axis-aligned box or a Euclidean ball.
struct ChartDomain {
    enum class Shape { box, ball };

    Shape shape = Shape::box;
    Vec lo, hi;       // box corners
    Vec center;       // ball center
    double radius = 0.0;

    static ChartDomain box(Vec lo, Vec hi);
    static ChartDomain ball(Vec center, double radius);

    bool contains(const Vec& x) const;
    Eigen::Index dim() const { return shape == Shape::box ? lo.size() : center.size(); }
    /// Midpoint of the box, or the ball center.
    Vec midpoint() const;
};

/// Connection coefficients Γ^k_ij at one point, stored densely (k slowest).
class Christoffel {
public:
    explicit Christoffel(int n) : n_(n), data_(static_cast<std::size_t>(n) * n * n, 0.0) {}

    int dim() const { return n_; }
    double& operator()(int k, int i, int j) { return data_[index(k, i, j)]; }
    double operator()(int k, int i, int j) const { return data_[index(k, i, j)]; }

    /// w^k = Γ^k_ij u^i v^j.
    Vec contract(const Vec& u, const Vec& v) const;
    bool is_zero() const;

private:
    std::size_t index(int k, int i, int j) const {
        return (static_cast<std::size_t>(k) * n_ + i) * n_ + j;
    }
    int n_;
    std::vector<double> data_;
};

enum class ManifoldKind { flat, sphere, custom };

std::string to_string(ManifoldKind kind);

using MetricField = std::function<Mat(const Vec&)>;

/// A single-chart Riemannian manifold with its Levi-Civita connection.
///
/// `sphere` uses spherical coordinates (θ, φ) with metric r² diag(1, sin²θ).
/// `custom` takes an arbitrary metric field; its connection is obtained from
/// central differences of the metric. Values are immutable once built.
class ChartManifold {
public:
    static ChartManifold flat(int n, ChartDomain domain);
    static ChartManifold flat(int n, double half_width = 10.0);
    static ChartManifold sphere(double radius, ChartDomain domain);
    static ChartManifold sphere(double radius = 1.0, double theta_min = 0.1);
    static ChartManifold custom(int n, ChartDomain domain, MetricField metric,
                                double curvature_bound, double fd_step = 1e-5);

    int dim() const { return n_; }
    ManifoldKind kind() const { return kind_; }
    double radius() const { return radius_; }
    /// Smallest nonnegative upper bound on the sectional curvatures.
    double curvature_bound() const { return curvature_bound_; }
    /// Known for flat and sphere charts only.
    std::optional<double> injectivity_radius() const;
    const ChartDomain& domain() const { return domain_; }
    bool contains(const Vec& x) const { return domain_.contains(x); }
    double fd_step() const { return fd_step_; }

    /// Metric tensor g(x); throws DomainError outside the chart.
    Mat metric(const Vec& x) const;
    /// Christoffel symbols at x; throws DomainError outside the chart and
    /// NumericalError for a singular metric.
    Christoffel christoffel(const Vec& x) const;

    // Unchecked variants used inside integrators (no domain test).
    Mat metric_unchecked(const Vec& x) const;
    Christoffel christoffel_unchecked(const Vec& x) const;

    // Sphere embedding helpers (sphere kind only).
    Eigen::Vector3d embed(const Vec& x) const;
    /// Chart point of an embedded point, choosing the φ branch nearest `phi_ref`.
    Vec chart_point(const Eigen::Vector3d& p, double phi_ref = 0.0) const;
    /// Embedded image of the chart tangent vector v at x.
    Eigen::Vector3d push_forward(const Vec& x, const Vec& v) const;
    /// Chart components of an embedded tangent vector w at x.
    Vec pull_back(const Vec& x, const Eigen::Vector3d& w) const;

private:
    ChartManifold() = default;
    void require_sphere() const;

    ManifoldKind kind_ = ManifoldKind::flat;
    int n_ = 0;
    double radius_ = 1.0;
    double curvature_bound_ = 0.0;
    double fd_step_ = 1e-5;
    ChartDomain domain_;
    std::shared_ptr<const MetricField> metric_;
};

/// Γ^k_ij(x); same as `m.christoffel(x)`.
Christoffel christoffel_at(const ChartManifold& m, const Vec& x);

/// Default integrator step for a flow of duration t: min(1e-3, |t|/1000).
double default_ode_step(double t);

struct GeodesicState {
    Vec position;
    Vec velocity;
};

/// Solves the geodesic equation from (x, v) up to time t with classical RK4.
/// Throws EscapeError when the trajectory leaves the chart domain.
GeodesicState geodesic_flow(const ChartManifold& m, const Vec& x, const Vec& v, double t,
                            double step = 0.0);

/// γ(t) for the geodesic with γ(0) = x and γ'(0) = v.
Vec geodesic(const ChartManifold& m, const Vec& x, const Vec& v, double t, double step = 0.0);

/// Exponential map: closed form on flat and sphere charts, RK4 otherwise.
Vec exp_map(const ChartManifold& m, const Vec& x, const Vec& v);

struct ShootingOptions {
    int max_iterations = 50;
    double tolerance = 1e-8;
};

/// Initial velocity of the geodesic reaching `target` at time 1.
/// Closed form on flat/sphere charts, damped Gauss-Newton shooting on custom charts.
Vec geodesic_connect(const ChartManifold& m, const Vec& x, const Vec& target,
                     const ShootingOptions& options = {});

/// Parallel transport of the columns of z from x to `target` along the connecting geodesic.
Mat parallel_transport(const ChartManifold& m, const Vec& x, const Vec& target, const Mat& z);
Vec parallel_transport(const ChartManifold& m, const Vec& x, const Vec& target, const Vec& z);

/// Transport along a known geodesic (x, velocity) over unit time. Also returns γ'(1).
struct TransportResult {
    Mat transported;
    Vec end_position;
    Vec end_velocity;
};
TransportResult transport_along(const ChartManifold& m, const Vec& x, const Vec& velocity,
                                const Mat& z);

/// Riemannian distance.
double distance(const ChartManifold& m, const Vec& x, const Vec& target);
/// Same as `distance` without the domain test, for finite-difference stencils
/// that may step slightly past the chart boundary (closed forms only on custom charts
/// fall back to the checked version).
double distance_unchecked(const ChartManifold& m, const Vec& x, const Vec& target);

double inner(const ChartManifold& m, const Vec& x, const Vec& u, const Vec& v);
double riemannian_norm(const ChartManifold& m, const Vec& x, const Vec& z);
/// sqrt of the sum of squared Riemannian norms of the columns of z.
double frame_norm(const ChartManifold& m, const Vec& x, const Mat& z);

// ---------------------------------------------------------------------------
// Sampling on charts

/// Geodesic ball {x : δ(center, x) <= radius} used to draw test configurations.
struct SampleRegion {
    Vec center;
    double radius = 0.5;
};

/// Uniform chart draw from the bounding box of `region`, rejected until it falls inside.
Vec sample_point(const ChartManifold& m, const SampleRegion& region, std::mt19937_64& rng);

/// Random tangent vector at x with unit Riemannian norm.
Vec sample_unit_vector(const ChartManifold& m, const Vec& x, std::mt19937_64& rng);

/// Point at distance in [dmin, dmax] from x along a random direction, inside the chart.
Vec sample_at_distance(const ChartManifold& m, const Vec& x, double dmin, double dmax,
                       std::mt19937_64& rng);

// ---------------------------------------------------------------------------

struct EstimateReport;

struct TransportComparisonOptions {
    SampleRegion region;
    std::size_t samples = 1000;
    std::uint64_t seed = 1;
    int workers = 1;
    /// Declared constant the margin is measured against.
    double declared_constant = 10.0;
};

/// Smallest constants C satisfying |τz - z| <= C δ |z| and
/// |z - z'| <= C (|τz - z'|_r + δ (|z|_r + |z'|_r)) over sampled configurations.
EstimateReport transport_comparison_margin(const ChartManifold& m,
                                           const TransportComparisonOptions& options);

}  // namespace mbsde

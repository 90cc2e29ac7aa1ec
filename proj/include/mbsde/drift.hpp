#pragma once

#include "mbsde/geometry.hpp"

#include <functional>
#include <string>

namespace mbsde {

/// Drift f(b, x, z) of the coordinate BSDE, with its declared structural constants.
///
/// `lipschitz_L` is the constant of the geometric Lipschitz condition
/// |τ f(b,x,z) - f(b',x',z')|_r <= L((|b-b'| + δ)(1 + |z|_r + |z'|_r) + |τz - z'|_r),
/// `bound_L2` bounds |f(b, x0, 0)|_r uniformly in b.
struct DriftSpec {
    using Function = std::function<Vec(const Vec& b, const Vec& x, const Mat& z)>;

    std::string name;
    Function f;
    double lipschitz_L = 0.0;
    double bound_L2 = 0.0;
    Vec anchor_x0;
    /// True when f does not depend on z; the solver then skips Picard re-linearization.
    bool z_free = true;

    Vec operator()(const Vec& b, const Vec& x, const Mat& z) const { return f(b, x, z); }
    bool is_zero() const { return name == "zero"; }

    static DriftSpec zero(int n);
    static DriftSpec constant(Vec value);
    /// f(b, x, z) = x (flat charts; L = 1).
    static DriftSpec position(int n);
    /// κ times the outward unit radial field of the geodesic ball centered at `center`.
    static DriftSpec radial(const ChartManifold& m, Vec center, double kappa);
    /// f(b, x, z) = κ z 1 (sum of the columns of z); L = |κ| sqrt(d_w).
    static DriftSpec frame_linear(int n, double kappa, int dim_w = 1);
};

/// Terminal map U = F(B_T).
struct TerminalCondition {
    std::string name;
    std::function<Vec(const Vec& b)> F;

    Vec operator()(const Vec& b) const { return F(b); }

    static TerminalCondition constant(Vec p);
    /// F(b) = b (requires n = d).
    static TerminalCondition identity();
    /// F(b) = b_k as a one-dimensional point.
    static TerminalCondition coordinate(int k);
    /// F(b) = b_0^2 - b_1^2 as a one-dimensional point.
    static TerminalCondition harmonic_quadratic();
    /// F(b) = exp_center(radius tanh(gain |b|) b/|b|) in an orthonormal frame at the center,
    /// so the image lies in the open geodesic ball of the given radius.
    static TerminalCondition ball_map(const ChartManifold& m, Vec center, double radius, double gain = 1.0);
};

/// Sublevel domain {χ <= c} given by a geodesic ball: χ = δ²(o, ·), c = ρ².
class DomainGauge {
public:
    DomainGauge(ChartManifold m, Vec center, double radius);

    const Vec& center() const { return center_; }
    double radius() const { return radius_; }
    double level() const { return radius_ * radius_; }
    double chi(const Vec& x) const;
    /// True when χ(x) <= c + band.
    bool contains(const Vec& x, double band = 0.0) const;
    /// (Dχ(x) | v): derivative of χ along the chart vector v.
    double directional(const Vec& x, const Vec& v) const;
    /// Riemannian norm of the gradient of χ at x (= 2 δ(o, x)).
    double gradient_norm(const Vec& x) const;
    /// Geodesic retraction toward the center onto {χ = c}; identity inside the ball.
    Vec project(const Vec& x) const;
    /// Point of the boundary sphere in the direction of the unit chart vector `dir` at the center.
    Vec boundary_point(const Vec& dir) const;

private:
    ChartManifold m_;
    Vec center_;
    double radius_;
};

/// Orthonormal frame (columns) of T_x M for the metric at x.
Mat orthonormal_frame(const ChartManifold& m, const Vec& x);

}  // namespace mbsde

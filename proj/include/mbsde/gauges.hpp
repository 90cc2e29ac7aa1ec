#pragma once

#include "mbsde/geometry.hpp"

#include <functional>
#include <string>
#include <utility>

namespace mbsde {

enum class GaugeKind { emery, sin_power, distance_squared, custom };

std::string to_string(GaugeKind kind);

/// Two-point gauge Ψ(x, x') on M × M, vanishing exactly on the diagonal.
///
/// `order` is the exponent p in Ψ ≈ δ^p. Smooth gauges have an even order;
/// Ψ_a = sin^a(√K δ/2) behaves like δ^a and is smooth only off the diagonal.
struct GaugeFunction {
    using Function = std::function<double(const Vec&, const Vec&)>;

    GaugeKind kind = GaugeKind::distance_squared;
    double epsilon = 0.1;   // emery
    double a = 1.125;       // sin_power exponent
    double K = 1.0;         // sin_power curvature scale
    double order = 2.0;
    Function custom_fn;

    static GaugeFunction emery(double epsilon = 0.1);
    static GaugeFunction sin_power(double a, double K);
    /// Ψ_a with a = 1 + (e - 1)/4 for the integrability factor e.
    static GaugeFunction sin_power_from_e(double e, double K);
    static GaugeFunction distance_squared();
    static GaugeFunction custom(Function fn, int order);

    bool smooth_on_diagonal() const { return kind != GaugeKind::sin_power; }
};

/// Smallest δ(x, x') at which Ψ_a derivatives are evaluated.
inline constexpr double kSinPowerExclusion = 1e-3;

double gauge_value(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2);

/// Coordinate gradient (∂Ψ/∂x, ∂Ψ/∂x') as a 2n-vector.
Vec gauge_gradient(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2);

/// tu Hess Ψ u for u = (u0, u1) in T_x M × T_x' M, with the product-connection correction.
double gauge_hessian(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2,
                     const Vec& u);

/// Full 2n × 2n Hessian matrix ∂_ij Ψ - Γ̄^k_ij ∂_k Ψ.
Mat gauge_hessian_matrix(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2);

/// Hessian expressed in v-coordinates v = (x - x', x'):
/// tu Hess u = t(z - z') Ã (z - z') + 2 t(z - z') Ẽ z' + tz' B̃ z'.
struct HessianBlocks {
    Mat A_tilde;
    Mat B_tilde;
    Mat E_tilde;
    Mat full() const;
};

HessianBlocks hessian_blocks(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2);

/// Hessian of a scalar function h on M along u: D²_u h - Dh(Γ(x)(u, u)).
double scalar_hessian(const ChartManifold& m, const ScalarField& h, const Vec& x, const Vec& u,
                      double step = 1e-3);

/// tu Hess δ u on M × M (product connection), off the diagonal.
double distance_hessian(const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u);

/// δ'(x, x')<u> by finite differences.
double distance_derivative(const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u);

// ---------------------------------------------------------------------------
// Ratio maximization for the Jacobi-field bound

/// h(t) = sin t / t (h(0) = 1).
double sinc(double t);
/// H(t, β) = (1 - h(t) cos(t + 2β)) / (sin²β + sin²(t + β)).
double jacobi_ratio(double t, double beta);
/// ∂H/∂β = 2 (h(t) - cos t) sin(t + 2β) / D², D = 1 - cos t cos(t + 2β).
double jacobi_ratio_dbeta(double t, double beta);

struct RatioMax {
    double value;
    double argmax;
};

/// max over β in [0, π - 2y] of H(2y, β): value (1 + h(2y))/(1 + cos 2y) at β = π/2 - y.
RatioMax jacobi_ratio_max(double y);

// ---------------------------------------------------------------------------

/// Tangential (projection on γ̇) and orthogonal parts of u = (u0, u1) at the endpoints
/// of the geodesic from x to x'.
struct SplitComponents {
    Vec v0, v1;  // tangential
    Vec w0, w1;  // orthogonal
    Vec e0, e1;  // unit tangents γ̇(0)/|γ̇|, γ̇(1)/|γ̇|
};

SplitComponents split_components(const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u0,
                                 const Vec& u1);

}  // namespace mbsde

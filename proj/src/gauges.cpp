#include "mbsde/gauges.hpp"

#include "mbsde/errors.hpp"

#include <cmath>
#include <numbers>

namespace mbsde {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kFirstStep = 1e-4;
constexpr double kSecondStep = 1e-3;

void require_pair(const ChartManifold& m, const Vec& x, const Vec& x2) {
    if (x.size() != m.dim() || x2.size() != m.dim()) throw DomainError("gauge: point dimension mismatch");
}

// Value without domain checks, used inside finite-difference stencils.
double raw_value(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2) {
    switch (g.kind) {
        case GaugeKind::emery: {
            const double s = g.epsilon * g.epsilon + x2.squaredNorm();
            return 0.5 * s * (x - x2).squaredNorm();
        }
        case GaugeKind::sin_power: {
            const double y = std::sqrt(g.K) * distance_unchecked(m, x, x2) / 2;
            return std::pow(std::sin(y), g.a);
        }
        case GaugeKind::distance_squared: {
            const double d = distance_unchecked(m, x, x2);
            return d * d;
        }
        case GaugeKind::custom: return g.custom_fn(x, x2);
    }
    return 0.0;
}

// Finite-difference step for a gauge at (x, x'), honoring the sin_power exclusion band.
double fd_step(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2, double base) {
    if (g.kind != GaugeKind::sin_power) return base;
    const double d = distance_unchecked(m, x, x2);
    if (d <= kSinPowerExclusion) {
        throw DomainError("Ψ_a is not differentiable on the diagonal (δ = " + std::to_string(d) + ")");
    }
    return std::min(base, d / 20);
}

bool analytic_second(const GaugeFunction& g, const ChartManifold& m) {
    return g.kind == GaugeKind::emery || (g.kind == GaugeKind::distance_squared && m.kind() == ManifoldKind::flat);
}

Vec join(const Vec& a, const Vec& b) {
    Vec out(a.size() + b.size());
    out << a, b;
    return out;
}

// Coordinate second-derivative matrix D²Ψ (no connection term).
Mat coordinate_second(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2) {
    const int n = m.dim();
    Mat h(2 * n, 2 * n);
    if (g.kind == GaugeKind::emery) {
        const Vec d = x - x2;
        const double s = g.epsilon * g.epsilon + x2.squaredNorm();
        const double q = d.squaredNorm();
        const Mat id = Mat::Identity(n, n);
        const Mat cross = 2 * d * x2.transpose() - s * id;
        h.topLeftCorner(n, n) = s * id;
        h.topRightCorner(n, n) = cross;
        h.bottomLeftCorner(n, n) = cross.transpose();
        h.bottomRightCorner(n, n) = (q + s) * id - 2 * (x2 * d.transpose() + d * x2.transpose());
        return h;
    }
    if (g.kind == GaugeKind::distance_squared && m.kind() == ManifoldKind::flat) {
        const Mat id = Mat::Identity(n, n);
        h << 2 * id, -2 * id, -2 * id, 2 * id;
        return h;
    }
    const double step = fd_step(g, m, x, x2, kSecondStep);
    const Vec base = join(x, x2);
    const ScalarField f = [&](const Vec& p) { return raw_value(g, m, p.head(n), p.tail(n)); };
    Vec diag(2 * n);
    for (int i = 0; i < 2 * n; ++i) {
        diag[i] = fd::directional2(f, base, Vec::Unit(2 * n, i), step);
        h(i, i) = diag[i];
    }
    for (int i = 0; i < 2 * n; ++i) {
        for (int j = i + 1; j < 2 * n; ++j) {
            const Vec dir = (Vec::Unit(2 * n, i) + Vec::Unit(2 * n, j)) / std::sqrt(2.0);
            const double dd = fd::directional2(f, base, dir, step);
            // dd = (H_ii + H_jj + 2 H_ij) / 2
            h(i, j) = h(j, i) = dd - 0.5 * (diag[i] + diag[j]);
        }
    }
    return h;
}

// Γ̄(u, u) for the product connection on M × M.
Vec product_christoffel_contract(const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u) {
    const int n = m.dim();
    const Vec u0 = u.head(n), u1 = u.tail(n);
    return join(m.christoffel_unchecked(x).contract(u0, u0), m.christoffel_unchecked(x2).contract(u1, u1));
}

}  // namespace

std::string to_string(GaugeKind kind) {
    switch (kind) {
        case GaugeKind::emery: return "emery";
        case GaugeKind::sin_power: return "sin_power";
        case GaugeKind::distance_squared: return "distance_squared";
        case GaugeKind::custom: return "custom";
    }
    return "unknown";
}

GaugeFunction GaugeFunction::emery(double epsilon) {
    if (!(epsilon > 0)) throw DomainError("emery gauge needs ε > 0");
    GaugeFunction g;
    g.kind = GaugeKind::emery;
    g.epsilon = epsilon;
    g.order = 2;
    return g;
}

GaugeFunction GaugeFunction::sin_power(double a, double K) {
    if (!(a > 1 && a < 2)) throw DomainError("sin_power exponent must satisfy 1 < a < 2");
    if (!(K > 0)) throw DomainError("sin_power gauge needs a positive curvature bound");
    GaugeFunction g;
    g.kind = GaugeKind::sin_power;
    g.a = a;
    g.K = K;
    g.order = a;
    return g;
}

GaugeFunction GaugeFunction::sin_power_from_e(double e, double K) {
    if (!(e > 1)) throw DomainError("integrability factor e must exceed 1");
    return sin_power(1 + (e - 1) / 4, K);
}

GaugeFunction GaugeFunction::distance_squared() {
    GaugeFunction g;
    g.kind = GaugeKind::distance_squared;
    g.order = 2;
    return g;
}

GaugeFunction GaugeFunction::custom(Function fn, int order) {
    if (!fn) throw DomainError("custom gauge needs a function");
    if (order < 2 || order % 2 != 0) throw DomainError("gauge order must be an even integer >= 2");
    GaugeFunction g;
    g.kind = GaugeKind::custom;
    g.custom_fn = std::move(fn);
    g.order = order;
    return g;
}

double gauge_value(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2) {
    require_pair(m, x, x2);
    if (g.kind == GaugeKind::sin_power || g.kind == GaugeKind::distance_squared) {
        const double d = distance(m, x, x2);
        if (g.kind == GaugeKind::distance_squared) return d * d;
        return std::pow(std::sin(std::sqrt(g.K) * d / 2), g.a);
    }
    return raw_value(g, m, x, x2);
}

Vec gauge_gradient(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2) {
    require_pair(m, x, x2);
    const int n = m.dim();
    if (g.kind == GaugeKind::emery) {
        const Vec d = x - x2;
        const double s = g.epsilon * g.epsilon + x2.squaredNorm();
        return join(s * d, x2 * d.squaredNorm() - s * d);
    }
    if (g.kind == GaugeKind::distance_squared && m.kind() == ManifoldKind::flat) {
        return join(2 * (x - x2), 2 * (x2 - x));
    }
    const double step = fd_step(g, m, x, x2, kFirstStep);
    const ScalarField f = [&](const Vec& p) { return raw_value(g, m, p.head(n), p.tail(n)); };
    return fd::gradient(f, join(x, x2), step);
}

double gauge_hessian(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2,
                     const Vec& u) {
    require_pair(m, x, x2);
    const int n = m.dim();
    if (u.size() != 2 * n) throw DomainError("gauge_hessian: direction must have size 2n");
    const Vec w = product_christoffel_contract(m, x, x2, u);
    if (analytic_second(g, m)) {
        return u.dot(coordinate_second(g, m, x, x2) * u) - gauge_gradient(g, m, x, x2).dot(w);
    }
    const double norm = u.norm();
    if (norm == 0.0) return 0.0;
    const ScalarField f = [&](const Vec& p) { return raw_value(g, m, p.head(n), p.tail(n)); };
    const Vec base = join(x, x2);
    const double second = fd::directional2(f, base, u / norm, fd_step(g, m, x, x2, kSecondStep)) * norm * norm;
    double first = 0.0;
    const double wn = w.norm();
    if (wn > 0) first = fd::directional(f, base, w / wn, fd_step(g, m, x, x2, kFirstStep)) * wn;
    return second - first;
}

Mat gauge_hessian_matrix(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2) {
    require_pair(m, x, x2);
    const int n = m.dim();
    Mat h = coordinate_second(g, m, x, x2);
    const Vec grad = gauge_gradient(g, m, x, x2);
    const Christoffel g0 = m.christoffel_unchecked(x);
    const Christoffel g1 = m.christoffel_unchecked(x2);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            double c0 = 0.0, c1 = 0.0;
            for (int k = 0; k < n; ++k) {
                c0 += g0(k, i, j) * grad[k];
                c1 += g1(k, i, j) * grad[n + k];
            }
            h(i, j) -= c0;
            h(n + i, n + j) -= c1;
        }
    }
    return h;
}

Mat HessianBlocks::full() const {
    const auto n = A_tilde.rows();
    Mat out(2 * n, 2 * n);
    out << A_tilde, E_tilde, E_tilde.transpose(), B_tilde;
    return out;
}

HessianBlocks hessian_blocks(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2) {
    const int n = m.dim();
    const Mat h = gauge_hessian_matrix(g, m, x, x2);
    // (z, z') = J (z - z', z') with J = [[I, I], [0, I]]; the blocks are those of J^T H J.
    Mat j = Mat::Identity(2 * n, 2 * n);
    j.topRightCorner(n, n) = Mat::Identity(n, n);
    const Mat t = j.transpose() * h * j;
    HessianBlocks b;
    b.A_tilde = t.topLeftCorner(n, n);
    b.E_tilde = t.topRightCorner(n, n);
    b.B_tilde = t.bottomRightCorner(n, n);
    return b;
}

double scalar_hessian(const ChartManifold& m, const ScalarField& h, const Vec& x, const Vec& u, double step) {
    const double norm = u.norm();
    if (norm == 0.0) return 0.0;
    const double second = fd::directional2(h, x, u / norm, step) * norm * norm;
    const Vec w = m.christoffel_unchecked(x).contract(u, u);
    const double wn = w.norm();
    const double first = wn > 0 ? fd::directional(h, x, w / wn, std::min(step, kFirstStep)) * wn : 0.0;
    return second - first;
}

double distance_hessian(const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u) {
    const int n = m.dim();
    const double d = distance(m, x, x2);
    if (d <= kSinPowerExclusion) throw DomainError("distance is not differentiable on the diagonal");
    const ScalarField f = [&](const Vec& p) { return distance_unchecked(m, p.head(n), p.tail(n)); };
    const double norm = u.norm();
    if (norm == 0.0) return 0.0;
    const Vec base = join(x, x2);
    const double step = std::min(kSecondStep, d / 20);
    const double second = fd::directional2(f, base, u / norm, step) * norm * norm;
    const Vec w = product_christoffel_contract(m, x, x2, u);
    const double wn = w.norm();
    const double first = wn > 0 ? fd::directional(f, base, w / wn, std::min(kFirstStep, d / 20)) * wn : 0.0;
    return second - first;
}

double distance_derivative(const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u) {
    const int n = m.dim();
    const double d = distance(m, x, x2);
    if (d <= kSinPowerExclusion) throw DomainError("distance is not differentiable on the diagonal");
    const ScalarField f = [&](const Vec& p) { return distance_unchecked(m, p.head(n), p.tail(n)); };
    const double norm = u.norm();
    if (norm == 0.0) return 0.0;
    return fd::directional(f, join(x, x2), u / norm, std::min(kFirstStep, d / 20)) * norm;
}

// ---------------------------------------------------------------------------

double sinc(double t) { return t == 0.0 ? 1.0 : std::sin(t) / t; }

double jacobi_ratio(double t, double beta) {
    const double sb = std::sin(beta), stb = std::sin(t + beta);
    return (1 - sinc(t) * std::cos(t + 2 * beta)) / (sb * sb + stb * stb);
}

double jacobi_ratio_dbeta(double t, double beta) {
    const double d = 1 - std::cos(t) * std::cos(t + 2 * beta);
    return 2 * (sinc(t) - std::cos(t)) * std::sin(t + 2 * beta) / (d * d);
}

RatioMax jacobi_ratio_max(double y) {
    if (!(y > 0 && y < kPi / 2)) throw DomainError("jacobi_ratio_max needs 0 < y < π/2");
    return {(1 + sinc(2 * y)) / (1 + std::cos(2 * y)), kPi / 2 - y};
}

SplitComponents split_components(const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u0,
                                 const Vec& u1) {
    const Vec v = geodesic_connect(m, x, x2);
    const double speed = riemannian_norm(m, x, v);
    if (speed == 0.0) throw DomainError("split_components needs distinct points");
    SplitComponents s;
    s.e0 = v / speed;
    // The reversed geodesic leaves x' with velocity -γ̇(1).
    const Vec back = geodesic_connect(m, x2, x);
    s.e1 = -back / riemannian_norm(m, x2, back);
    s.v0 = inner(m, x, u0, s.e0) * s.e0;
    s.v1 = inner(m, x2, u1, s.e1) * s.e1;
    s.w0 = u0 - s.v0;
    s.w1 = u1 - s.v1;
    return s;
}

}  // namespace mbsde

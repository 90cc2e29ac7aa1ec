#include "mbsde/drift.hpp"

#include "mbsde/errors.hpp"

#include <cmath>

namespace mbsde {

DriftSpec DriftSpec::zero(int n) {
    DriftSpec d;
    d.name = "zero";
    d.f = [n](const Vec&, const Vec&, const Mat&) { return Vec::Zero(n).eval(); };
    d.anchor_x0 = Vec::Zero(n);
    return d;
}

DriftSpec DriftSpec::constant(Vec value) {
    DriftSpec d;
    d.name = "constant";
    d.anchor_x0 = Vec::Zero(value.size());
    d.bound_L2 = value.norm();
    d.f = [value = std::move(value)](const Vec&, const Vec&, const Mat&) { return value; };
    return d;
}

DriftSpec DriftSpec::position(int n) {
    DriftSpec d;
    d.name = "position";
    d.f = [](const Vec&, const Vec& x, const Mat&) { return x; };
    d.lipschitz_L = 1.0;
    d.anchor_x0 = Vec::Zero(n);
    return d;
}

DriftSpec DriftSpec::radial(const ChartManifold& m, Vec center, double kappa) {
    DriftSpec d;
    d.name = "radial";
    d.anchor_x0 = center;
    d.bound_L2 = 0.0;
    // Away from the center the unit radial field has Lipschitz constant of
    // order 1/δ; the declared value covers the annulus the checks sample.
    d.lipschitz_L = 10.0 * std::abs(kappa);
    d.f = [m, center = std::move(center), kappa](const Vec&, const Vec& x, const Mat&) {
        const Vec out = -geodesic_connect(m, x, center);
        const double norm = riemannian_norm(m, x, out);
        if (norm == 0.0) return Vec::Zero(x.size()).eval();
        return (kappa / norm * out).eval();
    };
    return d;
}

DriftSpec DriftSpec::frame_linear(int n, double kappa, int dim_w) {
    DriftSpec d;
    d.name = "frame_linear";
    d.anchor_x0 = Vec::Zero(n);
    d.lipschitz_L = std::abs(kappa) * std::sqrt(static_cast<double>(dim_w));
    d.z_free = false;
    d.f = [kappa](const Vec&, const Vec&, const Mat& z) { return (kappa * z.rowwise().sum()).eval(); };
    return d;
}

TerminalCondition TerminalCondition::constant(Vec p) {
    return {"constant", [p = std::move(p)](const Vec&) { return p; }};
}

TerminalCondition TerminalCondition::identity() {
    return {"identity", [](const Vec& b) { return b; }};
}

TerminalCondition TerminalCondition::coordinate(int k) {
    return {"coordinate", [k](const Vec& b) { return Vec::Constant(1, b[k]).eval(); }};
}

TerminalCondition TerminalCondition::harmonic_quadratic() {
    return {"harmonic_quadratic", [](const Vec& b) { return Vec::Constant(1, b[0] * b[0] - b[1] * b[1]).eval(); }};
}

TerminalCondition TerminalCondition::ball_map(const ChartManifold& m, Vec center, double radius, double gain) {
    const Mat frame = orthonormal_frame(m, center);
    return {"ball_map", [m, center = std::move(center), radius, gain, frame](const Vec& b) {
                const int n = m.dim();
                Vec c = Vec::Zero(n);
                c.head(std::min<Eigen::Index>(n, b.size())) = b.head(std::min<Eigen::Index>(n, b.size()));
                const double norm = c.norm();
                if (norm == 0.0) return center;
                return exp_map(m, center, frame * (radius * std::tanh(gain * norm) / norm * c));
            }};
}

Mat orthonormal_frame(const ChartManifold& m, const Vec& x) {
    const Mat g = m.metric(x);
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success) throw NumericalError("metric not positive definite");
    // g = L L^T, so E = L^{-T} satisfies E^T g E = I.
    const Mat l_inv = llt.matrixL().solve(Mat::Identity(g.rows(), g.cols()));
    return l_inv.transpose();
}

// ---------------------------------------------------------------------------

DomainGauge::DomainGauge(ChartManifold m, Vec center, double radius)
    : m_(std::move(m)), center_(std::move(center)), radius_(radius) {
    if (!(radius > 0)) throw DomainError("domain gauge radius must be positive");
    if (!m_.contains(center_)) throw DomainError("domain gauge center outside the chart");
    const auto inj = m_.injectivity_radius();
    if (inj && radius >= *inj) throw DomainError("domain gauge radius exceeds the injectivity radius");
}

namespace {

// Distance and unit initial direction from o to x, tolerating points that
// have left the chart (needed when projecting escaped solver states).
double polar(const ChartManifold& m, const Vec& o, const Vec& x, Vec* direction) {
    switch (m.kind()) {
        case ManifoldKind::flat: {
            const Vec d = x - o;
            const double r = d.norm();
            if (direction) *direction = r > 0 ? Vec(d / r) : Vec(Vec::Zero(o.size()));
            return r;
        }
        case ManifoldKind::sphere: {
            const double rad = m.radius();
            const Eigen::Vector3d u = m.embed(o) / rad;
            const Eigen::Vector3d p = m.embed(x) / rad;
            const double s = u.cross(p).norm();
            const double c = u.dot(p);
            const double angle = std::atan2(s, c);
            if (direction) {
                if (s == 0.0) {
                    *direction = Vec::Zero(2);
                } else {
                    const Eigen::Vector3d t = (p - c * u) / s;
                    const Vec v = m.pull_back(o, t);
                    *direction = v / riemannian_norm(m, o, v);
                }
            }
            return rad * angle;
        }
        case ManifoldKind::custom: {
            const Vec v = geodesic_connect(m, o, x);
            const double r = riemannian_norm(m, o, v);
            if (direction) *direction = r > 0 ? Vec(v / r) : Vec(Vec::Zero(o.size()));
            return r;
        }
    }
    return 0.0;
}

}  // namespace

double DomainGauge::chi(const Vec& x) const {
    const double r = polar(m_, center_, x, nullptr);
    return r * r;
}

bool DomainGauge::contains(const Vec& x, double band) const { return chi(x) <= level() + band; }

double DomainGauge::directional(const Vec& x, const Vec& v) const {
    // grad χ = -2 exp_x^{-1}(o), so dχ(v) = -2 <exp_x^{-1}(o), v>_r.
    return -2.0 * inner(m_, x, geodesic_connect(m_, x, center_), v);
}

double DomainGauge::gradient_norm(const Vec& x) const { return 2.0 * distance(m_, center_, x); }

Vec DomainGauge::project(const Vec& x) const {
    Vec dir;
    const double r = polar(m_, center_, x, &dir);
    if (r <= radius_) return x;
    Vec out = exp_map(m_, center_, radius_ * dir);
    if (m_.kind() == ManifoldKind::sphere) {
        // Keep the φ branch of the center so chart values stay continuous.
        out = m_.chart_point(m_.embed(out), center_[1]);
    }
    return out;
}

Vec DomainGauge::boundary_point(const Vec& dir) const {
    const double norm = riemannian_norm(m_, center_, dir);
    if (norm == 0.0) throw DomainError("boundary direction must be nonzero");
    return exp_map(m_, center_, radius_ / norm * dir);
}

}  // namespace mbsde

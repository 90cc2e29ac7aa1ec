#include "mbsde/geometry.hpp"

#include "mbsde/errors.hpp"
#include "mbsde/parallel.hpp"
#include "mbsde/random.hpp"
#include "mbsde/report.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace mbsde {

namespace {

constexpr double kPi = std::numbers::pi;

std::string describe(const Vec& x) {
    std::ostringstream os;
    os << '(';
    for (Eigen::Index i = 0; i < x.size(); ++i) os << (i ? ", " : "") << x[i];
    os << ')';
    return os.str();
}

void require_inside(const ChartManifold& m, const Vec& x, const char* what) {
    if (x.size() != m.dim()) {
        throw DomainError(std::string(what) + ": point has dimension " + std::to_string(x.size()) +
                          ", chart has dimension " + std::to_string(m.dim()));
    }
    if (!m.contains(x)) {
        throw DomainError(std::string(what) + ": point " + describe(x) + " outside chart domain");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// ChartDomain

ChartDomain ChartDomain::box(Vec lo, Vec hi) {
    if (lo.size() != hi.size() || lo.size() == 0) throw DomainError("box bounds mismatch");
    if ((hi.array() <= lo.array()).any()) throw DomainError("empty box domain");
    ChartDomain d;
    d.shape = Shape::box;
    d.lo = std::move(lo);
    d.hi = std::move(hi);
    return d;
}

ChartDomain ChartDomain::ball(Vec center, double radius) {
    if (!(radius > 0)) throw DomainError("ball domain needs a positive radius");
    ChartDomain d;
    d.shape = Shape::ball;
    d.center = std::move(center);
    d.radius = radius;
    return d;
}

bool ChartDomain::contains(const Vec& x) const {
    if (x.size() != dim() || !x.allFinite()) return false;
    if (shape == Shape::box) return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
    return (x - center).norm() <= radius;
}

Vec ChartDomain::midpoint() const {
    return shape == Shape::box ? Vec(0.5 * (lo + hi)) : center;
}

// ---------------------------------------------------------------------------
// Christoffel

Vec Christoffel::contract(const Vec& u, const Vec& v) const {
    Vec w = Vec::Zero(n_);
    for (int k = 0; k < n_; ++k) {
        double acc = 0.0;
        for (int i = 0; i < n_; ++i) {
            if (u[i] == 0.0) continue;
            for (int j = 0; j < n_; ++j) acc += (*this)(k, i, j) * u[i] * v[j];
        }
        w[k] = acc;
    }
    return w;
}

bool Christoffel::is_zero() const {
    return std::all_of(data_.begin(), data_.end(), [](double c) { return c == 0.0; });
}

std::string to_string(ManifoldKind kind) {
    switch (kind) {
        case ManifoldKind::flat: return "flat";
        case ManifoldKind::sphere: return "sphere";
        case ManifoldKind::custom: return "custom";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// ChartManifold

ChartManifold ChartManifold::flat(int n, ChartDomain domain) {
    if (n <= 0) throw DomainError("dimension must be positive");
    if (domain.dim() != n) throw DomainError("flat chart domain dimension mismatch");
    ChartManifold m;
    m.kind_ = ManifoldKind::flat;
    m.n_ = n;
    m.curvature_bound_ = 0.0;
    m.domain_ = std::move(domain);
    return m;
}

ChartManifold ChartManifold::flat(int n, double half_width) {
    return flat(n, ChartDomain::box(Vec::Constant(n, -half_width), Vec::Constant(n, half_width)));
}

ChartManifold ChartManifold::sphere(double radius, ChartDomain domain) {
    if (!(radius > 0)) throw DomainError("sphere radius must be positive");
    if (domain.dim() != 2) throw DomainError("sphere chart is two dimensional");
    ChartManifold m;
    m.kind_ = ManifoldKind::sphere;
    m.n_ = 2;
    m.radius_ = radius;
    m.curvature_bound_ = 1.0 / (radius * radius);
    m.domain_ = std::move(domain);
    if (m.domain_.shape == ChartDomain::Shape::box &&
        (m.domain_.lo[0] <= 0.0 || m.domain_.hi[0] >= kPi)) {
        throw DomainError("sphere chart must exclude the poles (0 < θ < π)");
    }
    return m;
}

ChartManifold ChartManifold::sphere(double radius, double theta_min) {
    Vec lo(2), hi(2);
    lo << theta_min, -2 * kPi;
    hi << kPi - theta_min, 2 * kPi;
    return sphere(radius, ChartDomain::box(lo, hi));
}

ChartManifold ChartManifold::custom(int n, ChartDomain domain, MetricField metric,
                                    double curvature_bound, double fd_step) {
    if (n <= 0) throw DomainError("dimension must be positive");
    if (domain.dim() != n) throw DomainError("custom chart domain dimension mismatch");
    if (!metric) throw DomainError("custom chart needs a metric field");
    if (curvature_bound < 0) throw DomainError("curvature bound must be nonnegative");
    if (!(fd_step > 0)) throw DomainError("finite-difference step must be positive");
    ChartManifold m;
    m.kind_ = ManifoldKind::custom;
    m.n_ = n;
    m.curvature_bound_ = curvature_bound;
    m.fd_step_ = fd_step;
    m.domain_ = std::move(domain);
    m.metric_ = std::make_shared<const MetricField>(std::move(metric));
    return m;
}

std::optional<double> ChartManifold::injectivity_radius() const {
    switch (kind_) {
        case ManifoldKind::flat: return std::numeric_limits<double>::infinity();
        case ManifoldKind::sphere: return kPi * radius_;
        case ManifoldKind::custom: return std::nullopt;
    }
    return std::nullopt;
}

Mat ChartManifold::metric_unchecked(const Vec& x) const {
    switch (kind_) {
        case ManifoldKind::flat: return Mat::Identity(n_, n_);
        case ManifoldKind::sphere: {
            Mat g = Mat::Zero(2, 2);
            const double s = std::sin(x[0]);
            g(0, 0) = radius_ * radius_;
            g(1, 1) = radius_ * radius_ * s * s;
            return g;
        }
        case ManifoldKind::custom: return (*metric_)(x);
    }
    return {};
}

Mat ChartManifold::metric(const Vec& x) const {
    require_inside(*this, x, "metric");
    return metric_unchecked(x);
}

Christoffel ChartManifold::christoffel_unchecked(const Vec& x) const {
    Christoffel gamma(n_);
    switch (kind_) {
        case ManifoldKind::flat: break;
        case ManifoldKind::sphere: {
            const double s = std::sin(x[0]);
            const double c = std::cos(x[0]);
            gamma(0, 1, 1) = -s * c;
            gamma(1, 0, 1) = c / s;
            gamma(1, 1, 0) = c / s;
            break;
        }
        case ManifoldKind::custom: {
            const Mat g = (*metric_)(x);
            Eigen::LLT<Mat> llt(g);
            if (llt.info() != Eigen::Success || !g.allFinite()) {
                throw NumericalError("singular or indefinite metric at " + describe(x));
            }
            const Mat g_inv = llt.solve(Mat::Identity(n_, n_));
            // dg[l](i, j) = ∂_l g_ij
            std::vector<Mat> dg(n_);
            for (int l = 0; l < n_; ++l) {
                Vec xp = x, xm = x;
                xp[l] += fd_step_;
                xm[l] -= fd_step_;
                dg[l] = ((*metric_)(xp) - (*metric_)(xm)) / (2 * fd_step_);
            }
            for (int k = 0; k < n_; ++k) {
                for (int i = 0; i < n_; ++i) {
                    for (int j = i; j < n_; ++j) {
                        double acc = 0.0;
                        for (int l = 0; l < n_; ++l) {
                            acc += g_inv(k, l) * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
                        }
                        gamma(k, i, j) = 0.5 * acc;
                        gamma(k, j, i) = 0.5 * acc;
                    }
                }
            }
            break;
        }
    }
    return gamma;
}

Christoffel ChartManifold::christoffel(const Vec& x) const {
    require_inside(*this, x, "christoffel");
    return christoffel_unchecked(x);
}

void ChartManifold::require_sphere() const {
    if (kind_ != ManifoldKind::sphere) throw UnsupportedError("embedding is defined for sphere charts only");
}

Eigen::Vector3d ChartManifold::embed(const Vec& x) const {
    require_sphere();
    const double st = std::sin(x[0]);
    return radius_ * Eigen::Vector3d(st * std::cos(x[1]), st * std::sin(x[1]), std::cos(x[0]));
}

Vec ChartManifold::chart_point(const Eigen::Vector3d& p, double phi_ref) const {
    require_sphere();
    Vec x(2);
    x[0] = std::atan2(std::hypot(p[0], p[1]), p[2]);
    double phi = std::atan2(p[1], p[0]);
    phi += 2 * kPi * std::round((phi_ref - phi) / (2 * kPi));
    x[1] = phi;
    return x;
}

Eigen::Vector3d ChartManifold::push_forward(const Vec& x, const Vec& v) const {
    require_sphere();
    const double st = std::sin(x[0]), ct = std::cos(x[0]);
    const double sp = std::sin(x[1]), cp = std::cos(x[1]);
    const Eigen::Vector3d e_theta = radius_ * Eigen::Vector3d(ct * cp, ct * sp, -st);
    const Eigen::Vector3d e_phi = radius_ * Eigen::Vector3d(-st * sp, st * cp, 0.0);
    return v[0] * e_theta + v[1] * e_phi;
}

Vec ChartManifold::pull_back(const Vec& x, const Eigen::Vector3d& w) const {
    require_sphere();
    const double st = std::sin(x[0]), ct = std::cos(x[0]);
    const double sp = std::sin(x[1]), cp = std::cos(x[1]);
    const Eigen::Vector3d e_theta = radius_ * Eigen::Vector3d(ct * cp, ct * sp, -st);
    const Eigen::Vector3d e_phi = radius_ * Eigen::Vector3d(-st * sp, st * cp, 0.0);
    const double r2 = radius_ * radius_;
    Vec v(2);
    v[0] = w.dot(e_theta) / r2;
    v[1] = w.dot(e_phi) / (r2 * st * st);
    return v;
}

Christoffel christoffel_at(const ChartManifold& m, const Vec& x) { return m.christoffel(x); }

// ---------------------------------------------------------------------------
// Geodesics and transport

double default_ode_step(double t) { return std::min(1e-3, std::abs(t) / 1000.0); }

namespace {

int step_count(double t, double step) {
    const double h = step > 0 ? step : default_ode_step(t);
    return std::max(1, static_cast<int>(std::ceil(std::abs(t) / h - 1e-9)));
}

/// Joint RK4 for (position, velocity, transported columns) along a geodesic.
struct FlowState {
    Vec x;
    Vec v;
    Mat z;  // n x k, may have zero columns
};

FlowState flow_rhs(const ChartManifold& m, const FlowState& s) {
    const Christoffel gamma = m.christoffel_unchecked(s.x);
    FlowState d;
    d.x = s.v;
    d.v = -gamma.contract(s.v, s.v);
    d.z.resize(s.z.rows(), s.z.cols());
    for (Eigen::Index c = 0; c < s.z.cols(); ++c) d.z.col(c) = -gamma.contract(s.v, s.z.col(c));
    return d;
}

FlowState axpy(const FlowState& s, double h, const FlowState& d) {
    return {s.x + h * d.x, s.v + h * d.v, s.z + h * d.z};
}

FlowState integrate_flow(const ChartManifold& m, FlowState s, double t, double step) {
    if (t == 0.0) return s;
    const int n_steps = step_count(t, step);
    const double h = t / n_steps;
    for (int k = 0; k < n_steps; ++k) {
        const FlowState k1 = flow_rhs(m, s);
        const FlowState k2 = flow_rhs(m, axpy(s, h / 2, k1));
        const FlowState k3 = flow_rhs(m, axpy(s, h / 2, k2));
        const FlowState k4 = flow_rhs(m, axpy(s, h, k3));
        s.x += h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x);
        s.v += h / 6 * (k1.v + 2 * k2.v + 2 * k3.v + k4.v);
        s.z += h / 6 * (k1.z + 2 * k2.z + 2 * k3.z + k4.z);
        if (!m.contains(s.x)) {
            throw EscapeError("geodesic left the chart domain at t = " + std::to_string((k + 1) * h),
                              (k + 1) * h);
        }
    }
    return s;
}

}  // namespace

GeodesicState geodesic_flow(const ChartManifold& m, const Vec& x, const Vec& v, double t,
                            double step) {
    require_inside(m, x, "geodesic");
    if (v.size() != x.size()) throw DomainError("geodesic: velocity dimension mismatch");
    if (m.kind() == ManifoldKind::flat) {
        Vec end = x + t * v;
        // Straight segment inside a convex domain: checking the endpoint suffices.
        if (!m.contains(end)) {
            // Locate the exit time by bisection for the error report.
            double lo = 0.0, hi = 1.0;
            for (int i = 0; i < 60; ++i) {
                const double mid = 0.5 * (lo + hi);
                (m.contains(x + mid * t * v) ? lo : hi) = mid;
            }
            throw EscapeError("straight geodesic leaves the chart domain", hi * t);
        }
        return {end, v};
    }
    FlowState s{x, v, Mat(x.size(), 0)};
    s = integrate_flow(m, std::move(s), t, step);
    return {s.x, s.v};
}

Vec geodesic(const ChartManifold& m, const Vec& x, const Vec& v, double t, double step) {
    return geodesic_flow(m, x, v, t, step).position;
}

Vec exp_map(const ChartManifold& m, const Vec& x, const Vec& v) {
    switch (m.kind()) {
        case ManifoldKind::flat: return x + v;
        case ManifoldKind::sphere: {
            const double r = m.radius();
            const Eigen::Vector3d u = m.embed(x) / r;
            const Eigen::Vector3d w = m.push_forward(x, v);
            const double speed = w.norm();
            if (speed == 0.0) return x;
            const double s = speed / r;
            const Eigen::Vector3d end = r * (std::cos(s) * u + std::sin(s) * w / speed);
            return m.chart_point(end, x[1]);
        }
        case ManifoldKind::custom: return geodesic(m, x, v, 1.0);
    }
    return x;
}

Vec geodesic_connect(const ChartManifold& m, const Vec& x, const Vec& target,
                     const ShootingOptions& options) {
    require_inside(m, x, "geodesic_connect");
    require_inside(m, target, "geodesic_connect");
    switch (m.kind()) {
        case ManifoldKind::flat: return target - x;
        case ManifoldKind::sphere: {
            const double r = m.radius();
            const Eigen::Vector3d u = m.embed(x) / r;
            const Eigen::Vector3d u2 = m.embed(target) / r;
            const double c = u.dot(u2);
            const double s = u.cross(u2).norm();
            if (s == 0.0 && c > 0) return Vec::Zero(2);
            if (s < 1e-9 && c < 0) {
                throw AmbiguityError("antipodal points have no unique connecting geodesic");
            }
            const double angle = std::atan2(s, c);
            const Eigen::Vector3d dir = (u2 - c * u) / s;
            return m.pull_back(x, r * angle * dir);
        }
        case ManifoldKind::custom: break;
    }

    // Damped Gauss-Newton shooting on the endpoint mismatch.
    const int n = m.dim();
    Vec v = target - x;
    auto endpoint = [&](const Vec& vel) -> std::optional<Vec> {
        try {
            return geodesic(m, x, vel, 1.0);
        } catch (const EscapeError&) {
            return std::nullopt;
        }
    };
    std::vector<double> trace;
    auto end = endpoint(v);
    double damping = 1.0;
    while (!end && damping > 1e-6) {
        damping *= 0.5;
        v = damping * (target - x);
        end = endpoint(v);
    }
    if (!end) throw ConvergenceError("shooting: initial guess escapes the chart", trace);
    Vec residual = *end - target;
    const double jac_step = 1e-6;
    for (int it = 0; it < options.max_iterations; ++it) {
        trace.push_back(residual.norm());
        if (residual.norm() < options.tolerance) return v;
        Mat jac(n, n);
        for (int j = 0; j < n; ++j) {
            Vec vp = v;
            vp[j] += jac_step;
            auto ep = endpoint(vp);
            if (!ep) throw ConvergenceError("shooting: Jacobian probe escapes the chart", trace);
            jac.col(j) = (*ep - *end) / jac_step;
        }
        const Vec delta = jac.colPivHouseholderQr().solve(residual);
        double lambda = 1.0;
        bool improved = false;
        while (lambda > 1e-6) {
            const Vec trial = v - lambda * delta;
            auto te = endpoint(trial);
            if (te && (*te - target).norm() < residual.norm()) {
                v = trial;
                end = te;
                residual = *te - target;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!improved) break;
    }
    trace.push_back(residual.norm());
    if (residual.norm() < options.tolerance) return v;
    throw ConvergenceError("shooting did not converge", trace);
}

TransportResult transport_along(const ChartManifold& m, const Vec& x, const Vec& velocity,
                                const Mat& z) {
    require_inside(m, x, "parallel_transport");
    if (m.kind() == ManifoldKind::flat) {
        const Vec end = geodesic(m, x, velocity, 1.0);
        return {z, end, velocity};
    }
    FlowState s{x, velocity, z};
    s = integrate_flow(m, std::move(s), 1.0, 0.0);
    return {s.z, s.x, s.v};
}

Mat parallel_transport(const ChartManifold& m, const Vec& x, const Vec& target, const Mat& z) {
    if (z.rows() != m.dim()) throw DomainError("parallel_transport: frame row count mismatch");
    const Vec v = geodesic_connect(m, x, target);
    if (v.isZero(0.0)) return z;
    return transport_along(m, x, v, z).transported;
}

Vec parallel_transport(const ChartManifold& m, const Vec& x, const Vec& target, const Vec& z) {
    return parallel_transport(m, x, target, Mat(z)).col(0);
}

double distance(const ChartManifold& m, const Vec& x, const Vec& target) {
    require_inside(m, x, "distance");
    require_inside(m, target, "distance");
    switch (m.kind()) {
        case ManifoldKind::flat: return (target - x).norm();
        case ManifoldKind::sphere: {
            const double r = m.radius();
            const Eigen::Vector3d u = m.embed(x) / r;
            const Eigen::Vector3d u2 = m.embed(target) / r;
            return r * std::atan2(u.cross(u2).norm(), u.dot(u2));
        }
        case ManifoldKind::custom: {
            const Vec v = geodesic_connect(m, x, target);
            return riemannian_norm(m, x, v);
        }
    }
    return 0.0;
}

double distance_unchecked(const ChartManifold& m, const Vec& x, const Vec& target) {
    switch (m.kind()) {
        case ManifoldKind::flat: return (target - x).norm();
        case ManifoldKind::sphere: {
            const double r = m.radius();
            const Eigen::Vector3d u = m.embed(x) / r;
            const Eigen::Vector3d u2 = m.embed(target) / r;
            return r * std::atan2(u.cross(u2).norm(), u.dot(u2));
        }
        case ManifoldKind::custom: return distance(m, x, target);
    }
    return 0.0;
}

double inner(const ChartManifold& m, const Vec& x, const Vec& u, const Vec& v) {
    if (m.kind() == ManifoldKind::flat) return u.dot(v);
    return u.dot(m.metric(x) * v);
}

double riemannian_norm(const ChartManifold& m, const Vec& x, const Vec& z) {
    return std::sqrt(std::max(0.0, inner(m, x, z, z)));
}

double frame_norm(const ChartManifold& m, const Vec& x, const Mat& z) {
    if (z.rows() != m.dim()) throw DomainError("frame_norm: frame row count mismatch");
    if (m.kind() == ManifoldKind::flat) return z.norm();
    const Mat g = m.metric(x);
    return std::sqrt(std::max(0.0, (z.transpose() * g * z).trace()));
}

// ---------------------------------------------------------------------------
// Sampling

Vec sample_point(const ChartManifold& m, const SampleRegion& region, std::mt19937_64& rng) {
    require_inside(m, region.center, "sample_point");
    const int n = m.dim();
    Vec half(n);
    if (m.kind() == ManifoldKind::sphere) {
        const double rho = region.radius / m.radius();
        const double st = std::sin(region.center[0]);
        half[0] = rho;
        half[1] = std::sin(rho) >= st ? kPi : std::asin(std::sin(rho) / st);
        half *= 1.0 + 1e-9;
    } else {
        const Mat g_inv = m.metric(region.center).inverse();
        for (int i = 0; i < n; ++i) half[i] = 1.5 * region.radius * std::sqrt(g_inv(i, i));
    }
    for (int attempt = 0; attempt < 100000; ++attempt) {
        Vec x(n);
        for (int i = 0; i < n; ++i) x[i] = uniform(rng, region.center[i] - half[i], region.center[i] + half[i]);
        if (!m.contains(x)) continue;
        if (distance(m, region.center, x) <= region.radius) return x;
    }
    throw DomainError("sample_point: rejection sampling failed; region too small or outside chart");
}

Vec sample_unit_vector(const ChartManifold& m, const Vec& x, std::mt19937_64& rng) {
    for (;;) {
        Vec c = standard_normal(rng, m.dim());
        const double norm = riemannian_norm(m, x, c);
        if (norm > 1e-12) return c / norm;
    }
}

Vec sample_at_distance(const ChartManifold& m, const Vec& x, double dmin, double dmax,
                       std::mt19937_64& rng) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const double d = uniform(rng, dmin, dmax);
        const Vec v = sample_unit_vector(m, x, rng) * d;
        Vec y;
        try {
            y = exp_map(m, x, v);
        } catch (const EscapeError&) {
            continue;
        }
        if (m.contains(y)) return y;
    }
    throw DomainError("sample_at_distance: no admissible point found");
}

// ---------------------------------------------------------------------------

EstimateReport transport_comparison_margin(const ChartManifold& m,
                                           const TransportComparisonOptions& options) {
    struct Sample {
        double ratio_flat = 0.0;   // |τz - z| / (δ |z|)
        double ratio_pair = 0.0;   // |z - z'| / (|τz - z'|_r + δ(|z|_r + |z'|_r))
        std::vector<double> config;
    };
    std::vector<Sample> results(options.samples);
    SampleRegion region = options.region;
    if (region.center.size() == 0) region.center = m.domain().midpoint();

    parallel_for(options.samples, options.workers, [&](std::size_t i) {
        auto rng = substream(options.seed, i);
        for (int attempt = 0; attempt < 1000; ++attempt) {
            const Vec x = sample_point(m, region, rng);
            const Vec x2 = sample_point(m, region, rng);
            Vec z = standard_normal(rng, m.dim());
            z /= z.norm();
            const Vec z2 = standard_normal(rng, m.dim());
            Vec tz;
            try {
                tz = parallel_transport(m, x, x2, z);
            } catch (const EscapeError&) {
                continue;
            }
            const double delta = distance(m, x, x2);
            Sample s;
            const double num = (tz - z).norm();
            s.ratio_flat = delta > 0 ? num / (delta * z.norm()) : 0.0;
            const double denom = riemannian_norm(m, x2, tz - z2) +
                                 delta * (riemannian_norm(m, x, z) + riemannian_norm(m, x2, z2));
            s.ratio_pair = denom > 0 ? (z - z2).norm() / denom : 0.0;
            s.config.assign(x.data(), x.data() + x.size());
            s.config.insert(s.config.end(), x2.data(), x2.data() + x2.size());
            s.config.insert(s.config.end(), z.data(), z.data() + z.size());
            s.config.insert(s.config.end(), z2.data(), z2.data() + z2.size());
            results[i] = std::move(s);
            return;
        }
        throw DomainError("transport_comparison_margin: could not draw a transportable pair");
    });

    EstimateReport report;
    report.estimate = "transport_comparison";
    report.samples = options.samples;
    double c_flat = 0.0, c_pair = 0.0, worst = -1.0;
    for (const auto& s : results) {
        c_flat = std::max(c_flat, s.ratio_flat);
        c_pair = std::max(c_pair, s.ratio_pair);
        const double r = std::max(s.ratio_flat, s.ratio_pair);
        if (r > worst) {
            worst = r;
            report.worst_sample = s.config;
        }
    }
    report.fitted_constants["C_2tp3"] = c_flat;
    report.fitted_constants["C_2tp2"] = c_pair;
    report.min_margin = options.declared_constant - std::max(c_flat, c_pair);
    report.tolerance = 0.0;
    report.finalize();
    return report;
}

}  // namespace mbsde

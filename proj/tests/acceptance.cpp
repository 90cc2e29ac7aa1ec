// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "mbsde/bsde_solver.hpp"
#include "mbsde/diagnostics.hpp"
#include "mbsde/dirichlet.hpp"
#include "mbsde/estimates.hpp"
#include "mbsde/gauges.hpp"
#include "mbsde/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>

using namespace mbsde;

namespace {

constexpr double pi = std::numbers::pi;

Vec pt(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

Vec scalar(double v) { return Vec::Constant(1, v); }

Vec join(const Vec& a, const Vec& b) {
    Vec out(a.size() + b.size());
    out << a, b;
    return out;
}

double sd_of(const Vec& v) { return std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1)); }

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
        r = body();
    } catch (const std::exception& e) {
        r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool pass = r.pass && secs < limit_s;
    if (!pass) ++failures;
    std::printf("%s %2d %s: %s [%.1f s, limit %.0f s]\n", pass ? "PASS" : "FAIL", id, name.c_str(), r.detail.c_str(),
                secs, limit_s);
    std::fflush(stdout);
}

template <class... A>
std::string fmt(const char* f, A... a) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, a...);
    return buf;
}

Outcome maxratio() {
    double worst_value = 0, worst_arg = 0;
    for (int k = 0; k < 50; ++k) {
        const double y = 0.01 + (pi / 2 - 0.02) * (k + 0.5) / 50;
        const int n = 100000;
        double best = -INFINITY, arg = 0;
        for (int i = 0; i <= n; ++i) {
            const double beta = (pi - 2 * y) * i / n;
            const double v = jacobi_ratio(2 * y, beta);
            if (v > best) best = v, arg = beta;
        }
        const auto r = jacobi_ratio_max(y);
        worst_value = std::max(worst_value, std::abs(best - r.value));
        worst_arg = std::max({worst_arg, std::abs(arg - r.argmax), std::abs(r.argmax - (pi / 2 - y))});
    }
    return {worst_value < 1e-8 && worst_arg < 1e-4, fmt("value err %.2e, argmax err %.2e", worst_value, worst_arg)};
}

Outcome geometry_oracles() {
    const auto m = ChartManifold::sphere(1.0);
    auto rng = substream(101, 0);
    double geo = 0, conn = 0, dist = 0, iso = 0, par = 0;
    for (int s = 0; s < 1000; ++s) {
        const Vec x = pt(uniform(rng, 0.8, pi - 0.8), uniform(rng, -1, 1));
        const Vec v = sample_unit_vector(m, x, rng) * uniform(rng, 0.0, 0.6);
        // Geodesic ODE against the embedded great circle.
        const Vec end = geodesic(m, x, v, 1.0);
        const Eigen::Vector3d p = m.embed(x), w = m.push_forward(x, v);
        const Eigen::Vector3d q = w.norm() > 0 ? Eigen::Vector3d(std::cos(w.norm()) * p + std::sin(w.norm()) * w.normalized()) : p;
        geo = std::max(geo, (m.embed(end) - q).norm());
        // Connection, distance and transport between x and a nearby point.
        const Vec y = sample_at_distance(m, x, 0.05, 0.6, rng);
        const Vec c = geodesic_connect(m, x, y);
        conn = std::max(conn, (geodesic(m, x, c, 1.0) - y).norm());
        const double cosang = std::clamp(m.embed(x).dot(m.embed(y)), -1.0, 1.0);
        dist = std::max(dist, std::abs(distance(m, x, y) - std::acos(cosang)));
        const Vec z = standard_normal(rng, 2);
        const Vec tz = parallel_transport(m, x, y, z);
        iso = std::max(iso, std::abs(riemannian_norm(m, y, tz) - riemannian_norm(m, x, z)));
        // Embedded closed form: rotate about the axis p × q' by the arc length.
        const Eigen::Vector3d py = m.embed(y);
        const Eigen::Vector3d axis = p.cross(py).normalized();
        const double ang = std::acos(cosang);
        const Eigen::Vector3d zz = m.push_forward(x, z);
        const Eigen::Vector3d rot = zz * std::cos(ang) + axis.cross(zz) * std::sin(ang) + axis * axis.dot(zz) * (1 - std::cos(ang));
        par = std::max(par, (m.push_forward(y, tz) - rot).norm());
    }
    const bool pass = std::max({geo, conn, dist, iso, par}) < 1e-6;
    return {pass, fmt("geodesic %.1e, connect %.1e, distance %.1e, transport %.1e, isometry %.1e", geo, conn, dist,
                      par, iso)};
}

// d²/dt² Ψ(exp_x(t u0), exp_x'(t u1)) at t = 0 by a five-point stencil.
double hessian_oracle(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u0,
                      const Vec& u1) {
    auto f = [&](double t) { return gauge_value(g, m, exp_map(m, x, t * u0), exp_map(m, x2, t * u1)); };
    const double h = 1e-3;
    return (-f(2 * h) + 16 * f(h) - 30 * f(0) + 16 * f(-h) - f(-2 * h)) / (12 * h * h);
}

Outcome hessians() {
    const auto flat = ChartManifold::flat(2);
    const auto sphere = ChartManifold::sphere(1.0);
    const auto emery = GaugeFunction::emery(0.1);
    const auto psi = GaugeFunction::sin_power_from_e(1.5, 1.0);
    auto rng = substream(102, 0);
    double e_flat = 0, e_sphere = 0, e_psi = 0;
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    for (int s = 0; s < 500; ++s) {
        const Vec u0 = sample_unit_vector(sphere, pt(pi / 2, 0), rng), u1 = sample_unit_vector(sphere, pt(pi / 2, 0), rng);
        const Vec x = standard_normal(rng, 2) * 0.5, x2 = x + standard_normal(rng, 2) * 0.2;
        e_flat = std::max(e_flat, rel(gauge_hessian(emery, flat, x, x2, join(u0, u1)),
                                      hessian_oracle(emery, flat, x, x2, u0, u1)));
        const Vec y = sample_point(sphere, {pt(pi / 2, 0), 0.8}, rng);
        const Vec y2 = sample_at_distance(sphere, y, 0.1, 0.6, rng);
        e_sphere = std::max(e_sphere, rel(gauge_hessian(emery, sphere, y, y2, join(u0, u1)),
                                          hessian_oracle(emery, sphere, y, y2, u0, u1)));
        // Ψ_a over the full admissible distance range, kept on the equator band of the chart.
        const Vec z = pt(pi / 2 + uniform(rng, -0.3, 0.3), uniform(rng, -1, 1));
        const double delta = uniform(rng, 0.1, pi - 0.1);
        const double ang = uniform(rng, -0.3, 0.3);
        const Vec dir = pt(std::sin(ang), std::cos(ang) / std::sin(z[0]));
        const Vec z2 = exp_map(sphere, z, delta * dir / riemannian_norm(sphere, z, dir));
        const Vec v0 = sample_unit_vector(sphere, z, rng), v1 = sample_unit_vector(sphere, z2, rng);
        e_psi = std::max(e_psi, rel(gauge_hessian(psi, sphere, z, z2, join(v0, v1)),
                                    hessian_oracle(psi, sphere, z, z2, v0, v1)));
    }
    const bool pass = std::max({e_flat, e_sphere, e_psi}) < 1e-4;
    return {pass, fmt("emery flat %.1e, emery sphere %.1e, psi_a %.1e", e_flat, e_sphere, e_psi)};
}

Outcome estimate_suite() {
    EstimateParams p;
    p.samples = 500;
    p.seed = 103;
    std::ostringstream detail;
    bool pass = true;
    const auto sphere = ChartManifold::sphere(1.0);
    const auto psi = GaugeFunction::sin_power_from_e(1.5, 1.0);
    for (const std::string name : {"2der1", "minhessdelta", "estimhess2"}) {
        const auto r = verify_estimate(name, sphere, psi, p);
        pass = pass && r.pass && r.min_margin >= -1e-6;
        detail << name << " " << fmt("%.2e", r.min_margin) << ", ";
    }
    const auto r = verify_estimate("minA", ChartManifold::flat(2), GaugeFunction::emery(0.1), p);
    pass = pass && r.pass && r.min_margin >= -1e-6;
    detail << "minA " << fmt("%.2e", r.min_margin);
    return {pass, detail.str()};
}

// Flat case X_t = W_t - c(T - t), Z = 1.
struct FlatRun {
    double x0_error, x0_se, z0_error, z0_se, rms;
};

FlatRun flat_run(double c, int paths, std::uint64_t seed) {
    const auto m = ChartManifold::flat(1);
    const auto grid = TimeGrid::uniform(1.0, 50);
    const auto d = c == 0.0 ? DriftSpec::zero(1) : DriftSpec::constant(scalar(c));
    const auto sol = solve_bsde(m, d, TerminalCondition::identity(), DiffusionSpec::brownian(scalar(0.0)), grid, paths, seed);
    FlatRun r{};
    r.x0_error = std::abs(sol.X[0](0, 0) + c * grid.horizon());
    r.x0_se = sd_of(sol.X.back().col(0)) / std::sqrt(paths);
    const Vec zs = (sol.X[1].col(0).array() - sol.X[1].col(0).mean()) * sol.driving.dW[0].col(0).array() / grid.dt(0);
    r.z0_error = std::abs(sol.Z[0](0, 0) - 1.0);
    r.z0_se = sd_of(zs) / std::sqrt(paths);
    double sq = 0;
    for (int i = 0; i <= grid.steps(); ++i) {
        const Vec exact = sol.driving.W.values[i].col(0).array() - c * (grid.horizon() - grid.time(i));
        sq += (sol.X[i].col(0) - exact).squaredNorm();
        if (i < grid.steps()) sq += (sol.Z[i].col(0).array() - 1.0).matrix().squaredNorm();
    }
    r.rms = std::sqrt(sq / (2.0 * paths * (grid.steps() + 1)));
    return r;
}

Outcome flat_closed_forms() {
    const auto mart = flat_run(0.0, 10000, 104);
    const auto lin = flat_run(0.7, 10000, 105);
    const auto small = flat_run(0.7, 2500, 106);
    const auto large = flat_run(0.7, 10000, 106);
    const bool pass = mart.x0_error <= 3 * mart.x0_se && mart.z0_error <= 3 * mart.z0_se &&
                      lin.x0_error <= 3 * lin.x0_se && lin.z0_error <= 3 * lin.z0_se && small.rms / large.rms >= 1.3;
    return {pass, fmt("f=0: X0 %.2f SE, Z0 %.2f SE; f=0.7: X0 %.2f SE, Z0 %.2f SE; shrink %.2fx", mart.x0_error / mart.x0_se,
                      mart.z0_error / mart.z0_se, lin.x0_error / lin.x0_se, lin.z0_error / lin.z0_se,
                      small.rms / large.rms)};
}

struct UniquenessRun {
    double gap = 0, bound = 0;
    bool regular = false;
};

UniquenessRun uniqueness_run() {
    const auto m = ChartManifold::sphere();
    const Vec o = pt(pi / 2, 0.0);
    const double rho = 0.5 * pi / 2;
    const auto tc = TerminalCondition::ball_map(m, o, 0.5 * rho);
    const auto driving = simulate_diffusion(DiffusionSpec::brownian(Vec::Zero(2)), TimeGrid::uniform(1.0, 10), 1000, 107);
    SolverOptions opt;
    opt.domain = DomainGauge(m, o, rho);
    const auto a = solve_bsde(m, DriftSpec::zero(2), tc, driving, opt);
    opt.start = PicardStart::random;
    const auto b = solve_bsde(m, DriftSpec::zero(2), tc, driving, opt);
    return {uniqueness_gap(m, a, b), 5 * opt.picard_tol, regular_ball_check(rho, 1.0)};
}

Outcome uniqueness() {
    const auto r = uniqueness_run();
    return {r.regular && r.gap < r.bound, fmt("gap %.2e < %.0e, regular ball %s", r.gap, r.bound, r.regular ? "yes" : "no")};
}

Outcome certificate() {
    const auto m = ChartManifold::sphere();
    const Vec o = pt(pi / 2, 0.0);
    const Vec o2 = pt(pi / 2 - 0.15, 0.2);
    auto p = SubmartingaleParams::regular_ball(1.5, 1.0, 0.5);
    const auto d = DriftSpec::frame_linear(2, 0.5, 2);
    PairSampling ps;
    ps.ball = SampleRegion{o, pi / 4};
    ps.samples = 10000;
    ps.seed = 108;
    const auto states = sample_pair_states(m, p.gauge, ps);
    const auto cal = calibrate_lambda(p, m, d, states);
    p.lambda = cal.lambda;

    const auto driving = simulate_diffusion(DiffusionSpec::brownian(Vec::Zero(2)), TimeGrid::uniform(1.0, 10), 4000, 109);
    SolverOptions opt;
    opt.domain = DomainGauge(m, o, pi / 4);
    const auto a = solve_bsde(m, d, TerminalCondition::ball_map(m, o, 0.3, 0.4), driving, opt);
    const auto b = solve_bsde(m, d, TerminalCondition::ball_map(m, o2, 0.3, 0.4), driving, opt);
    const auto inc = conditional_increment_test(driving.B, s_process(m, a, b, p).S);
    const bool pass = cal.found && cal.report.min_margin >= -1e-6 && inc.pass;
    return {pass, fmt("a %.4g, mu %.4g, lambda %g, min sum %.3e on %zu states; worst increment %.2f SE", p.gauge.a, p.mu,
                      p.lambda, cal.report.min_margin, states.size(), inc.worst_t)};
}

Outcome dichotomy() {
    const auto r = nonuniqueness_demo(4000, 2000, 110, 40.0);
    const auto u = uniqueness_run();
    const bool pass = r.pass && r.initial_distance == pi && u.gap < u.bound && u.regular;
    return {pass, fmt("delta(X0,X0') = %.17g, terminal gap %.1e, drift |t| %.2f / %.2f, ball gap %.1e",
                      r.initial_distance, r.max_terminal_gap, r.drift.max_abs_t, r.drift_mirror.max_abs_t, u.gap)};
}

Outcome dirichlet() {
    auto disk = [](BoundaryMap bm) {
        DirichletProblem p;
        p.domain = SourceDomain::disk(pt(0, 0), 1.0);
        p.diffusion = DiffusionSpec::brownian(pt(0, 0));
        p.boundary = std::move(bm);
        p.drift = DriftSpec::zero(1);
        return p;
    };
    std::ostringstream detail;
    bool pass = true;
    for (const auto& bm : {BoundaryMap::coordinate(0), BoundaryMap::harmonic_quadratic()}) {
        const auto est = solve_dirichlet(disk(bm), {pt(0, 0)}, 600, 4000, 111);
        const double t = std::abs(est.values[0][0]) / est.std_errors[0][0];
        pass = pass && t <= 3;
        detail << bm.name << " " << fmt("%.2f SE", t) << ", ";
    }
    const auto mp = disk(BoundaryMap::harmonic_quadratic());
    const auto grid = regular_grid(2, -0.6, 0.6, 5);
    const auto est = solve_dirichlet(mp, grid, 300, 1000, 112);
    int inside = 0;
    for (std::size_t q = 0; q < grid.size(); ++q) {
        const double v = est.values[q][0], se = est.std_errors[q][0];
        if (v >= -1 - 3 * se && v <= 1 + 3 * se) ++inside;
    }
    pass = pass && inside == 25;
    DirichletProblem iv;
    iv.domain = SourceDomain::interval(-1, 1);
    iv.diffusion = DiffusionSpec::brownian(Vec::Zero(1));
    iv.boundary = BoundaryMap::constant(Vec::Zero(1));
    iv.drift = DriftSpec::zero(1);
    iv.horizon_cap = 4.0;
    const auto st = stopping_integrability(iv, Vec::Zero(1), 2000, 20000, 0.5, 113);
    pass = pass && !st.moment.overflow && std::isfinite(st.moment.mean);
    detail << "max principle " << inside << "/25, E exp(0.5 tau) " << fmt("%.4f +- %.4f", st.moment.mean, st.moment.std_error);
    return {pass, detail.str()};
}

Outcome integrability() {
    IntegrabilityParams ip;
    ip.samples = 1000;
    ip.seed = 114;
    const double mu = 2.0;
    const auto euclid = integrability_gauge_check(TestFunction::cos_euclidean(mu), ChartManifold::flat(2), mu, ip);
    const auto ball = TestFunction::cos_ball(1.5, 0.5, 1.0);
    const auto sphere = integrability_gauge_check(ball, ChartManifold::sphere(), 1.0 * 1.5 / 2, ip);
    const auto doubled = integrability_gauge_check(ball, ChartManifold::sphere(), 1.5, ip);
    const bool pass = euclid.pass && sphere.pass && !doubled.pass;
    return {pass, fmt("cos_euclidean %.2e, cos_ball %.2e, doubled alpha %.2e (rejected)", euclid.min_margin,
                      sphere.min_margin, doubled.min_margin)};
}

}  // namespace

int main() {
    criterion(1, "maxratio closed form", 5, maxratio);
    criterion(2, "geometry oracles", 30, geometry_oracles);
    criterion(3, "hessian oracle", 60, hessians);
    criterion(4, "estimate suite", 120, estimate_suite);
    criterion(5, "flat closed forms", 120, flat_closed_forms);
    criterion(6, "uniqueness on a regular ball", 180, uniqueness);
    criterion(7, "submartingale certificate", 180, certificate);
    criterion(8, "nonuniqueness dichotomy", 60, dichotomy);
    criterion(9, "dirichlet harmonic oracle", 300, dirichlet);
    criterion(10, "integrability gauges", 60, integrability);
    std::printf("%d of 10 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}

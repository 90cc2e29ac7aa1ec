#include "doctest.h"

#include "mbsde/bsde_solver.hpp"
#include "mbsde/errors.hpp"
#include "mbsde/regression.hpp"

#include <cmath>
#include <numbers>

using namespace mbsde;

namespace {

constexpr double pi = std::numbers::pi;

Vec pt(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

Vec scalar(double v) {
    Vec out(1);
    out << v;
    return out;
}

double mean_of(const Vec& v) { return v.mean(); }
double sd_of(const Vec& v) { return std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1)); }

// Errors of the flat solver against X_t = W_t - c(T - t), Z = 1.
struct FlatErrors {
    double x0_error, x0_se, z0_error, z0_se, worst_mean_ratio, rms;
};

FlatErrors flat_case(double c, int paths, std::uint64_t seed) {
    const auto m = ChartManifold::flat(1);
    const auto grid = TimeGrid::uniform(1.0, 50);
    const auto d = c == 0.0 ? DriftSpec::zero(1) : DriftSpec::constant(scalar(c));
    const auto sol = solve_bsde(m, d, TerminalCondition::identity(), DiffusionSpec::brownian(scalar(0.0)), grid,
                                paths, seed);
    FlatErrors e{};
    const double T = grid.horizon();
    const Vec xT = sol.X.back().col(0);
    e.x0_error = std::abs(sol.X[0](0, 0) - (-c * T));
    e.x0_se = sd_of(xT) / std::sqrt(paths);
    const double dt = grid.dt(0);
    const Vec zsamples = (sol.X[1].col(0).array() - sol.X[1].col(0).mean()) * sol.driving.dW[0].col(0).array() / dt;
    e.z0_error = std::abs(sol.Z[0](0, 0) - 1.0);
    e.z0_se = sd_of(zsamples) / std::sqrt(paths);
    double sq = 0.0;
    int count = 0;
    for (int i = 0; i <= grid.steps(); ++i) {
        const Vec exact = sol.driving.W.values[i].col(0).array() - c * (T - grid.time(i));
        const Vec diff = sol.X[i].col(0) - exact;
        // The path mean of X_i is mean(W_T) - c(T - t_i); its SE is sqrt((T - t_i)/P).
        if (i < grid.steps()) {
            const double se = std::sqrt((T - grid.time(i)) / paths);
            e.worst_mean_ratio = std::max(e.worst_mean_ratio, std::abs(mean_of(diff)) / se);
        }
        sq += diff.squaredNorm();
        if (i < grid.steps()) sq += (sol.Z[i].col(0).array() - 1.0).matrix().squaredNorm();
        count += paths * 2;
    }
    e.rms = std::sqrt(sq / count);
    return e;
}

}  // namespace

TEST_CASE("regression basis") {
    CHECK(monomial_exponents(2, 3).size() == 10);
    CHECK(monomial_exponents(0, 3).size() == 1);
    CHECK(monomial_exponents(1, 2) == std::vector<std::vector<int>>{{0}, {1}, {2}});

    Mat b(200, 2);
    for (int i = 0; i < 200; ++i) b.row(i) << std::sin(0.37 * i), std::cos(1.3 * i);
    const Regression reg(b, 3);
    Mat y(200, 2);
    for (int i = 0; i < 200; ++i) {
        const double u = b(i, 0), v = b(i, 1);
        y.row(i) << 1 + 2 * u - u * u * v, 4.5;
    }
    const Mat fitted = reg.fit(y);
    CHECK((fitted.col(0) - y.col(0)).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((fitted.col(1).array() == 4.5).all());

    Mat dup(200, 2);
    dup.col(0) = b.col(0);
    dup.col(1) = 2 * b.col(0);
    CHECK_THROWS_AS(Regression(dup, 1), BasisError);
    CHECK_THROWS_AS(Regression(b.topRows(5), 3), BasisError);

    // A deterministic regressor is dropped: the fit is the sample mean.
    const Regression flat(Mat::Constant(50, 1, 0.3), 3);
    CHECK(flat.columns() == 1);
}

TEST_CASE("md_drift") {
    const auto flat = ChartManifold::flat(2);
    Mat z(2, 2);
    z << 1, 2, -0.5, 3;
    const auto drift = DriftSpec::constant(pt(0.3, -0.1));
    CHECK((md_drift(flat, drift, scalar(0), pt(0.2, 0.4), z) - pt(0.3, -0.1)).norm() == 0.0);

    const auto sphere = ChartManifold::sphere();
    CHECK(md_drift(sphere, DriftSpec::zero(2), scalar(0), pt(pi / 2, 0.3), z).norm() < 1e-15);

    Mat zc(2, 1);
    zc << 0, 1;
    const Vec v = md_drift(sphere, DriftSpec::zero(2), scalar(0), pt(pi / 4, 0.0), zc);
    CHECK(v[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(std::abs(v[1]) < 1e-15);
}

TEST_CASE("constant terminal value is reproduced exactly") {
    const auto m = ChartManifold::sphere();
    const Vec p = pt(1.2, 0.4);
    const auto sol = solve_bsde(m, DriftSpec::zero(2), TerminalCondition::constant(p),
                                DiffusionSpec::brownian(Vec::Zero(2)), TimeGrid::uniform(1.0, 10), 500, 3);
    for (int i = 0; i <= 10; ++i) {
        CHECK((sol.X[i].rowwise() - p.transpose()).cwiseAbs().maxCoeff() == 0.0);
        if (i < 10) CHECK(sol.Z[i].cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("flat closed forms") {
    SUBCASE("martingale representation of W_T") {
        const auto e = flat_case(0.0, 10000, 5);
        CHECK(e.x0_error < 3 * e.x0_se);
        CHECK(e.z0_error < 3 * e.z0_se);
        CHECK(e.worst_mean_ratio < 3.0);
    }
    SUBCASE("constant drift") {
        const auto e = flat_case(0.7, 10000, 6);
        CHECK(e.x0_error < 3 * e.x0_se);
        CHECK(e.worst_mean_ratio < 3.0);
    }
    SUBCASE("errors shrink with more paths") {
        const auto small = flat_case(0.7, 2500, 8);
        const auto large = flat_case(0.7, 10000, 8);
        MESSAGE("rms " << small.rms << " -> " << large.rms);
        CHECK(small.rms / large.rms >= 1.3);
    }
}

TEST_CASE("terminal consistency and forward residual") {
    const auto m = ChartManifold::flat(1);
    const auto grid = TimeGrid::uniform(1.0, 20);
    const auto tc = TerminalCondition::identity();
    const auto sol = solve_bsde(m, DriftSpec::position(1), tc, DiffusionSpec::brownian(scalar(0.0)), grid, 2000, 4);
    for (int p = 0; p < sol.paths; ++p) CHECK(sol.x(p, 20)[0] == tc(sol.driving.B.at(p, 20))[0]);
    CHECK(sol.forward_residual < 0.2);
}

TEST_CASE("Picard initializations agree on a regular ball") {
    const auto m = ChartManifold::sphere();
    const Vec o = pt(pi / 2, 0.0);
    const double rho = pi / 4;
    const auto tc = TerminalCondition::ball_map(m, o, 0.5 * rho);
    const auto driving = simulate_diffusion(DiffusionSpec::brownian(Vec::Zero(2)), TimeGrid::uniform(1.0, 10), 1000, 12);
    SolverOptions opt;
    opt.domain = DomainGauge(m, o, rho);
    const auto a = solve_bsde(m, DriftSpec::zero(2), tc, driving, opt);
    opt.start = PicardStart::random;
    const auto b = solve_bsde(m, DriftSpec::zero(2), tc, driving, opt);
    MESSAGE("iterations " << a.iterations << " / " << b.iterations << ", gap " << sup_path_distance(m, a, b));
    CHECK(sup_path_distance(m, a, b) < 5 * opt.picard_tol);
    CHECK(sup_path_distance(m, a, a) == 0.0);
    CHECK(a.picard_residuals.back() < opt.picard_tol);
    CHECK(!a.domain_escape_warning);
}

TEST_CASE("Picard failure reports the residual trace") {
    const auto m = ChartManifold::sphere();
    const Vec o = pt(pi / 2, 0.0);
    SolverOptions opt;
    opt.picard_max = 2;
    opt.picard_tol = 1e-15;
    opt.start = PicardStart::random;
    try {
        solve_bsde(m, DriftSpec::zero(2), TerminalCondition::ball_map(m, o, 0.3),
                   DiffusionSpec::brownian(Vec::Zero(2)), TimeGrid::uniform(1.0, 5), 200, 1, opt);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.residuals().size() == 1);
    }
}

TEST_CASE("projection fraction does not grow under refinement") {
    const auto m = ChartManifold::sphere();
    const Vec o = pt(pi / 2, 0.0);
    const double rho = pi / 4;
    SolverOptions opt;
    opt.domain = DomainGauge(m, o, rho);
    // Terminal values on the boundary sphere push regression noise outside.
    const auto tc = TerminalCondition::ball_map(m, o, 0.999 * rho);
    double fraction[2];
    const int steps[2] = {25, 100};
    for (int k = 0; k < 2; ++k) {
        const auto sol = solve_bsde(m, DriftSpec::zero(2), tc, DiffusionSpec::brownian(Vec::Zero(2)),
                                    TimeGrid::uniform(1.0, steps[k]), 1000, 2, opt);
        fraction[k] = sol.projected_fraction;
        for (const auto& x : sol.X)
            for (int p = 0; p < sol.paths; ++p) CHECK(opt.domain->contains(x.row(p).transpose(), 1e-8));
    }
    MESSAGE("projected fractions " << fraction[0] << " " << fraction[1]);
    CHECK(fraction[1] <= fraction[0]);
}

TEST_CASE("stopped paths are frozen") {
    const auto m = ChartManifold::flat(1);
    const auto grid = TimeGrid::uniform(1.0, 10);
    auto driving = simulate_diffusion(DiffusionSpec::brownian(scalar(0.0)), grid, 400, 3);
    SolverOptions opt;
    opt.stop.assign(400, 10);
    for (int p = 0; p < 400; p += 2) opt.stop[p] = 4;
    // Freeze B after the stopping index as a stopped diffusion would be.
    for (int p = 0; p < 400; p += 2)
        for (int i = 4; i < 10; ++i) {
            driving.B.values[i + 1].row(p) = driving.B.values[4].row(p);
            driving.dW[i].row(p).setZero();
        }
    const auto sol = solve_bsde(m, DriftSpec::constant(scalar(1.0)), TerminalCondition::identity(), driving, opt);
    for (int i = 4; i <= 10; ++i) CHECK(sol.x(0, i)[0] == sol.x(0, 10)[0]);
    for (int i = 4; i < 10; ++i) CHECK(sol.Z[i](0, 0) == 0.0);
    CHECK(sol.x(1, 9)[0] != sol.x(1, 10)[0]);
}

TEST_CASE("pointing outward") {
    const auto m = ChartManifold::sphere();
    const Vec o = pt(pi / 2, 0.0);
    const DomainGauge dg(m, o, pi / 4);
    AuditParams ap;
    ap.samples = 300;
    ap.dim_d = 2;
    ap.dim_w = 2;
    const auto out = check_pointing_outward(DriftSpec::radial(m, o, 0.8), dg, m, ap, true);
    CHECK(out.pass);
    // (Dχ | κ e_r) = κ |Dχ| = 2 κ ρ on the boundary sphere.
    CHECK(out.zeta == doctest::Approx(2 * 0.8 * pi / 4).epsilon(1e-6));
    const auto in = check_pointing_outward(DriftSpec::radial(m, o, -0.8), dg, m, ap, false);
    CHECK(!in.pass);
    const auto none = check_pointing_outward(DriftSpec::zero(2), dg, m, ap, true);
    CHECK(none.holds);
    CHECK(!none.holds_strict);
    CHECK(!none.pass);
    CHECK(none.infimum == 0.0);
}

TEST_CASE("drift audit") {
    const auto m = ChartManifold::flat(2);
    AuditParams ap;
    ap.samples = 400;
    ap.dim_d = 2;
    ap.dim_w = 2;
    const auto c = drift_spec_audit(DriftSpec::constant(pt(1.0, 2.0)), m, ap);
    CHECK(c.lipschitz_ratio == 0.0);
    CHECK(c.pass == (c.bound_value <= c.declared_L2 + ap.tolerance));

    const auto x = drift_spec_audit(DriftSpec::position(2), m, ap);
    CHECK(x.lipschitz_ratio == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(x.lipschitz_ok);

    auto tight = DriftSpec::position(2);
    tight.lipschitz_L = 0.5;
    const auto bad = drift_spec_audit(tight, m, ap);
    CHECK(!bad.lipschitz_ok);
    CHECK(!bad.pass);

    // On the sphere the transport term enters; f = z 1 is Lipschitz with L = 1·sqrt(d_w).
    const auto sphere = ChartManifold::sphere();
    const auto fl = drift_spec_audit(DriftSpec::frame_linear(2, 1.0), sphere, ap);
    CHECK(fl.lipschitz_ratio <= std::sqrt(2.0) + 1e-9);
}

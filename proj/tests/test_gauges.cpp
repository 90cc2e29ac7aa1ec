#include "doctest.h"

#include "mbsde/errors.hpp"
#include "mbsde/estimates.hpp"
#include "mbsde/gauges.hpp"
#include "mbsde/random.hpp"

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

Vec join(const Vec& a, const Vec& b) {
    Vec out(a.size() + b.size());
    out << a, b;
    return out;
}

// d²/dt² Ψ(exp_x(t u0), exp_x'(t u1)) at t = 0: the Hessian along product geodesics,
// computed from the closed-form exponential map without any Christoffel symbols.
double geodesic_oracle(const GaugeFunction& g, const ChartManifold& m, const Vec& x, const Vec& x2, const Vec& u0,
                       const Vec& u1) {
    auto f = [&](double t) { return gauge_value(g, m, exp_map(m, x, t * u0), exp_map(m, x2, t * u1)); };
    const double h = 1e-3;
    return (-f(2 * h) + 16 * f(h) - 30 * f(0) + 16 * f(-h) - f(-2 * h)) / (12 * h * h);
}

}  // namespace

TEST_CASE("gauge values") {
    const auto flat1 = ChartManifold::flat(1);
    CHECK(gauge_value(GaugeFunction::emery(1.0), flat1, Vec::Constant(1, 1.0), Vec::Zero(1)) == 0.5);
    const auto sphere = ChartManifold::sphere(1.0);
    const auto psi = GaugeFunction::sin_power(1.5, 1.0);
    CHECK(gauge_value(psi, sphere, pt(pi / 2, 0), pt(pi / 2, pi / 2)) == doctest::Approx(0.5946035575).epsilon(1e-9));
    for (const auto& g : {GaugeFunction::emery(), psi, GaugeFunction::distance_squared()}) {
        CHECK(gauge_value(g, sphere, pt(1, 1), pt(1, 1)) == 0.0);
        CHECK(gauge_value(g, sphere, pt(1, 1), pt(1.001, 1)) > 0.0);
    }
    CHECK_THROWS_AS(GaugeFunction::sin_power(2.5, 1.0), DomainError);
    CHECK_THROWS_AS(GaugeFunction::custom([](const Vec&, const Vec&) { return 0.0; }, 3), DomainError);
    CHECK(GaugeFunction::sin_power_from_e(1.5, 1.0).a == doctest::Approx(1.125));
}

TEST_CASE("flat distance-squared Hessian is 2|z - z'|^2") {
    const auto m = ChartManifold::flat(2);
    const auto g = GaugeFunction::distance_squared();
    auto rng = substream(11, 0);
    for (int s = 0; s < 20; ++s) {
        const Vec x = standard_normal(rng, 2), x2 = standard_normal(rng, 2);
        const Vec z = standard_normal(rng, 2), z2 = standard_normal(rng, 2);
        CHECK(gauge_hessian(g, m, x, x2, join(z, z2)) == doctest::Approx(2 * (z - z2).squaredNorm()).epsilon(1e-12));
    }
}

TEST_CASE("diagonal directions on the diagonal are annihilated") {
    const auto m = ChartManifold::sphere(1.0);
    const Vec x = pt(1.1, 0.3), z = pt(0.4, -0.7);
    CHECK(std::abs(gauge_hessian(GaugeFunction::emery(), m, x, x, join(z, z))) < 1e-12);
    CHECK(std::abs(gauge_hessian(GaugeFunction::distance_squared(), m, x, x, join(z, z))) < 1e-5);
    CHECK_THROWS_AS(gauge_hessian(GaugeFunction::sin_power(1.5, 1.0), m, x, x, join(z, z)), DomainError);
}

TEST_CASE("gauge Hessian agrees with the geodesic second-derivative oracle") {
    auto rng = substream(12, 0);
    const auto flat = ChartManifold::flat(2);
    const auto sphere = ChartManifold::sphere(1.0);
    const auto emery = GaugeFunction::emery(0.1);
    const auto psi = GaugeFunction::sin_power(1.5, 1.0);
    for (int s = 0; s < 40; ++s) {
        const Vec u0 = standard_normal(rng, 2), u1 = standard_normal(rng, 2);
        {
            const Vec x = standard_normal(rng, 2) * 0.5, x2 = x + standard_normal(rng, 2) * 0.2;
            CHECK(std::abs(gauge_hessian(emery, flat, x, x2, join(u0, u1)) - geodesic_oracle(emery, flat, x, x2, u0, u1)) < 1e-4);
        }
        const Vec x = sample_point(sphere, {pt(pi / 2, 0), 0.8}, rng);
        const Vec x2 = sample_at_distance(sphere, x, 0.1, 0.6, rng);
        CHECK(std::abs(gauge_hessian(emery, sphere, x, x2, join(u0, u1)) - geodesic_oracle(emery, sphere, x, x2, u0, u1)) < 1e-4);
        CHECK(std::abs(gauge_hessian(psi, sphere, x, x2, join(u0, u1)) - geodesic_oracle(psi, sphere, x, x2, u0, u1)) < 1e-4);
        const Mat h = gauge_hessian_matrix(psi, sphere, x, x2);
        CHECK(join(u0, u1).dot(h * join(u0, u1)) == doctest::Approx(gauge_hessian(psi, sphere, x, x2, join(u0, u1))).epsilon(1e-5));
    }
}

TEST_CASE("Hessian blocks in v-coordinates") {
    const auto flat = ChartManifold::flat(2);
    const auto g = GaugeFunction::emery(0.1);
    auto rng = substream(13, 0);
    double worst_ratio = 0.0;
    for (int s = 0; s < 50; ++s) {
        const Vec x2 = standard_normal(rng, 2) * 0.5;
        const Vec x = x2 + standard_normal(rng, 2) * 0.05;
        const auto b = hessian_blocks(g, flat, x, x2);
        const double s2 = 0.01 + x2.squaredNorm();
        CHECK((b.A_tilde - s2 * Mat::Identity(2, 2)).norm() < 1e-12);
        worst_ratio = std::max(worst_ratio, b.E_tilde.norm() / (x - x2).norm());
        // The blocks reassemble the Hessian form.
        const Vec z = standard_normal(rng, 2), z2 = standard_normal(rng, 2);
        const double form = (z - z2).dot(b.A_tilde * (z - z2)) + 2 * (z - z2).dot(b.E_tilde * z2) + z2.dot(b.B_tilde * z2);
        CHECK(form == doctest::Approx(gauge_hessian(g, flat, x, x2, join(z, z2))).epsilon(1e-10));
    }
    CHECK(worst_ratio < 10.0);
    const Vec x = pt(0.3, -0.2);
    CHECK(hessian_blocks(g, flat, x, x).B_tilde.norm() < 1e-14);
}

TEST_CASE("jacobi ratio maximum") {
    CHECK(jacobi_ratio_max(1e-6).value == doctest::Approx(1.0).epsilon(1e-9));
    const auto r = jacobi_ratio_max(pi / 4);
    CHECK(r.value == doctest::Approx(1 + 2 / pi).epsilon(1e-12));
    CHECK(r.argmax == doctest::Approx(pi / 4));
    for (double y : {0.1, 0.5, 1.0}) CHECK(jacobi_ratio_max(y).argmax == doctest::Approx(pi / 2 - y));
    CHECK_THROWS_AS(jacobi_ratio_max(0.0), DomainError);
    CHECK_THROWS_AS(jacobi_ratio_max(pi / 2), DomainError);

    // Grid maximization oracle.
    for (double y : {0.05, 0.3, 0.7, 1.2, 1.5}) {
        const int n = 100000;
        double best = -1, arg = 0;
        for (int i = 0; i <= n; ++i) {
            const double beta = (pi - 2 * y) * i / n;
            const double v = jacobi_ratio(2 * y, beta);
            if (v > best) best = v, arg = beta;
        }
        CHECK(std::abs(best - jacobi_ratio_max(y).value) < 1e-8);
        CHECK(std::abs(arg - jacobi_ratio_max(y).argmax) < 1e-4);
    }
}

TEST_CASE("sign of dH/dbeta follows sin(t + 2 beta)") {
    for (int i = 1; i < 60; ++i) {
        const double t = pi * i / 60;
        for (int j = 0; j <= 60; ++j) {
            const double beta = (pi - t) * j / 60;
            const double s = std::sin(t + 2 * beta);
            const double d = jacobi_ratio_dbeta(t, beta);
            if (std::abs(s) > 1e-9) CHECK((d > 0) == (s > 0));
            // Closed-form derivative against a central difference of H.
            const double h = 1e-6;
            const double fd = (jacobi_ratio(t, beta + h) - jacobi_ratio(t, beta - h)) / (2 * h);
            CHECK(std::abs(fd - d) < 1e-5 * std::max(1.0, std::abs(d)));
        }
    }
}

TEST_CASE("tangential and orthogonal components") {
    const auto m = ChartManifold::sphere(1.0);
    const Vec x = pt(1.2, 0.1), x2 = pt(1.5, 0.7);
    const auto along = split_components(m, x, x2, geodesic_connect(m, x, x2), pt(0, 0));
    CHECK(along.w0.norm() < 1e-12);
    const Vec e0 = along.e0;
    const Vec perp = pt(-e0[1] * std::sin(x[0]) * std::sin(x[0]), e0[0]);  // g-orthogonal to e0
    const auto across = split_components(m, x, x2, perp, pt(0, 0));
    CHECK(across.v0.norm() < 1e-12);
    auto rng = substream(14, 0);
    for (int s = 0; s < 20; ++s) {
        const Vec u0 = standard_normal(rng, 2), u1 = standard_normal(rng, 2);
        const auto c = split_components(m, x, x2, u0, u1);
        CHECK(std::abs(std::pow(riemannian_norm(m, x, u0), 2) -
                       std::pow(riemannian_norm(m, x, c.v0), 2) - std::pow(riemannian_norm(m, x, c.w0), 2)) < 1e-10);
        CHECK(std::abs(std::pow(riemannian_norm(m, x2, u1), 2) -
                       std::pow(riemannian_norm(m, x2, c.v1), 2) - std::pow(riemannian_norm(m, x2, c.w1), 2)) < 1e-10);
    }
}

TEST_CASE("estimate registry") {
    const auto sphere = ChartManifold::sphere(1.0);
    const auto flat = ChartManifold::flat(2);
    EstimateParams p;
    p.samples = 200;
    const auto psi = GaugeFunction::sin_power(1.5, 1.0);
    for (const std::string name : {"2der1", "derkpos", "minhessdelta", "estimhess2", "estimhess1", "2tp2"}) {
        const auto r = verify_estimate(name, sphere, psi, p);
        INFO(name, " min_margin=", r.min_margin);
        CHECK(r.pass);
    }
    const auto minA = verify_estimate("minA", flat, GaugeFunction::emery(0.1), p);
    CHECK(minA.pass);
    CHECK(minA.fitted_constants.at("eta") >= 0.01 / 2);
    const auto minA_sphere = verify_estimate("minA", sphere, GaugeFunction::emery(0.1), p);
    CHECK(minA_sphere.pass);

    const auto mh = verify_estimate("minhesspsi", flat, GaugeFunction::emery(0.1), p);
    INFO("minhesspsi beta=", mh.fitted_constants.at("beta"), " radius=", mh.fitted_constants.at("radius"));
    CHECK(mh.pass);
    CHECK(mh.fitted_constants.at("radius") > 0);

    const auto md = verify_estimate("2majdpsi", sphere, GaugeFunction::emery(0.1), p);
    CHECK(md.pass);
    CHECK(std::isfinite(md.fitted_constants.at("C_eps")));

    const auto tp = verify_estimate("2tp2", flat, psi, p);
    CHECK(tp.min_margin >= 0);

    CHECK_THROWS_AS(verify_estimate("nope", sphere, psi, p), RegistryError);
    CHECK_THROWS_AS(verify_estimate("estimhess2", sphere, GaugeFunction::emery(), p), UnsupportedError);
}

TEST_CASE("2der1 is accurate to finite-difference precision") {
    EstimateParams p;
    p.samples = 100;
    const auto r = verify_estimate("2der1", ChartManifold::sphere(1.0), GaugeFunction::distance_squared(), p);
    CHECK(r.fitted_constants.at("abs_error") <= 1e-5);
}

TEST_CASE("Ψ ≈ δ^p and convexity near the diagonal") {
    EstimateParams p;
    p.samples = 300;
    const auto sphere = ChartManifold::sphere(1.0);
    const double c = gauge_equivalence_constant(GaugeFunction::emery(0.5), sphere, p);
    CHECK(std::isfinite(c));
    CHECK(c >= 1.0);
    // In chart coordinates the flat emery gauge is convex exactly when |x'| <= ε/√3
    // (the Hessian form is s|c|² + q|b|² + 4(c·d)(x'·b) with c = z - z', b = z').
    p.samples = 2000;
    const auto conv = convexity_report(GaugeFunction::emery(0.1), ChartManifold::flat(2), p);
    CHECK(conv.fitted_constants.at("r_conv") == 0.05);
}

TEST_CASE("near-diagonal limit") {
    const double y = near_diagonal_limit(1.125, 1.25);
    CHECK(y > 0);
    CHECK(y < pi / 2);
    const double c = std::cos(y), s = std::sin(y);
    CHECK((0.125 * c * c - s * s) >= 0.0625 - 1e-3);
}

#include "mbsde/estimates.hpp"

#include "mbsde/errors.hpp"
#include "mbsde/parallel.hpp"
#include "mbsde/random.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numbers>

namespace mbsde {

namespace {

constexpr double kPi = std::numbers::pi;

struct Outcome {
    double margin = std::numeric_limits<double>::infinity();
    std::map<std::string, double> maxima;
    std::map<std::string, double> minima;
    std::vector<double> config;
};

using SampleBody = std::function<Outcome(std::mt19937_64&)>;

SampleRegion default_region(const ChartManifold& m, const EstimateParams& p) {
    SampleRegion r = p.region;
    if (r.center.size() == 0) {
        if (m.kind() == ManifoldKind::sphere) {
            r.center = Vec(2);
            r.center << kPi / 2, 0.0;
        } else {
            r.center = m.domain().midpoint();
        }
    }
    return r;
}

void append(std::vector<double>& out, const Vec& v) { out.insert(out.end(), v.data(), v.data() + v.size()); }

Vec join(const Vec& a, const Vec& b) {
    Vec out(a.size() + b.size());
    out << a, b;
    return out;
}

EstimateReport run_samples(const std::string& name, const EstimateParams& p, const SampleBody& body) {
    std::vector<Outcome> results(p.samples);
    parallel_for(p.samples, p.workers, [&](std::size_t i) {
        auto rng = substream(p.seed, i);
        for (int attempt = 0; attempt < 200; ++attempt) {
            try {
                results[i] = body(rng);
                return;
            } catch (const EscapeError&) {
            } catch (const AmbiguityError&) {
            } catch (const DomainError&) {
            }
        }
        throw DomainError(name + ": could not draw an admissible configuration");
    });

    EstimateReport report;
    report.estimate = name;
    report.samples = p.samples;
    report.tolerance = p.tolerance;
    for (const auto& r : results) {
        if (r.margin < report.min_margin) {
            report.min_margin = r.margin;
            report.worst_sample = r.config;
        }
        if (r.margin < -p.tolerance) ++report.violations;
        for (const auto& [k, v] : r.maxima) {
            auto it = report.fitted_constants.find(k);
            if (it == report.fitted_constants.end() || v > it->second) report.fitted_constants[k] = v;
        }
        for (const auto& [k, v] : r.minima) {
            auto it = report.fitted_constants.find(k);
            if (it == report.fitted_constants.end() || v < it->second) report.fitted_constants[k] = v;
        }
    }
    report.finalize();
    return report;
}

struct Pair {
    Vec x, x2;
    double delta;
};

Pair draw_pair(const ChartManifold& m, const SampleRegion& region, double dmin, double dmax, std::mt19937_64& rng) {
    Pair p;
    p.x = sample_point(m, region, rng);
    if (dmax <= 0) {
        p.x2 = p.x;
        p.delta = 0;
        return p;
    }
    p.x2 = sample_at_distance(m, p.x, dmin, dmax, rng);
    p.delta = distance(m, p.x, p.x2);
    return p;
}

void require_sin_power(const GaugeFunction& g, const std::string& name) {
    if (g.kind != GaugeKind::sin_power) throw UnsupportedError(name + " applies to the Ψ_a gauge only");
}

void require_levi_civita_bound(const ChartManifold& m, const std::string& name) {
    if (m.kind() == ManifoldKind::custom && m.curvature_bound() <= 0) {
        throw UnsupportedError(name + " needs a chart with a known curvature bound");
    }
}


// √K cot(√K δ), with the flat limit 1/δ.
double cot_term(double k, double delta) {
    const double s = std::sqrt(k);
    if (s == 0.0) return 1.0 / delta;
    return s / std::tan(s * delta);
}

EstimateReport check_2der1(const ChartManifold& m, const GaugeFunction&, const EstimateParams& p) {
    const auto region = default_region(m, p);
    const double dmin = p.delta_min.value_or(0.1), dmax = p.delta_max.value_or(1.5);
    return run_samples("2der1", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const Vec u0 = standard_normal(rng, m.dim()), u1 = standard_normal(rng, m.dim());
        const double lhs = std::abs(distance_derivative(m, q.x, q.x2, join(u0, u1)));
        const auto s = split_components(m, q.x, q.x2, u0, u1);
        const Vec tv0 = parallel_transport(m, q.x, q.x2, s.v0);
        const double rhs = riemannian_norm(m, q.x2, tv0 - s.v1);
        Outcome o;
        o.margin = -std::abs(lhs - rhs);
        o.maxima["abs_error"] = std::abs(lhs - rhs);
        append(o.config, q.x), append(o.config, q.x2), append(o.config, u0), append(o.config, u1);
        return o;
    });
}

EstimateReport check_derkpos(const ChartManifold& m, const GaugeFunction&, const EstimateParams& p) {
    require_levi_civita_bound(m, "derkpos");
    const auto region = default_region(m, p);
    const double k = m.curvature_bound();
    const double dmin = p.delta_min.value_or(0.1);
    const double dmax = p.delta_max.value_or(k > 0 ? std::min(1.5, 0.95 * kPi / std::sqrt(k)) : 1.5);
    return run_samples("derkpos", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const Vec u0 = standard_normal(rng, m.dim()), u1 = standard_normal(rng, m.dim());
        const double lhs = distance_hessian(m, q.x, q.x2, join(u0, u1));
        const auto s = split_components(m, q.x, q.x2, u0, u1);
        const Vec tw0 = parallel_transport(m, q.x, q.x2, s.w0);
        const double tw = riemannian_norm(m, q.x2, tw0 - s.w1);
        const double w2 = std::pow(riemannian_norm(m, q.x, s.w0), 2) + std::pow(riemannian_norm(m, q.x2, s.w1), 2);
        const double t = std::sqrt(k) * q.delta;
        const double rhs = tw * tw / q.delta - k / 2 * q.delta * (1 + sinc(t)) / (1 + std::cos(t)) * w2;
        Outcome o;
        o.margin = lhs - rhs;
        append(o.config, q.x), append(o.config, q.x2), append(o.config, u0), append(o.config, u1);
        return o;
    });
}

double orthogonal_norm2(const ChartManifold& m, const Vec& x, const Vec& x2, const SplitComponents& s) {
    return std::pow(riemannian_norm(m, x, s.w0), 2) + std::pow(riemannian_norm(m, x2, s.w1), 2);
}

EstimateReport check_estimhess1(const ChartManifold& m, const GaugeFunction& g, const EstimateParams& p) {
    require_sin_power(g, "estimhess1");
    if (!(p.beta > 1)) throw DomainError("estimhess1 needs β > 1");
    const auto region = default_region(m, p);
    const double k = g.K, a = g.a;
    const double alpha = k * a * (a - 1) / 8;
    const double y_max = near_diagonal_limit(a, p.beta);
    const double dmin = p.delta_min.value_or(0.01);
    const double dmax = std::min(p.delta_max.value_or(1e9), 2 * y_max / std::sqrt(k));
    auto report = run_samples("estimhess1", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const Vec u0 = standard_normal(rng, m.dim()), u1 = standard_normal(rng, m.dim());
        const Vec u = join(u0, u1);
        const double lhs = gauge_hessian(g, m, q.x, q.x2, u);
        const auto s = split_components(m, q.x, q.x2, u0, u1);
        const double tu = riemannian_norm(m, q.x2, parallel_transport(m, q.x, q.x2, u0) - u1);
        const double y = std::sqrt(k) * q.delta / 2;
        const double psi = std::pow(std::sin(y), a);
        const double w2 = orthogonal_norm2(m, q.x, q.x2, s);
        const double lead = std::pow(std::sin(y), a - 2) * tu * tu;
        const double rhs = alpha * lead - a * p.beta * k / 2 * psi * w2;
        Outcome o;
        o.margin = lhs - rhs;
        if (lead > 1e-12) o.minima["alpha_fit"] = (lhs + a * p.beta * k / 2 * psi * w2) / lead;
        append(o.config, q.x), append(o.config, q.x2), append(o.config, u0), append(o.config, u1);
        return o;
    });
    report.fitted_constants["alpha"] = alpha;
    report.fitted_constants["y_max"] = y_max;
    return report;
}

EstimateReport check_estimhess2(const ChartManifold& m, const GaugeFunction& g, const EstimateParams& p) {
    require_sin_power(g, "estimhess2");
    const auto region = default_region(m, p);
    const double k = g.K, a = g.a;
    const double dmin = p.delta_min.value_or(0.1 / std::sqrt(k));
    const double dmax = p.delta_max.value_or((kPi - 0.1) / std::sqrt(k));
    return run_samples("estimhess2", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const Vec u0 = standard_normal(rng, m.dim()), u1 = standard_normal(rng, m.dim());
        const double lhs = gauge_hessian(g, m, q.x, q.x2, join(u0, u1));
        const double psi = gauge_value(g, m, q.x, q.x2);
        const double u2 = std::pow(riemannian_norm(m, q.x, u0), 2) + std::pow(riemannian_norm(m, q.x2, u1), 2);
        Outcome o;
        o.margin = lhs + a * k / 2 * psi * u2;
        append(o.config, q.x), append(o.config, q.x2), append(o.config, u0), append(o.config, u1);
        return o;
    });
}

EstimateReport check_minA(const ChartManifold& m, const GaugeFunction& g, const EstimateParams& p) {
    if (g.kind != GaugeKind::emery) throw UnsupportedError("minA applies to the emery gauge");
    const auto region = default_region(m, p);
    const double dmin = p.delta_min.value_or(0.0), dmax = p.delta_max.value_or(0.05);
    const double eta = g.epsilon * g.epsilon / 2;
    return run_samples("minA", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const auto blocks = hessian_blocks(g, m, q.x, q.x2);
        const Mat sym = 0.5 * (blocks.A_tilde + blocks.A_tilde.transpose());
        const double lmin = Eigen::SelfAdjointEigenSolver<Mat>(sym).eigenvalues().minCoeff();
        Outcome o;
        o.margin = lmin - eta;
        o.minima["eta"] = lmin;
        append(o.config, q.x), append(o.config, q.x2);
        return o;
    });
}

EstimateReport check_minhesspsi(const ChartManifold& m, const GaugeFunction& g, const EstimateParams& p) {
    if (!g.smooth_on_diagonal()) throw UnsupportedError("minhesspsi applies to gauges smooth on the diagonal");
    const auto region = default_region(m, p);
    const double dmin = p.delta_min.value_or(0.0), dmax = p.delta_max.value_or(0.4);
    // α = η/2 with η = ε²/2 for the emery gauge; the distance gauge has Ã = 2I.
    const double alpha = g.kind == GaugeKind::emery ? g.epsilon * g.epsilon / 4 : 0.5;
    const double order = g.order;
    static const std::vector<double> ladder{0.025, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6};
    auto report = run_samples("minhesspsi", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const Vec z = standard_normal(rng, m.dim()), z2 = standard_normal(rng, m.dim());
        const double hess = gauge_hessian(g, m, q.x, q.x2, join(z, z2));
        const double tz = riemannian_norm(m, q.x2, parallel_transport(m, q.x, q.x2, z) - z2);
        const double psi = gauge_value(g, m, q.x, q.x2);
        const double zz = std::pow(riemannian_norm(m, q.x, z), 2) + std::pow(riemannian_norm(m, q.x2, z2), 2);
        const double lead = alpha * std::pow(q.delta, order - 2) * tz * tz;
        const double r = hess - lead;
        Outcome o;
        o.margin = r + p.constant_cap * psi * zz;
        double beta_needed = 0.0;
        if (r < 0) beta_needed = psi * zz > 0 ? -r / (psi * zz) : std::numeric_limits<double>::infinity();
        o.maxima["beta"] = beta_needed;
        for (double rad : ladder) {
            if (q.delta <= rad) o.maxima["beta@" + std::to_string(rad).substr(0, 5)] = beta_needed;
        }
        append(o.config, q.x), append(o.config, q.x2), append(o.config, z), append(o.config, z2);
        return o;
    });
    report.fitted_constants["alpha"] = alpha;
    double radius = 0.0;
    for (double rad : ladder) {
        if (rad > dmax) break;
        const auto it = report.fitted_constants.find("beta@" + std::to_string(rad).substr(0, 5));
        if (it != report.fitted_constants.end() && it->second <= p.constant_cap) radius = rad;
    }
    report.fitted_constants["radius"] = radius;
    return report;
}

EstimateReport check_minhessdelta(const ChartManifold& m, const GaugeFunction&, const EstimateParams& p) {
    require_levi_civita_bound(m, "minhessdelta");
    const auto region = default_region(m, p);
    const double k = m.curvature_bound();
    const double dmin = p.delta_min.value_or(0.1);
    const double dmax = p.delta_max.value_or(k > 0 ? std::min(1.5, 0.95 * kPi / (2 * std::sqrt(k))) : 1.5);
    return run_samples("minhessdelta", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const Vec o_pt = q.x;
        const Vec u = standard_normal(rng, m.dim());
        const ScalarField dist = [&](const Vec& y) { return distance_unchecked(m, o_pt, y); };
        const double lhs = scalar_hessian(m, dist, q.x2, u, std::min(1e-3, q.delta / 20));
        // Orthogonal part of u relative to the radial geodesic at x'.
        const auto s = split_components(m, q.x, q.x2, Vec::Zero(m.dim()), u);
        const double w2 = std::pow(riemannian_norm(m, q.x2, s.w1), 2);
        Outcome o;
        o.margin = lhs - cot_term(k, q.delta) * w2;
        append(o.config, q.x), append(o.config, q.x2), append(o.config, u);
        return o;
    });
}

EstimateReport check_2tp2(const ChartManifold& m, const GaugeFunction&, const EstimateParams& p) {
    TransportComparisonOptions opts;
    opts.region = default_region(m, p);
    opts.samples = p.samples;
    opts.seed = p.seed;
    opts.workers = p.workers;
    opts.declared_constant = p.constant_cap;
    auto report = transport_comparison_margin(m, opts);
    report.estimate = "2tp2";
    report.tolerance = p.tolerance;
    report.finalize();
    return report;
}

EstimateReport check_2majdpsi(const ChartManifold& m, const GaugeFunction& g, const EstimateParams& p) {
    const auto region = default_region(m, p);
    const double dmin = p.delta_min.value_or(g.smooth_on_diagonal() ? 0.0 : 0.01);
    const double dmax = p.delta_max.value_or(0.5);
    const DriftSpec drift = p.drift.value_or(DriftSpec::frame_linear(m.dim(), 1.0, p.dim_w));
    const int dw = p.dim_w;
    const double eps = p.split_epsilon;
    auto report = run_samples("2majdpsi", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const Vec b = standard_normal(rng, dw);
        Mat z(m.dim(), dw), z2(m.dim(), dw);
        for (int c = 0; c < dw; ++c) {
            z.col(c) = standard_normal(rng, m.dim());
            z2.col(c) = standard_normal(rng, m.dim());
        }
        Outcome o;
        append(o.config, q.x), append(o.config, q.x2);
        if (q.delta == 0.0) {
            // DΨ vanishes on the diagonal for smooth gauges.
            o.margin = 0.0;
            return o;
        }
        const Vec grad = gauge_gradient(g, m, q.x, q.x2);
        const double lhs = std::abs(grad.dot(join(drift(b, q.x, z), drift(b, q.x2, z2))));
        const double psi = gauge_value(g, m, q.x, q.x2);
        const double zn = 1 + frame_norm(m, q.x, z) + frame_norm(m, q.x2, z2);
        const double tz = frame_norm(m, q.x2, parallel_transport(m, q.x, q.x2, z) - z2);
        const double split = eps * std::pow(q.delta, g.order - 2) * tz * tz;
        o.margin = p.constant_cap * psi * zn + split - lhs;
        o.maxima["C_eps"] = psi > 0 ? std::max(0.0, lhs - split) / (psi * zn) : 0.0;
        return o;
    });
    report.fitted_constants["epsilon"] = eps;
    return report;
}

using Check = EstimateReport (*)(const ChartManifold&, const GaugeFunction&, const EstimateParams&);

const std::map<std::string, Check>& registry() {
    static const std::map<std::string, Check> r{
        {"2der1", check_2der1},           {"derkpos", check_derkpos},   {"estimhess1", check_estimhess1},
        {"estimhess2", check_estimhess2}, {"minA", check_minA},         {"minhesspsi", check_minhesspsi},
        {"minhessdelta", check_minhessdelta}, {"2tp2", check_2tp2},     {"2majdpsi", check_2majdpsi},
    };
    return r;
}

}  // namespace

const std::vector<std::string>& estimate_names() {
    static const std::vector<std::string> names{"2der1",      "derkpos",      "estimhess1", "estimhess2", "minA",
                                                "minhesspsi", "minhessdelta", "2tp2",       "2majdpsi"};
    return names;
}

EstimateReport verify_estimate(const std::string& name, const ChartManifold& m, const GaugeFunction& g,
                               const EstimateParams& params) {
    const auto it = registry().find(name);
    if (it == registry().end()) throw RegistryError("unknown estimate: " + name);
    if (params.samples == 0) throw DomainError("estimate check needs at least one sample");
    return it->second(m, g, params);
}

double near_diagonal_limit(double a, double beta) {
    const double step = 1e-4;
    double last = 0.0;
    for (double y = step; y < kPi / 2; y += step) {
        const double c = std::cos(y), s = std::sin(y);
        const bool ok = (a - 1) * c * c - s * s >= (a - 1) / 2 && c * s / y >= 0.5 &&
                        y * c / s * (1 + sinc(2 * y)) / (1 + std::cos(2 * y)) <= beta;
        if (!ok) break;
        last = y;
    }
    return last;
}

double gauge_equivalence_constant(const GaugeFunction& g, const ChartManifold& m, const EstimateParams& p) {
    const auto region = default_region(m, p);
    const double dmin = p.delta_min.value_or(0.01), dmax = p.delta_max.value_or(0.5);
    const auto report = run_samples("equivalence", p, [&](std::mt19937_64& rng) {
        const Pair q = draw_pair(m, region, dmin, dmax, rng);
        const double ratio = gauge_value(g, m, q.x, q.x2) / std::pow(q.delta, g.order);
        Outcome o;
        o.margin = 0.0;
        o.maxima["c"] = std::max(ratio, 1.0 / ratio);
        return o;
    });
    return report.fitted_constants.at("c");
}

EstimateReport convexity_report(const GaugeFunction& g, const ChartManifold& m, const EstimateParams& p) {
    // Both points are drawn from the ball of radius delta_max around the region
    // center; convexity of a two-point gauge is a property of a neighbourhood of
    // a point, so the ladder runs over that neighbourhood radius.
    SampleRegion region = default_region(m, p);
    region.radius = p.delta_max.value_or(0.2);
    static const std::vector<double> ladder{0.0125, 0.025, 0.05, 0.1, 0.2, 0.4, 0.8};
    auto report = run_samples("convexity", p, [&](std::mt19937_64& rng) {
        const Vec x = sample_point(m, region, rng);
        const Vec x2 = sample_point(m, region, rng);
        const double reach = std::max(distance(m, region.center, x), distance(m, region.center, x2));
        const Mat h = gauge_hessian_matrix(g, m, x, x2);
        const double lmin = Eigen::SelfAdjointEigenSolver<Mat>(0.5 * (h + h.transpose())).eigenvalues().minCoeff();
        Outcome o;
        o.margin = lmin;
        o.minima["min_eigenvalue"] = lmin;
        for (double rad : ladder) {
            if (reach <= rad) o.minima["eig@" + std::to_string(rad).substr(0, 6)] = lmin;
        }
        append(o.config, x), append(o.config, x2);
        return o;
    });
    double r_conv = 0.0;
    for (double rad : ladder) {
        if (rad > region.radius) break;
        const auto it = report.fitted_constants.find("eig@" + std::to_string(rad).substr(0, 6));
        if (it == report.fitted_constants.end()) continue;
        if (it->second < -1e-8) break;
        r_conv = rad;
    }
    report.fitted_constants["r_conv"] = r_conv;
    return report;
}

}  // namespace mbsde

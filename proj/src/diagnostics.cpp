#include "mbsde/diagnostics.hpp"

#include "mbsde/errors.hpp"
#include "mbsde/parallel.hpp"
#include "mbsde/random.hpp"
#include "mbsde/regression.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mbsde {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

Vec join(const Vec& a, const Vec& b) {
    Vec out(a.size() + b.size());
    out << a, b;
    return out;
}

template <class M>
void append(std::vector<double>& out, const Eigen::MatrixBase<M>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
}

Vec default_center(const ChartManifold& m, const Vec& center) {
    if (center.size() != 0) return center;
    if (m.kind() == ManifoldKind::sphere) {
        Vec c(2);
        c << kPi / 2, 0.0;
        return c;
    }
    return m.domain().midpoint();
}

struct SumParts {
    double base = 0.0;  // sum at λ = 0
    double psi = 0.0;
};

SumParts sum_parts(const SubmartingaleParams& p, const ChartManifold& m, const DriftSpec& d, const PairState& s) {
    const GaugeFunction& g = p.gauge;
    SumParts out;
    out.psi = gauge_value(g, m, s.x, s.x2);
    double hess = 0.0;
    for (Eigen::Index c = 0; c < s.z.cols(); ++c) {
        const Vec u = join(s.z.col(c), s.z2.col(c));
        if (u.norm() > 0.0) hess += gauge_hessian(g, m, s.x, s.x2, u);
    }
    const Vec grad = gauge_gradient(g, m, s.x, s.x2);
    double drift = 0.0;
    if (!d.is_zero()) drift = grad.dot(join(d(s.b, s.x, s.z), d(s.b, s.x2, s.z2)));
    const double fz = frame_norm(m, s.x, s.z), fz2 = frame_norm(m, s.x2, s.z2);
    out.base = 0.5 * hess + drift + p.mu * (fz * fz + fz2 * fz2) * out.psi;
    return out;
}

std::vector<double> flatten(const PairState& s) {
    std::vector<double> out;
    append(out, s.b);
    append(out, s.x);
    append(out, s.x2);
    append(out, s.z);
    append(out, s.z2);
    return out;
}

/// Heteroskedasticity-robust covariance of OLS coefficients, residuals rescaled by 1/(1 - h_ii).
Mat robust_covariance(const Mat& design, const Vec& residual) {
    const Mat gram = design.transpose() * design;
    const Eigen::LDLT<Mat> ldlt(gram);
    const Mat g_inv = ldlt.solve(Mat::Identity(design.cols(), design.cols()));
    Mat meat = Mat::Zero(design.cols(), design.cols());
    for (Eigen::Index r = 0; r < design.rows(); ++r) {
        const Vec x = design.row(r).transpose();
        const double leverage = std::min(x.dot(g_inv * x), 1.0 - 1e-12);
        const double e = residual[r] / (1.0 - leverage);
        meat.noalias() += e * e * (x * x.transpose());
    }
    return g_inv * meat * g_inv;
}

int reduced_degree(int degree, int rows, int vars) {
    while (degree > 0 && rows < 4 * static_cast<int>(monomial_exponents(vars, degree).size())) --degree;
    return degree;
}

}  // namespace

SubmartingaleParams SubmartingaleParams::regular_ball(double e, double K, double gamma, double lambda) {
    if (!(gamma > 0 && gamma < 1)) throw DomainError("regular ball needs 0 < γ < 1");
    if (!(K > 0)) throw DomainError("regular ball parameters need K > 0");
    if (!(e > 1 && e < 1 / gamma)) throw DomainError("integrability factor must satisfy 1 < e < 1/γ");
    SubmartingaleParams p;
    p.e_factor = e;
    p.gauge = GaugeFunction::sin_power_from_e(e, K);
    p.mu = e * K / 4;
    p.lambda = lambda;
    return p;
}

double submartingale_sum(const SubmartingaleParams& p, const ChartManifold& m, const DriftSpec& d,
                         const PairState& s) {
    const SumParts parts = sum_parts(p, m, d, s);
    return parts.base + p.lambda * parts.psi;
}

std::vector<PairState> sample_pair_states(const ChartManifold& m, const GaugeFunction& g, const PairSampling& s) {
    const int n = m.dim();
    SampleRegion ball = s.ball;
    ball.center = default_center(m, ball.center);
    const bool excluded = !g.smooth_on_diagonal();
    const double dmin = excluded ? 2 * kSinPowerExclusion : 0.0;
    std::vector<PairState> out(s.samples);
    for (std::size_t k = 0; k < s.samples; ++k) {
        auto rng = substream(s.seed, k);
        PairState st;
        for (int attempt = 0;; ++attempt) {
            if (attempt > 10000) throw DomainError("sample_pair_states: no admissible pair found");
            st.x = sample_point(m, ball, rng);
            const bool near = uniform(rng, 0.0, 1.0) < s.near_fraction;
            st.x2 = near ? sample_at_distance(m, st.x, dmin, s.near_max, rng) : sample_point(m, ball, rng);
            if (!(distance(m, ball.center, st.x2) <= ball.radius)) continue;
            if (excluded && distance(m, st.x, st.x2) <= dmin) continue;
            break;
        }
        st.b = s.b_scale * standard_normal(rng, s.dim_d);
        st.z = s.z_scale * standard_normal(rng, n * s.dim_w).reshaped(n, s.dim_w);
        switch (k % 3) {
            case 0: st.z2 = s.z_scale * standard_normal(rng, n * s.dim_w).reshaped(n, s.dim_w); break;
            case 1:
                st.z2 = parallel_transport(m, st.x, st.x2, st.z) +
                        0.1 * s.z_scale * Mat(standard_normal(rng, n * s.dim_w).reshaped(n, s.dim_w));
                break;
            default: st.z2 = parallel_transport(m, st.x, st.x2, st.z); break;
        }
        out[k] = std::move(st);
    }
    return out;
}

const std::vector<double>& lambda_grid() {
    static const std::vector<double> grid = [] {
        std::vector<double> g{0.0};
        for (int k = 0; k <= 10; ++k) g.push_back(std::ldexp(1.0, k));
        return g;
    }();
    return grid;
}

namespace {

std::vector<SumParts> all_parts(const SubmartingaleParams& p, const ChartManifold& m, const DriftSpec& d,
                                const std::vector<PairState>& states, int workers) {
    std::vector<SumParts> parts(states.size());
    parallel_for(states.size(), workers, [&](std::size_t i) { parts[i] = sum_parts(p, m, d, states[i]); });
    return parts;
}

EstimateReport report_at(double lambda, const SubmartingaleParams& p, const std::vector<SumParts>& parts,
                         const std::vector<PairState>& states, double tolerance) {
    EstimateReport rep;
    rep.estimate = "2pos";
    rep.samples = states.size();
    rep.tolerance = tolerance;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const double v = parts[i].base + lambda * parts[i].psi;
        if (v < -tolerance) ++rep.violations;
        if (v < rep.min_margin) {
            rep.min_margin = v;
            worst = i;
        }
    }
    if (!states.empty()) rep.worst_sample = flatten(states[worst]);
    rep.fitted_constants["lambda"] = lambda;
    rep.fitted_constants["mu"] = p.mu;
    if (p.gauge.kind == GaugeKind::sin_power) rep.fitted_constants["a"] = p.gauge.a;
    rep.finalize();
    return rep;
}

}  // namespace

LambdaCalibration calibrate_lambda(const SubmartingaleParams& p, const ChartManifold& m, const DriftSpec& d,
                                   const std::vector<PairState>& states, double tolerance, int workers) {
    const auto parts = all_parts(p, m, d, states, workers);
    LambdaCalibration cal;
    for (double lambda : lambda_grid()) {
        const bool ok = std::all_of(parts.begin(), parts.end(),
                                    [&](const SumParts& s) { return s.base + lambda * s.psi >= -tolerance; });
        if (ok) {
            cal.lambda = lambda;
            cal.found = true;
            break;
        }
    }
    if (!cal.found) cal.lambda = lambda_grid().back();
    cal.report = report_at(cal.lambda, p, parts, states, tolerance);
    return cal;
}

EstimateReport submartingale_report(const SubmartingaleParams& p, const ChartManifold& m, const DriftSpec& d,
                                    const std::vector<PairState>& states, double tolerance, int workers) {
    return report_at(p.lambda, p, all_parts(p, m, d, states, workers), states, tolerance);
}

SProcess s_process(const ChartManifold& m, const BsdeSolution& a, const BsdeSolution& b,
                   const SubmartingaleParams& p) {
    if (a.X.size() != b.X.size() || a.paths != b.paths) throw DomainError("s_process: solutions do not share a grid");
    const int N = a.steps();
    const int P = a.paths;
    SProcess out;
    out.A.assign(N + 1, Vec::Zero(P));
    out.S.assign(N + 1, Vec::Zero(P));
    for (int p_ = 0; p_ < P; ++p_) {
        double acc = 0.0;
        for (int i = 0; i <= N; ++i) {
            const Vec x = a.x(p_, i), x2 = b.x(p_, i);
            out.A[i][p_] = acc;
            out.S[i][p_] = std::exp(acc) * gauge_value(p.gauge, m, x, x2);
            if (i < N) {
                const double fz = frame_norm(m, x, a.z(p_, i)), fz2 = frame_norm(m, x2, b.z(p_, i));
                acc += (p.lambda + p.mu * (fz * fz + fz2 * fz2)) * a.grid.dt(i);
            }
        }
    }
    return out;
}

std::vector<double> frame_energy(const ChartManifold& m, const BsdeSolution& sol) {
    std::vector<double> out(sol.paths, 0.0);
    for (int p = 0; p < sol.paths; ++p) {
        for (int i = 0; i < sol.steps(); ++i) {
            const double fz = frame_norm(m, sol.x(p, i), sol.z(p, i));
            out[p] += fz * fz * sol.grid.dt(i);
        }
    }
    return out;
}

std::map<double, double> lq_norms(const SProcess& s, const std::vector<double>& qs) {
    std::map<double, double> out;
    if (s.S.empty()) return out;
    const Eigen::Index P = s.S.front().size();
    Vec sup = Vec::Zero(P);
    for (const Vec& slice : s.S) sup = sup.cwiseMax(slice.cwiseAbs());
    for (double q : qs) out[q] = std::pow(sup.array().pow(q).mean(), 1.0 / q);
    return out;
}

IncrementTest conditional_increment_test(const PathEnsemble& regressors, const std::vector<Vec>& values,
                                         const std::vector<int>& stop, int degree, double threshold) {
    const int N = static_cast<int>(values.size()) - 1;
    if (N < 1 || static_cast<int>(regressors.values.size()) < N + 1)
        throw DomainError("conditional_increment_test: regressors and values do not share a grid");
    const int P = static_cast<int>(values.front().size());
    IncrementTest out;
    out.threshold = threshold;
    out.worst_t = kInf;
    out.step_min_t.assign(N, kInf);
    for (int i = 0; i < N; ++i) {
        std::vector<int> active;
        for (int p = 0; p < P; ++p)
            if (stop.empty() || i < stop[p]) active.push_back(p);
        const int A = static_cast<int>(active.size());
        if (A < 2) continue;
        Mat xb(A, regressors.dim);
        Vec y(A);
        for (int a = 0; a < A; ++a) {
            xb.row(a) = regressors.values[i].row(active[a]);
            y[a] = values[i + 1][active[a]] - values[i][active[a]];
        }
        double t_min = kInf;
        if ((y.array() == y[0]).all()) {
            t_min = y[0] >= 0 ? kInf : -kInf;
        } else {
            const Regression reg(xb, reduced_degree(degree, A, regressors.dim));
            const Vec beta = reg.coefficients(y);
            const Vec fitted = reg.design() * beta;
            const Mat cov = robust_covariance(reg.design(), y - fitted);
            for (int a = 0; a < A; ++a) {
                const Vec x = reg.design().row(a).transpose();
                const double se = std::sqrt(std::max(0.0, x.dot(cov * x)));
                const double t = se > 0 ? fitted[a] / se : (fitted[a] >= 0 ? kInf : -kInf);
                t_min = std::min(t_min, t);
            }
        }
        out.step_min_t[i] = t_min;
        if (t_min < out.worst_t) {
            out.worst_t = t_min;
            out.worst_step = i;
        }
    }
    out.pass = out.worst_t >= -threshold;
    return out;
}

DriftTest pooled_drift_test(const Mat& states, const Vec& rates, int degree, double threshold) {
    if (states.rows() != rates.size()) throw DomainError("pooled_drift_test: size mismatch");
    DriftTest out;
    out.threshold = threshold;
    out.samples = static_cast<std::size_t>(rates.size());
    const Regression reg(states, degree);
    const Vec beta = reg.coefficients(rates);
    const Mat cov = robust_covariance(reg.design(), rates - reg.design() * beta);
    for (Eigen::Index k = 0; k < beta.size(); ++k) {
        const double se = std::sqrt(std::max(0.0, cov(k, k)));
        out.coefficients.push_back(beta[k]);
        out.std_errors.push_back(se);
        const double t = se > 0 ? std::abs(beta[k]) / se : (beta[k] == 0 ? 0.0 : kInf);
        out.max_abs_t = std::max(out.max_abs_t, t);
    }
    out.pass = out.max_abs_t <= threshold;
    return out;
}

ItoResidual ito_residual(const ChartManifold& m, const DriftSpec& d, const BsdeSolution& sol, const ScalarField& h,
                         double step) {
    if (sol.X_forward.empty()) throw DomainError("ito_residual: solution has no forward paths");
    const int N = sol.steps();
    const int P = sol.paths;
    std::vector<double> r(P, 0.0);
    for (int p = 0; p < P; ++p) {
        const int stop = sol.stop.empty() ? N : sol.stop[p];
        double sum = 0.0;
        for (int i = 0; i < stop; ++i) {
            const Vec x = sol.X_forward[i].row(p).transpose();
            const Mat z = sol.z(p, i);
            const Vec grad = fd::gradient(h, x, step);
            const double dt = sol.grid.dt(i);
            double hess = 0.0;
            for (Eigen::Index c = 0; c < z.cols(); ++c) hess += scalar_hessian(m, h, x, z.col(c));
            sum += grad.dot(z * sol.driving.dW[i].row(p).transpose()) + 0.5 * hess * dt +
                   grad.dot(d(sol.driving.B.at(p, i), x, z)) * dt;
        }
        r[p] = h(sol.X_forward[N].row(p).transpose()) - h(sol.X_forward[0].row(p).transpose()) - sum;
    }
    ItoResidual out;
    double sq = 0.0;
    for (double v : r) {
        out.max_abs = std::max(out.max_abs, std::abs(v));
        sq += v * v;
        out.mean += v;
    }
    out.rms = std::sqrt(sq / P);
    out.mean /= P;
    return out;
}

double scaling_exponent(double r_coarse, double dt_coarse, double r_fine, double dt_fine) {
    return std::log(r_coarse / r_fine) / std::log(dt_coarse / dt_fine);
}

// ---------------------------------------------------------------------------

TestFunction TestFunction::cos_euclidean(double mu, double C_r) {
    if (!(mu > 0) || !(C_r > 0)) throw DomainError("cos_euclidean needs μ > 0 and C_r > 0");
    TestFunction t;
    t.kind = Kind::cos_euclidean;
    t.a = std::sqrt(2 * kPi * C_r * mu);
    t.r0 = kPi / (4 * t.a);
    return t;
}

TestFunction TestFunction::cos_ball(double beta, double gamma, double K) {
    TestFunction t;
    t.kind = Kind::cos_ball;
    t.beta = beta;
    t.gamma = gamma;
    t.K = K;
    return t;
}

double TestFunction::radius() const {
    return kind == Kind::cos_euclidean ? r0 : gamma * kPi / (2 * std::sqrt(K));
}

double TestFunction::value(const ChartManifold& m, const Vec& x) const {
    const Vec c = default_center(m, center);
    if (kind == Kind::cos_euclidean) return std::cos(a * (x - c).norm());
    return std::cos(beta * std::sqrt(K) * distance_unchecked(m, c, x));
}

namespace {

void validate(const TestFunction& phi) {
    if (phi.kind == TestFunction::Kind::cos_euclidean) {
        if (!(phi.a > 0)) throw DomainError("cos_euclidean needs a > 0");
        if (!(phi.r0 > 0 && phi.r0 < kPi / (2 * phi.a))) throw DomainError("cos_euclidean needs 0 < r0 < π/(2a)");
    } else {
        if (!(phi.K > 0)) throw DomainError("cos_ball needs K > 0");
        if (!(phi.gamma > 0 && phi.gamma < 1)) throw DomainError("cos_ball needs 0 < γ < 1");
        if (!(phi.beta > 1 && phi.beta < 1 / phi.gamma)) throw DomainError("cos_ball needs 1 < β < 1/γ");
    }
}

// D²g - Γ(·,·)·Dg for g = cos(a|x - c|), from the closed-form partial derivatives.
double cos_euclidean_hessian(const TestFunction& phi, const ChartManifold& m, const Vec& c, const Vec& x,
                             const Vec& u) {
    const Vec y = x - c;
    const double r = y.norm();
    const int n = m.dim();
    Mat d2(n, n);
    Vec d1(n);
    if (r < 1e-10) {
        d2 = -phi.a * phi.a * Mat::Identity(n, n);
        d1.setZero();
    } else {
        const double s = std::sin(phi.a * r), co = std::cos(phi.a * r);
        d1 = -phi.a * s * y / r;
        d2 = (-phi.a * phi.a * co / (r * r) + phi.a * s / (r * r * r)) * (y * y.transpose()) -
             phi.a * s / r * Mat::Identity(n, n);
    }
    return u.dot(d2 * u) - d1.dot(christoffel_at(m, x).contract(u, u));
}

}  // namespace

EstimateReport integrability_gauge_check(const TestFunction& phi, const ChartManifold& m, double alpha,
                                         const IntegrabilityParams& params) {
    validate(phi);
    if (!(alpha >= 0)) throw DomainError("integrability check needs α >= 0");
    const Vec c = default_center(m, phi.center);
    const int n = m.dim();
    const double radius = phi.radius();
    const ScalarField f = [&](const Vec& x) { return phi.value(m, x); };

    EstimateReport rep;
    rep.estimate = phi.kind == TestFunction::Kind::cos_euclidean ? "cos_euclidean" : "cos_ball";
    rep.samples = params.samples;
    rep.tolerance = params.tolerance;
    double max_alpha = kInf;
    for (std::size_t s = 0; s < params.samples; ++s) {
        auto rng = substream(params.seed, s);
        Vec x;
        if (phi.kind == TestFunction::Kind::cos_euclidean) {
            for (int attempt = 0;; ++attempt) {
                if (attempt > 100000) throw DomainError("integrability check: domain outside the chart");
                x = c;
                for (int i = 0; i < n; ++i) x[i] += uniform(rng, -radius, radius);
                if ((x - c).norm() <= radius && m.contains(x)) break;
            }
        } else {
            x = sample_point(m, SampleRegion{c, radius}, rng);
        }
        const Vec u = sample_unit_vector(m, x, rng);
        const double hess = phi.kind == TestFunction::Kind::cos_euclidean ? cos_euclidean_hessian(phi, m, c, x, u)
                                                                          : scalar_hessian(m, f, x, u);
        const double value = f(x);
        const double margin = -(hess + 2 * alpha * value);
        max_alpha = std::min(max_alpha, -hess / (2 * value));
        if (margin < -params.tolerance) ++rep.violations;
        if (margin < rep.min_margin) {
            rep.min_margin = margin;
            rep.worst_sample.clear();
            append(rep.worst_sample, x);
            append(rep.worst_sample, u);
        }
    }
    rep.fitted_constants["alpha"] = alpha;
    rep.fitted_constants["alpha_max"] = max_alpha;
    rep.fitted_constants["radius"] = radius;
    if (phi.kind == TestFunction::Kind::cos_euclidean) {
        rep.fitted_constants["a"] = phi.a;
    } else {
        rep.fitted_constants["beta"] = phi.beta;
    }
    rep.finalize();
    return rep;
}

double uniqueness_gap(const ChartManifold& m, const BsdeSolution& a, const BsdeSolution& b) {
    return sup_path_distance(m, a, b);
}

bool regular_ball_check(double rho, double K, bool cut_locus_ok) {
    if (!(rho > 0) || !(K >= 0)) throw DomainError("regular_ball_check needs ρ > 0 and K >= 0");
    return cut_locus_ok && (K == 0.0 || rho * std::sqrt(K) < kPi / 2);
}

// ---------------------------------------------------------------------------

NonuniquenessResult nonuniqueness_demo(int steps, int paths, std::uint64_t seed, double horizon, int record) {
    if (steps < 1 || paths < 1 || !(horizon > 0)) throw DomainError("nonuniqueness_demo needs positive sizes");
    const auto m = ChartManifold::sphere();
    const int k = std::max(1, static_cast<int>(std::lround(kPi / (2 * std::sqrt(horizon / steps)))));
    const double h = kPi / (2 * k);
    const double dt = h * h;

    NonuniquenessResult out;
    out.grid = TimeGrid::uniform(steps * dt, steps);
    out.paths = paths;
    out.lattice = k;
    out.stop.assign(paths, steps);
    out.terminal.resize(paths, 3);
    out.terminal_mirror.resize(paths, 3);

    Vec start(2), mirror_start(2);
    start << kPi / 2, 0.0;
    mirror_start << kPi / 2, kPi;
    out.initial_distance = distance(m, start, mirror_start);

    // Z = ∂_φ (one Brownian direction) along the equator.
    Mat z(2, 1);
    z << 0.0, 1.0;
    const auto zero = DriftSpec::zero(2);

    std::vector<double> state, rate;
    auto phi_at = [&](int j) { return j == k ? kPi / 2 : (j == -k ? -kPi / 2 : j * h); };
    for (int p = 0; p < paths; ++p) {
        auto rng = substream(seed, static_cast<std::uint64_t>(p));
        std::bernoulli_distribution coin(0.5);
        int j = 0;
        Vec trace;
        const bool keep = p < record;
        if (keep) trace = Vec::Zero(steps + 1);
        int i = 0;
        for (; i < steps && std::abs(j) < k; ++i) {
            const double phi = phi_at(j);
            const int next = j + (coin(rng) ? 1 : -1);
            state.push_back(phi);
            rate.push_back((phi_at(next) - phi) / dt);
            Vec x(2);
            x << kPi / 2, phi;
            out.max_md_drift = std::max(out.max_md_drift, md_drift(m, zero, Vec(), x, z).norm());
            j = next;
            if (keep) trace[i + 1] = phi_at(j);
        }
        if (keep) {
            for (int r = i + 1; r <= steps; ++r) trace[r] = phi_at(j);
            out.sample_phi.push_back(trace);
        }
        if (std::abs(j) == k) {
            out.stop[p] = i;
        } else {
            ++out.unstopped;
        }
        Vec x(2), x2(2);
        x << kPi / 2, phi_at(j);
        x2 << kPi / 2, kPi - phi_at(j);
        out.terminal.row(p) = m.embed(x).transpose();
        out.terminal_mirror.row(p) = m.embed(x2).transpose();
        if (std::abs(j) == k)
            out.max_terminal_gap = std::max(out.max_terminal_gap, (out.terminal.row(p) - out.terminal_mirror.row(p)).norm());
    }

    const Eigen::Index count = static_cast<Eigen::Index>(state.size());
    Mat s(count, 1), s2(count, 1);
    Vec r(count), r2(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        s(i, 0) = state[i];
        s2(i, 0) = kPi - state[i];
        r[i] = rate[i];
        r2[i] = -rate[i];
    }
    out.drift = pooled_drift_test(s, r);
    out.drift_mirror = pooled_drift_test(s2, r2);
    out.pass = out.unstopped == 0 && out.max_terminal_gap <= 1e-12 && std::abs(out.initial_distance - kPi) <= 1e-12 &&
               out.max_md_drift <= 1e-12 && out.drift.pass && out.drift_mirror.pass;
    return out;
}

}  // namespace mbsde

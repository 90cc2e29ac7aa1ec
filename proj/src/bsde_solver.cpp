#include "mbsde/bsde_solver.hpp"

#include "mbsde/errors.hpp"
#include "mbsde/parallel.hpp"
#include "mbsde/random.hpp"
#include "mbsde/regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace mbsde {

Vec md_drift(const ChartManifold& m, const DriftSpec& d, const Vec& b, const Vec& x, const Mat& z) {
    Vec out = d(b, x, z);
    if (m.kind() == ManifoldKind::flat) return out;
    const Christoffel gamma = christoffel_at(m, x);
    // Σ_jk Γ^i_jk ([z]^j | [z]^k) = Σ_c Γ^i(z_c, z_c) over the columns z_c.
    for (Eigen::Index c = 0; c < z.cols(); ++c) out -= 0.5 * gamma.contract(z.col(c), z.col(c));
    return out;
}

double state_distance(const ChartManifold& m, const Vec& x, const Vec& y) {
    if (m.kind() == ManifoldKind::custom) {
        const Vec dx = y - x;
        return std::sqrt(std::max(0.0, dx.dot(m.metric_unchecked(x) * dx)));
    }
    return distance_unchecked(m, x, y);
}

Mat BsdeSolution::z(int path, int step) const {
    Mat out(dim, dim_w);
    for (int j = 0; j < dim; ++j)
        for (int c = 0; c < dim_w; ++c) out(j, c) = Z[step](path, j * dim_w + c);
    return out;
}

namespace {

Mat unflatten(const Mat& slice, int p, int n, int dw) {
    Mat out(n, dw);
    for (int j = 0; j < n; ++j)
        for (int c = 0; c < dw; ++c) out(j, c) = slice(p, j * dw + c);
    return out;
}

double sup_path_l2(const ChartManifold& m, const std::vector<Mat>& a, const std::vector<Mat>& b, int paths) {
    double acc = 0.0;
    for (int p = 0; p < paths; ++p) {
        double worst = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double dist = state_distance(m, a[i].row(p).transpose(), b[i].row(p).transpose());
            worst = std::max(worst, dist * dist);
        }
        acc += worst;
    }
    return std::sqrt(acc / paths);
}

struct Sweep {
    std::vector<Mat> X, Z;
    std::size_t projected = 0;
    std::size_t visited = 0;
    std::size_t fixed_point_failures = 0;
};

class BackwardScheme {
public:
    BackwardScheme(const ChartManifold& m, const DriftSpec& d, const DrivingPaths& driving,
                   const SolverOptions& opt, std::vector<int> stop, Mat terminal)
        : m_(m), d_(d), dr_(driving), opt_(opt), stop_(std::move(stop)), terminal_(std::move(terminal)) {}

    Sweep run(const std::vector<Mat>& z_lag) const {
        const int N = dr_.B.grid.steps();
        const int P = dr_.B.paths;
        const int n = m_.dim();
        const int dw = dr_.W.dim;
        Sweep s;
        s.X.assign(N + 1, Mat());
        s.Z.assign(N, Mat());
        s.X[N] = terminal_;
        for (int i = N - 1; i >= 0; --i) {
            const double dt = dr_.B.grid.dt(i);
            s.X[i] = s.X[i + 1];
            s.Z[i] = Mat::Zero(P, n * dw);
            std::vector<int> active;
            for (int p = 0; p < P; ++p)
                if (i < stop_[p]) active.push_back(p);
            if (active.empty()) continue;
            const int A = static_cast<int>(active.size());

            Mat regressors(A, dr_.B.dim), next(A, n), dW(A, dw);
            for (int a = 0; a < A; ++a) {
                regressors.row(a) = dr_.B.values[i].row(active[a]);
                next.row(a) = s.X[i + 1].row(active[a]);
                dW.row(a) = dr_.dW[i].row(active[a]);
            }
            const Regression reg(regressors, degree_for(A, dr_.B.dim));
            const Mat mean = reg.fit(next);
            const Mat resid = next - mean;
            Mat prod(A, n * dw);
            for (int j = 0; j < n; ++j)
                for (int c = 0; c < dw; ++c) prod.col(j * dw + c) = resid.col(j).cwiseProduct(dW.col(c));
            const Mat zfit = reg.fit(prod) / dt;

            std::vector<char> projected(A, 0), failed(A, 0);
            parallel_for(static_cast<std::size_t>(A), opt_.workers, [&](std::size_t ai) {
                const int a = static_cast<int>(ai);
                const int p = active[a];
                const Vec b = dr_.B.values[i].row(p).transpose();
                const Mat zl = unflatten(z_lag[i], p, n, dw);
                const Vec target = mean.row(a).transpose();
                Vec x = target;
                bool done = false;
                for (int it = 0; it < opt_.fixed_point_max && !done; ++it) {
                    const Vec next_x = target - md_drift(m_, d_, b, x, zl) * dt;
                    done = (next_x - x).norm() <= opt_.fixed_point_tol;
                    x = next_x;
                }
                if (!done) failed[a] = 1;
                if (opt_.domain && !opt_.domain->contains(x, opt_.projection_band)) {
                    x = opt_.domain->project(x);
                    projected[a] = 1;
                }
                s.X[i].row(p) = x.transpose();
                s.Z[i].row(p) = zfit.row(a);
            });
            s.visited += A;
            s.projected += std::count(projected.begin(), projected.end(), 1);
            s.fixed_point_failures += std::count(failed.begin(), failed.end(), 1);
        }
        return s;
    }

private:
    // Lower the degree when few paths are still active so the design stays well posed.
    int degree_for(int rows, int vars) const {
        int deg = opt_.basis_degree;
        while (deg > 0 && rows < 4 * static_cast<int>(monomial_exponents(vars, deg).size())) --deg;
        return deg;
    }

    const ChartManifold& m_;
    const DriftSpec& d_;
    const DrivingPaths& dr_;
    const SolverOptions& opt_;
    std::vector<int> stop_;
    Mat terminal_;
};

}  // namespace

BsdeSolution solve_bsde(const ChartManifold& m, const DriftSpec& d, const TerminalCondition& tc,
                        const DrivingPaths& driving, const SolverOptions& opt) {
    const int N = driving.B.grid.steps();
    const int P = driving.B.paths;
    const int n = m.dim();
    const int dw = driving.W.dim;
    if (opt.picard_max < 1) throw DomainError("picard_max must be at least 1");
    if (!opt.stop.empty() && static_cast<int>(opt.stop.size()) != P)
        throw DomainError("stop index count differs from the path count");

    std::vector<int> stop(P, N);
    for (int p = 0; p < P && !opt.stop.empty(); ++p) stop[p] = std::clamp(opt.stop[p], 0, N);

    Mat terminal(P, n);
    for (int p = 0; p < P; ++p) {
        const Vec u = tc(driving.B.at(p, N));
        if (u.size() != n) throw DomainError("terminal map dimension differs from the manifold dimension");
        if (opt.domain && !opt.domain->contains(u, opt.projection_band)) {
            std::ostringstream os;
            os << "terminal value of path " << p << " lies outside the domain";
            throw DomainError(os.str());
        }
        terminal.row(p) = u.transpose();
    }

    std::vector<Mat> z_lag(N, Mat::Zero(P, n * dw));
    if (opt.start == PicardStart::random) {
        for (int p = 0; p < P; ++p) {
            auto rng = substream(opt.init_seed, static_cast<std::uint64_t>(p));
            for (int i = 0; i < N; ++i)
                z_lag[i].row(p) = opt.init_scale * standard_normal(rng, n * dw).transpose();
        }
    }

    const BackwardScheme scheme(m, d, driving, opt, stop, terminal);
    // Γ ≡ 0 and a z-free f make the drift independent of the lagged frame: one sweep is exact.
    const bool single = m.kind() == ManifoldKind::flat && d.z_free;

    BsdeSolution sol;
    sol.grid = driving.B.grid;
    sol.paths = P;
    sol.dim = n;
    sol.dim_w = dw;
    sol.driving = driving;
    sol.stop = stop;

    Sweep current = scheme.run(z_lag);
    sol.iterations = 1;
    bool converged = single;
    if (single) sol.picard_residuals.push_back(0.0);
    while (!converged) {
        if (sol.iterations >= opt.picard_max) {
            std::ostringstream os;
            os << "Picard iteration did not reach " << opt.picard_tol << " in " << opt.picard_max << " sweeps";
            throw ConvergenceError(os.str(), sol.picard_residuals);
        }
        Sweep next = scheme.run(current.Z);
        ++sol.iterations;
        const double r = sup_path_l2(m, next.X, current.X, P);
        sol.picard_residuals.push_back(r);
        converged = r < opt.picard_tol;
        current = std::move(next);
    }

    sol.X = std::move(current.X);
    sol.Z = std::move(current.Z);
    sol.projected_fraction =
        current.visited ? static_cast<double>(current.projected) / static_cast<double>(current.visited) : 0.0;
    sol.domain_escape_warning = sol.projected_fraction > opt.projection_warning;
    sol.fixed_point_failures = current.fixed_point_failures;

    // Forward Euler re-simulation of the chart equation from X_0 with the computed Z.
    sol.X_forward.assign(N + 1, Mat(P, n));
    std::vector<double> gap(P, 0.0);
    parallel_for(static_cast<std::size_t>(P), opt.workers, [&](std::size_t pi) {
        const int p = static_cast<int>(pi);
        Vec x = sol.x(p, 0);
        int i = 0;
        sol.X_forward[0].row(p) = x.transpose();
        try {
            for (; i < N; ++i) {
                if (i < stop[p]) {
                    const Mat z = sol.z(p, i);
                    x += md_drift(m, d, driving.B.at(p, i), x, z) * sol.grid.dt(i) +
                         z * driving.dW[i].row(p).transpose();
                }
                sol.X_forward[i + 1].row(p) = x.transpose();
            }
            gap[p] = (x - sol.x(p, N)).squaredNorm();
        } catch (const Error&) {
            // Left the chart: freeze at the last valid state.
            for (; i < N; ++i) sol.X_forward[i + 1].row(p) = x.transpose();
            gap[p] = std::numeric_limits<double>::infinity();
        }
    });
    double acc = 0.0;
    for (double g : gap) acc += g;
    sol.forward_residual = std::sqrt(acc / P);
    return sol;
}

BsdeSolution solve_bsde(const ChartManifold& m, const DriftSpec& d, const TerminalCondition& tc,
                        const DiffusionSpec& spec, const TimeGrid& grid, int paths, std::uint64_t seed,
                        const SolverOptions& options) {
    return solve_bsde(m, d, tc, simulate_diffusion(spec, grid, paths, seed, options.workers), options);
}

double sup_path_distance(const ChartManifold& m, const BsdeSolution& a, const BsdeSolution& b) {
    if (a.X.size() != b.X.size() || a.paths != b.paths) throw DomainError("solutions do not share a grid");
    return sup_path_l2(m, a.X, b.X, a.paths);
}

// ---------------------------------------------------------------------------

namespace {

SampleRegion audit_region(const ChartManifold& m, const AuditParams& p) {
    SampleRegion r = p.region;
    if (r.center.size() == 0) {
        if (m.kind() == ManifoldKind::sphere) {
            r.center = Vec(2);
            r.center << std::numbers::pi / 2, 0.0;
        } else {
            r.center = m.domain().midpoint();
        }
    }
    return r;
}

template <class M>
void append(std::vector<double>& out, const Eigen::MatrixBase<M>& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
}

}  // namespace

OutwardReport check_pointing_outward(const DriftSpec& d, const DomainGauge& dg, const ChartManifold& m,
                                     const AuditParams& params, bool strict) {
    OutwardReport rep;
    rep.strict = strict;
    rep.samples = params.samples;
    rep.infimum = std::numeric_limits<double>::infinity();
    const int n = m.dim();
    for (std::size_t s = 0; s < params.samples; ++s) {
        auto rng = substream(params.seed, s);
        const Vec b = params.b_scale * standard_normal(rng, params.dim_d);
        const Vec x = dg.boundary_point(sample_unit_vector(m, dg.center(), rng));
        const Mat z = params.z_scale * standard_normal(rng, n * params.dim_w).reshaped(n, params.dim_w);
        const double value = dg.directional(x, d(b, x, z));
        if (value < rep.infimum) {
            rep.infimum = value;
            rep.worst_sample.clear();
            append(rep.worst_sample, b);
            append(rep.worst_sample, x);
            append(rep.worst_sample, z);
        }
    }
    rep.holds = rep.infimum >= -params.tolerance;
    rep.holds_strict = rep.infimum > params.tolerance;
    rep.zeta = rep.holds_strict ? rep.infimum : 0.0;
    rep.pass = strict ? rep.holds_strict : rep.holds;
    return rep;
}

DriftAudit drift_spec_audit(const DriftSpec& d, const ChartManifold& m, const AuditParams& params) {
    DriftAudit rep;
    rep.samples = params.samples;
    rep.declared_L = d.lipschitz_L;
    rep.declared_L2 = d.bound_L2;
    const int n = m.dim();
    const auto region = audit_region(m, params);
    // Builtin anchors are chart origins; fall back to the region center where the origin is off-chart.
    const Vec x0 = d.anchor_x0.size() == n && m.contains(d.anchor_x0) ? d.anchor_x0 : region.center;
    const Mat zero = Mat::Zero(n, params.dim_w);

    for (std::size_t s = 0; s < params.samples; ++s) {
        auto rng = substream(params.seed, s);
        const Vec x = sample_point(m, region, rng);
        const Vec x2 = sample_point(m, region, rng);
        Vec b = params.b_scale * standard_normal(rng, params.dim_d);
        Vec b2 = params.b_scale * standard_normal(rng, params.dim_d);
        Mat z = params.z_scale * standard_normal(rng, n * params.dim_w).reshaped(n, params.dim_w);
        Mat z2 = params.z_scale * standard_normal(rng, n * params.dim_w).reshaped(n, params.dim_w);
        // Mix in configurations where parts of the right-hand side vanish; the extremal
        // ratios of simple drifts sit there.
        switch (s % 4) {
            case 1: b2 = b; break;
            case 2: b2 = b; z.setZero(); z2.setZero(); break;
            case 3: z2 = parallel_transport(m, x, x2, z); break;
            default: break;
        }
        const Mat tz = parallel_transport(m, x, x2, z);
        const Vec tf = parallel_transport(m, x, x2, Vec(d(b, x, z)));
        const double lhs = riemannian_norm(m, x2, tf - d(b2, x2, z2));
        const double rhs = ((b - b2).norm() + state_distance(m, x, x2)) *
                               (1.0 + frame_norm(m, x, z) + frame_norm(m, x2, z2)) +
                           frame_norm(m, x2, tz - z2);
        if (rhs > 0.0) {
            const double ratio = lhs / rhs;
            if (ratio > rep.lipschitz_ratio) {
                rep.lipschitz_ratio = ratio;
                rep.worst_sample.clear();
                append(rep.worst_sample, b);
                append(rep.worst_sample, x);
                append(rep.worst_sample, z);
                append(rep.worst_sample, b2);
                append(rep.worst_sample, x2);
                append(rep.worst_sample, z2);
            }
        }
        const Vec bound_b = params.b_scale * standard_normal(rng, params.dim_d);
        rep.bound_value = std::max(rep.bound_value, riemannian_norm(m, x0, d(bound_b, x0, zero)));
    }
    rep.lipschitz_ok = rep.lipschitz_ratio <= rep.declared_L + params.tolerance;
    rep.bound_ok = rep.bound_value <= rep.declared_L2 + params.tolerance;
    rep.pass = rep.lipschitz_ok && rep.bound_ok;
    return rep;
}

}  // namespace mbsde

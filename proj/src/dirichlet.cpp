#include "mbsde/dirichlet.hpp"

#include "mbsde/drift.hpp"
#include "mbsde/errors.hpp"
#include "mbsde/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace mbsde {

namespace {

// Leading overshoot constant of discretely monitored Brownian motion, -ζ(1/2)/√(2π).
constexpr double kOvershoot = 0.5826;

std::string point_text(const Vec& x) {
    std::ostringstream out;
    out << "(";
    for (Eigen::Index i = 0; i < x.size(); ++i) out << (i ? ", " : "") << x[i];
    out << ")";
    return out.str();
}

}  // namespace

SourceDomain SourceDomain::disk(Vec center, double radius) {
    if (!(radius > 0)) throw DomainError("disk radius must be positive");
    SourceDomain d;
    d.kind = Kind::disk;
    d.center = std::move(center);
    d.radius = radius;
    return d;
}

SourceDomain SourceDomain::interval(double a, double b) {
    if (!(a < b)) throw DomainError("interval needs a < b");
    SourceDomain d = box(Vec::Constant(1, a), Vec::Constant(1, b));
    d.kind = Kind::interval;
    return d;
}

SourceDomain SourceDomain::box(Vec lower, Vec upper) {
    if (lower.size() != upper.size() || lower.size() == 0 || !(lower.array() < upper.array()).all())
        throw DomainError("box needs lower < upper componentwise");
    SourceDomain d;
    d.kind = Kind::box;
    d.lower = std::move(lower);
    d.upper = std::move(upper);
    return d;
}

int SourceDomain::dim() const { return static_cast<int>(kind == Kind::disk ? center.size() : lower.size()); }

double SourceDomain::boundary_distance(const Vec& x) const {
    if (kind == Kind::disk) return radius - (x - center).norm();
    return std::min((x - lower).minCoeff(), (upper - x).minCoeff());
}

Vec SourceDomain::nearest_boundary(const Vec& x) const {
    if (kind == Kind::disk) {
        const Vec v = x - center;
        const double n = v.norm();
        if (n == 0.0) {
            Vec e = Vec::Zero(x.size());
            e[0] = 1.0;
            return center + radius * e;
        }
        return center + radius / n * v;
    }
    Vec y = x.cwiseMax(lower).cwiseMin(upper);
    if (inside(x)) {
        Eigen::Index k = 0, k2 = 0;
        const double below = (x - lower).minCoeff(&k);
        const double above = (upper - x).minCoeff(&k2);
        if (below <= above) {
            y[k] = lower[k];
        } else {
            y[k2] = upper[k2];
        }
    }
    return y;
}

Vec SourceDomain::normal(const Vec& x) const {
    const Vec b = nearest_boundary(x);
    if (kind == Kind::disk) return (b - center) / radius;
    Vec n = Vec::Zero(b.size());
    Eigen::Index k = 0, k2 = 0;
    const double below = (b - lower).cwiseAbs().minCoeff(&k);
    const double above = (upper - b).cwiseAbs().minCoeff(&k2);
    if (below <= above) {
        n[k] = -1.0;
    } else {
        n[k2] = 1.0;
    }
    return n;
}

double SourceDomain::diameter() const { return kind == Kind::disk ? 2 * radius : (upper - lower).norm(); }

BoundaryMap BoundaryMap::constant(Vec p) {
    return {"constant", [p = std::move(p)](const Vec&) { return p; }};
}

BoundaryMap BoundaryMap::coordinate(int k) {
    return {"coordinate", [k](const Vec& x) { return Vec::Constant(1, x[k]); }};
}

BoundaryMap BoundaryMap::harmonic_quadratic() {
    return {"harmonic_quadratic", [](const Vec& x) { return Vec::Constant(1, x[0] * x[0] - x[1] * x[1]); }};
}

BoundaryMap BoundaryMap::exp_image(const ChartManifold& m, Vec center, double scale) {
    const Mat frame = orthonormal_frame(m, center);
    return {"exp_image", [m, center = std::move(center), scale, frame](const Vec& x) {
                Vec v = Vec::Zero(m.dim());
                const Eigen::Index k = std::min<Eigen::Index>(m.dim(), x.size());
                v.head(k) = scale * x.head(k);
                return exp_map(m, center, frame * v);
            }};
}

PointPredicate running_predicate(const DirichletProblem& p, double dt) {
    if (!p.exit_correction) return [&p](const Vec& x) { return p.domain.inside(x); };
    return [&p, root = std::sqrt(dt)](const Vec& x) {
        const double d = p.domain.boundary_distance(x);
        if (d <= 0.0) return false;
        const Vec sn = p.diffusion.vol_sigma(x).transpose() * p.domain.normal(x);
        return d > kOvershoot * sn.norm() * root;
    };
}

FieldEstimate solve_dirichlet(const DirichletProblem& p, const std::vector<Vec>& queries, int steps, int paths,
                              std::uint64_t seed, SolverOptions options) {
    if (!(p.horizon_cap > 0) || !std::isfinite(p.horizon_cap)) throw DomainError("horizon_cap must be finite and positive");
    if (p.diffusion.dim_d != p.domain.dim()) throw DomainError("diffusion and source domain dimensions differ");
    const auto grid = TimeGrid::uniform(p.horizon_cap, steps);
    const auto running = running_predicate(p, grid.dt(0));
    options.domain = p.gauge;
    const TerminalCondition tc{"dirichlet", [&p](const Vec& b) { return p.boundary(p.domain.nearest_boundary(b)); }};

    FieldEstimate out;
    const int n = p.target.dim();
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const Vec& x = queries[q];
        if (x.size() != p.domain.dim() || p.domain.boundary_distance(x) < -1e-12)
            throw DomainError("query point " + point_text(x) + " outside the source domain");
        out.query_points.push_back(x);
        if (p.domain.on_boundary(x) || !running(x)) {
            const Vec v = p.boundary(p.domain.on_boundary(x) ? x : p.domain.nearest_boundary(x));
            if (p.gauge && !p.gauge->contains(v, 1e-12)) throw DomainError("boundary map leaves the target domain");
            out.values.push_back(v);
            out.std_errors.push_back(Vec::Zero(n));
            out.truncation_mass.push_back(0.0);
            out.mean_exit_time.push_back(0.0);
            continue;
        }

        DiffusionSpec spec = p.diffusion;
        spec.start_y = x;
        auto driving = simulate_diffusion(spec, grid, paths, derive_seed(seed, q), options.workers);
        const auto stop = hitting_time(driving.B, running);
        std::size_t truncated = 0;
        double exit_sum = 0.0;
        for (int path = 0; path < paths; ++path) {
            const int s = stop[path];
            if (s == steps && running(driving.B.at(path, steps))) ++truncated;
            exit_sum += grid.time(s);
            for (int i = s; i < steps; ++i) {
                driving.B.values[i + 1].row(path) = driving.B.values[s].row(path);
                driving.W.values[i + 1].row(path) = driving.W.values[s].row(path);
                driving.dW[i].row(path).setZero();
            }
        }
        const double mass = static_cast<double>(truncated) / paths;
        if (mass > p.truncation_limit) {
            std::ostringstream msg;
            msg << "truncation mass " << mass << " at query " << point_text(x) << " exceeds " << p.truncation_limit;
            throw ReliabilityError(msg.str());
        }

        options.stop = stop;
        const auto sol = solve_bsde(p.target, p.drift, tc, driving, options);
        // Path-wise X_ζ - Σ drift Δt has mean X₀ and gives the standard error.
        Mat y(paths, n);
        for (int path = 0; path < paths; ++path) {
            Vec acc = sol.x(path, steps);
            for (int i = 0; i < stop[path]; ++i)
                acc -= md_drift(p.target, p.drift, driving.B.at(path, i), sol.x(path, i), sol.z(path, i)) * grid.dt(i);
            y.row(path) = acc.transpose();
        }
        const Vec mean = y.colwise().mean().transpose();
        const Vec sd = ((y.rowwise() - mean.transpose()).array().square().colwise().sum() / std::max(1, paths - 1))
                           .sqrt()
                           .transpose();
        out.values.push_back(sol.x(0, 0));
        out.std_errors.push_back(sd / std::sqrt(static_cast<double>(paths)));
        out.truncation_mass.push_back(mass);
        out.mean_exit_time.push_back(exit_sum / paths);
    }
    if (p.gauge) {
        for (const Vec& v : out.values)
            out.confinement_excess = std::max(out.confinement_excess, p.gauge->chi(v) - p.gauge->level());
    }
    return out;
}

StoppingReport stopping_integrability(const DirichletProblem& p, const Vec& x, int steps, int paths, double xi,
                                      std::uint64_t seed, int workers) {
    const auto grid = TimeGrid::uniform(p.horizon_cap, steps);
    DiffusionSpec spec = p.diffusion;
    spec.start_y = x;
    const auto exits = simulate_exit(spec, grid, paths, seed, running_predicate(p, grid.dt(0)), workers);
    std::vector<double> times(paths);
    StoppingReport rep;
    for (int path = 0; path < paths; ++path) {
        times[path] = grid.time(exits.index[path]);
        if (!exits.exited[path]) rep.truncation_mass += 1.0;
        rep.mean_time += times[path];
    }
    rep.truncation_mass /= paths;
    rep.mean_time /= paths;
    rep.moment = exp_moment(times, xi);
    return rep;
}

// ---------------------------------------------------------------------------

std::vector<Vec> regular_grid(int dim, double lo, double hi, int per_axis) {
    if (dim < 1 || per_axis < 1) throw DomainError("regular_grid needs positive sizes");
    std::vector<Vec> out;
    std::vector<int> idx(dim, 0);
    const double h = per_axis > 1 ? (hi - lo) / (per_axis - 1) : 0.0;
    while (true) {
        Vec x(dim);
        for (int k = 0; k < dim; ++k) x[k] = lo + h * idx[k];
        out.push_back(x);
        int k = 0;
        while (k < dim && ++idx[k] == per_axis) idx[k++] = 0;
        if (k == dim) break;
    }
    return out;
}

namespace {

struct GridIndex {
    std::vector<std::vector<double>> axes;
    std::vector<double> spacing;
    std::map<std::vector<int>, std::size_t> nodes;
};

GridIndex index_grid(const std::vector<Vec>& points) {
    if (points.empty()) throw DomainError("pde_residual needs query points");
    const int d = static_cast<int>(points.front().size());
    GridIndex g;
    g.axes.resize(d);
    g.spacing.assign(d, 0.0);
    for (int k = 0; k < d; ++k) {
        auto& axis = g.axes[k];
        for (const Vec& x : points) axis.push_back(x[k]);
        std::sort(axis.begin(), axis.end());
        axis.erase(std::unique(axis.begin(), axis.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                   axis.end());
        if (axis.size() < 3) throw DomainError("pde_residual needs at least three grid values per axis");
        g.spacing[k] = axis[1] - axis[0];
        for (std::size_t i = 1; i < axis.size(); ++i)
            if (std::abs(axis[i] - axis[i - 1] - g.spacing[k]) > 1e-9 * (1 + std::abs(g.spacing[k])))
                throw DomainError("pde_residual needs a regular grid");
    }
    for (std::size_t q = 0; q < points.size(); ++q) {
        std::vector<int> key(d);
        for (int k = 0; k < d; ++k)
            key[k] = static_cast<int>(std::lround((points[q][k] - g.axes[k].front()) / g.spacing[k]));
        g.nodes[key] = q;
    }
    return g;
}

}  // namespace

PdeResidual pde_residual(const FieldEstimate& est, const DirichletProblem& p, double threshold) {
    if (p.target.kind() != ManifoldKind::flat)
        throw UnsupportedError("pde_residual supports flat targets only");
    const auto g = index_grid(est.query_points);
    const int d = static_cast<int>(g.axes.size());
    const int n = p.target.dim();

    PdeResidual out;
    out.threshold = threshold;
    for (const auto& [key, q] : g.nodes) {
        const Vec& x = est.query_points[q];
        if (!p.domain.inside(x)) continue;
        const Mat sigma = p.diffusion.vol_sigma(x);
        const Mat a = sigma * sigma.transpose();
        const Vec b = p.diffusion.drift_b(x);

        std::map<std::size_t, double> weights;  // generator stencil
        bool complete = true;
        auto node = [&](std::vector<int> off) -> std::optional<std::size_t> {
            for (int k = 0; k < d; ++k) off[k] += key[k];
            const auto it = g.nodes.find(off);
            if (it == g.nodes.end()) return std::nullopt;
            return it->second;
        };
        Mat jac(n, d);
        for (int j = 0; j < d && complete; ++j) {
            std::vector<int> e(d, 0);
            e[j] = 1;
            std::vector<int> me(d, 0);
            me[j] = -1;
            const auto up = node(e), down = node(me);
            if (!up || !down) {
                complete = false;
                break;
            }
            const double h = g.spacing[j];
            weights[*up] += 0.5 * a(j, j) / (h * h) + b[j] / (2 * h);
            weights[*down] += 0.5 * a(j, j) / (h * h) - b[j] / (2 * h);
            weights[q] -= a(j, j) / (h * h);
            jac.col(j) = (est.values[*up] - est.values[*down]) / (2 * h);
            for (int l = j + 1; l < d; ++l) {
                if (a(j, l) == 0.0) continue;
                const double hl = g.spacing[l];
                const double w = a(j, l) / (4 * h * hl);
                for (int sj : {1, -1})
                    for (int sl : {1, -1}) {
                        std::vector<int> off(d, 0);
                        off[j] = sj;
                        off[l] = sl;
                        const auto c = node(off);
                        if (!c) {
                            complete = false;
                            break;
                        }
                        weights[*c] += sj * sl * w;
                    }
            }
        }
        if (!complete) continue;

        Vec gen = Vec::Zero(n), var = Vec::Zero(n);
        for (const auto& [node_q, w] : weights) {
            gen += w * est.values[node_q];
            var += (w * w) * est.std_errors[node_q].array().square().matrix();
        }
        const Vec res = gen - p.drift(x, est.values[q], jac * sigma);
        const Vec se = var.cwiseSqrt();
        for (int k = 0; k < n; ++k) {
            const double t = se[k] > 0 ? std::abs(res[k]) / se[k] : (std::abs(res[k]) < 1e-12 ? 0.0 : std::numeric_limits<double>::infinity());
            out.max_t = std::max(out.max_t, t);
        }
        out.nodes.push_back(x);
        out.residual.push_back(res);
        out.std_error.push_back(se);
    }
    out.pass = !out.nodes.empty() && out.max_t <= threshold;
    return out;
}

}  // namespace mbsde

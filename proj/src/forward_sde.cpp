#include "mbsde/forward_sde.hpp"

#include "mbsde/errors.hpp"
#include "mbsde/parallel.hpp"
#include "mbsde/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mbsde {

TimeGrid::TimeGrid(std::vector<double> times) : t_(std::move(times)) {
    if (t_.size() < 2) throw DomainError("time grid needs at least one step");
    if (t_.front() != 0.0) throw DomainError("time grid must start at 0");
    for (std::size_t i = 1; i < t_.size(); ++i) {
        if (!(t_[i] > t_[i - 1])) throw DomainError("time grid must be strictly increasing");
    }
}

TimeGrid TimeGrid::uniform(double T, int steps) {
    if (!(T > 0) || steps < 1) throw DomainError("uniform grid needs T > 0 and at least one step");
    std::vector<double> t(steps + 1);
    for (int i = 0; i <= steps; ++i) t[i] = T * i / steps;
    t.back() = T;
    return TimeGrid(std::move(t));
}

DiffusionSpec DiffusionSpec::make(Vec start, int dim_w, std::function<Vec(const Vec&)> b,
                                  std::function<Mat(const Vec&)> sigma) {
    DiffusionSpec s;
    s.dim_d = static_cast<int>(start.size());
    s.dim_w = dim_w;
    s.start_y = std::move(start);
    s.drift_b = std::move(b);
    s.vol_sigma = std::move(sigma);
    return s;
}

DiffusionSpec DiffusionSpec::brownian(Vec start) {
    const int d = static_cast<int>(start.size());
    auto s = make(std::move(start), d, drift_zero(d), sigma_identity(d));
    s.b_name = "zero";
    s.sigma_name = "identity";
    return s;
}

std::function<Vec(const Vec&)> drift_zero(int d) {
    return [d](const Vec&) { return Vec::Zero(d).eval(); };
}

std::function<Vec(const Vec&)> drift_constant(Vec c) {
    return [c = std::move(c)](const Vec&) { return c; };
}

std::function<Vec(const Vec&)> drift_linear(double k) {
    return [k](const Vec& x) { return (-k * x).eval(); };
}

std::function<Mat(const Vec&)> sigma_identity(int d) {
    return [d](const Vec&) { return Mat::Identity(d, d).eval(); };
}

std::function<Mat(const Vec&)> sigma_scalar(int d, int dim_w, double s) {
    return [d, dim_w, s](const Vec&) {
        Mat m = Mat::Zero(d, dim_w);
        for (int i = 0; i < std::min(d, dim_w); ++i) m(i, i) = s;
        return m;
    };
}

std::function<Mat(const Vec&)> sigma_zero(int d, int dim_w) {
    return [d, dim_w](const Vec&) { return Mat::Zero(d, dim_w).eval(); };
}

namespace {

void validate(const DiffusionSpec& spec) {
    if (spec.dim_d < 1 || spec.dim_w < 1) throw DomainError("diffusion dimensions must be positive");
    if (spec.start_y.size() != spec.dim_d) throw DomainError("start point dimension mismatch");
    if (!spec.drift_b || !spec.vol_sigma) throw DomainError("diffusion coefficients missing");
}

/// One Euler step; throws NumericalError on non-finite coefficients.
Vec euler_step(const DiffusionSpec& spec, const Vec& b, double dt, const Vec& dw, int step, int path) {
    const Vec drift = spec.drift_b(b);
    const Mat sigma = spec.vol_sigma(b);
    if (!drift.allFinite() || !sigma.allFinite()) {
        std::ostringstream os;
        os << "non-finite diffusion coefficients at step " << step << ", path " << path;
        throw NumericalError(os.str());
    }
    return b + drift * dt + sigma * dw;
}

}  // namespace

DrivingPaths simulate_diffusion(const DiffusionSpec& spec, const TimeGrid& grid, int paths, std::uint64_t seed,
                                int workers) {
    validate(spec);
    if (paths < 1) throw DomainError("need at least one path");
    const int n = grid.steps();
    DrivingPaths out;
    out.B.grid = out.W.grid = grid;
    out.B.paths = out.W.paths = paths;
    out.B.dim = spec.dim_d;
    out.W.dim = spec.dim_w;
    out.B.values.assign(n + 1, Mat(paths, spec.dim_d));
    out.W.values.assign(n + 1, Mat::Zero(paths, spec.dim_w));
    out.dW.assign(n, Mat(paths, spec.dim_w));

    parallel_for(static_cast<std::size_t>(paths), workers, [&](std::size_t pi) {
        const int p = static_cast<int>(pi);
        auto rng = substream(seed, pi);
        std::normal_distribution<double> normal;
        Vec b = spec.start_y;
        Vec w = Vec::Zero(spec.dim_w);
        out.B.values[0].row(p) = b.transpose();
        Vec dw(spec.dim_w);
        for (int i = 0; i < n; ++i) {
            const double dt = grid.dt(i);
            const double sd = std::sqrt(dt);
            for (int k = 0; k < spec.dim_w; ++k) dw[k] = sd * normal(rng);
            b = euler_step(spec, b, dt, dw, i, p);
            w += dw;
            out.dW[i].row(p) = dw.transpose();
            out.B.values[i + 1].row(p) = b.transpose();
            out.W.values[i + 1].row(p) = w.transpose();
        }
    });
    return out;
}

std::vector<int> hitting_time(const PathEnsemble& ensemble, const PointPredicate& inside) {
    const int n = ensemble.grid.steps();
    std::vector<int> index(ensemble.paths, n);
    for (int p = 0; p < ensemble.paths; ++p) {
        for (int i = 0; i <= n; ++i) {
            if (!inside(ensemble.at(p, i))) {
                index[p] = i;
                break;
            }
        }
    }
    return index;
}

ExitSample simulate_exit(const DiffusionSpec& spec, const TimeGrid& grid, int paths, std::uint64_t seed,
                         const PointPredicate& inside, int workers) {
    validate(spec);
    if (paths < 1) throw DomainError("need at least one path");
    const int n = grid.steps();
    ExitSample out;
    out.index.assign(paths, n);
    out.exited.assign(paths, false);
    out.position.assign(paths, Vec());
    std::vector<char> exited(paths, 0);
    parallel_for(static_cast<std::size_t>(paths), workers, [&](std::size_t pi) {
        const int p = static_cast<int>(pi);
        auto rng = substream(seed, pi);
        std::normal_distribution<double> normal;
        Vec b = spec.start_y;
        Vec dw(spec.dim_w);
        int i = 0;
        bool out_of_domain = !inside(b);
        while (!out_of_domain && i < n) {
            const double sd = std::sqrt(grid.dt(i));
            for (int k = 0; k < spec.dim_w; ++k) dw[k] = sd * normal(rng);
            b = euler_step(spec, b, grid.dt(i), dw, i, p);
            ++i;
            out_of_domain = !inside(b);
        }
        out.index[p] = i;
        exited[p] = out_of_domain;
        out.position[p] = b;
    });
    for (int p = 0; p < paths; ++p) out.exited[p] = exited[p] != 0;
    return out;
}

MomentEstimate exp_moment(const std::vector<double>& values, double xi) {
    if (!(xi >= 0)) throw DomainError("exp_moment needs ξ >= 0");
    if (values.empty()) throw DomainError("exp_moment needs at least one value");
    MomentEstimate est;
    const double n = static_cast<double>(values.size());
    double top = -std::numeric_limits<double>::infinity();
    for (double v : values) top = std::max(top, xi * v);
    // exp(top) * P must stay representable for both the mean and the second moment.
    constexpr double kLogMax = 709.0;
    if (!std::isfinite(top) || 2 * top > kLogMax) {
        est.overflow = true;
        est.mean = est.std_error = std::numeric_limits<double>::infinity();
        return est;
    }
    double sum = 0.0, sum2 = 0.0;
    for (double v : values) {
        const double e = std::exp(xi * v);
        sum += e;
        sum2 += e * e;
    }
    est.mean = sum / n;
    if (values.size() > 1) {
        const double var = std::max(0.0, (sum2 - n * est.mean * est.mean) / (n - 1));
        est.std_error = std::sqrt(var / n);
    }
    return est;
}

}  // namespace mbsde

#pragma once

#include "mbsde/linalg.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mbsde {

/// Time points 0 = t_0 < ... < t_N = T.
class TimeGrid {
public:
    explicit TimeGrid(std::vector<double> times);
    static TimeGrid uniform(double T, int steps);

    int steps() const { return static_cast<int>(t_.size()) - 1; }
    double time(int i) const { return t_[i]; }
    double dt(int i) const { return t_[i + 1] - t_[i]; }
    double horizon() const { return t_.back(); }
    const std::vector<double>& times() const { return t_; }

private:
    std::vector<double> t_;
};

/// dB = b(B) dt + σ(B) dW, B_0 = y.
struct DiffusionSpec {
    int dim_d = 1;
    int dim_w = 1;
    std::function<Vec(const Vec&)> drift_b;
    std::function<Mat(const Vec&)> vol_sigma;
    Vec start_y;
    std::string b_name = "zero";
    std::string sigma_name = "identity";

    /// Brownian motion B = y + W (b = 0, σ = I, d = d_w).
    static DiffusionSpec brownian(Vec start);
    static DiffusionSpec make(Vec start, int dim_w, std::function<Vec(const Vec&)> b,
                              std::function<Mat(const Vec&)> sigma);
};

// Builtin coefficient fields.
std::function<Vec(const Vec&)> drift_zero(int d);
std::function<Vec(const Vec&)> drift_constant(Vec c);
/// b(x) = -k x (Ornstein-Uhlenbeck pull toward the origin).
std::function<Vec(const Vec&)> drift_linear(double k);
std::function<Mat(const Vec&)> sigma_identity(int d);
std::function<Mat(const Vec&)> sigma_scalar(int d, int dim_w, double s);
std::function<Mat(const Vec&)> sigma_zero(int d, int dim_w);

/// Per-time slices of P paths: values[i] is P × dim at grid index i.
struct PathEnsemble {
    TimeGrid grid{std::vector<double>{0.0, 1.0}};
    int paths = 0;
    int dim = 0;
    std::vector<Mat> values;

    Vec at(int path, int step) const { return values[step].row(path).transpose(); }
};

/// B and W on a shared grid, plus the increments ΔW_i (P × d_w per step).
struct DrivingPaths {
    PathEnsemble B;
    PathEnsemble W;
    std::vector<Mat> dW;
};

/// Euler-Maruyama: B_{i+1} = B_i + b(B_i)Δt + σ(B_i)ΔW_i. Path p draws its
/// increments from substream (seed, p), so results do not depend on `workers`
/// and extending P leaves existing paths untouched.
DrivingPaths simulate_diffusion(const DiffusionSpec& spec, const TimeGrid& grid, int paths, std::uint64_t seed,
                                int workers = 1);

using PointPredicate = std::function<bool(const Vec&)>;

/// First grid index at which the path is outside the domain, or N if it never leaves.
std::vector<int> hitting_time(const PathEnsemble& ensemble, const PointPredicate& inside);

/// Exit data without storing paths; draws the same increments as simulate_diffusion.
struct ExitSample {
    std::vector<int> index;       // first index outside, or N
    std::vector<bool> exited;     // false when the path stayed inside up to T
    std::vector<Vec> position;    // B at `index`
};

ExitSample simulate_exit(const DiffusionSpec& spec, const TimeGrid& grid, int paths, std::uint64_t seed,
                         const PointPredicate& inside, int workers = 1);

struct MomentEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    bool overflow = false;
};

/// Monte-Carlo estimate of E[exp(ξ v)] with its standard error. Overflow of
/// any term (or of the mean) sets `overflow` and reports +inf.
MomentEstimate exp_moment(const std::vector<double>& values, double xi);

}  // namespace mbsde

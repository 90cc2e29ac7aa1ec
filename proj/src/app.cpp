#include "mbsde/app.hpp"

#include "mbsde/bsde_solver.hpp"
#include "mbsde/diagnostics.hpp"
#include "mbsde/dirichlet.hpp"
#include "mbsde/errors.hpp"
#include "mbsde/estimates.hpp"
#include "mbsde/forward_sde.hpp"
#include "mbsde/gauges.hpp"
#include "mbsde/random.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace mbsde {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

constexpr double kPi = std::numbers::pi;
constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// Config access with dotted field paths in every error.

class Node {
public:
    Node(const Json* j, std::string path) : j_(j), path_(std::move(path)) {}

    const std::string& path() const { return path_; }
    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    bool has(const std::string& key) const { return j_ && j_->is_object() && j_->contains(key); }

    Node child(const std::string& key) const {
        if (has(key) && !j_->at(key).is_object()) fail(key, "must be an object");
        return Node(has(key) ? &j_->at(key) : nullptr, field(key));
    }

    [[noreturn]] void fail(const std::string& key, const std::string& message) const {
        throw ConfigError(field(key), message);
    }

    double number(const std::string& key, double def) const {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_number()) fail(key, "must be a number");
        return v.get<double>();
    }

    int integer(const std::string& key, int def) const {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_number_integer()) fail(key, "must be an integer");
        return v.get<int>();
    }

    int positive(const std::string& key, int def) const {
        const int v = integer(key, def);
        if (v < 1) fail(key, "must be a positive integer");
        return v;
    }

    double positive_number(const std::string& key, double def) const {
        const double v = number(key, def);
        if (!(v > 0) || !std::isfinite(v)) fail(key, "must be a positive finite number");
        return v;
    }

    std::uint64_t unsigned64(const std::string& key, std::uint64_t def) const {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
            fail(key, "must be a nonnegative integer");
        return v.get<std::uint64_t>();
    }

    bool flag(const std::string& key, bool def) const {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_boolean()) fail(key, "must be true or false");
        return v.get<bool>();
    }

    std::string text(const std::string& key, const std::string& def) const {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_string()) fail(key, "must be a string");
        return v.get<std::string>();
    }

    Vec vector(const std::string& key, const Vec& def) const {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_array() || v.empty()) fail(key, "must be a nonempty array of numbers");
        Vec out(static_cast<Eigen::Index>(v.size()));
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) fail(key, "must be a nonempty array of numbers");
            out[static_cast<Eigen::Index>(i)] = v[i].get<double>();
        }
        return out;
    }

    Vec vector(const std::string& key, const Vec& def, Eigen::Index size) const {
        Vec v = vector(key, def);
        if (v.size() != size) fail(key, "must have " + std::to_string(size) + " entries");
        return v;
    }

    std::vector<std::string> strings(const std::string& key, const std::vector<std::string>& def) const {
        if (!has(key)) return def;
        const auto& v = j_->at(key);
        if (!v.is_array()) fail(key, "must be an array of strings");
        std::vector<std::string> out;
        for (const auto& s : v) {
            if (!s.is_string()) fail(key, "must be an array of strings");
            out.push_back(s.get<std::string>());
        }
        return out;
    }

    const Json* raw(const std::string& key) const { return has(key) ? &j_->at(key) : nullptr; }

private:
    const Json* j_;
    std::string path_;
};

Vec point(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

Vec default_center(const ChartManifold& m) {
    return m.kind() == ManifoldKind::sphere ? point(kPi / 2, 0.0) : m.domain().midpoint();
}

ChartManifold manifold_from(const Node& n, const std::string& default_kind, int default_dim) {
    const std::string kind = n.text("kind", default_kind);
    if (kind == "sphere") {
        const double theta_min = n.number("theta_min", 0.1);
        if (!(theta_min > 0 && theta_min < kPi / 2)) n.fail("theta_min", "must lie in (0, π/2)");
        return ChartManifold::sphere(n.positive_number("radius", 1.0), theta_min);
    }
    if (kind == "flat") return ChartManifold::flat(n.positive("dim", default_dim), n.positive_number("half_width", 10.0));
    n.fail("kind", "unknown manifold '" + kind + "' (expected sphere or flat)");
}

TimeGrid grid_from(const Node& n, double T, int steps) {
    return TimeGrid::uniform(n.positive_number("T", T), n.positive("steps", steps));
}

DiffusionSpec diffusion_from(const Node& n, int default_dim) {
    const Vec start = n.vector("start", Vec::Zero(default_dim));
    const int d = static_cast<int>(start.size());
    const std::string sigma = n.text("sigma", "identity");
    const int dim_w = n.positive("dim_w", d);
    std::function<Mat(const Vec&)> vol;
    if (sigma == "identity") {
        if (dim_w != d) n.fail("dim_w", "must equal the state dimension for sigma = identity");
        vol = sigma_identity(d);
    } else if (sigma == "scalar") {
        vol = sigma_scalar(d, dim_w, n.number("sigma_scale", 1.0));
    } else if (sigma == "zero") {
        vol = sigma_zero(d, dim_w);
    } else {
        n.fail("sigma", "unknown volatility '" + sigma + "' (expected identity, scalar or zero)");
    }
    const std::string drift = n.text("drift", "zero");
    std::function<Vec(const Vec&)> b;
    if (drift == "zero") {
        b = drift_zero(d);
    } else if (drift == "constant") {
        b = drift_constant(n.vector("drift_value", Vec::Zero(d), d));
    } else if (drift == "linear") {
        b = drift_linear(n.number("drift_rate", 1.0));
    } else {
        n.fail("drift", "unknown drift '" + drift + "' (expected zero, constant or linear)");
    }
    auto spec = DiffusionSpec::make(start, dim_w, b, vol);
    spec.b_name = drift;
    spec.sigma_name = sigma;
    return spec;
}

DriftSpec drift_from(const Node& n, const ChartManifold& m, int dim_w, const std::string& default_kind,
                     double default_kappa) {
    const std::string kind = n.text("kind", default_kind);
    const int dim = m.dim();
    if (kind == "zero") return DriftSpec::zero(dim);
    if (kind == "constant") return DriftSpec::constant(n.vector("value", Vec::Zero(dim), dim));
    if (kind == "position") return DriftSpec::position(dim);
    if (kind == "radial")
        return DriftSpec::radial(m, n.vector("center", default_center(m), dim), n.number("kappa", default_kappa));
    if (kind == "frame_linear") return DriftSpec::frame_linear(dim, n.number("kappa", default_kappa), dim_w);
    n.fail("kind", "unknown drift '" + kind + "' (expected zero, constant, position, radial or frame_linear)");
}

TerminalCondition terminal_from(const Node& n, const ChartManifold& m, const Vec& center, double radius,
                                double gain) {
    const std::string kind = n.text("kind", "ball_map");
    const int dim = m.dim();
    if (kind == "identity") return TerminalCondition::identity();
    if (kind == "constant") return TerminalCondition::constant(n.vector("value", center, dim));
    if (kind == "coordinate") return TerminalCondition::coordinate(n.integer("k", 0));
    if (kind == "harmonic_quadratic") return TerminalCondition::harmonic_quadratic();
    if (kind == "ball_map")
        return TerminalCondition::ball_map(m, n.vector("center", center, dim), n.positive_number("radius", radius),
                                           n.positive_number("gain", gain));
    n.fail("kind", "unknown terminal map '" + kind +
                       "' (expected identity, constant, coordinate, harmonic_quadratic or ball_map)");
}

GaugeFunction gauge_from(const Node& n, const std::string& default_kind) {
    const std::string kind = n.text("kind", default_kind);
    if (kind == "sin_power") {
        const double K = n.positive_number("K", 1.0);
        const double e = n.number("e", 1.5);
        if (!(e > 1)) n.fail("e", "must exceed 1");
        const double a = n.number("a", 1 + (e - 1) / 4);
        if (!(a > 1 && a < 2)) n.fail("a", "must satisfy 1 < a < 2 (got " + std::to_string(a) + ")");
        return GaugeFunction::sin_power(a, K);
    }
    if (kind == "emery") return GaugeFunction::emery(n.positive_number("epsilon", 0.1));
    if (kind == "distance_squared") return GaugeFunction::distance_squared();
    n.fail("kind", "unknown gauge '" + kind + "' (expected sin_power, emery or distance_squared)");
}

SolverOptions solver_from(const Node& n, int workers) {
    SolverOptions opt;
    opt.picard_max = n.positive("picard_max", opt.picard_max);
    opt.picard_tol = n.positive_number("picard_tol", opt.picard_tol);
    opt.basis_degree = n.integer("basis_degree", opt.basis_degree);
    if (opt.basis_degree < 0 || opt.basis_degree > 6) n.fail("basis_degree", "must lie in [0, 6]");
    opt.fixed_point_max = n.positive("fixed_point_max", opt.fixed_point_max);
    opt.fixed_point_tol = n.positive_number("fixed_point_tol", opt.fixed_point_tol);
    const std::string start = n.text("start", "zero");
    if (start == "zero") {
        opt.start = PicardStart::zero;
    } else if (start == "random") {
        opt.start = PicardStart::random;
    } else {
        n.fail("start", "must be zero or random");
    }
    opt.init_scale = n.positive_number("init_scale", opt.init_scale);
    opt.init_seed = n.unsigned64("init_seed", opt.init_seed);
    opt.projection_warning = n.number("projection_warning", opt.projection_warning);
    opt.workers = workers;
    return opt;
}

/// Regular geodesic ball of the target: center, radius γπ/(2√K) unless given.
struct Ball {
    Vec center;
    double radius = 0.0;
    double K = 1.0;
    double gamma = 0.5;
    bool regular = true;
};

Ball ball_from(const Node& root, const ChartManifold& m) {
    const Node n = root.child("ball");
    Ball b;
    b.center = n.vector("center", default_center(m), m.dim());
    b.K = n.number("K", m.kind() == ManifoldKind::sphere ? 1.0 / (m.radius() * m.radius()) : 0.0);
    if (!(b.K >= 0)) n.fail("K", "must be nonnegative");
    b.gamma = n.number("gamma", 0.5);
    if (!(b.gamma > 0 && b.gamma < 1)) n.fail("gamma", "must satisfy 0 < γ < 1");
    const double fallback = b.K > 0 ? b.gamma * kPi / (2 * std::sqrt(b.K)) : 1.0;
    b.radius = n.positive_number("radius", fallback);
    b.regular = regular_ball_check(b.radius, b.K);
    if (n.flag("strict", false) && !b.regular) n.fail("radius", "ρ√K must be below π/2 in strict ball mode");
    if (!m.contains(b.center)) n.fail("center", "outside the chart domain");
    return b;
}

// ---------------------------------------------------------------------------
// Output.

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Json number_json(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
}

Json vec_json(const Vec& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(number_json(v[i]));
    return a;
}

class Artifacts {
public:
    explicit Artifacts(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    std::ofstream open(const std::string& name) {
        files_.push_back(name);
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) throw Error("cannot write " + (dir_ / name).string());
        return out;
    }

    void json(const std::string& name, const Json& j) {
        auto out = open(name);
        out << j.dump(2) << "\n";
    }

    const std::vector<std::string>& files() const { return files_; }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    std::vector<std::string> files_;
};

std::string header(const std::vector<std::string>& fixed, const std::string& prefix, int count) {
    std::string h;
    for (const auto& f : fixed) h += (h.empty() ? "" : ",") + f;
    for (int k = 0; k < count; ++k) h += (h.empty() ? "" : ",") + prefix + std::to_string(k);
    return h;
}

void append_row(std::string& line, const Vec& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) line += "," + num(v[k]);
}

/// One check in the common report layout.
Json check_json(const std::string& check, Json params, double min_margin, std::optional<double> se, bool pass) {
    Json j;
    j["check"] = check;
    j["params"] = std::move(params);
    j["min_margin"] = number_json(min_margin);
    j["standard_error"] = se ? number_json(*se) : Json(nullptr);
    j["pass"] = pass;
    return j;
}

Json estimate_json(const EstimateReport& r) {
    Json params = Json::object();
    for (const auto& [k, v] : r.fitted_constants) params[k] = number_json(v);
    params["samples"] = r.samples;
    params["violations"] = r.violations;
    params["tolerance"] = r.tolerance;
    Json j = check_json(r.estimate, params, r.min_margin, std::nullopt, r.pass);
    Json worst = Json::array();
    for (double v : r.worst_sample) worst.push_back(number_json(v));
    j["worst_sample"] = worst;
    return j;
}

struct Context {
    Node root;
    std::uint64_t seed;
    int workers;
    bool strict;
    Artifacts& out;
    std::ostream& log;
    std::vector<std::string> warnings;
    Json results = Json::object();
};

// ---------------------------------------------------------------------------
// Subcommands. Each returns whether its asserted checks pass.

bool run_simulate(Context& c) {
    const auto spec = diffusion_from(c.root.child("diffusion"), 2);
    const auto grid = grid_from(c.root.child("grid"), 1.0, 100);
    const int paths = c.root.positive("paths", 1000);
    const int record = std::min(paths, c.root.integer("record", 10));
    const auto driving = simulate_diffusion(spec, grid, paths, c.seed, c.workers);

    {
        auto f = c.out.open("paths.csv");
        f << header({"path", "step", "t"}, "B_", spec.dim_d) << "," << header({}, "W_", spec.dim_w) << "\n";
        for (int p = 0; p < record; ++p)
            for (int i = 0; i <= grid.steps(); ++i) {
                std::string line = std::to_string(p) + "," + std::to_string(i) + "," + num(grid.time(i));
                append_row(line, driving.B.at(p, i));
                append_row(line, driving.W.at(p, i));
                f << line << "\n";
            }
    }
    const Mat& bt = driving.B.values.back();
    const Vec mean = bt.colwise().mean().transpose();
    const Vec var = ((bt.rowwise() - mean.transpose()).array().square().colwise().sum() / std::max(1, paths - 1)).transpose();
    {
        auto f = c.out.open("terminal_moments.csv");
        f << "component,mean,variance,std_error\n";
        for (int k = 0; k < spec.dim_d; ++k)
            f << k << "," << num(mean[k]) << "," << num(var[k]) << "," << num(std::sqrt(var[k] / paths)) << "\n";
    }
    const bool finite = bt.allFinite();
    Json params{{"paths", paths}, {"steps", grid.steps()}, {"T", grid.horizon()}, {"b", spec.b_name},
                {"sigma", spec.sigma_name}};
    c.out.json("simulate.json", Json::array({check_json("finite_paths", params, 0.0, std::nullopt, finite)}));
    c.results["terminal_mean"] = vec_json(mean);
    c.results["terminal_variance"] = vec_json(var);
    return finite;
}

void write_solution(Context& c, const BsdeSolution& sol, const std::string& prefix, int record) {
    const int n = sol.dim;
    {
        auto f = c.out.open(prefix + "_mean.csv");
        f << header({"step", "t"}, "mean_x_", n) << "," << header({}, "sd_x_", n) << "\n";
        for (int i = 0; i <= sol.steps(); ++i) {
            const Mat& x = sol.X[i];
            const Vec mean = x.colwise().mean().transpose();
            const Vec sd = ((x.rowwise() - mean.transpose()).array().square().colwise().sum() /
                            std::max(1, sol.paths - 1))
                               .sqrt()
                               .transpose();
            std::string line = std::to_string(i) + "," + num(sol.grid.time(i));
            append_row(line, mean);
            append_row(line, sd);
            f << line << "\n";
        }
    }
    {
        auto f = c.out.open(prefix + "_paths.csv");
        f << header({"path", "step", "t"}, "x_", n) << "," << header({}, "z_", n * sol.dim_w) << "\n";
        for (int p = 0; p < std::min(record, sol.paths); ++p)
            for (int i = 0; i <= sol.steps(); ++i) {
                std::string line = std::to_string(p) + "," + std::to_string(i) + "," + num(sol.grid.time(i));
                append_row(line, sol.x(p, i));
                append_row(line, i < sol.steps() ? Vec(sol.Z[i].row(p).transpose()) : Vec::Zero(n * sol.dim_w));
                f << line << "\n";
            }
    }
    {
        auto f = c.out.open(prefix + "_picard.csv");
        f << "iteration,residual\n";
        for (std::size_t k = 0; k < sol.picard_residuals.size(); ++k)
            f << k + 1 << "," << num(sol.picard_residuals[k]) << "\n";
    }
}

Json solution_summary(const BsdeSolution& sol) {
    return Json{{"X0", vec_json(sol.x(0, 0))},
                {"iterations", sol.iterations},
                {"picard_residuals", [&] {
                     Json a = Json::array();
                     for (double r : sol.picard_residuals) a.push_back(number_json(r));
                     return a;
                 }()},
                {"projected_fraction", sol.projected_fraction},
                {"domain_escape_warning", sol.domain_escape_warning},
                {"fixed_point_failures", sol.fixed_point_failures},
                {"forward_residual", number_json(sol.forward_residual)}};
}

struct SolveSetup {
    ChartManifold m = ChartManifold::flat(1);
    Ball ball;
    DiffusionSpec spec;
    TimeGrid grid{std::vector<double>{0.0, 1.0}};
    int paths = 0;
    DriftSpec drift;
    SolverOptions opt;
};

SolveSetup solve_setup(Context& c, const std::string& drift_kind, double kappa, int paths, int steps) {
    SolveSetup s;
    s.m = manifold_from(c.root.child("manifold"), "sphere", 2);
    s.ball = ball_from(c.root, s.m);
    const Node dn = c.root.child("diffusion");
    s.spec = diffusion_from(dn, dn.has("start") ? 0 : 2);
    s.grid = grid_from(c.root.child("grid"), 1.0, steps);
    s.paths = c.root.positive("paths", paths);
    s.drift = drift_from(c.root.child("drift"), s.m, s.spec.dim_w, drift_kind, kappa);
    s.opt = solver_from(c.root.child("solver"), c.workers);
    if (c.root.child("domain").flag("enabled", true)) s.opt.domain = DomainGauge(s.m, s.ball.center, s.ball.radius);
    return s;
}

bool run_solve(Context& c) {
    auto s = solve_setup(c, "zero", 0.0, 1000, 10);
    const auto tc = terminal_from(c.root.child("terminal"), s.m, s.ball.center, 0.5 * s.ball.radius, 1.0);
    Json params{{"paths", s.paths}, {"steps", s.grid.steps()}, {"T", s.grid.horizon()}, {"drift", s.drift.name},
                {"terminal", tc.name}, {"manifold", to_string(s.m.kind())}};
    try {
        const auto sol = solve_bsde(s.m, s.drift, tc, s.spec, s.grid, s.paths, c.seed, s.opt);
        write_solution(c, sol, "solution", c.root.integer("record", 10));
        if (sol.domain_escape_warning)
            c.warnings.push_back("projected fraction " + num(sol.projected_fraction) + " above the warning level");
        if (sol.fixed_point_failures > 0)
            c.warnings.push_back(std::to_string(sol.fixed_point_failures) + " implicit steps did not converge");
        Json report = Json::array({check_json("picard_convergence", params, -sol.picard_residuals.back(),
                                              std::nullopt, true)});
        report[0]["summary"] = solution_summary(sol);
        c.out.json("solve.json", report);
        c.results["X0"] = vec_json(sol.x(0, 0));
        c.results["iterations"] = sol.iterations;
        return true;
    } catch (const ConvergenceError& e) {
        Json trace = Json::array();
        for (double r : e.residuals()) trace.push_back(number_json(r));
        Json report = Json::array({check_json("picard_convergence", params,
                                              e.residuals().empty() ? -INFINITY : -e.residuals().back(),
                                              std::nullopt, false)});
        report[0]["picard_residuals"] = trace;
        c.out.json("solve.json", report);
        c.log << "error: " << e.what() << "\n";
        return false;
    }
}

bool run_check_estimates(Context& c) {
    const auto m = manifold_from(c.root.child("manifold"), "sphere", 2);
    const bool sphere = m.kind() == ManifoldKind::sphere;
    const auto g = gauge_from(c.root.child("gauge"), sphere ? "sin_power" : "emery");
    const Node d = c.root.child("diagnostics");
    const auto names = d.strings("estimates", sphere ? std::vector<std::string>{"2der1", "minhessdelta", "estimhess2"}
                                                     : std::vector<std::string>{"minA", "2tp2"});
    for (const auto& name : names)
        if (std::find(estimate_names().begin(), estimate_names().end(), name) == estimate_names().end())
            d.fail("estimates", "unknown estimate '" + name + "'");
    EstimateParams ep;
    ep.samples = static_cast<std::size_t>(d.positive("samples", 500));
    ep.seed = c.seed;
    ep.workers = c.workers;
    ep.constant_cap = d.positive_number("constant_cap", ep.constant_cap);
    ep.tolerance = d.positive_number("tolerance", ep.tolerance);
    if (d.has("delta_min")) ep.delta_min = d.positive_number("delta_min", 0.0);
    if (d.has("delta_max")) ep.delta_max = d.positive_number("delta_max", 0.0);
    const Node region = d.child("region");
    if (region.has("center") || region.has("radius")) {
        ep.region.center = region.vector("center", default_center(m), m.dim());
        ep.region.radius = region.positive_number("radius", ep.region.radius);
    }

    Json reports = Json::array();
    bool pass = true;
    auto f = c.out.open("estimates.csv");
    f << "check,samples,min_margin,violations,pass\n";
    for (const auto& name : names) {
        const auto r = verify_estimate(name, m, g, ep);
        f << name << "," << r.samples << "," << num(r.min_margin) << "," << r.violations << "," << (r.pass ? 1 : 0)
          << "\n";
        reports.push_back(estimate_json(r));
        c.results[name] = Json{{"min_margin", number_json(r.min_margin)}, {"pass", r.pass}};
        c.log << name << ": min margin " << num(r.min_margin) << (r.pass ? " pass" : " FAIL") << "\n";
        pass = pass && r.pass;
    }
    f.close();
    c.out.json("estimates.json", reports);
    return pass;
}

bool run_submartingale(Context& c) {
    auto s = solve_setup(c, "frame_linear", 0.5, 4000, 10);
    if (s.m.kind() != ManifoldKind::sphere || s.ball.K <= 0)
        c.root.child("manifold").fail("kind", "the submartingale certificate needs a sphere target");
    const Node d = c.root.child("diagnostics");
    const double e = d.number("e", 1.5);
    if (!(e > 1 && e < 1 / s.ball.gamma)) d.fail("e", "must satisfy 1 < e < 1/γ");
    auto p = SubmartingaleParams::regular_ball(e, s.ball.K, s.ball.gamma);
    if (c.root.child("gauge").has("a")) p.gauge = gauge_from(c.root.child("gauge"), "sin_power");

    PairSampling ps;
    ps.ball = SampleRegion{s.ball.center, s.ball.radius};
    ps.samples = static_cast<std::size_t>(d.positive("pair_samples", 10000));
    ps.seed = c.seed;
    ps.dim_d = s.spec.dim_d;
    ps.dim_w = s.spec.dim_w;
    ps.z_scale = d.positive_number("z_scale", 1.0);
    const auto states = sample_pair_states(s.m, p.gauge, ps);

    LambdaCalibration cal;
    if (d.has("lambda")) {
        p.lambda = d.number("lambda", 0.0);
        if (!(p.lambda >= 0)) d.fail("lambda", "must be nonnegative");
        cal.lambda = p.lambda;
        cal.report = submartingale_report(p, s.m, s.drift, states, 1e-6, c.workers);
        cal.found = cal.report.pass;
    } else {
        cal = calibrate_lambda(p, s.m, s.drift, states, 1e-6, c.workers);
        p.lambda = cal.lambda;
    }

    const Vec shift = d.vector("terminal_shift", point(-0.15, 0.2), s.m.dim());
    const auto tc = terminal_from(c.root.child("terminal"), s.m, s.ball.center, 0.3, 0.4);
    const auto tc2 = terminal_from(c.root.child("terminal2"), s.m, s.ball.center + shift, 0.3, 0.4);
    const auto driving = simulate_diffusion(s.spec, s.grid, s.paths, c.seed, c.workers);
    const auto a = solve_bsde(s.m, s.drift, tc, driving, s.opt);
    const auto b = solve_bsde(s.m, s.drift, tc2, driving, s.opt);
    const auto sp = s_process(s.m, a, b, p);
    const auto inc = conditional_increment_test(driving.B, sp.S, {}, s.opt.basis_degree);

    {
        auto f = c.out.open("s_process.csv");
        f << "step,t,mean_S,mean_A,min_t\n";
        for (int i = 0; i <= s.grid.steps(); ++i)
            f << i << "," << num(s.grid.time(i)) << "," << num(sp.S[i].mean()) << "," << num(sp.A[i].mean()) << ","
              << (i < s.grid.steps() ? num(inc.step_min_t[i]) : std::string("")) << "\n";
    }
    const auto norms = lq_norms(sp);
    Json lq = Json::object();
    for (const auto& [q, v] : norms) lq[num(q)] = number_json(v);
    const auto energy = frame_energy(s.m, a);
    const auto moment = exp_moment(energy, p.mu);

    Json params{{"a", p.gauge.a}, {"mu", p.mu}, {"lambda", p.lambda}, {"e", e}, {"pair_samples", ps.samples},
                {"paths", s.paths}, {"steps", s.grid.steps()}, {"drift", s.drift.name}};
    Json reports = Json::array();
    reports.push_back(check_json("submartingale_sum", params, cal.report.min_margin, std::nullopt,
                                 cal.found && cal.report.pass));
    reports.push_back(check_json("s_process_increments", params, inc.worst_t, 1.0, inc.pass));
    reports.back()["worst_step"] = inc.worst_step;
    reports.push_back(check_json("frame_energy_exp_moment", params, moment.mean, moment.std_error, !moment.overflow));
    reports.back()["lq_norms"] = lq;
    c.out.json("submartingale.json", reports);

    if (a.domain_escape_warning || b.domain_escape_warning) c.warnings.push_back("domain escape warning");
    if (!cal.found) c.warnings.push_back("no λ on the grid makes the sum nonnegative");
    c.results["lambda"] = p.lambda;
    c.results["min_sum"] = number_json(cal.report.min_margin);
    c.results["increment_worst_t"] = number_json(inc.worst_t);
    c.log << "lambda " << p.lambda << ", min sum " << num(cal.report.min_margin) << ", worst increment t "
          << num(inc.worst_t) << "\n";
    return cal.found && cal.report.pass && inc.pass && !moment.overflow;
}

bool run_uniqueness(Context& c) {
    auto s = solve_setup(c, "zero", 0.0, 1000, 10);
    const auto tc = terminal_from(c.root.child("terminal"), s.m, s.ball.center, 0.5 * s.ball.radius, 1.0);
    const auto driving = simulate_diffusion(s.spec, s.grid, s.paths, c.seed, c.workers);
    auto opt = s.opt;
    opt.start = PicardStart::zero;
    const auto a = solve_bsde(s.m, s.drift, tc, driving, opt);
    opt.start = PicardStart::random;
    const auto b = solve_bsde(s.m, s.drift, tc, driving, opt);
    const double gap = uniqueness_gap(s.m, a, b);
    const double bound = 5 * s.opt.picard_tol;
    {
        auto f = c.out.open("uniqueness_gap.csv");
        f << "step,t,rms_distance\n";
        for (int i = 0; i <= s.grid.steps(); ++i) {
            double sq = 0.0;
            for (int p = 0; p < s.paths; ++p) {
                const double dd = state_distance(s.m, a.x(p, i), b.x(p, i));
                sq += dd * dd;
            }
            f << i << "," << num(s.grid.time(i)) << "," << num(std::sqrt(sq / s.paths)) << "\n";
        }
    }
    Json params{{"rho", s.ball.radius}, {"K", s.ball.K}, {"gamma", s.ball.gamma}, {"picard_tol", s.opt.picard_tol},
                {"paths", s.paths}, {"steps", s.grid.steps()}, {"iterations_zero", a.iterations},
                {"iterations_random", b.iterations}};
    Json reports = Json::array();
    reports.push_back(check_json("uniqueness_gap", params, bound - gap, std::nullopt, gap < bound));
    reports.back()["gap"] = gap;
    reports.push_back(check_json("regular_ball", params, kPi / 2 - s.ball.radius * std::sqrt(s.ball.K), std::nullopt,
                                 s.ball.regular));
    c.out.json("uniqueness.json", reports);
    if (a.domain_escape_warning || b.domain_escape_warning) c.warnings.push_back("domain escape warning");
    c.results["gap"] = gap;
    c.results["regular_ball"] = s.ball.regular;
    c.log << "uniqueness gap " << num(gap) << " (bound " << num(bound) << ")\n";
    return gap < bound && s.ball.regular;
}

bool run_nonuniqueness(Context& c) {
    const Node d = c.root.child("diagnostics");
    const int steps = d.positive("steps", 4000);
    const int paths = d.positive("paths", 2000);
    const double horizon = d.positive_number("horizon", 40.0);
    const int record = std::min(paths, d.integer("record", 5));
    const auto r = nonuniqueness_demo(steps, paths, c.seed, horizon, record);
    {
        auto f = c.out.open("terminal.csv");
        f << "path,stop,x,y,z,x_mirror,y_mirror,z_mirror\n";
        for (int p = 0; p < r.paths; ++p) {
            std::string line = std::to_string(p) + "," + std::to_string(r.stop[p]);
            append_row(line, r.terminal.row(p).transpose());
            append_row(line, r.terminal_mirror.row(p).transpose());
            f << line << "\n";
        }
    }
    {
        auto f = c.out.open("sample_paths.csv");
        f << "path,step,t,phi,phi_mirror\n";
        for (std::size_t p = 0; p < r.sample_phi.size(); ++p)
            for (int i = 0; i <= r.grid.steps(); ++i)
                f << p << "," << i << "," << num(r.grid.time(i)) << "," << num(r.sample_phi[p][i]) << ","
                  << num(kPi - r.sample_phi[p][i]) << "\n";
    }
    Json params{{"steps", steps}, {"paths", paths}, {"lattice", r.lattice}, {"dt", r.grid.dt(0)}};
    Json reports = Json::array();
    reports.push_back(check_json("initial_distance", params, -std::abs(r.initial_distance - kPi), std::nullopt,
                                 std::abs(r.initial_distance - kPi) <= 1e-12));
    reports.back()["initial_distance"] = r.initial_distance;
    reports.push_back(check_json("terminal_equality", params, -r.max_terminal_gap, std::nullopt,
                                 r.unstopped == 0 && r.max_terminal_gap <= 1e-12));
    reports.back()["unstopped"] = r.unstopped;
    reports.push_back(check_json("md_drift_zero", params, -r.max_md_drift, std::nullopt, r.max_md_drift <= 1e-12));
    for (const auto* t : {&r.drift, &r.drift_mirror}) {
        Json coef = Json::array(), se = Json::array();
        for (std::size_t k = 0; k < t->coefficients.size(); ++k) {
            coef.push_back(t->coefficients[k]);
            se.push_back(t->std_errors[k]);
        }
        reports.push_back(check_json(t == &r.drift ? "drift_zero" : "drift_zero_mirror", params,
                                     t->threshold - t->max_abs_t, std::nullopt, t->pass));
        reports.back()["coefficients"] = coef;
        reports.back()["std_errors"] = se;
        reports.back()["max_abs_t"] = t->max_abs_t;
    }
    c.out.json("nonuniqueness.json", reports);
    c.results["initial_distance"] = r.initial_distance;
    c.results["max_terminal_gap"] = r.max_terminal_gap;
    c.results["drift_max_abs_t"] = r.drift.max_abs_t;
    c.log << "initial distance " << num(r.initial_distance) << ", terminal gap " << num(r.max_terminal_gap)
          << ", drift |t| " << num(r.drift.max_abs_t) << "\n";
    return r.pass;
}

SourceDomain source_from(const Node& n) {
    const std::string kind = n.text("kind", "disk");
    if (kind == "disk") {
        const Vec center = n.vector("center", Vec::Zero(2));
        return SourceDomain::disk(center, n.positive_number("radius", 1.0));
    }
    if (kind == "interval") {
        const double a = n.number("a", -1.0), b = n.number("b", 1.0);
        if (!(a < b)) n.fail("b", "must exceed a");
        return SourceDomain::interval(a, b);
    }
    if (kind == "box") {
        const Vec lo = n.vector("lower", -Vec::Ones(2));
        const Vec hi = n.vector("upper", Vec::Ones(2), lo.size());
        if (!(lo.array() < hi.array()).all()) n.fail("upper", "must exceed lower componentwise");
        return SourceDomain::box(lo, hi);
    }
    n.fail("kind", "unknown source domain '" + kind + "' (expected disk, interval or box)");
}

BoundaryMap boundary_from(const Node& parent, const std::string& key, const ChartManifold& m, int source_dim) {
    // Either a bare name or an object with a "kind" and its parameters.
    const Json* raw = parent.raw(key);
    const bool bare = raw && raw->is_string();
    const Node n = bare ? Node(nullptr, parent.field(key)) : parent.child(key);
    const std::string kind = bare ? parent.text(key, "") : n.text("kind", "coordinate");
    if (kind == "constant") return BoundaryMap::constant(n.vector("value", default_center(m), m.dim()));
    if (kind == "coordinate") {
        const int k = n.integer("k", 0);
        if (k < 0 || k >= source_dim) n.fail("k", "out of range");
        if (m.dim() != 1) n.fail("kind", "coordinate boundary data needs a one-dimensional target");
        return BoundaryMap::coordinate(k);
    }
    if (kind == "harmonic_quadratic") {
        if (source_dim < 2 || m.dim() != 1) n.fail("kind", "harmonic_quadratic needs a 2-d source and 1-d target");
        return BoundaryMap::harmonic_quadratic();
    }
    if (kind == "exp_image")
        return BoundaryMap::exp_image(m, n.vector("center", default_center(m), m.dim()), n.positive_number("scale", 0.3));
    n.fail("kind", "unknown boundary map '" + kind + "' (expected constant, coordinate, harmonic_quadratic or exp_image)");
}

/// Range of φ̄ over a dense boundary sample, per component.
std::pair<Vec, Vec> boundary_range(const DirichletProblem& p) {
    std::vector<Vec> pts;
    const auto& dom = p.domain;
    if (dom.kind == SourceDomain::Kind::disk && dom.dim() == 2) {
        for (int k = 0; k < 4096; ++k) {
            const double t = 2 * kPi * k / 4096;
            pts.push_back(dom.center + dom.radius * point(std::cos(t), std::sin(t)));
        }
    } else if (dom.kind != SourceDomain::Kind::disk) {
        const int d = dom.dim();
        const int per = d == 1 ? 2 : 65;
        for (const Vec& u : regular_grid(d, 0.0, 1.0, per)) {
            const Vec x = dom.lower + u.cwiseProduct(dom.upper - dom.lower);
            if (dom.on_boundary(x, 1e-12)) pts.push_back(x);
        }
    } else {
        throw UnsupportedError("boundary range sampling supports planar disks, intervals and boxes");
    }
    Vec lo = p.boundary(pts.front()), hi = lo;
    for (const Vec& x : pts) {
        const Vec v = p.boundary(x);
        lo = lo.cwiseMin(v);
        hi = hi.cwiseMax(v);
    }
    return {lo, hi};
}

bool run_dirichlet(Context& c) {
    const Node d = c.root.child("dirichlet");
    DirichletProblem p;
    p.domain = source_from(d.child("domain"));
    const int sd = p.domain.dim();
    p.target = manifold_from(c.root.child("manifold"), "flat", 1);
    const Node dn = c.root.child("diffusion");
    p.diffusion = diffusion_from(dn, sd);
    if (p.diffusion.dim_d != sd) dn.fail("start", "must match the source domain dimension");
    p.boundary = boundary_from(d, "boundary_map", p.target, sd);
    p.drift = drift_from(c.root.child("drift"), p.target, p.diffusion.dim_w, "zero", 0.0);
    p.horizon_cap = d.positive_number("T_max", 3.0);
    p.truncation_limit = d.number("truncation_limit", 0.1);
    p.exit_correction = d.flag("exit_correction", true);
    if (c.root.has("ball")) {
        const Ball b = ball_from(c.root, p.target);
        p.gauge = DomainGauge(p.target, b.center, b.radius);
    }
    const int steps = d.positive("steps", 300);
    const int paths = d.positive("paths", 1000);
    const double xi = d.number("xi", 0.5);
    if (!(xi > 0)) d.fail("xi", "must be positive");

    std::vector<Vec> queries;
    const Node qg = d.child("query_grid");
    if (d.has("points")) {
        const Json* pts = d.raw("points");
        if (!pts->is_array() || pts->empty()) d.fail("points", "must be a nonempty array of points");
        for (std::size_t k = 0; k < pts->size(); ++k) {
            const Json wrap = {{"p", (*pts)[k]}};
            queries.push_back(Node(&wrap, d.field("points") + "[" + std::to_string(k) + "]").vector("p", Vec(), sd));
        }
    } else {
        queries = regular_grid(sd, qg.number("lo", -0.6), qg.number("hi", 0.6), qg.positive("n", 5));
    }
    for (std::size_t k = 0; k < queries.size(); ++k)
        if (p.domain.boundary_distance(queries[k]) < -1e-12)
            d.fail("query_grid", "query point " + std::to_string(k) + " lies outside the source domain");

    auto opt = solver_from(c.root.child("solver"), c.workers);
    const auto est = solve_dirichlet(p, queries, steps, paths, c.seed, opt);
    const int n = p.target.dim();
    {
        auto f = c.out.open("field.csv");
        f << header({}, "x_", sd) << "," << header({}, "value_", n) << "," << header({}, "std_error_", n)
          << ",truncation_mass\n";
        for (std::size_t q = 0; q < queries.size(); ++q) {
            std::string line;
            for (Eigen::Index k = 0; k < sd; ++k) line += (k ? "," : "") + num(queries[q][k]);
            append_row(line, est.values[q]);
            append_row(line, est.std_errors[q]);
            line += "," + num(est.truncation_mass[q]);
            f << line << "\n";
        }
    }

    Json params{{"domain", d.child("domain").text("kind", "disk")}, {"boundary_map", p.boundary.name},
                {"T_max", p.horizon_cap}, {"steps", steps}, {"paths", paths}, {"queries", queries.size()}};
    Json reports = Json::array();
    bool pass = true;
    double max_mass = 0.0;
    for (double m : est.truncation_mass) max_mass = std::max(max_mass, m);
    reports.push_back(check_json("truncation_mass", params, p.truncation_limit - max_mass, std::nullopt,
                                 max_mass <= p.truncation_limit));

    const bool flat_free = p.target.kind() == ManifoldKind::flat && p.drift.is_zero();
    if (flat_free) {
        const auto [lo, hi] = boundary_range(p);
        double margin = INFINITY;
        for (std::size_t q = 0; q < queries.size(); ++q)
            for (int k = 0; k < n; ++k) {
                const double band = 3 * est.std_errors[q][k];
                margin = std::min({margin, est.values[q][k] - lo[k] + band, hi[k] + band - est.values[q][k]});
            }
        reports.push_back(check_json("maximum_principle", params, margin, std::nullopt, margin >= 0));
        pass = pass && margin >= 0;
    }
    if (p.gauge) {
        const bool ok = est.confinement_excess <= 1e-9;
        reports.push_back(check_json("target_confinement", params, -est.confinement_excess, std::nullopt, ok));
        pass = pass && ok;
    }
    Vec start = p.domain.kind == SourceDomain::Kind::disk ? p.domain.center : Vec(0.5 * (p.domain.lower + p.domain.upper));
    const auto stop = stopping_integrability(p, start, steps, paths, xi, derive_seed(c.seed, 0x5707), c.workers);
    reports.push_back(check_json("stopping_integrability", params, stop.moment.mean, stop.moment.std_error,
                                 !stop.moment.overflow && std::isfinite(stop.moment.mean)));
    reports.back()["xi"] = xi;
    reports.back()["truncation_mass"] = stop.truncation_mass;
    pass = pass && !stop.moment.overflow;
    if (p.target.kind() == ManifoldKind::flat && !d.has("points")) {
        try {
            const auto res = pde_residual(est, p);
            auto f = c.out.open("pde_residual.csv");
            f << header({}, "x_", sd) << "," << header({}, "residual_", n) << "," << header({}, "std_error_", n)
              << "\n";
            for (std::size_t k = 0; k < res.nodes.size(); ++k) {
                std::string line;
                for (Eigen::Index j = 0; j < sd; ++j) line += (j ? "," : "") + num(res.nodes[k][j]);
                append_row(line, res.residual[k]);
                append_row(line, res.std_error[k]);
                f << line << "\n";
            }
            // Reported only: finite-difference error is not part of the standard error.
            reports.push_back(check_json("pde_residual", params, res.threshold - res.max_t, std::nullopt, res.pass));
            reports.back()["asserted"] = false;
        } catch (const DomainError& e) {
            c.warnings.push_back(std::string("pde residual skipped: ") + e.what());
        }
    }
    c.out.json("dirichlet.json", reports);
    c.results["max_truncation_mass"] = max_mass;
    c.results["exp_moment"] = number_json(stop.moment.mean);
    if (max_mass > 0) c.warnings.push_back("truncated paths present (max mass " + num(max_mass) + ")");
    return pass;
}

Json read_config(const std::optional<fs::path>& path) {
    if (!path) return Json::object();
    std::ifstream in(*path);
    if (!in) throw ConfigError("config", "cannot read " + path->string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError("config", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config", "top level must be an object");
    return j;
}

std::string sha256_bytes(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

}  // namespace

const std::vector<std::string>& subcommand_names() {
    static const std::vector<std::string> names{"simulate",    "solve",      "check-estimates",   "submartingale",
                                                "uniqueness", "nonuniqueness-demo", "dirichlet"};
    return names;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return sha256_bytes(buf.str());
}

RunResult run_experiment(const RunOptions& options, std::ostream& log) {
    RunResult result;
    try {
        const auto& names = subcommand_names();
        if (std::find(names.begin(), names.end(), options.subcommand) == names.end())
            throw ConfigError("subcommand", "unknown subcommand '" + options.subcommand + "'");
        const Json cfg = read_config(options.config);
        const Node root(&cfg, "");
        const std::uint64_t seed = options.seed ? *options.seed : root.unsigned64("seed", 1);
        Artifacts out(options.out);
        Context c{root, seed, std::max(1, options.workers), options.strict, out, log, {}, Json::object()};

        bool pass = false;
        const auto& s = options.subcommand;
        if (s == "simulate") pass = run_simulate(c);
        if (s == "solve") pass = run_solve(c);
        if (s == "check-estimates") pass = run_check_estimates(c);
        if (s == "submartingale") pass = run_submartingale(c);
        if (s == "uniqueness") pass = run_uniqueness(c);
        if (s == "nonuniqueness-demo") pass = run_nonuniqueness(c);
        if (s == "dirichlet") pass = run_dirichlet(c);
        for (const auto& w : c.warnings) log << "warning: " << w << "\n";
        if (options.strict && !c.warnings.empty()) pass = false;

        Json manifest;
        manifest["tool"] = "manifold_bsde";
        manifest["version"] = kVersion;
        manifest["subcommand"] = s;
        manifest["seed"] = seed;
        manifest["strict"] = options.strict;
        manifest["config"] = cfg;
        manifest["config_sha256"] = sha256_bytes(cfg.dump());
        manifest["pass"] = pass;
        manifest["warnings"] = c.warnings;
        manifest["results"] = c.results;
        Json files = Json::array();
        for (const auto& f : out.files()) {
            files.push_back(Json{{"file", f},
                                 {"sha256", sha256_file(out.dir() / f)},
                                 {"bytes", static_cast<std::uint64_t>(fs::file_size(out.dir() / f))}});
        }
        manifest["outputs"] = files;
        result.manifest = out.dir() / "run_manifest.json";
        std::ofstream(result.manifest, std::ios::binary) << manifest.dump(2) << "\n";

        result.pass = pass;
        result.warnings = c.warnings;
        result.exit_code = pass ? 0 : 1;
        log << s << ": " << (pass ? "PASS" : "FAIL") << "\n";
    } catch (const ConfigError& e) {
        result.exit_code = 2;
        result.error = e.what();
        log << "config error: " << e.what() << "\n";
    } catch (const std::exception& e) {
        result.exit_code = 3;
        result.error = e.what();
        log << "error: " << e.what() << "\n";
    }
    return result;
}

int cli_main(int argc, char** argv) {
    CLI::App app{"Backward SDEs on manifolds: experiments and certificates"};
    app.require_subcommand(1, 1);
    RunOptions opt;
    int workers = 1;
    if (const char* env = std::getenv("MANIFOLD_BSDE_WORKERS")) {
        try {
            workers = std::max(1, std::stoi(env));
        } catch (const std::exception&) {
            std::cerr << "ignoring MANIFOLD_BSDE_WORKERS=" << env << "\n";
        }
    }
    std::string config;
    std::string out = "out";
    std::uint64_t seed = 0;
    for (const auto& name : subcommand_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config, "JSON experiment config")->check(CLI::ExistingFile);
        sub->add_option("--out", out, "output directory")->capture_default_str();
        sub->add_option("--seed", seed, "seed (overrides the config)");
        sub->add_option("--workers", workers, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
        sub->add_flag("--strict", opt.strict, "treat warnings as failures");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    for (auto* sub : app.get_subcommands()) {
        opt.subcommand = sub->get_name();
        if (sub->count("--seed") > 0) opt.seed = seed;
    }
    if (!config.empty()) opt.config = config;
    opt.out = out;
    opt.workers = workers;
    return run_experiment(opt, std::cerr).exit_code;
}

}  // namespace mbsde

#include "doctest.h"

#include "mbsde/app.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace mbsde;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("mbsde_cli_" + name);
    fs::remove_all(dir);
    return dir;
}

fs::path write_config(const std::string& name, const std::string& text) {
    const fs::path path = fs::temp_directory_path() / ("mbsde_cli_" + name + ".json");
    std::ofstream(path) << text;
    return path;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

RunResult run(const std::string& sub, const fs::path& out, std::optional<fs::path> config = {}, int workers = 1) {
    RunOptions opt;
    opt.subcommand = sub;
    opt.config = std::move(config);
    opt.out = out;
    opt.workers = workers;
    std::ostringstream log;
    return run_experiment(opt, log);
}

}  // namespace

TEST_CASE("cli outputs do not depend on the worker count") {
    const auto cfg = write_config("det", R"({"paths": 400, "grid": {"T": 1, "steps": 8}, "seed": 11})");
    for (const std::string sub : {"solve", "simulate"}) {
        const auto a = scratch(sub + "_a"), b = scratch(sub + "_b"), c = scratch(sub + "_c");
        REQUIRE(run(sub, a, cfg, 1).exit_code == 0);
        REQUIRE(run(sub, b, cfg, 4).exit_code == 0);
        REQUIRE(run(sub, c, cfg, 1).exit_code == 0);
        for (const auto& entry : fs::directory_iterator(a)) {
            const auto name = entry.path().filename();
            CHECK(slurp(a / name) == slurp(b / name));
            CHECK(slurp(a / name) == slurp(c / name));
        }
    }
}

TEST_CASE("configuration errors name the field") {
    const auto cfg = write_config("bad_gauge", R"({"gauge": {"kind": "sin_power", "a": 2.5}})");
    const auto r = run("check-estimates", scratch("bad_gauge"), cfg);
    CHECK(r.exit_code == 2);
    CHECK(r.error.rfind("gauge.a:", 0) == 0);

    const auto nested = write_config("bad_domain", R"({"dirichlet": {"domain": {"kind": "disk", "radius": -1}}})");
    const auto d = run("dirichlet", scratch("bad_domain"), nested);
    CHECK(d.exit_code == 2);
    CHECK(d.error.rfind("dirichlet.domain.radius:", 0) == 0);

    const auto strict = write_config("strict_ball", R"({"ball": {"radius": 2.0, "strict": true}})");
    CHECK(run("uniqueness", scratch("strict_ball"), strict).error.rfind("ball.radius:", 0) == 0);
    CHECK(run("no-such-command", scratch("none")).exit_code == 2);
}

TEST_CASE("nonuniqueness demo with defaults") {
    const auto out = scratch("nonunique");
    const auto r = run("nonuniqueness-demo", out);
    REQUIRE(r.exit_code == 0);
    const auto manifest = nlohmann::json::parse(slurp(r.manifest));
    CHECK(manifest["results"]["initial_distance"].get<double>() == doctest::Approx(std::numbers::pi).epsilon(1e-15));
    CHECK(manifest["pass"].get<bool>());
}

TEST_CASE("flat check-estimates and manifest hashes") {
    const auto cfg = write_config("flat", R"({"manifold": {"kind": "flat", "dim": 2},
                                              "diagnostics": {"estimates": ["2tp2"], "samples": 200}})");
    const auto out = scratch("flat");
    const auto r = run("check-estimates", out, cfg);
    CHECK(r.exit_code == 0);
    const auto manifest = nlohmann::json::parse(slurp(r.manifest));
    REQUIRE(manifest["outputs"].size() == 2u);
    for (const auto& entry : manifest["outputs"]) {
        const fs::path file = out / entry["file"].get<std::string>();
        CHECK(sha256_file(file) == entry["sha256"].get<std::string>());
        CHECK(fs::file_size(file) == entry["bytes"].get<std::uintmax_t>());
    }
    CHECK(sha256_file(write_config("abc", "abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");

    const auto unknown = write_config("unknown", R"({"diagnostics": {"estimates": ["nope"]}})");
    CHECK(run("check-estimates", scratch("unknown"), unknown).exit_code == 2);
}

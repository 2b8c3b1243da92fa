#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "scr/driver.hpp"

using namespace scr;
namespace fs = std::filesystem;

namespace {

const fs::path kScenarios = SCR_SCENARIO_DIR;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string minimal(const std::string& extra = "") {
  return R"({"schema_version": 1, "model": {"name": "ground_vehicle"}, "horizon": 3,
             "x0": [0, 0, 0, 0])" +
         extra + "}";
}

std::string error_of(const std::string& text) {
  try {
    parse_scenario(text, "test");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInput);
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("scr_driver_test_" + name);
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("bundled vehicle scenario") {
  const auto s = load_scenario(kScenarios / "ground_vehicle.scenario");
  CHECK(s.model.name == "ground_vehicle");
  CHECK(s.model.h == 0.05);
  CHECK(s.horizon == 20);
  CHECK(s.gamma_init == 0.5);
  CHECK(s.gamma_dyn == 0.5);
  CHECK(s.obstacles.size() == 2);
  CHECK(s.bench_horizons == std::vector<int>{10, 20, 30, 40});

  const auto p = build_problem(s);
  CHECK(p.horizon() == 20);
  CHECK(build_problem(s, 40).horizon() == 40);
  CHECK_NOTHROW(p.validate());

  const Vector u = initial_controls(s);
  CHECK(u.size() == 40);
  CHECK(u(1) == 1.5);
  CHECK(u(2 * 16 + 1) == 1.5);
  CHECK(u(2 * 17 + 1) == 0.0);
  CHECK(initial_controls(s, 10).size() == 20);
}

TEST_CASE("scenario text round-trips byte for byte") {
  for (const char* name : {"ground_vehicle.scenario", "chain.scenario"}) {
    const std::string once = emit_scenario(load_scenario(kScenarios / name));
    const std::string twice = emit_scenario(parse_scenario(once));
    CHECK(once == twice);
  }
  const std::string defaults = emit_scenario(parse_scenario(minimal()));
  CHECK(emit_scenario(parse_scenario(defaults)) == defaults);
}

TEST_CASE("omitted uncertainty is the identity with zero radius") {
  const auto s = parse_scenario(minimal());
  CHECK(s.sigma_init == Matrix::Identity(4, 4));
  CHECK(s.sigma_dyn.size() == 1);
  CHECK(s.sigma_dyn[0] == Matrix::Identity(2, 2));
  CHECK(s.gamma_init == 0.0);
  CHECK(s.gamma_dyn == 0.0);
  CHECK(s.q_sqrt == Matrix::Identity(4, 4));
  CHECK(s.u_lower.size() == 2);
  CHECK(std::isinf(s.u_upper(1)));
  CHECK(s.mpc_steps == 3);
  CHECK(s.bench_horizons == std::vector<int>{3});
}

TEST_CASE("errors name the offending field") {
  const auto ball = [](double r) {
    return minimal(R"(, "obstacles": [{"coords": [0, 1], "box": {"lower": [1, 1], "upper": [2, 2]}},
                       {"coords": [0, 1], "ball": {"center": [5, 5], "radius": )" +
                   std::to_string(r) + "}}]");
  };
  CHECK_NOTHROW(parse_scenario(ball(1.0)));
  CHECK(error_of(ball(-1.0)).find("obstacles[1].ball.radius: negative radius") != std::string::npos);
  CHECK(error_of(minimal(R"(, "uncertainty": {"gamma_init": -0.5})"))
            .find("uncertainty.gamma_init") != std::string::npos);
  CHECK(error_of(minimal(R"(, "colour": 1)")).find("colour: unknown field") != std::string::npos);
  CHECK(error_of(R"({"schema_version": 1, "model": {"name": "boat"}, "horizon": 3, "x0": [0]})")
            .find("model.name: unknown model 'boat'") != std::string::npos);
  CHECK(error_of(R"({"schema_version": 1, "model": {"name": "ground_vehicle"}, "horizon": 3,
                     "x0": [0, 0]})")
            .find("x0: expected 4 entries") != std::string::npos);
  CHECK(error_of(minimal(R"(, "horizon": 0)")).find("horizon") != std::string::npos);
  CHECK(error_of(minimal(R"(, "controls": {"lower": [0, 0], "upper": [1, 1],
                                           "initial": [{"u": [2, 0], "stages": 1}]})"))
            .find("controls.initial[0].u: outside the control bounds") != std::string::npos);
  CHECK(error_of(R"({"schema_version": 2})").find("schema_version: unsupported") != std::string::npos);
  CHECK(error_of("{\n  \"schema_version\": 1,\n  \"horizon\": ,\n}").find("test: line 3") !=
        std::string::npos);
  CHECK(error_of(minimal(R"(, "cost": {"r_sqrt": [[1, 0], [0]]})")).find("cost.r_sqrt[1]") !=
        std::string::npos);
}

TEST_CASE("registered models are selectable by name") {
  register_model("slow_vehicle", [](const ModelSpec& spec, int horizon) {
    return ground_vehicle_model(spec.h / 10.0, horizon, spec.rho);
  });
  CHECK(model_registered("slow_vehicle"));
  CHECK_FALSE(model_registered("boat"));
  const auto s = parse_scenario(R"({"schema_version": 1, "model": {"name": "slow_vehicle"},
                                    "horizon": 2, "x0": [0, 0, 1, 0]})");
  CHECK(build_problem(s).model.dims().n == 4);
}

TEST_CASE("constraint census grows by a constant per stage") {
  const auto s = load_scenario(kScenarios / "ground_vehicle.scenario");
  std::vector<int> counts;
  for (int N : {10, 20, 30, 40}) {
    const auto p = build_problem(s, N);
    const auto nominal = make_nominal(p.model, initial_controls(s, N), p.w_nominal());
    const auto safety = safety_halfspaces(p.model, nominal.x, p.obstacles);
    const auto program = assemble_restriction(p, nominal, safety, RestrictionConfig{});
    counts.push_back(canonicalize(program).num_rows());
    CHECK(counts.back() <= constraint_count_bound(4, 4, 2, 2, N));
  }
  CHECK(counts[0] <= 460);
  CHECK(counts[1] - counts[0] == counts[2] - counts[1]);
  CHECK(counts[3] - counts[2] == counts[2] - counts[1]);
}

TEST_CASE("an empty run writes headers only") {
  const auto s = load_scenario(kScenarios / "ground_vehicle.scenario");
  const auto p = build_problem(s);
  const fs::path dir = scratch("empty");
  const auto files = emit_results({&p}, dir);
  CHECK(files.size() == 4);
  CHECK(slurp(dir / "trajectory.csv") ==
        "t,x0,x1,x2,x3,zu0,zu1,zu2,zu3,zl0,zl1,zl2,zl3\n");
  CHECK(slurp(dir / "controls.csv") == "t,u0,u1\n");
  fs::remove_all(dir);
}

TEST_CASE("chain scenario results are reproducible") {
  const auto s = load_scenario(kScenarios / "chain.scenario");
  const auto p = build_problem(s);
  const auto ipm = conic::make_ipm_backend();
  std::string first;
  for (int run = 0; run < 2; ++run) {
    const auto sol = scr_solve(p, initial_controls(s), scr_options(s), *ipm);
    REQUIRE(sol.certified);
    const auto report = monte_carlo_verify(p, sol, 50, s.seed);
    const fs::path dir = scratch("chain" + std::to_string(run));
    RunArtifacts artifacts{&p, &sol, &report};
    emit_results(artifacts, dir);
    const std::string all = slurp(dir / "trajectory.csv") + slurp(dir / "controls.csv") +
                            slurp(dir / "certificate.json") + slurp(dir / "verify.json");
    if (run == 0) {
      first = all;
      CHECK(slurp(dir / "trajectory.csv").rfind("t,x0,zu0,zl0\n0,0,1e-10,-1e-10\n", 0) == 0);
    } else {
      CHECK(all == first);
    }
    fs::remove_all(dir);
  }
}

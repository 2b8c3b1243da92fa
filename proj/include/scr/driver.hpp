#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "scr/scr.hpp"

namespace scr {

inline constexpr int kSchemaVersion = 1;

/// Model name plus the parameters the registered factory reads.
struct ModelSpec {
  std::string name = "ground_vehicle";
  double h = 0.05;    // ground_vehicle: Euler step
  double rho = 1.0;   // ground_vehicle: fallback envelope weight
  Matrix a, b, b_w;   // linear: x' = a x + b u + b_w w
};

/// u held for `stages` consecutive stages; later stages are zero.
struct ControlSegment {
  Vector u;
  int stages = 0;
};

struct Scenario {
  int schema_version = kSchemaVersion;
  std::string name;
  ModelSpec model;
  int horizon = 0;
  Vector x0;
  Matrix sigma_init;
  double gamma_init = 0.0;
  std::vector<Matrix> sigma_dyn;  // one matrix (time-invariant) or one per stage
  double gamma_dyn = 0.0;
  std::vector<Obstacle> obstacles;
  Matrix q_sqrt;
  Matrix q_terminal_sqrt;
  Matrix r_sqrt;
  Vector u_lower;
  Vector u_upper;
  conic::Tolerances solver;
  double eps_safe = RestrictionConfig{}.eps_safe;
  double scr_tolerance = ScrOptions{}.tolerance;
  int scr_max_iterations = ScrOptions{}.max_iterations;
  std::uint64_t seed = 0;
  std::vector<ControlSegment> init_controls;
  int mpc_steps = 0;
  int mpc_period = 1;
  int verify_samples = 1000;
  std::vector<int> bench_horizons;
};

/// Parses a scenario document. Errors carry `source`, the line and column for
/// syntax errors, or the field path (e.g. obstacles[1].ball.radius) otherwise.
/// Omitted optional fields get their defaults; dimensions are checked against
/// the model.
Scenario parse_scenario(const std::string& text, const std::string& source = "<scenario>");
Scenario load_scenario(const std::filesystem::path& path);

/// Canonical text of a scenario with every field written out. Parsing the
/// result gives back the same text.
std::string emit_scenario(const Scenario& scenario);

using ModelFactory = std::function<FeedbackModel(const ModelSpec& spec, int horizon)>;

/// Adds or replaces a model name usable in scenarios. "ground_vehicle" and
/// "linear" are built in.
void register_model(const std::string& name, ModelFactory factory);
bool model_registered(const std::string& name);
FeedbackModel make_model(const ModelSpec& spec, int horizon);

/// The scenario as a problem; horizon <= 0 keeps the scenario's.
RobustProblem build_problem(const Scenario& scenario, int horizon = 0);
Vector initial_controls(const Scenario& scenario, int horizon = 0);
ScrOptions scr_options(const Scenario& scenario);

/// One row of the horizon benchmark.
struct BenchRow {
  int horizon = 0;
  std::string status;
  int iterations = 0;
  int constraints = 0;
  double solve_seconds = 0.0;
  double seconds_per_iteration = 0.0;
  double cost_upper = 0.0;
  double nominal_cost = 0.0;  // closed-loop cost of a disturbance-free receding-horizon run
  int mpc_steps_run = 0;
};

BenchRow bench_row(const Scenario& scenario, int horizon, const conic::Backend& backend);

/// Output files. All numbers are written with full round-trip precision.
struct RunArtifacts {
  const RobustProblem* problem = nullptr;
  const CertifiedSolution* solution = nullptr;  // null or uncertified: headers-only CSVs
  const VerifyReport* report = nullptr;
  const MarginResult* margin = nullptr;
  std::string margin_mode;
  const MpcLog* mpc = nullptr;
  const std::vector<BenchRow>* bench = nullptr;
};

/// Writes trajectory.csv, controls.csv, certificate.json and tube.txt for a
/// solution, plus verify.json, margin.json, mpc.csv / mpc.json and
/// bench_table.csv when those artifacts are present. Returns the paths written.
std::vector<std::filesystem::path> emit_results(const RunArtifacts& artifacts,
                                                const std::filesystem::path& out_dir);

}  // namespace scr

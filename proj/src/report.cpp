#include <charconv>
#include <chrono>
#include <fstream>

#include "json.hpp"
#include "scr/driver.hpp"

namespace scr {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Shortest text that parses back to the same double.
std::string num(double x) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, end);
}

Json finite(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

class Writer {
 public:
  explicit Writer(const fs::path& out_dir) : dir_(out_dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    require(!ec, ErrorKind::kInput, dir_.string() + ": cannot create output directory: " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path path = dir_ / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    out.close();
    require(out.good(), ErrorKind::kInput, path.string() + ": write failed");
    written_.push_back(path);
  }

  void write_json(const std::string& name, const Json& j) { write(name, j.dump(2) + "\n"); }

  std::vector<fs::path> written() const { return written_; }

 private:
  fs::path dir_;
  std::vector<fs::path> written_;
};

std::string csv_row(const std::vector<std::string>& cells) {
  std::string line;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i > 0) line += ',';
    line += cells[i];
  }
  return line + "\n";
}

std::vector<std::string> columns(const std::string& prefix, int count) {
  std::vector<std::string> names;
  for (int i = 0; i < count; ++i) names.push_back(prefix + std::to_string(i));
  return names;
}

void append(std::vector<std::string>& row, const Vector& values) {
  for (double x : values) row.push_back(num(x));
}

bool has_solution(const RunArtifacts& a) {
  return a.solution != nullptr && a.solution->certified && a.solution->u.size() > 0;
}

std::string trajectory_csv(const RunArtifacts& a) {
  const auto& d = a.problem->model.dims();
  std::vector<std::string> header{"t"};
  for (auto& c : columns("x", d.n)) header.push_back(c);
  for (auto& c : columns("zu", d.q)) header.push_back(c);
  for (auto& c : columns("zl", d.q)) header.push_back(c);
  std::string out = csv_row(header);
  if (!has_solution(a)) return out;
  const auto& s = *a.solution;
  for (int t = 0; t <= a.problem->horizon(); ++t) {
    std::vector<std::string> row{std::to_string(t)};
    append(row, s.nominal_x.segment(d.n * t, d.n));
    append(row, s.tube.z_upper.segment(d.q * t, d.q));
    append(row, s.tube.z_lower.segment(d.q * t, d.q));
    out += csv_row(row);
  }
  return out;
}

std::string controls_csv(const RunArtifacts& a) {
  const int m = a.problem->model.dims().m;
  std::vector<std::string> header{"t"};
  for (auto& c : columns("u", m)) header.push_back(c);
  std::string out = csv_row(header);
  if (!has_solution(a)) return out;
  for (int t = 0; t < a.problem->horizon(); ++t) {
    std::vector<std::string> row{std::to_string(t)};
    append(row, a.solution->u.segment(m * t, m));
    out += csv_row(row);
  }
  return out;
}

// Tube boxes mapped back to state coordinates, one closed polyline per stage
// over the first two state coordinates (gnuplot "index" blocks).
std::string tube_polylines(const RunArtifacts& a) {
  const auto& model = a.problem->model;
  const auto& d = model.dims();
  std::string out = "# stage boxes of the certified tube over (x0, x1); blank line between stages\n";
  if (!has_solution(a) || d.n < 2) return out;
  const auto& tube = a.solution->tube;
  for (int t = 0; t <= model.horizon(); ++t) {
    const Matrix& p = model.C_pinv(t);
    const Vector zu = tube.z_upper.segment(d.q * t, d.q);
    const Vector zl = tube.z_lower.segment(d.q * t, d.q);
    const Vector hi = positive_part(p) * zu + negative_part(p) * zl;
    const Vector lo = positive_part(p) * zl + negative_part(p) * zu;
    out += "# t=" + std::to_string(t) + "\n";
    const double xs[5] = {lo(0), hi(0), hi(0), lo(0), lo(0)};
    const double ys[5] = {lo(1), lo(1), hi(1), hi(1), lo(1)};
    for (int k = 0; k < 5; ++k) out += num(xs[k]) + " " + num(ys[k]) + "\n";
    out += "\n";
  }
  return out;
}

Json certificate_json(const RunArtifacts& a) {
  const auto& p = *a.problem;
  const auto& d = p.model.dims();
  Json j;
  if (a.solution == nullptr) {
    j["status"] = "not run";
    j["certified"] = false;
    return j;
  }
  const auto& s = *a.solution;
  j["status"] = to_string(s.status);
  j["certified"] = s.certified;
  j["message"] = s.message;
  j["horizon"] = p.horizon();
  j["gamma_init"] = s.gamma_init;
  j["gamma_dyn"] = s.gamma_dyn;
  j["cost_upper"] = finite(s.cost_upper);
  j["iterations"] = s.iterations;
  Json census = Json::object();
  for (const auto& [category, count] : s.census) census[category] = count;
  j["census"] = census;
  j["constraint_count"] = s.constraint_count;
  j["constraint_bound"] = constraint_count_bound(d.n, d.q, static_cast<int>(p.obstacles.size()),
                                                  p.model.sparsity_degree(), p.horizon());
  j["check"] = Json{{"valid", s.check.valid},
                    {"worst_selfmap", finite(s.check.worst_selfmap)},
                    {"worst_safety", finite(s.check.worst_safety)},
                    {"worst_bounds", finite(s.check.worst_bounds)},
                    {"cost_upper", finite(s.check.cost_upper)}};
  int total = 0;
  Json history = Json::array();
  for (const auto& h : s.history) {
    total += h.solver_iterations;
    history.push_back(Json{{"cost_upper", finite(h.cost_upper)},
                           {"solver_iterations", h.solver_iterations},
                           {"solver_status", h.solver_status}});
  }
  j["solver"] = Json{{"backend", "ipm"}, {"total_iterations", total}, {"history", history}};
  return j;
}

Json verify_json(const VerifyReport& r) {
  return Json{{"samples", r.samples},
              {"seed", r.seed},
              {"passed", r.passed()},
              {"tube_exits", r.tube_exits},
              {"obstacle_hits", r.obstacle_hits},
              {"cost_exceedances", r.cost_exceedances},
              {"max_cost", finite(r.max_cost)},
              {"cost_upper", finite(r.cost_upper)},
              {"worst_tube_excess", finite(r.worst_tube_excess)}};
}

std::string mpc_csv(const RunArtifacts& a) {
  const auto& d = a.problem->model.dims();
  std::vector<std::string> header{"t"};
  for (auto& c : columns("x", d.n)) header.push_back(c);
  for (auto& c : columns("u", d.m)) header.push_back(c);
  std::string out = csv_row(header);
  const auto& log = *a.mpc;
  for (int t = 0; t <= log.steps_run; ++t) {
    std::vector<std::string> row{std::to_string(t)};
    append(row, log.states.segment(d.n * t, d.n));
    if (t < log.steps_run) {
      append(row, log.controls.segment(d.m * t, d.m));
    } else {
      for (int i = 0; i < d.m; ++i) row.emplace_back();
    }
    out += csv_row(row);
  }
  return out;
}

Json mpc_json(const MpcLog& log) {
  Json cycles = Json::array();
  for (const auto& c : log.cycles) {
    cycles.push_back(Json{{"step", c.step},
                          {"replanned", c.replanned},
                          {"event", c.event},
                          {"status", to_string(c.plan.status)},
                          {"iterations", c.plan.iterations},
                          {"cost_upper", finite(c.plan.cost_upper)}});
  }
  return Json{{"steps_run", log.steps_run}, {"cost", finite(log.cost)}, {"cycles", cycles}};
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = csv_row({"N", "status", "iterations", "constraints", "solve_s",
                             "solve_s_per_iteration", "cost_upper", "nominal_cost",
                             "mpc_steps"});
  for (const auto& r : rows) {
    out += csv_row({std::to_string(r.horizon), r.status, std::to_string(r.iterations),
                    std::to_string(r.constraints), num(r.solve_seconds),
                    num(r.seconds_per_iteration), num(r.cost_upper), num(r.nominal_cost),
                    std::to_string(r.mpc_steps_run)});
  }
  return out;
}

}  // namespace

BenchRow bench_row(const Scenario& scenario, int horizon, const conic::Backend& backend) {
  const RobustProblem problem = build_problem(scenario, horizon);
  const Vector seed = initial_controls(scenario, horizon);
  const ScrOptions options = scr_options(scenario);

  BenchRow row;
  row.horizon = horizon;
  const auto start = std::chrono::steady_clock::now();
  const auto sol = scr_solve(problem, seed, options, backend);
  row.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  row.status = to_string(sol.status);
  row.iterations = sol.iterations;
  row.constraints = sol.constraint_count;
  row.seconds_per_iteration = sol.iterations > 0 ? row.solve_seconds / sol.iterations : 0.0;
  row.cost_upper = sol.cost_upper;

  MpcOptions mpc;
  mpc.total_steps = scenario.mpc_steps;
  mpc.replan_period = scenario.mpc_period;
  mpc.seed = scenario.seed;
  mpc.scr = options;
  const auto log = receding_horizon_run(problem, seed, mpc, backend);
  row.nominal_cost = log.cost;
  row.mpc_steps_run = log.steps_run;
  return row;
}

std::vector<fs::path> emit_results(const RunArtifacts& a, const fs::path& out_dir) {
  require(a.problem != nullptr, ErrorKind::kInput, "emit_results: no problem given");
  Writer w(out_dir);
  if (a.solution != nullptr || (a.margin == nullptr && a.mpc == nullptr && a.bench == nullptr)) {
    w.write("trajectory.csv", trajectory_csv(a));
    w.write("controls.csv", controls_csv(a));
    w.write_json("certificate.json", certificate_json(a));
    w.write("tube.txt", tube_polylines(a));
  }
  if (a.report != nullptr) w.write_json("verify.json", verify_json(*a.report));
  if (a.margin != nullptr) {
    w.write_json("margin.json", Json{{"mode", a.margin_mode},
                                     {"gamma", finite(a.margin->gamma)},
                                     {"solver_gamma", finite(a.margin->solver_gamma)},
                                     {"diagnostic", a.margin->diagnostic}});
  }
  if (a.mpc != nullptr) {
    w.write("mpc.csv", mpc_csv(a));
    w.write_json("mpc.json", mpc_json(*a.mpc));
  }
  if (a.bench != nullptr) w.write("bench_table.csv", bench_csv(*a.bench));
  return w.written();
}

}  // namespace scr

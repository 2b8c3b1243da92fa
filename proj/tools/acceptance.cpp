// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "scr/driver.hpp"
#include "scr/envelope.hpp"

namespace fs = std::filesystem;
using namespace scr;

namespace {

const fs::path kScenarios = SCR_SCENARIO_DIR;
const std::string kCli = SCR_CLI_PATH;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

Vector pair(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

// Falsifies the scalar envelopes (bilinear, sin, cos, v*cos, v*sin) at random
// anchors, plus the vehicle's residual envelopes at random nominals.
Outcome envelope_soundness() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> anchor(-5.0, 5.0), angle(-3.2, 3.2), weight(0.2, 5.0);
  double worst = -conic::kInf;
  double worst_tight = 0.0;
  int envelopes = 0;
  const auto falsify = [&](const QuadraticEnvelopeD& env, const std::function<double(const Vector&)>& f,
                           const Vector& lo, const Vector& hi, std::uint64_t seed) {
    const auto report = soundness_falsify(env, f, lo, hi, 10000, seed);
    worst = std::max(worst, report.worst);
    const double fa = f(env.anchor);
    worst_tight = std::max({worst_tight, std::abs(env.upper(env.anchor) - fa),
                            std::abs(env.lower(env.anchor) - fa)});
    ++envelopes;
  };
  const auto box = [](const Vector& a, double dx, double dy) {
    return std::pair{Vector(a - pair(dx, dy)), Vector(a + pair(dx, dy))};
  };

  for (int i = 0; i < 100; ++i) {
    const double x0 = anchor(rng), y0 = anchor(rng), th0 = angle(rng), rho = weight(rng);
    const auto seed = static_cast<std::uint64_t>(i);

    const auto bil = bilinear_envelope(x0, y0, rho, 1.0 / rho);
    auto [blo, bhi] = box(pair(x0, y0), 6.0, 6.0);
    falsify(bil, [](const Vector& y) { return y(0) * y(1); }, blo, bhi, seed);

    Vector t0(1), tlo(1), thi(1);
    t0 << th0;
    tlo << th0 - 4.0;
    thi << th0 + 4.0;
    falsify(sin_envelope(th0), [](const Vector& y) { return std::sin(y(0)); }, tlo, thi, seed);
    falsify(cos_envelope(th0), [](const Vector& y) { return std::cos(y(0)); }, tlo, thi, seed);

    auto [plo, phi] = box(pair(x0, th0), 6.0, 4.0);
    falsify(product_trig_envelope(x0, th0, Trig::kCos, rho),
            [](const Vector& y) { return y(0) * std::cos(y(1)); }, plo, phi, seed);
    falsify(product_trig_envelope(x0, th0, Trig::kSin, rho),
            [](const Vector& y) { return y(0) * std::sin(y(1)); }, plo, phi, seed);
  }

  // Residual envelopes of the vehicle model at random single-stage nominals.
  const auto model = ground_vehicle_model(0.05, 1);
  for (int i = 0; i < 100; ++i) {
    Vector x(4), u(2);
    x << anchor(rng), anchor(rng), anchor(rng), angle(rng);
    u << anchor(rng), anchor(rng) * 0.3;
    NominalPoint nominal;
    nominal.x = x.replicate(2, 1);
    nominal.z = (model.C(0) * x).replicate(2, 1);
    nominal.u = u;
    nominal.w = Vector::Zero(4 + 2);
    // g = psi(z, u) - J0 z, with J0 evaluated once per nominal.
    const Matrix j0 = basis_jacobian_nominal(model, 0, nominal);
    const auto& basis = model.stage(0).basis;
    for (int k = 0; k < model.dims().p; ++k) {
      const auto env = residual_envelope(model, 0, k, nominal);
      const auto& set = model.stage(0).sparsity[k];
      const auto local = static_cast<Eigen::Index>(set.size());
      const auto fn = [&](const Vector& y) {
        Vector z = nominal.z.head(model.dims().q);
        for (Eigen::Index j = 0; j < local; ++j) z(set[j]) = y(j);
        return basis.eval(z, y.tail(2))(k) - j0.row(k).dot(z);
      };
      const Vector lo = env.anchor.array() - 3.0, hi = env.anchor.array() + 3.0;
      falsify(env, fn, lo, hi, static_cast<std::uint64_t>(1000 + i));
    }
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-9 && worst_tight <= 1e-9 && secs < 10.0,
          fmt("%d envelopes x 1e4 samples, worst violation %.2e, anchor gap %.2e, %.2f s", envelopes,
              worst, worst_tight, secs)};
}

Outcome fixed_point() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const int N = 20;
  const auto model = ground_vehicle_model(0.05, N);
  const auto random = [&](Eigen::Index size, double scale) {
    Vector v(size);
    for (auto& x : v) x = scale * unit(rng);
    return v;
  };
  const auto nominal = make_nominal(model, random(2 * N, 2.0),
                                    stack_disturbance(random(4, 3.0), random(2 * N, 0.5)));
  const SensitivityBlocks blocks(model, nominal);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Vector u = random(2 * N, 2.0);
    const Vector w = stack_disturbance(random(4, 3.0), random(2 * N, 0.5));
    const Vector x = rollout(model, u, w);
    worst = std::max(worst, (apply_T(model, nominal, blocks, x, u, w) - x).lpNorm<Eigen::Infinity>());
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-8 && secs < 5.0,
          fmt("50 bundles at N=%d, max |T[x] - x| = %.2e, %.2f s", N, worst, secs)};
}

// Every SCR iterate carries its own certificate; each one is sampled.
Outcome certificate_soundness(const Scenario& s, const conic::Backend& backend) {
  const auto start = std::chrono::steady_clock::now();
  const auto problem = build_problem(s);
  auto options = scr_options(s);
  int certificates = 0, failures = 0;
  double worst_margin = conic::kInf;
  options.on_iterate = [&](const CertifiedSolution& sol) {
    const auto report = monte_carlo_verify(problem, sol, 1000, s.seed + certificates);
    ++certificates;
    if (!report.passed() || report.max_cost > sol.cost_upper + 1e-6) ++failures;
    worst_margin = std::min(worst_margin, sol.cost_upper - report.max_cost);
  };
  const auto sol = scr_solve(problem, initial_controls(s), options, backend);
  const double secs = seconds_since(start);
  return {sol.certified && failures == 0 && secs < 60.0,
          fmt("N=%d, %d certified iterates x 1000 samples (gamma %.2g/%.2g), %d failing, "
              "min c_u - max cost %.4g, %.2f s",
              problem.horizon(), certificates, s.gamma_init, s.gamma_dyn, failures, worst_margin,
              secs)};
}

Outcome chain_margin(const conic::Backend& backend) {
  const auto start = std::chrono::steady_clock::now();
  const auto s = load_scenario(kScenarios / "chain.scenario");
  const auto p = build_problem(s);
  const auto margin =
      certify_margin(p, initial_controls(s), MarginMode::kJoint, scr_options(s), backend);
  const double err = std::abs(margin.gamma - 1.0 / 3.0);
  const double secs = seconds_since(start);
  return {err <= 1e-4 + s.eps_safe && secs < 1.0,
          fmt("gamma = %.9f, |gamma - 1/3| = %.2e (allowed %.2e), %.3f s", margin.gamma, err,
              1e-4 + s.eps_safe, secs)};
}

Outcome census(const Scenario& s) {
  std::vector<long> counts;
  bool within = true;
  std::string list;
  for (int N : {10, 20, 30, 40}) {
    const auto p = build_problem(s, N);
    const auto nominal = make_nominal(p.model, initial_controls(s, N), p.w_nominal());
    const auto safety = safety_halfspaces(p.model, nominal.x, p.obstacles);
    const auto program = assemble_restriction(p, nominal, safety, RestrictionConfig{});
    const auto& d = p.model.dims();
    counts.push_back(canonicalize(program).num_rows());
    const long bound = constraint_count_bound(d.n, d.q, static_cast<int>(p.obstacles.size()),
                                                p.model.sparsity_degree(), N);
    within = within && counts.back() <= bound;
    list += fmt("%sN=%d: %ld <= %ld", list.empty() ? "" : ", ", N, counts.back(), bound);
  }
  const bool affine = counts[1] - counts[0] == counts[2] - counts[1] &&
                      counts[3] - counts[2] == counts[2] - counts[1];
  return {within && affine && counts[0] <= 460,
          list + fmt(", increment %ld per 10 stages", counts[1] - counts[0])};
}

Outcome convergence(const Scenario& s, const conic::Backend& backend) {
  bool ok = true;
  std::string detail;
  double nominal10 = 0.0, nominal20 = 0.0;
  for (int N : {10, 20, 30, 40}) {
    const auto row = bench_row(s, N, backend);
    ok = ok && row.status == "converged" && row.iterations <= 30;
    if (N == 40) ok = ok && row.solve_seconds < 30.0;
    if (N == 10) nominal10 = row.nominal_cost;
    if (N == 20) nominal20 = row.nominal_cost;
    ok = ok && row.mpc_steps_run == s.mpc_steps;
    detail += fmt("%sN=%d: %s in %d its, %.2f s, nominal %.0f", detail.empty() ? "" : "; ", N,
                  row.status.c_str(), row.iterations, row.solve_seconds, row.nominal_cost);
  }
  ok = ok && nominal20 <= nominal10;
  return {ok, detail};
}

Outcome schedule_margin(const Scenario& s, const conic::Backend& backend) {
  auto p = build_problem(s);
  p.uncertainty.gamma_init = 0.0;
  p.uncertainty.gamma_dyn = 0.0;
  const int N = p.horizon();
  Vector u(2 * N);
  for (int t = 0; t < N; ++t) u.segment(2 * t, 2) = (t < N / 2 ? 1.0 : -1.0) * pair(15.0, 0.75);
  const auto margin = certify_margin(p, u, MarginMode::kInit, scr_options(s), backend);
  const double sampled = empirical_margin(p, u, MarginMode::kInit, 1000, s.seed);
  return {margin.gamma > 0.0 && margin.gamma <= sampled,
          fmt("certified %.6f, sampled %.6f at N=%d", margin.gamma, sampled, N)};
}

std::string slurp_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) {
    const auto ext = f.extension();
    if (ext != ".csv" && ext != ".json") continue;
    std::ifstream in(f, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    all += f.filename().string() + "\n" + buf.str();
  }
  return all;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "scr_acceptance_determinism";
  fs::remove_all(root);
  const std::string scenario = (kScenarios / "ground_vehicle.scenario").string();
  bool ok = true;
  int compared = 0;
  for (const char* cmd : {"solve", "verify"}) {
    std::string first;
    for (int run = 0; run < 2; ++run) {
      const fs::path out = root / (std::string(cmd) + std::to_string(run));
      const std::string line = "\"" + kCli + "\" " + cmd + " --scenario \"" + scenario +
                               "\" --out \"" + out.string() + "\" --seed 7 2>/dev/null";
      if (std::system(line.c_str()) != 0) {
        ok = false;
        continue;
      }
      const std::string all = slurp_dir(out);
      if (run == 0) {
        first = all;
      } else {
        ok = ok && !all.empty() && all == first;
        ++compared;
      }
    }
  }
  fs::remove_all(root);
  return {ok && compared == 2, fmt("%d subcommands run twice, outputs %s", compared,
                                   ok ? "byte-identical" : "differ or failed")};
}

}  // namespace

int main() {
  const auto s = load_scenario(kScenarios / "ground_vehicle.scenario");
  const auto backend = conic::make_ipm_backend();
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"envelope soundness", envelope_soundness},
      {"fixed point of T", fixed_point},
      {"certificate soundness", [&] { return certificate_soundness(s, *backend); }},
      {"chain margin", [&] { return chain_margin(*backend); }},
      {"constraint census", [&] { return census(s); }},
      {"SCR convergence", [&] { return convergence(s, *backend); }},
      {"open-loop schedule margin", [&] { return schedule_margin(s, *backend); }},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome outcome;
    try {
      outcome = criteria[i].second();
    } catch (const std::exception& e) {
      outcome = {false, std::string("error: ") + e.what()};
    }
    failed += outcome.pass ? 0 : 1;
    std::printf("criterion %zu %s: %s (%s)\n", i + 1, outcome.pass ? "PASS" : "FAIL",
                criteria[i].first, outcome.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

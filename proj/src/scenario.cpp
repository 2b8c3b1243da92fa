#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "json.hpp"
#include "scr/driver.hpp"

namespace scr {

namespace {

using Json = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::kInput, path + ": " + what);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

void only_keys(const Json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) fail(join(path, key), "unknown field");
  }
}

const Json* find(const Json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

const Json& need(const Json& j, const std::string& path, const char* key) {
  const Json* v = find(j, key);
  if (v == nullptr) fail(join(path, key), "required field is missing");
  return *v;
}

double number(const Json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

// null stands for an infinite bound.
double bound(const Json& j, const std::string& path, double infinity) {
  return j.is_null() ? infinity : number(j, path);
}

long long integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<long long>();
}

double nonnegative(const Json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v >= 0.0)) fail(path, "must be nonnegative, got " + j.dump());
  return v;
}

int positive_int(const Json& j, const std::string& path) {
  const long long v = integer(j, path);
  if (v < 1 || v > 1000000) fail(path, "must be a positive integer, got " + j.dump());
  return static_cast<int>(v);
}

std::string text(const Json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

Vector vector_of(const Json& j, const std::string& path, double null_as = 0.0,
                 bool allow_null = false) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = allow_null ? bound(j[i], index(path, i), null_as)
                                                 : number(j[i], index(path, i));
  }
  return v;
}

Vector sized(const Json& j, const std::string& path, Eigen::Index size) {
  Vector v = vector_of(j, path);
  if (v.size() != size) {
    fail(path, "expected " + std::to_string(size) + " entries, got " + std::to_string(v.size()));
  }
  return v;
}

Matrix matrix_of(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a nonempty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Matrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Vector row = vector_of(j[i], index(path, i));
    if (static_cast<std::size_t>(row.size()) != cols || cols == 0) {
      fail(index(path, i), "rows must be nonempty and of equal length");
    }
    m.row(static_cast<Eigen::Index>(i)) = row.transpose();
  }
  return m;
}

Matrix shaped(const Json& j, const std::string& path, Eigen::Index rows, Eigen::Index cols) {
  Matrix m = matrix_of(j, path);
  if ((rows >= 0 && m.rows() != rows) || m.cols() != cols) {
    fail(path, "expected " + (rows >= 0 ? std::to_string(rows) : std::string("k")) + " x " +
                   std::to_string(cols) + ", got " + std::to_string(m.rows()) + " x " +
                   std::to_string(m.cols()));
  }
  return m;
}

Json to_json(const Vector& v) {
  Json j = Json::array();
  for (double x : v) j.push_back(std::isfinite(x) ? Json(x) : Json(nullptr));
  return j;
}

Json to_json(const Matrix& m) {
  Json j = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) j.push_back(to_json(Vector(m.row(i).transpose())));
  return j;
}

std::string line_column(const std::string& text, std::size_t byte) {
  int line = 1, column = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(column);
}

std::map<std::string, ModelFactory>& registry() {
  static std::map<std::string, ModelFactory> models{
      {"ground_vehicle",
       [](const ModelSpec& spec, int horizon) {
         return ground_vehicle_model(spec.h, horizon, spec.rho);
       }},
      {"linear",
       [](const ModelSpec& spec, int horizon) {
         return linear_model(spec.a, spec.b, spec.b_w, horizon, "linear");
       }},
  };
  return models;
}

std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}

ModelSpec parse_model(const Json& j) {
  const std::string path = "model";
  const std::string name = text(need(j, path, "name"), join(path, "name"));
  ModelSpec spec;
  spec.name = name;
  if (name == "linear") {
    only_keys(j, path, {"name", "A", "B", "B_w"});
    spec.a = matrix_of(need(j, path, "A"), join(path, "A"));
    const auto n = spec.a.rows();
    if (spec.a.cols() != n) fail(join(path, "A"), "must be square");
    spec.b = matrix_of(need(j, path, "B"), join(path, "B"));
    spec.b_w = matrix_of(need(j, path, "B_w"), join(path, "B_w"));
    if (spec.b.rows() != n) fail(join(path, "B"), "expected " + std::to_string(n) + " rows");
    if (spec.b_w.rows() != n) fail(join(path, "B_w"), "expected " + std::to_string(n) + " rows");
  } else {
    only_keys(j, path, {"name", "h", "rho"});
    if (const Json* h = find(j, "h")) spec.h = number(*h, join(path, "h"));
    if (const Json* rho = find(j, "rho")) spec.rho = number(*rho, join(path, "rho"));
    if (!(spec.h > 0.0)) fail(join(path, "h"), "must be positive");
    if (!(spec.rho > 0.0)) fail(join(path, "rho"), "must be positive");
  }
  if (!model_registered(name)) fail(join(path, "name"), "unknown model '" + name + "'");
  return spec;
}

Json model_json(const ModelSpec& spec) {
  Json j;
  j["name"] = spec.name;
  if (spec.name == "linear") {
    j["A"] = to_json(spec.a);
    j["B"] = to_json(spec.b);
    j["B_w"] = to_json(spec.b_w);
  } else {
    j["h"] = spec.h;
    j["rho"] = spec.rho;
  }
  return j;
}

Obstacle parse_obstacle(const Json& j, const std::string& path, int n) {
  only_keys(j, path, {"name", "coords", "ball", "box", "polytope"});
  Obstacle o;
  o.name = find(j, "name") ? text(j["name"], join(path, "name")) : path;
  const Json& coords = need(j, path, "coords");
  if (!coords.is_array() || coords.empty()) fail(join(path, "coords"), "expected indices");
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const long long c = integer(coords[i], index(join(path, "coords"), i));
    if (c < 0 || c >= n) {
      fail(index(join(path, "coords"), i),
           "state index " + std::to_string(c) + " outside [0, " + std::to_string(n) + ")");
    }
    o.coords.push_back(static_cast<int>(c));
  }
  const auto dim = static_cast<Eigen::Index>(o.coords.size());
  const int shapes = (find(j, "ball") ? 1 : 0) + (find(j, "box") ? 1 : 0) +
                     (find(j, "polytope") ? 1 : 0);
  if (shapes != 1) fail(path, "exactly one of ball, box, polytope is required");
  if (const Json* s = find(j, "ball")) {
    const std::string p = join(path, "ball");
    only_keys(*s, p, {"center", "radius"});
    const double radius = number(need(*s, p, "radius"), join(p, "radius"));
    if (!(radius >= 0.0)) fail(join(p, "radius"), "negative radius");
    o.shape = Ball{sized(need(*s, p, "center"), join(p, "center"), dim), radius};
  } else if (const Json* s = find(j, "box")) {
    const std::string p = join(path, "box");
    only_keys(*s, p, {"lower", "upper"});
    Box box{sized(need(*s, p, "lower"), join(p, "lower"), dim),
            sized(need(*s, p, "upper"), join(p, "upper"), dim)};
    if (!(box.lower.array() <= box.upper.array()).all()) fail(p, "lower exceeds upper");
    o.shape = std::move(box);
  } else {
    const std::string p = join(path, "polytope");
    const Json& poly_json = j["polytope"];
    only_keys(poly_json, p, {"A", "b"});
    Polytope poly;
    poly.A = shaped(need(poly_json, p, "A"), join(p, "A"), -1, dim);
    poly.b = sized(need(poly_json, p, "b"), join(p, "b"), poly.A.rows());
    o.shape = std::move(poly);
  }
  try {
    validate_obstacle(o, n);
  } catch (const Error& e) {
    fail(path, e.what());
  }
  return o;
}

Json obstacle_json(const Obstacle& o) {
  Json j;
  j["name"] = o.name;
  j["coords"] = o.coords;
  std::visit(
      [&](const auto& shape) {
        using T = std::decay_t<decltype(shape)>;
        if constexpr (std::is_same_v<T, Ball>) {
          j["ball"] = Json{{"center", to_json(shape.center)}, {"radius", shape.radius}};
        } else if constexpr (std::is_same_v<T, Box>) {
          j["box"] = Json{{"lower", to_json(shape.lower)}, {"upper", to_json(shape.upper)}};
        } else {
          j["polytope"] = Json{{"A", to_json(shape.A)}, {"b", to_json(shape.b)}};
        }
      },
      o.shape);
  return j;
}

Matrix square_or_identity(const Json* j, const std::string& path, int size) {
  return j ? shaped(*j, path, size, size) : Matrix(Matrix::Identity(size, size));
}

Scenario parse_document(const Json& root) {
  only_keys(root, "", {"schema_version", "name", "model", "horizon", "x0", "uncertainty",
                       "obstacles", "cost", "controls", "solver", "scr", "mpc", "verify", "bench",
                       "seed"});
  Scenario s;
  s.schema_version = static_cast<int>(integer(need(root, "", "schema_version"), "schema_version"));
  if (s.schema_version != kSchemaVersion) {
    fail("schema_version", "unsupported version " + std::to_string(s.schema_version) +
                               " (this build reads " + std::to_string(kSchemaVersion) + ")");
  }
  if (const Json* name = find(root, "name")) s.name = text(*name, "name");
  s.model = parse_model(need(root, "", "model"));
  s.horizon = positive_int(need(root, "", "horizon"), "horizon");

  Dimensions dims;
  try {
    dims = make_model(s.model, 1).dims();
  } catch (const Error& e) {
    fail("model", e.what());
  }
  const int n = dims.n, m = dims.m, r = dims.r;

  s.x0 = sized(need(root, "", "x0"), "x0", n);
  if (!s.x0.allFinite()) fail("x0", "entries must be finite");

  const Json none = Json::object();
  const Json& unc = find(root, "uncertainty") ? root["uncertainty"] : none;
  only_keys(unc, "uncertainty", {"sigma_init", "gamma_init", "sigma_dyn", "gamma_dyn"});
  s.sigma_init = square_or_identity(find(unc, "sigma_init"), "uncertainty.sigma_init", n);
  if (const Json* g = find(unc, "gamma_init")) s.gamma_init = nonnegative(*g, "uncertainty.gamma_init");
  if (const Json* sd = find(unc, "sigma_dyn")) {
    const std::string p = "uncertainty.sigma_dyn";
    const bool per_stage = sd->is_array() && !sd->empty() && (*sd)[0].is_array() &&
                           !(*sd)[0].empty() && (*sd)[0][0].is_array();
    if (per_stage) {
      if (static_cast<int>(sd->size()) != s.horizon) {
        fail(p, "expected one matrix per stage (" + std::to_string(s.horizon) + ")");
      }
      for (std::size_t t = 0; t < sd->size(); ++t) s.sigma_dyn.push_back(shaped((*sd)[t], index(p, t), r, r));
    } else {
      s.sigma_dyn.push_back(shaped(*sd, p, r, r));
    }
  } else {
    s.sigma_dyn.push_back(Matrix::Identity(r, r));
  }
  if (const Json* g = find(unc, "gamma_dyn")) s.gamma_dyn = nonnegative(*g, "uncertainty.gamma_dyn");

  if (const Json* obs = find(root, "obstacles")) {
    if (!obs->is_array()) fail("obstacles", "expected an array");
    for (std::size_t i = 0; i < obs->size(); ++i) {
      s.obstacles.push_back(parse_obstacle((*obs)[i], index("obstacles", i), n));
    }
  }

  const Json& cost = find(root, "cost") ? root["cost"] : none;
  only_keys(cost, "cost", {"q_sqrt", "q_terminal_sqrt", "r_sqrt"});
  s.q_sqrt = find(cost, "q_sqrt") ? shaped(cost["q_sqrt"], "cost.q_sqrt", -1, n)
                                  : Matrix(Matrix::Identity(n, n));
  s.q_terminal_sqrt = find(cost, "q_terminal_sqrt")
                          ? shaped(cost["q_terminal_sqrt"], "cost.q_terminal_sqrt", -1, n)
                          : s.q_sqrt;
  s.r_sqrt = find(cost, "r_sqrt") ? shaped(cost["r_sqrt"], "cost.r_sqrt", -1, m)
                                  : Matrix(Matrix::Identity(m, m));

  const Json& controls = find(root, "controls") ? root["controls"] : none;
  only_keys(controls, "controls", {"lower", "upper", "initial"});
  s.u_lower = find(controls, "lower")
                  ? vector_of(controls["lower"], "controls.lower", -conic::kInf, true)
                  : Vector::Constant(m, -conic::kInf);
  s.u_upper = find(controls, "upper")
                  ? vector_of(controls["upper"], "controls.upper", conic::kInf, true)
                  : Vector::Constant(m, conic::kInf);
  if (s.u_lower.size() != m) fail("controls.lower", "expected " + std::to_string(m) + " entries");
  if (s.u_upper.size() != m) fail("controls.upper", "expected " + std::to_string(m) + " entries");
  if (!(s.u_lower.array() <= s.u_upper.array()).all()) fail("controls", "lower exceeds upper");
  if (const Json* init = find(controls, "initial")) {
    if (!init->is_array()) fail("controls.initial", "expected an array of segments");
    for (std::size_t i = 0; i < init->size(); ++i) {
      const std::string p = index("controls.initial", i);
      only_keys((*init)[i], p, {"u", "stages"});
      ControlSegment seg{sized(need((*init)[i], p, "u"), join(p, "u"), m),
                         positive_int(need((*init)[i], p, "stages"), join(p, "stages"))};
      if (!((seg.u.array() >= s.u_lower.array()) && (seg.u.array() <= s.u_upper.array())).all()) {
        fail(join(p, "u"), "outside the control bounds");
      }
      s.init_controls.push_back(std::move(seg));
    }
  }

  const Json& solver = find(root, "solver") ? root["solver"] : none;
  only_keys(solver, "solver", {"feasibility", "gap", "max_iterations", "recheck"});
  if (const Json* v = find(solver, "feasibility")) s.solver.feasibility = number(*v, "solver.feasibility");
  if (const Json* v = find(solver, "gap")) s.solver.gap = number(*v, "solver.gap");
  if (const Json* v = find(solver, "max_iterations")) {
    s.solver.max_iterations = positive_int(*v, "solver.max_iterations");
  }
  if (const Json* v = find(solver, "recheck")) s.solver.recheck = number(*v, "solver.recheck");
  if (!(s.solver.feasibility > 0.0)) fail("solver.feasibility", "must be positive");
  if (!(s.solver.gap > 0.0)) fail("solver.gap", "must be positive");

  const Json& scr = find(root, "scr") ? root["scr"] : none;
  only_keys(scr, "scr", {"tolerance", "max_iterations", "eps_safe"});
  if (const Json* v = find(scr, "tolerance")) s.scr_tolerance = number(*v, "scr.tolerance");
  if (const Json* v = find(scr, "max_iterations")) s.scr_max_iterations = positive_int(*v, "scr.max_iterations");
  if (const Json* v = find(scr, "eps_safe")) s.eps_safe = nonnegative(*v, "scr.eps_safe");
  if (!(s.scr_tolerance > 0.0)) fail("scr.tolerance", "must be positive");

  const Json& mpc = find(root, "mpc") ? root["mpc"] : none;
  only_keys(mpc, "mpc", {"steps", "period"});
  s.mpc_steps = find(mpc, "steps") ? positive_int(mpc["steps"], "mpc.steps") : s.horizon;
  s.mpc_period = find(mpc, "period") ? positive_int(mpc["period"], "mpc.period") : 1;

  const Json& verify = find(root, "verify") ? root["verify"] : none;
  only_keys(verify, "verify", {"samples"});
  if (const Json* v = find(verify, "samples")) s.verify_samples = positive_int(*v, "verify.samples");

  const Json& bench = find(root, "bench") ? root["bench"] : none;
  only_keys(bench, "bench", {"horizons"});
  if (const Json* v = find(bench, "horizons")) {
    if (!v->is_array() || v->empty()) fail("bench.horizons", "expected a nonempty array");
    for (std::size_t i = 0; i < v->size(); ++i) {
      s.bench_horizons.push_back(positive_int((*v)[i], index("bench.horizons", i)));
    }
  } else {
    s.bench_horizons = {s.horizon};
  }

  if (const Json* v = find(root, "seed")) {
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
      fail("seed", "expected a nonnegative integer");
    }
    s.seed = v->get<std::uint64_t>();
  }

  // Whatever the field checks above cannot see (PSD weights, bounds vs x0).
  try {
    build_problem(s).validate();
  } catch (const Error& e) {
    fail("<scenario>", e.what());
  }
  return s;
}

}  // namespace

void register_model(const std::string& name, ModelFactory factory) {
  const std::lock_guard lock(registry_mutex());
  registry()[name] = std::move(factory);
}

bool model_registered(const std::string& name) {
  const std::lock_guard lock(registry_mutex());
  return registry().contains(name);
}

FeedbackModel make_model(const ModelSpec& spec, int horizon) {
  ModelFactory factory;
  {
    const std::lock_guard lock(registry_mutex());
    const auto it = registry().find(spec.name);
    require(it != registry().end(), ErrorKind::kInput, "unknown model '" + spec.name + "'");
    factory = it->second;
  }
  return factory(spec, horizon);
}

Scenario parse_scenario(const std::string& text, const std::string& source) {
  Json root;
  try {
    root = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::kInput, source + ": " + line_column(text, e.byte == 0 ? 0 : e.byte - 1) +
                                       ": malformed document");
  }
  try {
    return parse_document(root);
  } catch (const Error& e) {
    throw Error(e.kind(), source + ": " + e.what());
  }
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::kInput, path.string() + ": cannot open scenario file");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_scenario(buffer.str(), path.string());
}

std::string emit_scenario(const Scenario& s) {
  Json root;
  root["schema_version"] = s.schema_version;
  root["name"] = s.name;
  root["model"] = model_json(s.model);
  root["horizon"] = s.horizon;
  root["x0"] = to_json(s.x0);
  Json unc;
  unc["sigma_init"] = to_json(s.sigma_init);
  unc["gamma_init"] = s.gamma_init;
  if (s.sigma_dyn.size() == 1) {
    unc["sigma_dyn"] = to_json(s.sigma_dyn.front());
  } else {
    unc["sigma_dyn"] = Json::array();
    for (const auto& m : s.sigma_dyn) unc["sigma_dyn"].push_back(to_json(m));
  }
  unc["gamma_dyn"] = s.gamma_dyn;
  root["uncertainty"] = unc;
  root["obstacles"] = Json::array();
  for (const auto& o : s.obstacles) root["obstacles"].push_back(obstacle_json(o));
  root["cost"] = Json{{"q_sqrt", to_json(s.q_sqrt)},
                      {"q_terminal_sqrt", to_json(s.q_terminal_sqrt)},
                      {"r_sqrt", to_json(s.r_sqrt)}};
  Json controls{{"lower", to_json(s.u_lower)}, {"upper", to_json(s.u_upper)}};
  controls["initial"] = Json::array();
  for (const auto& seg : s.init_controls) {
    controls["initial"].push_back(Json{{"u", to_json(seg.u)}, {"stages", seg.stages}});
  }
  root["controls"] = controls;
  root["solver"] = Json{{"feasibility", s.solver.feasibility},
                        {"gap", s.solver.gap},
                        {"max_iterations", s.solver.max_iterations},
                        {"recheck", s.solver.recheck}};
  root["scr"] = Json{{"tolerance", s.scr_tolerance},
                     {"max_iterations", s.scr_max_iterations},
                     {"eps_safe", s.eps_safe}};
  root["mpc"] = Json{{"steps", s.mpc_steps}, {"period", s.mpc_period}};
  root["verify"] = Json{{"samples", s.verify_samples}};
  root["bench"] = Json{{"horizons", s.bench_horizons}};
  root["seed"] = s.seed;
  return root.dump(2) + "\n";
}

RobustProblem build_problem(const Scenario& s, int horizon) {
  const int N = horizon > 0 ? horizon : s.horizon;
  FeedbackModel model = make_model(s.model, N);
  std::vector<Matrix> sigma_dyn = s.sigma_dyn;
  if (sigma_dyn.size() > 1 && static_cast<int>(sigma_dyn.size()) != N) {
    // Per-stage covariances at another horizon: hold the last one.
    sigma_dyn.resize(static_cast<std::size_t>(N), s.sigma_dyn.back());
  }
  const int r = model.dims().r;
  return {std::move(model),
          s.x0,
          Vector::Zero(static_cast<Eigen::Index>(r) * N),
          {s.sigma_init, std::move(sigma_dyn), s.gamma_init, s.gamma_dyn},
          s.obstacles,
          {{s.q_sqrt}, s.q_terminal_sqrt, {s.r_sqrt}},
          s.u_lower,
          s.u_upper};
}

Vector initial_controls(const Scenario& s, int horizon) {
  const int N = horizon > 0 ? horizon : s.horizon;
  const auto m = s.u_lower.size();
  Vector u = Vector::Zero(m * N);
  int t = 0;
  for (const auto& seg : s.init_controls) {
    for (int k = 0; k < seg.stages && t < N; ++k, ++t) u.segment(m * t, m) = seg.u;
  }
  return u;
}

ScrOptions scr_options(const Scenario& s) {
  ScrOptions options;
  options.tolerance = s.scr_tolerance;
  options.max_iterations = s.scr_max_iterations;
  options.restriction.eps_safe = s.eps_safe;
  options.solver = s.solver;
  return options;
}

}  // namespace scr

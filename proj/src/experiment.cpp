#include "vsflow/experiment.hpp"

#include "vsflow/metrics.hpp"
#include "vsflow/trajectory_io.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <exception>
#include <fstream>
#include <limits>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace vsflow {

namespace {

struct KindName {
  ExperimentKind kind;
  const char* name;
};

constexpr KindName kKinds[] = {
    {ExperimentKind::logistic, "logistic"},
    {ExperimentKind::regression, "regression"},
    {ExperimentKind::regression_conditioned, "regression-conditioned"},
    {ExperimentKind::kl, "kl"},
    {ExperimentKind::general_norm, "general-norm"},
    {ExperimentKind::elementwise, "elementwise"},
    {ExperimentKind::tied, "tied"},
    {ExperimentKind::multirow, "multirow"},
    {ExperimentKind::metrics_analyze, "metrics-analyze"},
};

}  // namespace

std::string_view to_string(ExperimentKind k) {
  for (const auto& e : kKinds)
    if (e.kind == k) return e.name;
  return "?";
}

ExperimentKind experiment_kind_from_string(std::string_view name) {
  for (const auto& e : kKinds)
    if (name == e.name) return e.kind;
  throw ConfigError("unknown experiment '" + std::string(name) + "'");
}

// --- settings ---------------------------------------------------------------

namespace {

std::string normalize_key(std::string key) {
  std::replace(key.begin(), key.end(), '-', '_');
  std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
  return key;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

}  // namespace

Settings read_settings_file(const std::filesystem::path& path) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  Settings out;
  auto put = [&](const std::string& key, const std::string& value) {
    const std::string k = normalize_key(key);
    if (!out.emplace(k, trim(value)).second) throw ConfigError(path.string() + ": key '" + k + "' given twice");
  };
  for (const auto& [key, node] : tree) {
    if (node.empty()) {
      put(key, node.data());
      continue;
    }
    for (const auto& [sub, leaf] : node) {
      if (!leaf.empty()) throw ConfigError(path.string() + ": nested section under [" + key + "]");
      put(sub, leaf.data());
    }
  }
  return out;
}

namespace {

double parse_double(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size()) throw ConfigError("'" + key + "': not a number: '" + v + "'");
  return x;
}

long long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (v.empty() || pos != v.size()) throw ConfigError("'" + key + "': not an integer: '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + key + "': not a boolean: '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v + ",") {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(v)) {
    const auto dash = item.find('-', 1);
    if (dash == std::string::npos) {
      const long long s = parse_int(key, item);
      if (s < 0) throw ConfigError("'" + key + "': negative seed");
      out.push_back(static_cast<std::uint64_t>(s));
      continue;
    }
    const long long a = parse_int(key, item.substr(0, dash)), b = parse_int(key, item.substr(dash + 1));
    if (a < 0 || b < a) throw ConfigError("'" + key + "': bad range '" + item + "'");
    for (long long s = a; s <= b; ++s) out.push_back(static_cast<std::uint64_t>(s));
  }
  if (out.empty()) throw ConfigError("'" + key + "': empty seed list");
  return out;
}

ScoreMap parse_map(const std::string& key, const std::string& v) {
  try {
    return score_map_from_string(v);
  } catch (const InvalidInput& e) {
    throw ConfigError("'" + key + "': " + e.what());
  }
}

void apply_kind_defaults(ExperimentConfig& c) {
  IntegratorConfig& ic = c.integrator;
  auto geometric = [&] {
    ic.t_end = 1e5;
    ic.record.mode = RecordMode::geometric;
  };
  auto linear = [&] {
    ic.t_end = 1e3;
    ic.record.mode = RecordMode::linear;
  };
  switch (c.kind) {
    case ExperimentKind::logistic: geometric(); break;
    case ExperimentKind::regression:
      linear();
      c.init.scheme = InitScheme::assumption2;
      break;
    case ExperimentKind::regression_conditioned:
      linear();
      c.init.scheme = InitScheme::assumption2;
      c.p = 8;
      c.kappas = {1, 2, 3, 4, 5};
      break;
    case ExperimentKind::kl:
      linear();
      c.init.scheme = InitScheme::kl_interior;
      c.init.scale = 0.1;
      break;
    case ExperimentKind::general_norm:
    case ExperimentKind::elementwise:
      geometric();
      c.init.logit_offset = 2.0;
      break;
    case ExperimentKind::tied:
      geometric();
      c.p = 8;
      c.init.scale = 0.1;
      break;
    case ExperimentKind::multirow:
      geometric();
      c.p = 6;
      break;
    case ExperimentKind::metrics_analyze: break;
  }
}

Method parse_method(const std::string& key, const std::string& v) {
  if (v == "rk4-fixed") return Method::rk4_fixed;
  if (v == "rk45-adaptive") return Method::rk45_adaptive;
  throw ConfigError("'" + key + "': expected rk4-fixed or rk45-adaptive, got '" + v + "'");
}

RecordMode parse_record(const std::string& key, const std::string& v) {
  if (v == "stride") return RecordMode::stride;
  if (v == "linear") return RecordMode::linear;
  if (v == "geometric") return RecordMode::geometric;
  throw ConfigError("'" + key + "': expected stride, linear or geometric, got '" + v + "'");
}

const char* method_name(Method m) { return m == Method::rk4_fixed ? "rk4-fixed" : "rk45-adaptive"; }

const char* record_name(RecordMode m) {
  switch (m) {
    case RecordMode::stride: return "stride";
    case RecordMode::linear: return "linear";
    case RecordMode::geometric: return "geometric";
  }
  return "?";
}

}  // namespace

ExperimentConfig make_config(const Settings& raw) {
  Settings s;
  for (const auto& [k, v] : raw)
    if (!s.emplace(normalize_key(k), v).second) throw ConfigError("key '" + normalize_key(k) + "' given twice");

  ExperimentConfig c;
  if (auto it = s.find("experiment"); it != s.end()) c.kind = experiment_kind_from_string(it->second);
  apply_kind_defaults(c);

  bool spacing_set = false, kappa_set = false, coords_set = false, f_set = false, g_set = false;
  for (const auto& [key, v] : s) {
    if (key == "experiment") continue;
    else if (key == "p") c.p = parse_int(key, v);
    else if (key == "seeds") c.seeds = parse_seeds(key, v);
    else if (key == "jobs") c.jobs = static_cast<int>(parse_int(key, v));
    else if (key == "out") c.out = v;
    else if (key == "verifiers") c.verifiers = split_list(v);
    else if (key == "target_norm") c.target_norm = parse_double(key, v);
    else if (key == "coords") c.coords = v, coords_set = true;
    else if (key == "f") c.f = parse_map(key, v), f_set = true;
    else if (key == "g") c.g = parse_map(key, v), g_set = true;
    else if (key == "t" || key == "rows") c.rows = parse_int(key, v);
    else if (key == "d") c.d = parse_int(key, v);
    else if (key == "kappa") {
      c.kappas.clear();
      for (const auto& item : split_list(v)) c.kappas.push_back(parse_double(key, item));
      kappa_set = true;
    }
    else if (key == "onehot_eps") c.verifier_options.onehot_eps = parse_double(key, v);
    else if (key == "loss_tol") c.verifier_options.loss_tol = parse_double(key, v);
    else if (key == "sink_eps") c.verifier_options.sink_eps = parse_double(key, v);
    else if (key == "partial_eps") c.verifier_options.partial_eps = parse_double(key, v);
    else if (key == "conservation_tol") c.verifier_options.conservation_tol = parse_double(key, v);
    else if (key == "per_row_argmax") c.verifier_options.per_row_argmax = parse_bool(key, v);
    else if (key == "scheme") {
      try {
        c.init.scheme = init_scheme_from_string(v);
      } catch (const InvalidInput& e) {
        throw ConfigError("'scheme': " + std::string(e.what()));
      }
    }
    else if (key == "scale") c.init.scale = parse_double(key, v);
    else if (key == "logit_offset") c.init.logit_offset = parse_double(key, v);
    else if (key == "orthogonal_scale") c.init.orthogonal_scale = parse_double(key, v);
    else if (key == "method") c.integrator.method = parse_method(key, v);
    else if (key == "dt") c.integrator.dt = parse_double(key, v);
    else if (key == "rtol") c.integrator.rtol = parse_double(key, v);
    else if (key == "atol") c.integrator.atol = parse_double(key, v);
    else if (key == "dt_min") c.integrator.dt_min = parse_double(key, v);
    else if (key == "dt_max") c.integrator.dt_max = parse_double(key, v);
    else if (key == "t_end") c.integrator.t_end = parse_double(key, v);
    else if (key == "record") c.integrator.record.mode = parse_record(key, v);
    else if (key == "record_first") c.integrator.record.first = parse_double(key, v);
    else if (key == "record_per_decade") c.integrator.record.per_decade = static_cast<int>(parse_int(key, v));
    else if (key == "record_spacing") c.integrator.record.spacing = parse_double(key, v), spacing_set = true;
    else if (key == "record_stride") c.integrator.record.stride = static_cast<int>(parse_int(key, v));
    else if (key == "tensors") {
      c.metrics.tensors.clear();
      for (const auto& item : split_list(v)) c.metrics.tensors.emplace_back(item);
    }
    else if (key == "bos_key") c.metrics.bos_key = static_cast<std::size_t>(parse_int(key, v));
    else if (key == "query_begin") c.metrics.query_begin = static_cast<long>(parse_int(key, v));
    else if (key == "query_end") c.metrics.query_end = static_cast<long>(parse_int(key, v));
    else if (key == "threshold") c.metrics.threshold = parse_double(key, v);
    else throw ConfigError("unknown key '" + key + "'");
  }
  if (!spacing_set) c.integrator.record.spacing = c.integrator.t_end / 1000.0;

  const ExperimentKind k = c.kind;
  if (c.jobs < 1) throw ConfigError("'jobs' must be at least 1");
  if (k == ExperimentKind::metrics_analyze) {
    if (c.metrics.tensors.empty()) throw ConfigError("metrics-analyze needs 'tensors'");
    return c;
  }
  if (c.p < 2) throw ConfigError("'p' must be at least 2");
  if (!(c.target_norm > 0)) throw ConfigError("'target_norm' must be positive");
  if (coords_set && k != ExperimentKind::logistic && k != ExperimentKind::regression)
    throw ConfigError("'coords' applies to logistic and regression only");
  if (c.coords != "reduced" && c.coords != "full") throw ConfigError("'coords' must be reduced or full");
  if (f_set && k != ExperimentKind::general_norm) throw ConfigError("'f' applies to general-norm only");
  if (g_set && k != ExperimentKind::elementwise) throw ConfigError("'g' applies to elementwise only");
  if (k == ExperimentKind::general_norm && is_elementwise(c.f))
    throw ConfigError("'f' must be a normalization map (exp, identity, square)");
  if (k == ExperimentKind::elementwise && !is_elementwise(c.g))
    throw ConfigError("'g' must be an elementwise map (sigmoid, relu)");
  if (kappa_set && k != ExperimentKind::regression_conditioned)
    throw ConfigError("'kappa' applies to regression-conditioned only");
  if (c.kappas.empty()) throw ConfigError("'kappa' needs at least one value");
  for (double kappa : c.kappas)
    if (!(kappa >= 1.0)) throw ConfigError("'kappa' values must be >= 1");
  if (k == ExperimentKind::multirow && c.rows < 1) throw ConfigError("'T' must be at least 1");
  if (c.d < 0) throw ConfigError("'d' must be non-negative");
  if (c.init.scale <= 0) throw ConfigError("'scale' must be positive");
  try {
    c.integrator.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  for (const auto& id : c.verifiers)
    if (std::find(verifier_ids().begin(), verifier_ids().end(), id) == verifier_ids().end())
      throw ConfigError("unknown verifier '" + id + "'");
  return c;
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  auto join = [](const auto& items, auto fmt) {
    std::string s;
    for (const auto& x : items) s += (s.empty() ? "" : ",") + fmt(x);
    return s;
  };
  nlohmann::json j;
  j["experiment"] = std::string(to_string(c.kind));
  j["seeds"] = join(c.seeds, [](std::uint64_t x) { return std::to_string(x); });
  if (!c.verifiers.empty()) j["verifiers"] = join(c.verifiers, [](const std::string& x) { return x; });
  if (c.kind == ExperimentKind::metrics_analyze) {
    j["tensors"] = join(c.metrics.tensors, [](const std::filesystem::path& x) { return x.string(); });
    j["bos_key"] = std::to_string(c.metrics.bos_key);
    j["query_begin"] = std::to_string(c.metrics.query_begin);
    j["query_end"] = std::to_string(c.metrics.query_end);
    j["threshold"] = format_double(c.metrics.threshold);
    return j;
  }
  j["p"] = std::to_string(c.p);
  j["target_norm"] = format_double(c.target_norm);
  if (c.kind == ExperimentKind::logistic || c.kind == ExperimentKind::regression) j["coords"] = c.coords;
  if (c.kind == ExperimentKind::general_norm) j["f"] = std::string(to_string(c.f));
  if (c.kind == ExperimentKind::elementwise) j["g"] = std::string(to_string(c.g));
  if (c.kind == ExperimentKind::multirow) {
    j["T"] = std::to_string(c.rows);
    j["d"] = std::to_string(c.d);
  }
  if (c.kind == ExperimentKind::regression_conditioned) j["kappa"] = join(c.kappas, format_double);
  const auto& o = c.verifier_options;
  j["onehot_eps"] = format_double(o.onehot_eps);
  j["loss_tol"] = format_double(o.loss_tol);
  j["sink_eps"] = format_double(o.sink_eps);
  j["partial_eps"] = format_double(o.partial_eps);
  j["conservation_tol"] = format_double(o.conservation_tol);
  j["per_row_argmax"] = o.per_row_argmax ? "true" : "false";
  j["scheme"] = std::string(to_string(c.init.scheme));
  j["scale"] = format_double(c.init.scale);
  j["logit_offset"] = format_double(c.init.logit_offset);
  j["orthogonal_scale"] = format_double(c.init.orthogonal_scale);
  const auto& ic = c.integrator;
  j["method"] = method_name(ic.method);
  j["dt"] = format_double(ic.dt);
  j["rtol"] = format_double(ic.rtol);
  j["atol"] = format_double(ic.atol);
  j["dt_min"] = format_double(ic.dt_min);
  j["dt_max"] = format_double(ic.dt_max);
  j["t_end"] = format_double(ic.t_end);
  j["record"] = record_name(ic.record.mode);
  j["record_first"] = format_double(ic.record.first);
  j["record_per_decade"] = std::to_string(ic.record.per_decade);
  j["record_spacing"] = format_double(ic.record.spacing);
  j["record_stride"] = std::to_string(ic.record.stride);
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config JSON must be an object");
  Settings s;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ConfigError("config JSON value for '" + k + "' must be a string");
    s[k] = v.get<std::string>();
  }
  return make_config(s);
}

std::vector<std::string> default_verifiers(const ExperimentConfig& c) {
  switch (c.kind) {
    case ExperimentKind::logistic:
      return {"order_preservation", "repulsion",    "lyapunov",       "ratio_bound",      "polarization_growth",
              "onehot_limit",       "vanishing_loss", "nonmaximal_rates", "conservation", "descent"};
    case ExperimentKind::regression: {
      std::vector<std::string> v{"order_preservation", "repulsion", "exponential_decay"};
      if (c.coords == "full") v.push_back("rank_one");
      v.insert(v.end(), {"conservation", "descent"});
      return v;
    }
    case ExperimentKind::regression_conditioned: return {"conservation", "descent"};
    case ExperimentKind::kl: return {"partial_polarization", "conservation", "descent"};
    case ExperimentKind::general_norm: return {"general_norm_nocrossing", "conservation", "descent"};
    case ExperimentKind::elementwise: return {"descent"};
    case ExperimentKind::tied: return {"massive_activation", "descent"};
    case ExperimentKind::multirow: return {"sink_formation", "conservation", "descent"};
    case ExperimentKind::metrics_analyze: return {};
  }
  return {};
}

SimplexVector make_kl_target(Eigen::Index p, std::uint64_t seed) {
  if (p < 2) throw InvalidInput("target needs p >= 2");
  std::mt19937_64 rng(seed ^ 0x7f4a7c159e3779b9ULL);
  std::uniform_real_distribution<double> unif(0.5, 1.5);
  Vec w(p);
  for (Eigen::Index i = 0; i < p; ++i) w[i] = unif(rng);
  return SimplexVector::checked(w / w.sum());
}

FieldPtr make_experiment_field(const ExperimentConfig& c, std::uint64_t seed, double kappa) {
  const Vec target = make_target(c.p, seed, c.target_norm);
  const bool full = c.coords == "full";
  switch (c.kind) {
    case ExperimentKind::logistic: return full ? make_logistic_full_field(target) : make_logistic_reduced_field(target);
    case ExperimentKind::regression:
      return full ? make_regression_full_field(target) : make_regression_reduced_field(target);
    case ExperimentKind::regression_conditioned:
      return make_regression_conditioned_field(target, make_conditioned_design(c.p, kappa, seed));
    case ExperimentKind::kl: return make_kl_field(make_kl_target(c.p, seed));
    case ExperimentKind::general_norm: return make_general_norm_field(target, c.f);
    case ExperimentKind::elementwise: return make_elementwise_field(target, c.g);
    case ExperimentKind::tied: return make_tied_field(target);
    case ExperimentKind::multirow:
      return make_multirow_field(make_target(c.d > 0 ? c.d : c.p, seed, c.target_norm), c.rows, c.p);
    case ExperimentKind::metrics_analyze: break;
  }
  throw ConfigError("metrics-analyze has no field");
}

std::string artifact_name(const ExperimentConfig& c, double kappa, std::uint64_t seed, const std::string& what,
                          const std::string& ext) {
  std::string prefix;
  if (c.kind == ExperimentKind::regression_conditioned) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "kappa%g_", kappa);
    prefix = buf;
  }
  return prefix + what + "_seed" + std::to_string(seed) + ext;
}

// --- running ------------------------------------------------------------------

namespace {

struct Point {
  double kappa = 1.0;
  std::uint64_t seed = 0;
};

struct PointResult {
  bool halted = false;
  nlohmann::json run;  // aggregate entry
  std::vector<std::pair<std::string, bool>> verdicts;
  std::vector<std::string> failed_reports;
};

std::vector<Point> points(const ExperimentConfig& c) {
  std::vector<Point> out;
  for (double kappa : c.kappas)
    for (std::uint64_t seed : c.seeds) out.push_back({kappa, seed});
  return out;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

VerifierReport checked_verifier(const std::string& id, const Trajectory& traj, const VerifierOptions& opts) {
  try {
    return run_verifier(id, traj, opts);
  } catch (const InapplicableVerifier& e) {
    return {id, false, 0.0, {{"reason", std::string("inapplicable: ") + e.what()}}};
  } catch (const InvalidInput& e) {
    return {id, false, 0.0, {{"reason", e.what()}}};
  }
}

PointResult finish_point(const ExperimentConfig& c, const Point& pt, const Trajectory& traj,
                         const nlohmann::json& halt) {
  PointResult r;
  r.halted = !halt.is_null();
  nlohmann::json& run = r.run;
  run["seed"] = pt.seed;
  if (c.kind == ExperimentKind::regression_conditioned) run["kappa"] = pt.kappa;
  run["halted"] = halt;
  const auto& b = traj.back();
  run["final_t"] = b.t;
  run["final_loss"] = std::isfinite(b.obs.loss) ? nlohmann::json(b.obs.loss) : nlohmann::json(nullptr);
  run["final_entropy"] = b.obs.entropy;
  run["max_sigma"] = b.obs.sigma.maxCoeff();
  nlohmann::json verdicts = nlohmann::json::object();
  const auto ids = c.verifiers.empty() ? default_verifiers(c) : c.verifiers;
  for (const auto& id : ids) {
    const VerifierReport rep = checked_verifier(id, traj, c.verifier_options);
    const std::string name = artifact_name(c, pt.kappa, pt.seed, "report", "_" + id + ".json");
    write_json(c.out / name, to_json(rep));
    verdicts[id] = rep.passed;
    r.verdicts.emplace_back(id, rep.passed);
    if (!rep.passed) r.failed_reports.push_back(name);
  }
  run["verifiers"] = verdicts;
  return r;
}

PointResult run_point(const ExperimentConfig& c, const Point& pt) {
  const FieldPtr field = make_experiment_field(c, pt.seed, pt.kappa);
  InitSpec spec = c.init;
  spec.seed = pt.seed;
  spec.p = c.p;
  const Vec x0 = init_state(spec, *field);

  Trajectory traj;
  nlohmann::json halt;
  try {
    traj = integrate(field, x0, c.integrator);
  } catch (const StiffnessError& e) {
    traj = e.partial();
    halt = {{"kind", "stiffness"}, {"reason", e.what()}};
  } catch (const DomainViolation& e) {
    traj = e.partial();
    halt = {{"kind", "domain-violation"}, {"reason", e.what()}};
  }
  if (traj.samples.empty()) throw Error("integration recorded no samples");

  {
    std::ofstream os(c.out / artifact_name(c, pt.kappa, pt.seed, "traj", ".csv"));
    write_trajectory_csv(os, traj);
  }
  {
    std::ofstream os(c.out / artifact_name(c, pt.kappa, pt.seed, "state", ".csv"));
    write_state_csv(os, traj);
  }
  nlohmann::json summary = summary_json(traj);
  summary["seed"] = pt.seed;
  if (c.kind == ExperimentKind::regression_conditioned) summary["kappa"] = pt.kappa;
  summary["halted"] = halt;
  write_json(c.out / artifact_name(c, pt.kappa, pt.seed, "summary", ".json"), summary);
  return finish_point(c, pt, traj, halt);
}

PointResult verify_point(const ExperimentConfig& c, const Point& pt) {
  const FieldPtr field = make_experiment_field(c, pt.seed, pt.kappa);
  const CsvTable traj_table = read_csv(c.out / artifact_name(c, pt.kappa, pt.seed, "traj", ".csv"));
  const CsvTable state_table = read_csv(c.out / artifact_name(c, pt.kappa, pt.seed, "state", ".csv"));
  const Trajectory traj = rebuild_trajectory(field, c.integrator, traj_table, state_table);
  nlohmann::json halt;
  std::ifstream is(c.out / artifact_name(c, pt.kappa, pt.seed, "summary", ".json"));
  if (is) {
    const auto summary = nlohmann::json::parse(is, nullptr, false);
    if (summary.is_object() && summary.contains("halted")) halt = summary["halted"];
  }
  return finish_point(c, pt, traj, halt);
}

template <class Fn>
std::vector<PointResult> parallel_points(const ExperimentConfig& c, Fn fn) {
  const auto pts = points(c);
  std::vector<PointResult> results(pts.size());
  std::vector<std::exception_ptr> errors(pts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < pts.size();) {
      try {
        results[i] = fn(c, pts[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(c.jobs), pts.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

RunResult aggregate(const ExperimentConfig& c, const std::vector<PointResult>& results) {
  RunResult out;
  nlohmann::json& agg = out.aggregate;
  agg["experiment"] = std::string(to_string(c.kind));
  bool halted = false, failed = false;
  auto runs = nlohmann::json::array();
  std::map<std::string, std::pair<int, int>> counts;
  std::vector<std::string> ids;
  auto failed_reports = nlohmann::json::array();
  for (const auto& r : results) {
    runs.push_back(r.run);
    halted = halted || r.halted;
    for (const auto& [id, ok] : r.verdicts) {
      if (!counts.count(id)) ids.push_back(id);
      auto& [pass, total] = counts[id];
      pass += ok;
      ++total;
      failed = failed || !ok;
    }
    for (const auto& f : r.failed_reports) failed_reports.push_back(f);
  }
  nlohmann::json pass = nlohmann::json::object();
  for (const auto& id : ids) pass[id] = {{"passed", counts[id].first}, {"total", counts[id].second}};
  agg["pass_counts"] = pass;
  agg["failed_reports"] = failed_reports;
  agg["runs"] = runs;

  if (c.kind == ExperimentKind::regression_conditioned) {
    auto by_kappa = nlohmann::json::array();
    std::vector<double> means;
    for (double kappa : c.kappas) {
      double sum = 0;
      int n = 0;
      for (const auto& r : results)
        if (r.run["kappa"].get<double>() == kappa) sum += r.run["final_entropy"].get<double>(), ++n;
      means.push_back(sum / n);
      by_kappa.push_back({{"kappa", kappa}, {"mean_final_entropy", means.back()}});
    }
    bool monotone = true;
    for (std::size_t i = 1; i < means.size(); ++i) monotone = monotone && means[i] <= means[i - 1];
    agg["entropy_by_kappa"] = by_kappa;
    agg["entropy_monotone_nonincreasing"] = monotone;
  }
  out.status = halted ? exit_integrator : failed ? exit_verifier_failed : exit_ok;
  agg["status"] = out.status;
  write_json(c.out / "aggregate.json", agg);
  return out;
}

std::string stem_of(const std::filesystem::path& p) {
  std::string s = p.filename().string();
  for (const char* ext : {".json", ".bin"})
    if (s.size() > std::strlen(ext) && s.ends_with(ext)) return s.substr(0, s.size() - std::strlen(ext));
  return p.stem().string();
}

}  // namespace

std::vector<std::filesystem::path> analyze_tensor(const std::filesystem::path& tensor, const MetricsOptions& opts,
                                                  const std::filesystem::path& out) {
  const AttentionTensor t = load_attention_tensor(tensor);
  std::optional<QueryRange> range;
  if (opts.query_begin >= 0 || opts.query_end >= 0) {
    QueryRange q = default_sink_queries(t);
    if (opts.query_begin >= 0) q.begin = static_cast<std::size_t>(opts.query_begin);
    if (opts.query_end >= 0) q.end = static_cast<std::size_t>(opts.query_end);
    range = q;
  }
  std::filesystem::create_directories(out);
  const std::string stem = stem_of(tensor);
  const auto sparsity_path = out / (stem + "_sparsity.csv");
  const auto sink_path = out / (stem + "_sink.csv");
  {
    std::ofstream os(sparsity_path);
    write_score_csv(os, sparsity_score(t, opts.threshold));
  }
  {
    std::ofstream os(sink_path);
    write_score_csv(os, sink_score(t, range, opts.bos_key, opts.threshold));
  }
  return {sparsity_path, sink_path};
}

RunResult run_experiment(const ExperimentConfig& c) {
  std::filesystem::create_directories(c.out);
  write_json(c.out / "config.json", config_to_json(c));
  if (c.kind == ExperimentKind::metrics_analyze) {
    RunResult r;
    auto files = nlohmann::json::array();
    for (const auto& t : c.metrics.tensors)
      for (const auto& f : analyze_tensor(t, c.metrics, c.out)) files.push_back(f.filename().string());
    r.aggregate = {{"experiment", "metrics-analyze"}, {"outputs", files}, {"status", 0}};
    write_json(c.out / "aggregate.json", r.aggregate);
    return r;
  }
  return aggregate(c, parallel_points(c, run_point));
}

RunResult verify_experiment(const ExperimentConfig& c) {
  if (c.kind == ExperimentKind::metrics_analyze) throw ConfigError("metrics-analyze has nothing to verify");
  return aggregate(c, parallel_points(c, verify_point));
}

void emit_figure_data(const std::vector<std::filesystem::path>& files, std::ostream& os) {
  if (files.empty()) throw SchemaError("no trajectory files");
  static const std::regex seed_re("seed([0-9]+)");
  Eigen::Index p0 = -1;
  os << "seed,t,series,index,value\n";
  for (const auto& path : files) {
    const CsvTable table = read_csv(path);
    const Eigen::Index p = trajectory_table_p(table);
    if (p0 >= 0 && p != p0) throw SchemaError(path.string() + ": p = " + std::to_string(p) + ", expected " + std::to_string(p0));
    p0 = p;
    std::smatch m;
    const std::string name = path.filename().string();
    const std::string seed = std::regex_search(name, m, seed_re) ? m[1].str() : "0";
    static const char* scalars[] = {"loss", "gamma", "int_gamma", "entropy"};
    static const char* series[] = {"sigma", "u", "a"};
    for (const auto& row : table.rows) {
      const std::string lead = seed + "," + format_double(row[0]) + ",";
      for (int k = 0; k < 4; ++k) os << lead << scalars[k] << ",0," << format_double(row[1 + k]) << '\n';
      for (int sidx = 0; sidx < 3; ++sidx)
        for (Eigen::Index i = 0; i < p; ++i)
          os << lead << series[sidx] << ',' << i << ',' << format_double(row[5 + sidx * p + i]) << '\n';
    }
  }
}

}  // namespace vsflow

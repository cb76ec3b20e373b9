// vsflow: run, verify, analyze and export gradient-flow experiments.

#include "vsflow/experiment.hpp"
#include "vsflow/trajectory_io.hpp"

#include "CLI11.hpp"

#include <fstream>
#include <iostream>

using namespace vsflow;

namespace {

// Config keys exposed as flags; "--t-end" sets t_end and so on.
const char* const kKeys[] = {
    "experiment",   "p",           "seeds",       "jobs",          "out",          "verifiers",
    "target-norm",  "coords",      "f",           "g",             "T",            "d",
    "kappa",        "onehot-eps",  "loss-tol",    "sink-eps",      "partial-eps",  "conservation-tol",
    "per-row-argmax", "scheme",    "scale",       "logit-offset",  "orthogonal-scale",
    "method",       "dt",          "rtol",        "atol",          "dt-min",       "dt-max",
    "t-end",        "record",      "record-first", "record-per-decade", "record-spacing", "record-stride",
    "tensors",      "bos-key",     "query-begin", "query-end",     "threshold",
};

struct Flags {
  std::map<std::string, std::string> values;

  void attach(CLI::App* app, std::initializer_list<std::string> skip = {}) {
    for (const char* key : kKeys) {
      if (std::find(skip.begin(), skip.end(), key) != skip.end()) continue;
      app->add_option(std::string("--") + key, values[key], std::string("config key ") + key);
    }
  }

  void merge_into(Settings& s, CLI::App* app) const {
    for (const auto& [key, value] : values)
      if (app->count(std::string("--") + key) > 0) {
        std::string k = key;
        std::replace(k.begin(), k.end(), '-', '_');
        if (k == "T") k = "t";
        s[k] = value;
      }
  }
};

Settings base_settings(const std::string& config_path) {
  Settings s;
  if (config_path.empty()) return s;
  for (auto [k, v] : read_settings_file(config_path)) s[k] = v;
  return s;
}

void print_result(const RunResult& r, const ExperimentConfig& c) {
  std::cout << "status " << r.status << " (" << c.out.string() << "/aggregate.json)\n";
  if (r.aggregate.contains("failed_reports"))
    for (const auto& f : r.aggregate["failed_reports"]) std::cerr << "failed: " << (c.out / f.get<std::string>()).string() << '\n';
  if (r.aggregate.contains("runs"))
    for (const auto& run : r.aggregate["runs"])
      if (!run["halted"].is_null())
        std::cerr << "halted (seed " << run["seed"] << "): " << run["halted"]["reason"].get<std::string>() << '\n';
}

int run_cmd(const std::string& config_path, const Flags& flags, CLI::App* app) {
  Settings s = base_settings(config_path);
  flags.merge_into(s, app);
  const ExperimentConfig c = make_config(s);
  const RunResult r = run_experiment(c);
  print_result(r, c);
  return r.status;
}

int verify_cmd(const Flags& flags, CLI::App* app) {
  Settings s;
  flags.merge_into(s, app);
  const std::filesystem::path out = s.count("out") ? s["out"] : "out";
  std::ifstream is(out / "config.json");
  if (!is) throw ConfigError("no config.json in " + out.string());
  const auto j = nlohmann::json::parse(is, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError(out.string() + "/config.json is not a JSON object");
  Settings merged;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ConfigError("config.json: '" + k + "' must be a string");
    merged[k] = v.get<std::string>();
  }
  for (const auto& [k, v] : s) merged[k] = v;
  const ExperimentConfig c = make_config(merged);
  const RunResult r = verify_experiment(c);
  print_result(r, c);
  return r.status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-flow simulator and verifier for the value-softmax model"};
  app.require_subcommand(1);

  std::string config_path;
  Flags run_flags;
  auto* run = app.add_subcommand("run", "Integrate an experiment and run its verifiers");
  run->add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  run_flags.attach(run);

  Flags verify_flags;
  auto* verify = app.add_subcommand("verify", "Re-run verifiers on the artifacts in --out");
  verify_flags.attach(verify);

  std::vector<std::string> tensors;
  MetricsOptions mopts;
  std::string analyze_out = ".";
  auto* analyze = app.add_subcommand("analyze", "Sparsity and sink scores of attention tensors");
  analyze->add_option("tensors", tensors, "tensor files (JSON header or nested JSON)")->required();
  analyze->add_option("--out", analyze_out, "output directory");
  analyze->add_option("--bos-key", mopts.bos_key, "key index of the sink token");
  analyze->add_option("--query-begin", mopts.query_begin, "first query position (default 1)");
  analyze->add_option("--query-end", mopts.query_end, "one past the last query position (default Q - 2)");
  analyze->add_option("--threshold", mopts.threshold, "sink threshold");

  std::vector<std::string> traj_files;
  std::string figure_out;
  auto* emit = app.add_subcommand("emit-figure-data", "Long-format CSV of trajectory files");
  emit->add_option("files", traj_files, "trajectory CSV files")->required();
  emit->add_option("-o,--output", figure_out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_config;
  }

  try {
    if (*run) return run_cmd(config_path, run_flags, run);
    if (*verify) return verify_cmd(verify_flags, verify);
    if (*analyze) {
      for (const auto& t : tensors)
        for (const auto& f : analyze_tensor(t, mopts, analyze_out)) std::cout << f.string() << '\n';
      return exit_ok;
    }
    if (*emit) {
      std::vector<std::filesystem::path> files(traj_files.begin(), traj_files.end());
      if (figure_out.empty()) {
        emit_figure_data(files, std::cout);
      } else {
        std::ofstream os(figure_out);
        if (!os) throw ConfigError("cannot write " + figure_out);
        emit_figure_data(files, os);
      }
      return exit_ok;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_config;
  }
  return exit_ok;
}

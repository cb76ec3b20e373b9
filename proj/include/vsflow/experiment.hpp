#pragma once

// Experiment runner behind the CLI: a config names one experiment kind, the
// runner builds the matching field for every (kappa, seed) point, integrates,
// writes per-seed artifacts and verifier reports, then one aggregate file.
//
// Artifacts in `out`:
//   config.json                       resolved config (read back by `verify`)
//   [kappa{k}_]traj_seed{n}.csv       trajectory table
//   [kappa{k}_]state_seed{n}.csv      packed states
//   [kappa{k}_]summary_seed{n}.json   final values and events
//   [kappa{k}_]report_seed{n}_{verifier}.json
//   aggregate.json                    pass counts and per-run status

#include "vsflow/metrics.hpp"
#include "vsflow/theory.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vsflow {

/// Unparseable or inconsistent configuration (exit status 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class ExperimentKind {
  logistic,
  regression,
  regression_conditioned,
  kl,
  general_norm,
  elementwise,
  tied,
  multirow,
  metrics_analyze,
};

std::string_view to_string(ExperimentKind k);
ExperimentKind experiment_kind_from_string(std::string_view name);

enum ExitStatus : int { exit_ok = 0, exit_verifier_failed = 1, exit_config = 2, exit_integrator = 3 };

struct MetricsOptions {
  std::vector<std::filesystem::path> tensors;
  std::size_t bos_key = 0;
  // Negative: the default range [1, Q - 2).
  long query_begin = -1;
  long query_end = -1;
  double threshold = kSinkThreshold;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::logistic;
  Eigen::Index p = 4;
  std::string coords = "reduced";  // logistic and regression: reduced | full
  ScoreMap f = ScoreMap::exp;      // general-norm
  ScoreMap g = ScoreMap::sigmoid;  // elementwise
  Eigen::Index rows = 5;           // multirow T
  Eigen::Index d = 0;              // multirow target dimension, 0 means p
  double target_norm = 0.5;
  std::vector<double> kappas{1.0};  // regression-conditioned sweep
  InitSpec init;                    // seed and p are filled per run
  IntegratorConfig integrator;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int jobs = 1;
  std::filesystem::path out = "out";
  std::vector<std::string> verifiers;  // empty: defaults for the kind
  VerifierOptions verifier_options;
  MetricsOptions metrics;
};

/// Flat key/value settings. Section names in the INI file only organize keys;
/// every key is unique. '-' and '_' are interchangeable in key names.
using Settings = std::map<std::string, std::string>;

/// Reads `key = value` lines (with optional [sections]) into Settings.
/// Throws ConfigError on a syntax error or a repeated key.
Settings read_settings_file(const std::filesystem::path& path);

/// Builds a config from settings: `experiment` selects kind-specific defaults,
/// then every other key is applied. Throws ConfigError for unknown keys, bad
/// values and invalid selector combinations.
ExperimentConfig make_config(const Settings& settings);

/// Settings that reproduce `config` (the content of config.json).
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const nlohmann::json& j);

std::vector<std::string> default_verifiers(const ExperimentConfig& config);

/// The field for one run of `config`.
FieldPtr make_experiment_field(const ExperimentConfig& config, std::uint64_t seed, double kappa);
/// Cross-entropy target: positive seeded weights normalized to sum one.
SimplexVector make_kl_target(Eigen::Index p, std::uint64_t seed);

/// "traj_seed3.csv", or "kappa2_traj_seed3.csv" in a conditioning sweep.
std::string artifact_name(const ExperimentConfig& config, double kappa, std::uint64_t seed, const std::string& what,
                          const std::string& ext);

struct RunResult {
  int status = exit_ok;
  nlohmann::json aggregate;
};

/// Runs every (kappa, seed) point on up to config.jobs threads and writes all
/// artifacts. Status: 3 if any integration halted, else 1 if any verifier
/// failed, else 0.
RunResult run_experiment(const ExperimentConfig& config);

/// Re-runs the verifiers on artifacts previously written to config.out.
/// Throws SchemaError when the files do not match the config.
RunResult verify_experiment(const ExperimentConfig& config);

/// Sparsity and sink scores of one tensor file, written as `<stem>_sparsity.csv`
/// and `<stem>_sink.csv` in `out`. Returns the two output paths.
std::vector<std::filesystem::path> analyze_tensor(const std::filesystem::path& tensor, const MetricsOptions& opts,
                                                  const std::filesystem::path& out);

/// Long-format CSV (seed, t, series, index, value) of trajectory files. The
/// seed is taken from a `seed{n}` suffix of the file name (0 when absent).
/// Throws SchemaError when the files do not share one trajectory schema.
void emit_figure_data(const std::vector<std::filesystem::path>& traj_files, std::ostream& os);

}  // namespace vsflow

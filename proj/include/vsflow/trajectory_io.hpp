#pragma once

// Trajectory artifacts.
//
//   traj CSV   t, loss, gamma, int_gamma, entropy, sigma_*, u_*, a_*
//   state CSV  t, x_0 .. x_{n-1}  (packed state, lets `verify` rebuild samples)
//   summary    JSON with final values and the event log
//
// Floats are written with 17 significant digits so a round trip is exact.

#include "vsflow/flow.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace vsflow {

/// Malformed or mismatched artifact file.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// %.17g, with "nan", "inf" and "-inf" for non-finite values.
std::string format_double(double v);

std::vector<std::string> trajectory_columns(Eigen::Index p);

void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
void write_state_csv(std::ostream& os, const Trajectory& traj);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  /// Index of `name` in the header; throws SchemaError when absent.
  std::size_t column(const std::string& name) const;
};

/// Reads a numeric CSV with a header row. Throws SchemaError on ragged rows,
/// non-numeric cells or an empty header.
CsvTable read_csv(const std::filesystem::path& path);

/// p of a trajectory table, checking that the header is exactly
/// trajectory_columns(p). Throws SchemaError otherwise.
Eigen::Index trajectory_table_p(const CsvTable& table);

nlohmann::json summary_json(const Trajectory& traj);

/// Rebuilds a trajectory from its traj and state tables: observables are
/// recomputed from the stored states with `field`, times and int_gamma are
/// taken from the files. Throws SchemaError when the tables disagree.
Trajectory rebuild_trajectory(const FieldPtr& field, const IntegratorConfig& config, const CsvTable& traj_table,
                              const CsvTable& state_table);

}  // namespace vsflow

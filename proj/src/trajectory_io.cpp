#include "vsflow/trajectory_io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace vsflow {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> trajectory_columns(Eigen::Index p) {
  std::vector<std::string> cols{"t", "loss", "gamma", "int_gamma", "entropy"};
  for (const char* series : {"sigma_", "u_", "a_"})
    for (Eigen::Index i = 0; i < p; ++i) cols.push_back(series + std::to_string(i));
  return cols;
}

namespace {

void write_row(std::ostream& os, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) os << ',';
    os << format_double(values[i]);
  }
  os << '\n';
}

void write_header(std::ostream& os, const std::vector<std::string>& cols) {
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
}

}  // namespace

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const Eigen::Index p = traj.field->p();
  write_header(os, trajectory_columns(p));
  std::vector<double> row;
  for (const auto& s : traj.samples) {
    row = {s.t, s.obs.loss, s.obs.gamma, s.int_gamma, s.obs.entropy};
    for (const Vec* v : {&s.obs.sigma, &s.obs.u, &s.obs.a})
      for (Eigen::Index i = 0; i < p; ++i) row.push_back((*v)[i]);
    write_row(os, row);
  }
}

void write_state_csv(std::ostream& os, const Trajectory& traj) {
  const Eigen::Index n = traj.field->state_size();
  std::vector<std::string> cols{"t"};
  for (Eigen::Index i = 0; i < n; ++i) cols.push_back("x_" + std::to_string(i));
  write_header(os, cols);
  std::vector<double> row;
  for (const auto& s : traj.samples) {
    row.assign(1, s.t);
    for (Eigen::Index i = 0; i < n; ++i) row.push_back(s.state[i]);
    write_row(os, row);
  }
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw SchemaError("missing column '" + name + "'");
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open " + path.string());
  CsvTable table;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw SchemaError(path.string() + ": missing header");
  if (line.back() == '\r') line.pop_back();
  table.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != table.header.size())
      throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(table.header.size()) + " cells");
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) {
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || end != c.c_str() + c.size())
        throw SchemaError(path.string() + ":" + std::to_string(lineno) + ": not a number: '" + c + "'");
      row.push_back(v);
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

Eigen::Index trajectory_table_p(const CsvTable& table) {
  const std::size_t n = table.header.size();
  if (n < 5 || (n - 5) % 3 != 0 || n == 5) throw SchemaError("not a trajectory table");
  const auto p = static_cast<Eigen::Index>((n - 5) / 3);
  if (table.header != trajectory_columns(p)) throw SchemaError("trajectory columns out of order");
  return p;
}

namespace {

nlohmann::json vec_json(const Vec& v) {
  auto arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(std::isfinite(v[i]) ? nlohmann::json(v[i]) : nullptr);
  return arr;
}

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

nlohmann::json summary_json(const Trajectory& traj) {
  nlohmann::json j;
  j["field"] = traj.field->name();
  j["p"] = traj.field->p();
  j["samples"] = traj.samples.size();
  j["steps_taken"] = traj.steps_taken;
  j["steps_rejected"] = traj.steps_rejected;
  if (!traj.samples.empty()) {
    const auto& b = traj.back();
    nlohmann::json f;
    f["t"] = b.t;
    f["loss"] = num(b.obs.loss);
    f["gamma"] = num(b.obs.gamma);
    f["int_gamma"] = num(b.int_gamma);
    f["entropy"] = num(b.obs.entropy);
    f["max_sigma"] = num(b.obs.sigma.maxCoeff());
    f["sigma"] = vec_json(b.obs.sigma);
    f["u"] = vec_json(b.obs.u);
    f["a"] = vec_json(b.obs.a);
    f["u_order"] = b.u_order.perm;
    f["sigma_order"] = b.sigma_order.perm;
    j["final"] = f;
  }
  auto events = nlohmann::json::array();
  for (const auto& e : traj.events) events.push_back({{"t", e.t}, {"kind", e.kind}, {"detail", e.detail}});
  j["events"] = events;
  return j;
}

Trajectory rebuild_trajectory(const FieldPtr& field, const IntegratorConfig& config, const CsvTable& traj_table,
                              const CsvTable& state_table) {
  if (!field) throw InvalidInput("rebuild needs a field");
  const Eigen::Index p = trajectory_table_p(traj_table);
  if (p != field->p()) throw SchemaError("trajectory table width does not match the field");
  const auto n = static_cast<std::size_t>(field->state_size());
  if (state_table.header.size() != n + 1 || state_table.header[0] != "t")
    throw SchemaError("state table width does not match the field");
  if (state_table.rows.size() != traj_table.rows.size())
    throw SchemaError("trajectory and state tables have different lengths");
  if (traj_table.rows.empty()) throw SchemaError("empty trajectory");

  Trajectory traj;
  traj.field = field;
  traj.config = config;
  const std::size_t ig = traj_table.column("int_gamma");
  for (std::size_t r = 0; r < traj_table.rows.size(); ++r) {
    const auto& tr = traj_table.rows[r];
    const auto& sr = state_table.rows[r];
    if (tr[0] != sr[0]) throw SchemaError("trajectory and state tables disagree on time at row " + std::to_string(r));
    TrajectorySample s;
    s.t = tr[0];
    s.int_gamma = tr[ig];
    s.state = Eigen::Map<const Vec>(sr.data() + 1, static_cast<Eigen::Index>(n));
    s.obs = field->observe(s.state);
    s.u_order = descending_order(s.obs.u);
    s.sigma_order = descending_order(s.obs.sigma);
    traj.samples.push_back(std::move(s));
  }
  traj.config.t_end = traj.back().t;
  return traj;
}

}  // namespace vsflow

#include "vsflow/metrics.hpp"

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>

namespace vsflow {

// Neumaier summation: keeps the uniform case within a few ulps of ln p.
double entropy_values(const Vec& s) {
  double h = 0.0, c = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!(s[i] > 0.0)) continue;
    const double term = -s[i] * std::log(s[i]);
    const double t = h + term;
    c += std::abs(h) >= std::abs(term) ? (h - t) + term : (term - t) + h;
    h = t;
  }
  return h + c;
}

double entropy(const SimplexVector& s) {
  if (s.is_signed()) throw InvalidInput("entropy needs nonnegative weights");
  return entropy_values(s.values());
}

AttentionTensor::AttentionTensor(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
  std::size_t n = 1;
  for (auto d : dims_) {
    if (d == 0) throw InvalidInput("attention tensor extents must be positive");
    n *= d;
  }
  if (n != data_.size()) throw InvalidInput("attention tensor data does not match its dims");
  for (double v : data_)
    if (!std::isfinite(v)) throw InvalidInput("attention tensor values must be finite");
}

namespace {

template <class RowScore>
ScoreTable per_head_mean(const AttentionTensor& t, std::size_t q_begin, std::size_t q_end, double threshold,
                         bool clip, RowScore&& row_score) {
  const auto& d = t.dims();
  ScoreTable table;
  for (std::size_t l = 0; l < d[0]; ++l) {
    for (std::size_t h = 0; h < d[1]; ++h) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t s = 0; s < d[2]; ++s) {
        for (std::size_t q = q_begin; q < q_end; ++q) {
          double total = 0.0;
          for (std::size_t k = 0; k < d[4]; ++k) total += t(l, h, s, q, k);
          if (total == 0.0) {
            ++table.skipped_rows;
            continue;
          }
          sum += row_score(l, h, s, q) / total;
          ++count;
        }
      }
      double score = count > 0 ? sum / static_cast<double>(count) : 0.0;
      if (clip) score = std::clamp(score, 0.0, 1.0);
      table.heads.push_back(HeadScore{l, h, score, score > threshold});
    }
  }
  return table;
}

}  // namespace

ScoreTable sparsity_score(const AttentionTensor& t, double threshold) {
  const std::size_t keys = t.extent(AttentionTensor::key);
  return per_head_mean(t, 0, t.extent(AttentionTensor::query), threshold, false,
                       [&](std::size_t l, std::size_t h, std::size_t s, std::size_t q) {
                         double m = t(l, h, s, q, 0);
                         for (std::size_t k = 1; k < keys; ++k) m = std::max(m, t(l, h, s, q, k));
                         return m;
                       });
}

QueryRange default_sink_queries(const AttentionTensor& t) {
  const std::size_t q = t.extent(AttentionTensor::query);
  return QueryRange{1, q >= 3 ? q - 2 : 1};
}

ScoreTable sink_score(const AttentionTensor& t, std::optional<QueryRange> queries, std::size_t bos_key,
                      double threshold) {
  const QueryRange range = queries.value_or(default_sink_queries(t));
  if (range.begin >= range.end) throw InvalidInput("sink score needs a non-empty query range");
  if (range.end > t.extent(AttentionTensor::query)) throw InvalidInput("query range exceeds the query length");
  if (bos_key >= t.extent(AttentionTensor::key)) throw InvalidInput("bos key index out of range");
  return per_head_mean(t, range.begin, range.end, threshold, true,
                       [&](std::size_t l, std::size_t h, std::size_t s, std::size_t q) {
                         return t(l, h, s, q, bos_key);
                       });
}

namespace {

using nlohmann::json;

void flatten(const json& node, int depth, std::vector<double>& out, AttentionTensor::Dims& dims) {
  if (depth == 5) {
    if (!node.is_number()) throw InvalidInput("nested attention array must hold numbers at depth five");
    out.push_back(node.get<double>());
    return;
  }
  if (!node.is_array()) throw InvalidInput("nested attention array must have depth five");
  if (dims[depth] == 0) dims[depth] = node.size();
  if (node.size() != dims[depth]) throw InvalidInput("ragged nested attention array");
  for (const auto& child : node) flatten(child, depth + 1, out, dims);
}

}  // namespace

AttentionTensor load_attention_tensor(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open attention tensor file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidInput("attention tensor file is not valid JSON: " + std::string(e.what()));
  }

  if (doc.is_array()) {
    AttentionTensor::Dims dims{};
    std::vector<double> data;
    flatten(doc, 0, data, dims);
    return AttentionTensor(dims, std::move(data));
  }

  if (!doc.is_object() || !doc.contains("dims") || !doc.contains("data"))
    throw InvalidInput("attention header needs 'dims' and 'data'");
  const auto dims_vec = doc.at("dims").get<std::vector<std::size_t>>();
  if (dims_vec.size() != 5) throw InvalidInput("attention dims must be [L, H, S, Q, K]");
  if (doc.value("dtype", std::string("f64")) != "f64") throw InvalidInput("only f64 attention data is supported");
  AttentionTensor::Dims dims{};
  std::copy(dims_vec.begin(), dims_vec.end(), dims.begin());

  std::filesystem::path data_path = doc.at("data").get<std::string>();
  if (data_path.is_relative()) data_path = path.parent_path() / data_path;
  std::ifstream bin(data_path, std::ios::binary);
  if (!bin) throw InvalidInput("cannot open attention data file " + data_path.string());
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char bytes[8];
    if (!bin.read(reinterpret_cast<char*>(bytes), 8)) throw InvalidInput("attention data file is truncated");
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) bits = (bits << 8) | bytes[b];
    data[i] = std::bit_cast<double>(bits);
  }
  return AttentionTensor(dims, std::move(data));
}

void save_attention_tensor(const AttentionTensor& t, const std::filesystem::path& header_path) {
  std::filesystem::path bin_path = header_path;
  bin_path.replace_extension(".bin");
  std::ofstream bin(bin_path, std::ios::binary);
  for (double v : t.data()) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    bin.write(reinterpret_cast<const char*>(bytes), 8);
  }
  json header;
  header["dims"] = std::vector<std::size_t>(t.dims().begin(), t.dims().end());
  header["dtype"] = "f64";
  header["data"] = bin_path.filename().string();
  std::ofstream(header_path) << header.dump(2) << "\n";
}

void write_score_csv(std::ostream& os, const ScoreTable& table) {
  os << "layer,head,score,is_sink\n";
  char buf[64];
  for (const auto& h : table.heads) {
    std::snprintf(buf, sizeof buf, "%.17g", h.score);
    os << h.layer << ',' << h.head << ',' << buf << ',' << (h.is_sink ? 1 : 0) << '\n';
  }
}

}  // namespace vsflow

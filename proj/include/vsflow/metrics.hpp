#pragma once

// Scalar diagnostics: entropy of attention weights, and per-head sparsity and
// sink scores over attention tensors shaped [layer, head, sample, query, key].

#include "vsflow/core.hpp"

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace vsflow {

/// -sum s_i ln s_i with 0 ln 0 = 0 (natural log).
double entropy(const SimplexVector& s);
/// Unchecked variant; non-positive entries contribute nothing.
double entropy_values(const Vec& s);

class AttentionTensor {
 public:
  enum Axis { layer = 0, head, sample, query, key };
  using Dims = std::array<std::size_t, 5>;

  /// Throws InvalidInput on a size mismatch, a zero extent or a non-finite
  /// value.
  AttentionTensor(Dims dims, std::vector<double> data);

  const Dims& dims() const { return dims_; }
  std::size_t extent(Axis axis) const { return dims_[axis]; }
  const std::vector<double>& data() const { return data_; }

  double operator()(std::size_t l, std::size_t h, std::size_t s, std::size_t q, std::size_t k) const {
    return data_[(((l * dims_[1] + h) * dims_[2] + s) * dims_[3] + q) * dims_[4] + k];
  }

 private:
  Dims dims_;
  std::vector<double> data_;
};

struct HeadScore {
  std::size_t layer = 0;
  std::size_t head = 0;
  double score = 0.0;
  bool is_sink = false;  // score > threshold
};

struct ScoreTable {
  std::vector<HeadScore> heads;  // layer-major
  std::size_t skipped_rows = 0;  // rows with zero total weight
};

inline constexpr double kSinkThreshold = 0.9;

/// Per head: mean over samples and queries of max_k A / sum_k A.
ScoreTable sparsity_score(const AttentionTensor& t, double threshold = kSinkThreshold);

/// Half-open range of query positions.
struct QueryRange {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// [1, Q - 2): drops the BOS query and the last two positions.
QueryRange default_sink_queries(const AttentionTensor& t);

/// Per head: mean over samples and the selected queries of A[.., bos] /
/// sum_k A, clipped to [0, 1]. Throws InvalidInput for an empty or
/// out-of-range query range or bos_key >= K.
ScoreTable sink_score(const AttentionTensor& t, std::optional<QueryRange> queries = std::nullopt,
                      std::size_t bos_key = 0, double threshold = kSinkThreshold);

/// Reads either a JSON header {"dims": [L,H,S,Q,K], "dtype": "f64", "data":
/// "<path>"} pointing at little-endian float64 values in row-major order
/// (relative paths resolve against the header's directory), or a nested JSON
/// array of depth five.
AttentionTensor load_attention_tensor(const std::filesystem::path& path);
/// Writes `<stem>.json` plus `<stem>.bin` next to it.
void save_attention_tensor(const AttentionTensor& t, const std::filesystem::path& header_path);

/// CSV with header `layer,head,score,is_sink`.
void write_score_csv(std::ostream& os, const ScoreTable& table);

}  // namespace vsflow

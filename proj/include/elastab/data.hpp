#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "elastab/common.hpp"
#include "elastab/csv.hpp"

namespace elastab {

/// One data point z = (x, y), optionally carrying a small-integer class tag.
struct Example {
  Eigen::VectorXd x;
  double y = 0.0;
  std::optional<int> class_tag;
};

/// Immutable after construction. Feature dimension is identical across
/// examples; norm/label bounds are computed empirically (B', B of the
/// kernel examples) and may be overridden upward by a caller that knows
/// the true domain bounds.
class Dataset {
 public:
  static Dataset from_examples(std::vector<Example> examples) {
    require(examples.size() >= 2, "Dataset: needs m >= 2 examples");
    const auto d = examples.front().x.size();
    require(d >= 1, "Dataset: feature dimension must be >= 1");
    Dataset ds;
    ds.examples_ = std::move(examples);
    for (const auto& e : ds.examples_) {
      require(e.x.size() == d, "Dataset: inconsistent feature dimension");
      ds.norm_bound_ = std::max(ds.norm_bound_, e.x.norm());
      ds.label_bound_ = std::max(ds.label_bound_, std::abs(e.y));
      ds.label_lo_ = std::min(ds.label_lo_, e.y);
      ds.label_hi_ = std::max(ds.label_hi_, e.y);
    }
    return ds;
  }

  int m() const { return static_cast<int>(examples_.size()); }
  int dim() const { return static_cast<int>(examples_.front().x.size()); }
  const Example& operator[](int i) const { return examples_.at(i); }
  const std::vector<Example>& examples() const { return examples_; }

  double norm_bound_Bprime() const { return norm_bound_; }
  double label_bound_B() const { return label_bound_; }
  double label_lo() const { return label_lo_; }
  double label_hi() const { return label_hi_; }

  /// Declared domain bounds must dominate the empirical ones.
  void override_bounds(double norm_bound, double label_bound) {
    require(norm_bound >= norm_bound_, "override_bounds: norm bound below empirical max");
    require(label_bound >= label_bound_, "override_bounds: label bound below empirical max");
    norm_bound_ = norm_bound;
    label_bound_ = label_bound;
  }

  bool all_tagged() const {
    return std::all_of(examples_.begin(), examples_.end(),
                       [](const Example& e) { return e.class_tag.has_value(); });
  }

  int num_classes() const {
    int k = 0;
    for (const auto& e : examples_)
      if (e.class_tag) k = std::max(k, *e.class_tag + 1);
    return k;
  }

  /// Feature rows stacked into an m x d matrix.
  Eigen::MatrixXd feature_matrix() const {
    Eigen::MatrixXd X(m(), dim());
    for (int i = 0; i < m(); ++i) X.row(i) = examples_[i].x.transpose();
    return X;
  }

  Eigen::VectorXd labels() const {
    Eigen::VectorXd y(m());
    for (int i = 0; i < m(); ++i) y(i) = examples_[i].y;
    return y;
  }

 private:
  std::vector<Example> examples_;
  double norm_bound_ = 0.0;
  double label_bound_ = 0.0;
  double label_lo_ = std::numeric_limits<double>::infinity();
  double label_hi_ = -std::numeric_limits<double>::infinity();
};

/// Two uniform clusters with labels +/-1: each coordinate of x is uniform
/// on [-0.5, 1] for y = +1 and on [-1, 0.5] for y = -1, with equal class
/// counts. class_tag is 1 for positives, 0 for negatives.
inline Dataset gen_two_cluster(int d, int m, std::uint64_t seed) {
  require(d >= 1, "gen_two_cluster: d must be >= 1");
  require(m >= 2, "gen_two_cluster: m must be >= 2");
  require(m % 2 == 0, "gen_two_cluster: m must be even");
  Rng rng(seed);
  std::vector<Example> ex;
  ex.reserve(m);
  for (int i = 0; i < m; ++i) {
    const bool positive = i < m / 2;
    Example e;
    e.x.resize(d);
    for (int j = 0; j < d; ++j)
      e.x(j) = positive ? rng.uniform(-0.5, 1.0) : rng.uniform(-1.0, 0.5);
    e.y = positive ? 1.0 : -1.0;
    e.class_tag = positive ? 1 : 0;
    ex.push_back(std::move(e));
  }
  return Dataset::from_examples(std::move(ex));
}

namespace detail {
/// Fixed unit-norm center for class k; depends only on (d, k).
inline Eigen::VectorXd blob_center(int d, int k) {
  Rng rng(0x9E3779B97F4A7C15ull ^ (static_cast<std::uint64_t>(k) + 1));
  Eigen::VectorXd c(d);
  for (int j = 0; j < d; ++j) c(j) = rng.gaussian();
  const double n = c.norm();
  if (n == 0.0) {
    c.setZero();
    c(0) = 1.0;
    return c;
  }
  return c / n;
}
}  // namespace detail

/// K isotropic blobs: class k is centered at a fixed unit-norm center with
/// per-coordinate uniform noise of half-width `spread`. y and class_tag are
/// both the class id.
inline Dataset gen_blobs(int d, int K, int per_class, double spread, std::uint64_t seed) {
  require(d >= 1, "gen_blobs: d must be >= 1");
  require(K >= 2, "gen_blobs: K must be >= 2");
  require(per_class >= 1, "gen_blobs: per_class must be >= 1");
  require(spread >= 0.0, "gen_blobs: spread must be >= 0");
  Rng rng(seed);
  std::vector<Example> ex;
  ex.reserve(static_cast<std::size_t>(K) * per_class);
  for (int k = 0; k < K; ++k) {
    const Eigen::VectorXd center = detail::blob_center(d, k);
    for (int i = 0; i < per_class; ++i) {
      Example e;
      e.x = center;
      for (int j = 0; j < d; ++j) e.x(j) += rng.uniform(-spread, spread);
      e.y = static_cast<double>(k);
      e.class_tag = k;
      ex.push_back(std::move(e));
    }
  }
  return Dataset::from_examples(std::move(ex));
}

/// CSV format: header `x0,...,x{d-1},y[,class]`, one example per row,
/// '.' decimal separator, '\n' line endings.
inline void emit_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_csv: cannot open '" + path + "'");
  const bool tagged = ds.all_tagged();
  for (int j = 0; j < ds.dim(); ++j) out << "x" << j << ",";
  out << "y";
  if (tagged) out << ",class";
  out << "\n";
  for (const auto& e : ds.examples()) {
    for (int j = 0; j < e.x.size(); ++j) out << csv::format_double(e.x(j)) << ",";
    out << csv::format_double(e.y);
    if (tagged) out << "," << *e.class_tag;
    out << "\n";
  }
}

inline Dataset load_csv(const std::string& path) {
  const auto rows = csv::read_rows(path);
  if (rows.empty()) throw std::runtime_error("load_csv: empty file at line 1");
  const auto& header = rows.front();
  require(header.size() >= 2, "load_csv: header must contain at least x0,y");
  int d = 0;
  while (d < static_cast<int>(header.size()) && header[d] == "x" + std::to_string(d)) ++d;
  if (d == 0 || d >= static_cast<int>(header.size()) || header[d] != "y")
    throw std::runtime_error("load_csv: malformed header at line 1 (want x0,...,y[,class])");
  const bool tagged = static_cast<int>(header.size()) == d + 2 && header[d + 1] == "class";
  const std::size_t want = tagged ? d + 2 : d + 1;
  if (header.size() != want)
    throw std::runtime_error("load_csv: malformed header at line 1 (want x0,...,y[,class])");

  std::vector<Example> ex;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const int line_no = static_cast<int>(r) + 1;
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;  // blank trailing line
    if (row.size() != want)
      throw std::runtime_error("load_csv: ragged row at line " + std::to_string(line_no));
    Example e;
    e.x.resize(d);
    for (int j = 0; j < d; ++j) e.x(j) = csv::parse_double(row[j], line_no);
    e.y = csv::parse_double(row[d], line_no);
    if (tagged) e.class_tag = static_cast<int>(csv::parse_int(row[d + 1], line_no));
    ex.push_back(std::move(e));
  }
  return Dataset::from_examples(std::move(ex));
}

}  // namespace elastab

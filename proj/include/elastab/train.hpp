#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <vector>

#include "elastab/common.hpp"
#include "elastab/data.hpp"
#include "elastab/kernel.hpp"
#include "elastab/loss.hpp"
#include "elastab/model.hpp"

namespace elastab {

inline double mean_loss(const TrainedModel& m, const LossSpec& spec, const Dataset& ds,
                        int skip_index = -1) {
  double s = 0.0;
  for (int j = 0; j < ds.m(); ++j) {
    if (j == skip_index) continue;
    s += loss(m, spec, ds[j]);
  }
  return s / ds.m();
}

namespace detail {
/// Minimizer of (1/m) sum_j (w.x_j - y_j)^2 + lambda |w|^2 over the rows in
/// `rows`; the normalizer m stays the full dataset size so leave-one-out
/// retraining optimizes the same objective with one term dropped.
inline Eigen::VectorXd ridge_normal_solve(const Dataset& ds, const std::vector<int>& rows,
                                          double lambda) {
  const int d = ds.dim();
  const double m = ds.m();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  for (int j : rows) {
    A.noalias() += ds[j].x * ds[j].x.transpose();
    b.noalias() += ds[j].y * ds[j].x;
  }
  A /= m;
  b /= m;
  A.diagonal().array() += lambda;
  const Eigen::VectorXd w = A.llt().solve(b);
  // objective gradient residual check
  Eigen::VectorXd g = 2.0 * lambda * w;
  for (int j : rows) g += (2.0 / m) * (w.dot(ds[j].x) - ds[j].y) * ds[j].x;
  if (g.norm() > 1e-8 * (1.0 + w.norm()))
    throw numeric_error("ridge solve: normal equations residual too large", g.norm());
  return w;
}

inline std::vector<int> all_rows_except(int m, int skip) {
  std::vector<int> rows;
  rows.reserve(m);
  for (int j = 0; j < m; ++j)
    if (j != skip) rows.push_back(j);
  return rows;
}
}  // namespace detail

inline TrainedModel train_ridge_closed_form(const Dataset& ds, double lambda) {
  require(lambda > 0.0, "train_ridge_closed_form: lambda must be positive");
  TrainedModel m;
  m.family = ModelFamily::linear_ridge;
  m.lambda = lambda;
  m.train_m = ds.m();
  m.theta = detail::ridge_normal_solve(ds, detail::all_rows_except(ds.m(), -1), lambda);
  return m;
}

inline TrainedModel train_ridge_loo(const Dataset& ds, int i, double lambda) {
  require(lambda > 0.0, "train_ridge_loo: lambda must be positive");
  require(i >= 0 && i < ds.m(), "train_ridge_loo: index out of range");
  TrainedModel m;
  m.family = ModelFamily::linear_ridge;
  m.lambda = lambda;
  m.train_m = ds.m();
  m.theta = detail::ridge_normal_solve(ds, detail::all_rows_except(ds.m(), i), lambda);
  return m;
}

/// Dual kernel ridge: coefficients solve (G + m lambda I) a = y. When
/// skip_index >= 0 the Gram matrix shrinks to the remaining points but the
/// ridge term keeps the full-m normalization, matching the leave-one-out
/// objective (1/m) sum_{j != i} l + lambda |h|^2_K.
inline TrainedModel train_kernel_ridge(const Dataset& ds, const KernelSpec& kernel,
                                       double lambda, int skip_index = -1) {
  require(lambda > 0.0, "train_kernel_ridge: lambda must be positive");
  if (skip_index >= 0)
    require(skip_index < ds.m(), "train_kernel_ridge: skip index out of range");
  const auto rows = detail::all_rows_except(ds.m(), skip_index);
  const int n = static_cast<int>(rows.size());
  Eigen::MatrixXd X(n, ds.dim());
  Eigen::VectorXd y(n);
  for (int r = 0; r < n; ++r) {
    X.row(r) = ds[rows[r]].x.transpose();
    y(r) = ds[rows[r]].y;
  }
  Eigen::MatrixXd G = gram_matrix(kernel, X);
  G.diagonal().array() += static_cast<double>(ds.m()) * lambda;
  const Eigen::LLT<Eigen::MatrixXd> llt(G);
  if (llt.info() != Eigen::Success)
    throw numeric_error("train_kernel_ridge: Gram system not positive definite");
  TrainedModel m;
  m.family = ModelFamily::kernel_ridge;
  m.kernel = kernel;
  m.lambda = lambda;
  m.train_m = ds.m();
  m.support_x = std::move(X);
  m.theta = llt.solve(y);
  return m;
}

/// Projected subgradient descent on the eps-insensitive kernel objective
/// (1/m) sum_j |h(x_j) - y_j|_tau + lambda a' G a. Returns the best-seen
/// iterate, so the reported objective is the running minimum.
inline TrainedModel train_svm_regression(const Dataset& ds, const KernelSpec& kernel,
                                         double lambda, double tau, int iters,
                                         std::uint64_t seed, int skip_index = -1,
                                         double projection_radius = 10.0) {
  require(lambda > 0.0, "train_svm_regression: lambda must be positive");
  require(tau >= 0.0, "train_svm_regression: tau must be >= 0");
  require(iters >= 1, "train_svm_regression: iters must be >= 1");
  const auto rows = detail::all_rows_except(ds.m(), skip_index);
  const int n = static_cast<int>(rows.size());
  const double m = ds.m();
  Eigen::MatrixXd X(n, ds.dim());
  Eigen::VectorXd y(n);
  for (int r = 0; r < n; ++r) {
    X.row(r) = ds[rows[r]].x.transpose();
    y(r) = ds[rows[r]].y;
  }
  const Eigen::MatrixXd G = gram_matrix(kernel, X);

  const auto objective = [&](const Eigen::VectorXd& a) {
    const Eigen::VectorXd r = G * a - y;
    double s = 0.0;
    for (int j = 0; j < n; ++j) s += std::max(0.0, std::abs(r(j)) - tau);
    return s / m + lambda * a.dot(G * a);
  };

  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd best = a;
  double best_obj = objective(a);
  const double step0 = 1.0 / (1.0 + G.norm() * (2.0 * lambda + 1.0 / m));
  for (int t = 1; t <= iters; ++t) {
    const Eigen::VectorXd r = G * a - y;
    Eigen::VectorXd s(n);
    for (int j = 0; j < n; ++j)
      s(j) = std::abs(r(j)) > tau ? (r(j) > 0 ? 1.0 : -1.0) : 0.0;
    const Eigen::VectorXd g = G * (s / m) + 2.0 * lambda * (G * a);
    a -= (step0 / std::sqrt(static_cast<double>(t))) * g;
    const double an = a.norm();
    if (an > projection_radius) a *= projection_radius / an;
    const double obj = objective(a);
    if (obj < best_obj) {
      best_obj = obj;
      best = a;
    }
  }
  TrainedModel out;
  out.family = ModelFamily::svm_reg;
  out.kernel = kernel;
  out.lambda = lambda;
  out.tau = tau;
  out.train_m = ds.m();
  out.seed = seed;
  out.support_x = std::move(X);
  out.theta = best;
  out.projection_radius = projection_radius;
  return out;
}

/// Full-batch gradient descent on cross-entropy + (lambda/2)|theta|^2 over a
/// frozen random ReLU feature map. Deterministic given the seed.
inline TrainedModel train_softmax_head(const Dataset& ds, const FeatureMap& feature_map,
                                       double lambda, int epochs, double lr,
                                       std::uint64_t seed) {
  require(ds.all_tagged(), "train_softmax_head: every example needs a class tag");
  const int K = ds.num_classes();
  require(K >= 2, "train_softmax_head: needs at least two classes");
  require(epochs >= 1, "train_softmax_head: epochs must be >= 1");
  require(lambda > 0.0, "train_softmax_head: lambda must be positive");
  const int m = ds.m(), p = feature_map.output_dim;

  Eigen::MatrixXd Phi(m, p);
  for (int j = 0; j < m; ++j) Phi.row(j) = feature_map(ds[j].x).transpose();

  Rng rng(seed);
  Eigen::MatrixXd Theta(K, p);
  for (int c = 0; c < K; ++c)
    for (int q = 0; q < p; ++q) Theta(c, q) = 0.01 * rng.gaussian();

  for (int e = 0; e < epochs; ++e) {
    Eigen::MatrixXd Z = Phi * Theta.transpose();  // m x K logits
    Eigen::MatrixXd P(m, K);
    for (int j = 0; j < m; ++j) {
      const Eigen::VectorXd row = Z.row(j).transpose();
      P.row(j) = detail::softmax(row).transpose();
      P(j, *ds[j].class_tag) -= 1.0;
    }
    const Eigen::MatrixXd grad = P.transpose() * Phi / m + lambda * Theta;
    Theta -= lr * grad;
  }

  TrainedModel out;
  out.family = ModelFamily::softmax_head;
  out.feature_map = feature_map;
  out.num_classes = K;
  out.lambda = lambda;
  out.train_m = m;
  out.seed = seed;
  out.theta.resize(K * p);
  for (int c = 0; c < K; ++c) out.theta.segment(c * p, p) = Theta.row(c).transpose();
  return out;
}

/// Mini-batch SGD on squared loss + (lambda/2)(|W|^2 + |a|^2) for
/// f(W, a, x) = (1/k) sum_r a_r relu(W_r . x). Parameters initialize
/// uniformly in [-1, 1]; epoch order is a seeded shuffle.
inline TrainedModel train_two_layer(const Dataset& ds, int k, double lambda, int epochs,
                                    double lr, int batch, std::uint64_t seed) {
  require(k >= 1, "train_two_layer: k must be >= 1");
  require(epochs >= 0, "train_two_layer: epochs must be >= 0");
  require(batch >= 1, "train_two_layer: batch must be >= 1");
  const int m = ds.m(), d = ds.dim();
  batch = std::min(batch, m);

  Rng rng(seed);
  TrainedModel model;
  model.family = ModelFamily::two_layer;
  model.hidden_k = k;
  model.input_dim = d;
  model.lambda = lambda;
  model.train_m = m;
  model.seed = seed;
  model.theta.resize(k * d + k);
  for (int i = 0; i < model.theta.size(); ++i) model.theta(i) = rng.uniform(-1.0, 1.0);

  const LossSpec spec = LossSpec::squared();
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    for (int j = m - 1; j > 0; --j)
      std::swap(order[j], order[rng.index(static_cast<std::size_t>(j) + 1)]);
    for (int start = 0; start < m; start += batch) {
      const int stop = std::min(start + batch, m);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(model.theta.size());
      for (int j = start; j < stop; ++j) g += grad(model, spec, ds[order[j]]);
      g /= (stop - start);
      g += lambda * model.theta;
      model.theta -= lr * g;
    }
  }
  return model;
}

}  // namespace elastab

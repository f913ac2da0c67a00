#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "elastab/common.hpp"
#include "elastab/csv.hpp"
#include "elastab/data.hpp"
#include "elastab/loss.hpp"
#include "elastab/model.hpp"
#include "elastab/train.hpp"

namespace elastab {

enum class SensitivityMethod { influence, exact_loo, stepwise };

inline std::string method_name(SensitivityMethod m) {
  switch (m) {
    case SensitivityMethod::influence: return "influence";
    case SensitivityMethod::exact_loo: return "exact_loo";
    case SensitivityMethod::stepwise: return "stepwise";
  }
  return "?";
}

inline SensitivityMethod method_from_name(const std::string& s) {
  if (s == "influence") return SensitivityMethod::influence;
  if (s == "exact_loo") return SensitivityMethod::exact_loo;
  if (s == "stepwise") return SensitivityMethod::stepwise;
  throw std::invalid_argument("unknown sensitivity method '" + s + "'");
}

/// One estimated beta_m(z_i, z) value; absolute-value convention, so
/// beta_hat >= 0 always. Class fields are -1 when the examples carry no tag.
struct SensitivityRecord {
  int train_index = 0;
  int test_id = 0;
  int train_class = -1;
  int test_class = -1;
  double beta_hat = 0.0;
  SensitivityMethod method = SensitivityMethod::influence;
};

inline void write_records_csv(const std::vector<SensitivityRecord>& records,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_records_csv: cannot open '" + path + "'");
  out << "train_index,test_id,train_class,test_class,beta_hat,method\n";
  for (const auto& r : records)
    out << r.train_index << "," << r.test_id << "," << r.train_class << ","
        << r.test_class << "," << csv::format_double(r.beta_hat) << ","
        << method_name(r.method) << "\n";
}

inline std::vector<SensitivityRecord> load_records_csv(const std::string& path) {
  const auto rows = csv::read_rows(path);
  if (rows.empty()) throw std::runtime_error("load_records_csv: empty file at line 1");
  std::vector<SensitivityRecord> records;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const int line_no = static_cast<int>(r) + 1;
    const auto& row = rows[r];
    if (row.size() == 1 && row[0].empty()) continue;
    if (row.size() != 6)
      throw std::runtime_error("load_records_csv: ragged row at line " +
                               std::to_string(line_no));
    SensitivityRecord rec;
    rec.train_index = static_cast<int>(csv::parse_int(row[0], line_no));
    rec.test_id = static_cast<int>(csv::parse_int(row[1], line_no));
    rec.train_class = static_cast<int>(csv::parse_int(row[2], line_no));
    rec.test_class = static_cast<int>(csv::parse_int(row[3], line_no));
    rec.beta_hat = csv::parse_double(row[4], line_no);
    rec.method = method_from_name(row[5]);
    records.push_back(rec);
  }
  return records;
}

/// Deterministic full/leave-one-out training pair. Both sides keep the 1/m
/// normalization so the removed term is the only difference between the
/// objectives.
struct Trainer {
  std::function<TrainedModel(const Dataset&)> full;
  std::function<TrainedModel(const Dataset&, int)> leave_one_out;
};

inline Trainer ridge_trainer(double lambda) {
  return Trainer{
      [lambda](const Dataset& ds) { return train_ridge_closed_form(ds, lambda); },
      [lambda](const Dataset& ds, int i) { return train_ridge_loo(ds, i, lambda); }};
}

inline Trainer kernel_ridge_trainer(const KernelSpec& kernel, double lambda) {
  return Trainer{
      [kernel, lambda](const Dataset& ds) { return train_kernel_ridge(ds, kernel, lambda); },
      [kernel, lambda](const Dataset& ds, int i) {
        return train_kernel_ridge(ds, kernel, lambda, i);
      }};
}

inline Trainer svm_trainer(const KernelSpec& kernel, double lambda, double tau, int iters,
                           std::uint64_t seed) {
  return Trainer{[=](const Dataset& ds) {
                   return train_svm_regression(ds, kernel, lambda, tau, iters, seed);
                 },
                 [=](const Dataset& ds, int i) {
                   return train_svm_regression(ds, kernel, lambda, tau, iters, seed, i);
                 }};
}

/// Objective Hessian at the trained parameters: mean per-example loss
/// Hessian plus the regularizer's curvature. `damping` is kept separate so a
/// stalled solve can be retried stiffer without reassembly.
struct HessianContext {
  Eigen::MatrixXd H;  // symmetric, regularization included, damping excluded
  double damping = 0.0;
  double cg_tol = 1e-10;
  int cg_max_iter = 0;  // defaults to 10 * n
  int train_m = 0;

  int dim() const { return static_cast<int>(H.rows()); }
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const { return H * v + damping * v; }
  HessianContext with_damping(double d) const {
    HessianContext c = *this;
    c.damping = d;
    return c;
  }
};

namespace detail {
/// Curvature of the regularization term for each trained family, matching
/// the objective each trainer minimizes.
inline double regularizer_curvature(const TrainedModel& m) {
  switch (m.family) {
    case ModelFamily::linear_ridge:
      return 2.0 * m.lambda;  // lambda |w|^2
    case ModelFamily::softmax_head:
    case ModelFamily::two_layer:
      return m.lambda;  // (lambda/2) |theta|^2
    case ModelFamily::toy_scalar:
      return 0.0;
    default:
      throw unsupported_operation("regularizer_curvature: unsupported family");
  }
}

inline Eigen::VectorXd mean_grad(const TrainedModel& m, const LossSpec& spec,
                                 const Dataset& ds) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(m.theta.size());
  for (int j = 0; j < ds.m(); ++j) g += grad(m, spec, ds[j]);
  return g / ds.m();
}
}  // namespace detail

/// Assembles the objective Hessian. Convex families use the analytic
/// per-example Hessians; two_layer is assembled by central finite
/// differences of the mean gradient and requires damping > 0.
inline HessianContext build_hessian(const TrainedModel& model, const LossSpec& spec,
                                    const Dataset& ds, double damping = 0.0) {
  require(damping >= 0.0, "build_hessian: damping must be >= 0");
  const int n = static_cast<int>(model.theta.size());
  HessianContext ctx;
  ctx.damping = damping;
  ctx.cg_max_iter = 10 * n;
  ctx.train_m = ds.m();

  if (model.family == ModelFamily::two_layer) {
    require(damping > 0.0, "build_hessian: two_layer needs damping > 0");
    Eigen::MatrixXd H(n, n);
    Eigen::VectorXd theta = model.theta;
    for (int k = 0; k < n; ++k) {
      const double eps = 1e-5 * (1.0 + std::abs(theta(k)));
      TrainedModel plus = model, minus = model;
      plus.theta(k) += eps;
      minus.theta(k) -= eps;
      H.col(k) = (detail::mean_grad(plus, spec, ds) - detail::mean_grad(minus, spec, ds)) /
                 (2.0 * eps);
    }
    H.diagonal().array() += model.lambda;
    ctx.H = 0.5 * (H + H.transpose());
    return ctx;
  }

  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < ds.m(); ++j) H += loss_hessian(model, spec, ds[j]);
  H /= ds.m();
  H.diagonal().array() += detail::regularizer_curvature(model);
  ctx.H = 0.5 * (H + H.transpose());
  return ctx;
}

/// Conjugate gradient solve of (H + damping I) v = g to relative residual
/// cg_tol. Indefiniteness or iteration exhaustion raises numeric_error with
/// the residual reached.
inline Eigen::VectorXd cg_solve(const HessianContext& ctx, const Eigen::VectorXd& g) {
  const double gnorm = g.norm();
  if (gnorm == 0.0) return Eigen::VectorXd::Zero(g.size());
  const int max_iter = ctx.cg_max_iter > 0 ? ctx.cg_max_iter : 10 * static_cast<int>(g.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(g.size());
  Eigen::VectorXd r = g;
  Eigen::VectorXd p = r;
  double rr = r.squaredNorm();
  for (int it = 0; it < max_iter; ++it) {
    if (std::sqrt(rr) <= ctx.cg_tol * gnorm) return v;
    const Eigen::VectorXd Ap = ctx.apply(p);
    const double pAp = p.dot(Ap);
    if (pAp <= 0.0)
      throw numeric_error("cg_solve: operator not positive definite", std::sqrt(rr));
    const double alpha = rr / pAp;
    v += alpha * p;
    r -= alpha * Ap;
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  if (std::sqrt(rr) <= ctx.cg_tol * gnorm) return v;
  throw numeric_error("cg_solve: no convergence in " + std::to_string(max_iter) +
                          " iterations",
                      std::sqrt(rr) / gnorm);
}

/// Influence-function estimate of beta_m(z_i, z):
/// (1/m) |grad l(theta, z)' H^{-1} grad l(theta, z_i)|.
inline double if_sensitivity(const TrainedModel& model, const LossSpec& spec,
                             const HessianContext& ctx, const Example& z_i,
                             const Example& z) {
  const Eigen::VectorXd gi = grad(model, spec, z_i);
  if (gi.norm() == 0.0) return 0.0;
  const Eigen::VectorXd v = cg_solve(ctx, gi);
  return std::abs(grad(model, spec, z).dot(v)) / ctx.train_m;
}

/// Exact |l(A_S, z) - l(A_{S \ i}, z)| by full retraining.
inline double exact_loo_delta(const Dataset& ds, int i, const Example& z,
                              const Trainer& trainer, const LossSpec& spec) {
  require(i >= 0 && i < ds.m(), "exact_loo_delta: index out of range");
  const TrainedModel full = trainer.full(ds);
  const TrainedModel loo = trainer.leave_one_out(ds, i);
  return std::abs(loss(full, spec, z) - loss(loo, spec, z));
}

/// All |train| x |test| influence estimates, train-major order. One linear
/// solve per training point; test gradients are formed once.
inline std::vector<SensitivityRecord> pairwise_matrix(const TrainedModel& model,
                                                      const LossSpec& spec,
                                                      const HessianContext& ctx,
                                                      const Dataset& train_ds,
                                                      const Dataset& test_ds) {
  std::vector<Eigen::VectorXd> test_grads;
  test_grads.reserve(test_ds.m());
  for (int t = 0; t < test_ds.m(); ++t) test_grads.push_back(grad(model, spec, test_ds[t]));

  std::vector<SensitivityRecord> records;
  records.reserve(static_cast<std::size_t>(train_ds.m()) * test_ds.m());
  for (int i = 0; i < train_ds.m(); ++i) {
    const Eigen::VectorXd gi = grad(model, spec, train_ds[i]);
    Eigen::VectorXd v;
    const bool zero = gi.norm() == 0.0;
    if (!zero) v = cg_solve(ctx, gi);
    for (int t = 0; t < test_ds.m(); ++t) {
      SensitivityRecord r;
      r.train_index = i;
      r.test_id = t;
      r.train_class = train_ds[i].class_tag.value_or(-1);
      r.test_class = test_ds[t].class_tag.value_or(-1);
      r.beta_hat = zero ? 0.0 : std::abs(test_grads[t].dot(v)) / ctx.train_m;
      r.method = SensitivityMethod::influence;
      records.push_back(r);
    }
  }
  return records;
}

struct ValidationSummary {
  double median_rel_err = 0.0;
  double max_rel_err = 0.0;
  int pairs = 0;
};

/// Relative error of the influence estimate against exact leave-one-out
/// retraining on random (i, z) pairs of a closed-form ridge fit. Pairs whose
/// exact delta is below 1e-12 are excluded (0/0 guards).
inline ValidationSummary validate_if_vs_loo(const Dataset& ds, const Dataset& test_ds,
                                            double lambda, int sample, std::uint64_t seed) {
  require(sample > 0, "validate_if_vs_loo: sample must be positive");
  const LossSpec spec = LossSpec::squared();
  const TrainedModel full = train_ridge_closed_form(ds, lambda);
  const HessianContext ctx = build_hessian(full, spec, ds);

  std::vector<TrainedModel> loo_cache(ds.m());
  std::vector<char> loo_ready(ds.m(), 0);
  Rng rng(seed);
  std::vector<double> errs;
  const long max_attempts = 100L * sample;
  for (long attempt = 0; attempt < max_attempts && static_cast<int>(errs.size()) < sample;
       ++attempt) {
    const int i = static_cast<int>(rng.index(ds.m()));
    const int t = static_cast<int>(rng.index(test_ds.m()));
    if (!loo_ready[i]) {
      loo_cache[i] = train_ridge_loo(ds, i, lambda);
      loo_ready[i] = 1;
    }
    const double exact =
        std::abs(loss(full, spec, test_ds[t]) - loss(loo_cache[i], spec, test_ds[t]));
    if (exact <= 1e-12) continue;
    const double est = if_sensitivity(full, spec, ctx, ds[i], test_ds[t]);
    errs.push_back(std::abs(est - exact) / exact);
  }
  if (errs.empty())
    throw std::invalid_argument("validate_if_vs_loo: no eligible pairs (all deltas ~ 0)");

  ValidationSummary s;
  s.pairs = static_cast<int>(errs.size());
  s.max_rel_err = *std::max_element(errs.begin(), errs.end());
  std::sort(errs.begin(), errs.end());
  const std::size_t n = errs.size();
  s.median_rel_err = n % 2 ? errs[n / 2] : 0.5 * (errs[n / 2 - 1] + errs[n / 2]);
  return s;
}

}  // namespace elastab

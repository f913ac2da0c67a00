#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "elastab/common.hpp"
#include "elastab/influence.hpp"

namespace elastab {

struct KernelConstants {
  double sigma = 0.0;    // sigma-admissibility of the loss
  double kappa = 0.0;    // sup_x sqrt(K(x,x))
  double e_kappa = 0.0;  // E_x kappa(x)
  double lambda = 0.0;   // ridge weight
  double B = 0.0;        // label bound
};

struct SgdConstants {
  double L = 0.0;    // sup_z L(z)
  double L_i = 0.0;  // L(z_i) of the removed point
  double L_z = 0.0;  // L(z) of the probe point
  double alpha = 0.0;
  double c = 0.0;
  double T = 0.0;
  double mu = 0.0;
  double eta_schedule_sum = 0.0;  // sum_t eta_t
};

/// Inputs shared by every bound calculator. eta_slack is the deviation
/// slack of the locally elastic concentration step, not a learning rate.
struct BoundInputs {
  int m = 2;
  double delta = 0.1;
  double M_l = 0.0;
  double sup_E_beta = 0.0;  // sup_{z'} E_z beta(z', z), m-free convention
  double M_beta = 0.0;      // sup beta, m-free convention
  double eta_slack = 0.0;
  double beta_H = 0.0;
  KernelConstants kernel{};
  SgdConstants sgd{};

  void validate() const {
    require(m >= 1, "BoundInputs: m must be >= 1");
    require(delta > 0.0 && delta < 1.0, "BoundInputs: delta must lie in (0,1)");
    const double vals[] = {M_l,          sup_E_beta,   M_beta,     eta_slack,
                           beta_H,       kernel.sigma, kernel.kappa, kernel.e_kappa,
                           kernel.lambda, kernel.B,    sgd.L,      sgd.L_i,
                           sgd.L_z,      sgd.alpha,    sgd.c,      sgd.T,
                           sgd.mu,       sgd.eta_schedule_sum};
    for (double v : vals) require(v >= 0.0, "BoundInputs: constants must be >= 0");
  }
};

/// Defect bound from locally elastic stability:
/// 2 s / m + 2 (2 s + eta + M_l) sqrt(2 log(2/delta) / m), s = sup_E_beta.
inline double bound_locally_elastic(const BoundInputs& in) {
  in.validate();
  const double s = in.sup_E_beta;
  return 2.0 * s / in.m +
         2.0 * (2.0 * s + in.eta_slack + in.M_l) *
             std::sqrt(2.0 * std::log(2.0 / in.delta) / in.m);
}

/// Defect bound from uniform stability with beta^U = M_beta / m:
/// 2 beta^U + (4 m beta^U + M_l) sqrt(log(1/delta) / (2m)).
inline double bound_uniform(const BoundInputs& in) {
  in.validate();
  const double beta_u = in.M_beta / in.m;
  return 2.0 * beta_u +
         (4.0 * in.m * beta_u + in.M_l) * std::sqrt(std::log(1.0 / in.delta) / (2.0 * in.m));
}

/// Polynomial-tail bound from hypothesis stability:
/// sqrt((M_l^2 + 12 M_l m beta_H) / (2 m delta)).
inline double bound_hypothesis(const BoundInputs& in) {
  in.validate();
  return std::sqrt((in.M_l * in.M_l + 12.0 * in.M_l * in.m * in.beta_H) /
                   (2.0 * in.m * in.delta));
}

/// Pairwise kernel stability sigma^2 kappa(x_i) kappa(x) / (2 lambda m).
inline double kernel_beta(double sigma, double kappa_i, double kappa_x, double lambda,
                          int m) {
  require(lambda > 0.0 && m >= 1, "kernel_beta: lambda > 0 and m >= 1 required");
  return sigma * sigma * kappa_i * kappa_x / (2.0 * lambda * m);
}

/// Uniform kernel stability sigma^2 kappa^2 / (2 lambda m).
inline double kernel_beta_uniform(double sigma, double kappa, double lambda, int m) {
  return kernel_beta(sigma, kappa, kappa, lambda, m);
}

/// Bounded eps-insensitive kernel regression:
/// B1 (uniform route) and B2 (locally elastic route).
inline std::pair<double, double> svm_bounds(const BoundInputs& in) {
  in.validate();
  const auto& k = in.kernel;
  require(k.lambda > 0.0, "svm_bounds: lambda must be positive");
  const double b1 = k.kappa * k.kappa / (k.lambda * in.m) +
                    (2.0 * k.kappa * k.kappa / k.lambda + k.B) *
                        std::sqrt(std::log(1.0 / in.delta) / (2.0 * in.m));
  const double b2 = k.kappa * k.e_kappa / (k.lambda * in.m) +
                    (3.0 * k.kappa * k.e_kappa / k.lambda + 2.0 * k.B) *
                        std::sqrt(2.0 * std::log(2.0 / in.delta) / in.m);
  return {b1, b2};
}

/// Sufficient condition for B2 <= B1 at delta < 0.5:
/// (2 kappa^2 / lambda + B) >= 2 sqrt(2) (3 kappa E_kappa / lambda + 2 B).
inline bool condition_eq3(const BoundInputs& in) {
  in.validate();
  const auto& k = in.kernel;
  require(k.lambda > 0.0, "condition_eq3: lambda must be positive");
  return 2.0 * k.kappa * k.kappa / k.lambda + k.B >=
         2.0 * std::sqrt(2.0) * (3.0 * k.kappa * k.e_kappa / k.lambda + 2.0 * k.B);
}

/// Regularized least squares: B3 (uniform route) and B4 (locally elastic
/// route), with the sigma = 2B admissibility baked into the constants.
inline std::pair<double, double> rls_bounds(const BoundInputs& in) {
  in.validate();
  const auto& k = in.kernel;
  require(k.lambda > 0.0, "rls_bounds: lambda must be positive");
  const double B2 = k.B * k.B;
  const double b3 = 4.0 * k.kappa * k.kappa * B2 / (k.lambda * in.m) +
                    (8.0 * k.kappa * k.kappa * B2 / k.lambda + B2) *
                        std::sqrt(std::log(1.0 / in.delta) / (2.0 * in.m));
  const double b4 = 4.0 * k.kappa * k.e_kappa * B2 / (k.lambda * in.m) +
                    (12.0 * k.kappa * k.e_kappa * B2 / k.lambda + 2.0 * B2) *
                        std::sqrt(2.0 * std::log(2.0 / in.delta) / in.m);
  return {b3, b4};
}

/// SGD, convex smooth losses: (L + L_i) L_z (sum_t eta_t) / m.
inline double sgd_beta_convex(double L, double L_i, double L_z, double sum_eta, int m) {
  require(m >= 1, "sgd_beta_convex: m must be >= 1");
  return (L + L_i) * L_z * sum_eta / m;
}

/// SGD with projection, strongly convex losses: (L_i + L) L_z / (m mu).
inline double sgd_beta_strongly_convex(double L, double L_i, double L_z, double mu, int m) {
  require(mu > 0.0 && m >= 1, "sgd_beta_strongly_convex: mu > 0 and m >= 1 required");
  return (L_i + L) * L_z / (m * mu);
}

/// SGD, nonconvex bounded losses with eta_t <= c/t:
/// gamma_m phi, phi = (c (L_i + L) L_z T^{alpha c})^{1/(alpha c + 1)},
/// gamma_m = (1 + 1/(alpha c)) / (m - 1).
inline double sgd_beta_nonconvex(double L, double L_i, double L_z, double alpha, double c,
                                 double T, int m) {
  require(alpha > 0.0 && c > 0.0, "sgd_beta_nonconvex: alpha and c must be positive");
  require(m >= 2, "sgd_beta_nonconvex: m must be >= 2");
  const double ac = alpha * c;
  const double phi = std::pow(c * (L_i + L) * L_z * std::pow(T, ac), 1.0 / (ac + 1.0));
  const double gamma_m = (1.0 + 1.0 / ac) / (m - 1.0);
  return gamma_m * phi;
}

/// Defect bounds for nonconvex SGD with the loss bounded by M_l:
/// B5 routes the uniform parameter (L_i = L_z = L) through the uniform
/// bound; B6 routes the caller-computed sup_{z'} E_z beta through the
/// locally elastic bound. eta_slack == 0 defaults to sup_E_beta.
inline std::pair<double, double> sgd_bounds_b5_b6_general(const BoundInputs& in,
                                                          double M_l) {
  in.validate();
  const auto& s = in.sgd;
  const double beta_u_m =
      sgd_beta_nonconvex(s.L, s.L, s.L, s.alpha, s.c, s.T, in.m);  // uniform route

  BoundInputs u = in;
  u.M_l = M_l;
  u.M_beta = in.m * beta_u_m;
  const double b5 = bound_uniform(u);

  BoundInputs le = in;
  le.M_l = M_l;
  le.eta_slack = in.eta_slack > 0.0 ? in.eta_slack : in.sup_E_beta;
  const double b6 = bound_locally_elastic(le);
  return {b5, b6};
}

/// The M_l = 1 specialization used when the loss is normalized to [0, 1].
inline std::pair<double, double> sgd_bounds_b5_b6(const BoundInputs& in) {
  return sgd_bounds_b5_b6_general(in, 1.0);
}

/// Sample-size diagnostic for the locally elastic defect bound:
/// the concentration step needs eta > 2 M_beta / m.
inline bool m_large_enough_diagnostic(const BoundInputs& in) {
  in.validate();
  if (in.eta_slack <= 0.0) return false;
  return in.m > 2.0 * in.M_beta / in.eta_slack;
}

/// Error-stability statistic sup_{z'} E_z beta(z', z) over finite grids.
inline double error_stability_param(const std::function<double(int, int)>& beta,
                                    int n_zprime, int n_z) {
  require(n_zprime >= 1 && n_z >= 1, "error_stability_param: empty grid");
  double sup = 0.0;
  for (int i = 0; i < n_zprime; ++i) {
    double mean = 0.0;
    for (int j = 0; j < n_z; ++j) mean += beta(i, j);
    sup = std::max(sup, mean / n_z);
  }
  return sup;
}

/// Same statistic over a pairwise record sweep: max over training points of
/// the mean over test points.
inline double error_stability_param(const std::vector<SensitivityRecord>& records) {
  require(!records.empty(), "error_stability_param: no records");
  std::map<int, std::pair<double, int>> per_train;  // train_index -> (sum, count)
  for (const auto& r : records) {
    auto& acc = per_train[r.train_index];
    acc.first += r.beta_hat;
    acc.second += 1;
  }
  double sup = 0.0;
  for (const auto& [idx, acc] : per_train) sup = std::max(sup, acc.first / acc.second);
  return sup;
}

/// Named bound values plus the inputs that produced them.
struct BoundReport {
  std::map<std::string, double> values;
  std::map<std::string, bool> verdicts;
  BoundInputs inputs;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["bounds"] = values;
    j["verdicts"] = verdicts;
    j["inputs"] = {{"m", inputs.m},
                   {"delta", inputs.delta},
                   {"M_l", inputs.M_l},
                   {"sup_E_beta", inputs.sup_E_beta},
                   {"M_beta", inputs.M_beta},
                   {"eta_slack", inputs.eta_slack},
                   {"beta_H", inputs.beta_H},
                   {"kernel",
                    {{"sigma", inputs.kernel.sigma},
                     {"kappa", inputs.kernel.kappa},
                     {"e_kappa", inputs.kernel.e_kappa},
                     {"lambda", inputs.kernel.lambda},
                     {"B", inputs.kernel.B}}},
                   {"sgd",
                    {{"L", inputs.sgd.L},
                     {"L_i", inputs.sgd.L_i},
                     {"L_z", inputs.sgd.L_z},
                     {"alpha", inputs.sgd.alpha},
                     {"c", inputs.sgd.c},
                     {"T", inputs.sgd.T},
                     {"mu", inputs.sgd.mu},
                     {"eta_schedule_sum", inputs.sgd.eta_schedule_sum}}}};
    return j;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("BoundReport: cannot open '" + path + "'");
    out << "bound_name,value\n";
    for (const auto& [name, value] : values)
      out << name << "," << csv::format_double(value) << "\n";
  }
};

}  // namespace elastab

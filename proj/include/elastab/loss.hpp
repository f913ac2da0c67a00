#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "elastab/common.hpp"
#include "elastab/data.hpp"
#include "elastab/model.hpp"

namespace elastab {

enum class LossFamily {
  squared,          // (f(x) - y)^2
  eps_insensitive,  // max(0, |f(x) - y| - tau)
  softmax_xent,     // -log softmax_y(logits)
  toy_exp           // z^2 exp(-theta^2), scalar theta, z = x(0)
};

inline std::string loss_name(LossFamily f) {
  switch (f) {
    case LossFamily::squared: return "squared";
    case LossFamily::eps_insensitive: return "eps_insensitive";
    case LossFamily::softmax_xent: return "softmax_xent";
    case LossFamily::toy_exp: return "toy_exp";
  }
  return "?";
}

/// Loss family plus the analytic constants the bound calculators consume:
/// M_l (loss bound on the declared domain), the sigma-admissibility
/// constant, and the smoothness constant in theta where finite.
struct LossSpec {
  LossFamily family = LossFamily::squared;
  double tau = 0.0;
  double M_l = 0.0;
  double sigma_admissible = 0.0;
  double alpha_smooth = std::numeric_limits<double>::quiet_NaN();

  static LossSpec squared(double M_l = 0.0, double sigma = 0.0) {
    LossSpec s;
    s.family = LossFamily::squared;
    s.M_l = M_l;
    s.sigma_admissible = sigma;
    return s;
  }
  static LossSpec eps_insensitive(double tau, double M_l = 0.0) {
    require(tau >= 0.0, "eps_insensitive: tau must be >= 0");
    LossSpec s;
    s.family = LossFamily::eps_insensitive;
    s.tau = tau;
    s.M_l = M_l;
    s.sigma_admissible = 1.0;  // cost is 1-Lipschitz in the prediction
    return s;
  }
  static LossSpec softmax_xent(double M_l = 0.0) {
    LossSpec s;
    s.family = LossFamily::softmax_xent;
    s.M_l = M_l;
    return s;
  }
  static LossSpec toy_exp() {
    LossSpec s;
    s.family = LossFamily::toy_exp;
    s.M_l = 1.0;          // z in [0,1] gives l <= z^2 <= 1
    s.alpha_smooth = 2.0;  // sup over theta of |d^2/dtheta^2| at z = 1
    return s;
  }
};

namespace detail {
inline int example_class(const Example& z) {
  if (z.class_tag) return *z.class_tag;
  throw std::invalid_argument("softmax_xent: example carries no class tag");
}

inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
  Eigen::VectorXd e = shifted.array().exp();
  return e / e.sum();
}

/// Kernel evaluations of x against the model's support rows.
inline Eigen::VectorXd kernel_column(const TrainedModel& m, const Eigen::VectorXd& x) {
  Eigen::VectorXd k(m.support_x.rows());
  for (int j = 0; j < m.support_x.rows(); ++j)
    k(j) = m.kernel(m.support_x.row(j).transpose(), x);
  return k;
}
}  // namespace detail

/// Pure per-example loss. Regularization belongs to the training objective
/// and is never included here; the stability quantities of interest compare
/// this value across retrained models.
inline double loss(const TrainedModel& m, const LossSpec& spec, const Example& z) {
  switch (spec.family) {
    case LossFamily::squared: {
      const double r = m.predict(z.x) - z.y;
      return r * r;
    }
    case LossFamily::eps_insensitive: {
      const double r = std::abs(m.predict(z.x) - z.y);
      return std::max(0.0, r - spec.tau);
    }
    case LossFamily::softmax_xent: {
      const Eigen::VectorXd lg = m.logits(z.x);
      const Eigen::VectorXd shifted = lg.array() - lg.maxCoeff();
      const double lse = std::log(shifted.array().exp().sum());
      return lse - shifted(detail::example_class(z));
    }
    case LossFamily::toy_exp: {
      const double th = m.theta(0), zz = z.x(0);
      return zz * zz * std::exp(-th * th);
    }
  }
  return 0.0;
}

/// Gradient of the pure loss with respect to the model parameters.
/// eps_insensitive returns a subgradient (zero inside the tube).
inline Eigen::VectorXd grad(const TrainedModel& m, const LossSpec& spec, const Example& z) {
  switch (spec.family) {
    case LossFamily::squared: {
      const double r = m.predict(z.x) - z.y;
      switch (m.family) {
        case ModelFamily::linear_ridge:
          return 2.0 * r * z.x;
        case ModelFamily::kernel_ridge:
        case ModelFamily::svm_reg:
          return 2.0 * r * detail::kernel_column(m, z.x);
        case ModelFamily::two_layer: {
          const int k = m.hidden_k, d = m.input_dim;
          Eigen::VectorXd g = Eigen::VectorXd::Zero(m.theta.size());
          for (int rr = 0; rr < k; ++rr) {
            const double pre = m.theta.segment(rr * d, d).dot(z.x);
            if (pre > 0.0) {
              g.segment(rr * d, d) = (2.0 * r * m.theta(k * d + rr) / k) * z.x;
              g(k * d + rr) = 2.0 * r * pre / k;
            }
          }
          return g;
        }
        default:
          throw unsupported_operation("grad: squared loss unsupported for this family");
      }
    }
    case LossFamily::eps_insensitive: {
      if (m.family != ModelFamily::svm_reg && m.family != ModelFamily::kernel_ridge)
        throw unsupported_operation("grad: eps_insensitive needs a kernel model");
      const double r = m.predict(z.x) - z.y;
      const double s = std::abs(r) > spec.tau ? (r > 0 ? 1.0 : -1.0) : 0.0;
      if (s == 0.0) return Eigen::VectorXd::Zero(m.theta.size());
      return s * detail::kernel_column(m, z.x);
    }
    case LossFamily::softmax_xent: {
      if (m.family != ModelFamily::softmax_head)
        throw unsupported_operation("grad: softmax_xent needs a softmax_head model");
      const Eigen::VectorXd p = detail::softmax(m.logits(z.x));
      const Eigen::VectorXd phi = m.feature_map(z.x);
      const int K = m.num_classes, pdim = m.feature_map.output_dim;
      Eigen::VectorXd g(K * pdim);
      const int yc = detail::example_class(z);
      for (int c = 0; c < K; ++c)
        g.segment(c * pdim, pdim) = (p(c) - (c == yc ? 1.0 : 0.0)) * phi;
      return g;
    }
    case LossFamily::toy_exp: {
      const double th = m.theta(0), zz = z.x(0);
      Eigen::VectorXd g(1);
      g(0) = -2.0 * zz * zz * th * std::exp(-th * th);
      return g;
    }
  }
  return {};
}

/// Per-example Hessian of the pure loss. Only convex families (plus the
/// scalar toy loss at fixed z) are supported; two_layer and eps_insensitive
/// are refused. Kernel models must be converted to their primal linear form
/// first (see kernel_to_primal).
inline Eigen::MatrixXd loss_hessian(const TrainedModel& m, const LossSpec& spec,
                                    const Example& z) {
  switch (spec.family) {
    case LossFamily::squared: {
      if (m.family == ModelFamily::linear_ridge) return 2.0 * z.x * z.x.transpose();
      if (m.family == ModelFamily::two_layer)
        throw unsupported_operation("loss_hessian: refused for two_layer (nonconvex)");
      throw unsupported_operation(
          "loss_hessian: squared loss Hessian only in primal feature space");
    }
    case LossFamily::eps_insensitive:
      throw unsupported_operation("loss_hessian: eps_insensitive is non-smooth");
    case LossFamily::softmax_xent: {
      if (m.family != ModelFamily::softmax_head)
        throw unsupported_operation("loss_hessian: softmax_xent needs softmax_head");
      const Eigen::VectorXd p = detail::softmax(m.logits(z.x));
      const Eigen::VectorXd phi = m.feature_map(z.x);
      const int K = m.num_classes, pdim = m.feature_map.output_dim;
      const Eigen::MatrixXd phiphi = phi * phi.transpose();
      Eigen::MatrixXd H(K * pdim, K * pdim);
      for (int a = 0; a < K; ++a)
        for (int b = 0; b < K; ++b) {
          const double w = (a == b ? p(a) : 0.0) - p(a) * p(b);
          H.block(a * pdim, b * pdim, pdim, pdim) = w * phiphi;
        }
      return H;
    }
    case LossFamily::toy_exp: {
      const double th = m.theta(0), zz = z.x(0);
      Eigen::MatrixXd H(1, 1);
      H(0, 0) = 2.0 * zz * zz * std::exp(-th * th) * (2.0 * th * th - 1.0);
      return H;
    }
  }
  return {};
}

/// Declared domain for Lipschitz estimates of the squared loss.
struct LossDomain {
  bool bounded = false;
  double sup_abs_pred = 0.0;  // bound on |f(x)| over the domain
  double label_bound = 0.0;   // bound on |y|
};

/// Per-example Lipschitz constant L(z) of the loss in the parameters.
inline double lipschitz_of(const LossSpec& spec, const Example& z, const LossDomain& domain) {
  switch (spec.family) {
    case LossFamily::toy_exp: {
      // sup_theta |2 z^2 theta e^{-theta^2}| attained at theta = 1/sqrt(2)
      const double zz = z.x(0);
      return std::sqrt(2.0) * std::exp(-0.5) * zz * zz;
    }
    case LossFamily::squared: {
      require(domain.bounded, "lipschitz_of: squared loss needs a bounded domain");
      return 2.0 * (domain.sup_abs_pred + domain.label_bound) * z.x.norm();
    }
    default:
      throw unsupported_operation("lipschitz_of: only toy_exp and bounded squared");
  }
}

/// Primal linear form of a bilinear-kernel dual model: w = sum_j a_j x_j.
/// Predictions agree exactly; grad/Hessian become available in R^d.
inline TrainedModel kernel_to_primal(const TrainedModel& m) {
  if ((m.family != ModelFamily::kernel_ridge && m.family != ModelFamily::svm_reg) ||
      m.kernel.kind != KernelKind::bilinear)
    throw unsupported_operation("kernel_to_primal: needs a bilinear-kernel dual model");
  TrainedModel out;
  out.family = ModelFamily::linear_ridge;
  out.theta = m.support_x.transpose() * m.theta;
  out.lambda = m.lambda;
  out.train_m = m.train_m;
  out.seed = m.seed;
  return out;
}

}  // namespace elastab

#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "elastab/common.hpp"
#include "elastab/data.hpp"

namespace elastab {

enum class KernelKind { bilinear, rbf };

/// Positive semi-definite kernel plus its point-evaluation factor
/// kappa(x) = sqrt(K(x, x)). kappa_bound is sup_x kappa(x) over the
/// declared data domain (for the bilinear kernel this is the norm bound
/// B' of the dataset; for RBF it is 1).
struct KernelSpec {
  KernelKind kind = KernelKind::bilinear;
  double gamma = 1.0;  // rbf width parameter, unused for bilinear
  double kappa_bound = 0.0;

  double operator()(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    switch (kind) {
      case KernelKind::bilinear:
        return a.dot(b);
      case KernelKind::rbf:
        return std::exp(-gamma * (a - b).squaredNorm());
    }
    return 0.0;
  }

  double kappa(const Eigen::VectorXd& x) const {
    return kind == KernelKind::bilinear ? x.norm() : 1.0;
  }
};

inline KernelSpec bilinear_kernel(double norm_bound) {
  return KernelSpec{KernelKind::bilinear, 1.0, norm_bound};
}

inline KernelSpec rbf_kernel(double gamma) {
  require(gamma > 0.0, "rbf_kernel: gamma must be positive");
  return KernelSpec{KernelKind::rbf, gamma, 1.0};
}

/// Gram matrix over the rows of X.
inline Eigen::MatrixXd gram_matrix(const KernelSpec& kernel, const Eigen::MatrixXd& X) {
  if (kernel.kind == KernelKind::bilinear) return X * X.transpose();
  const int n = static_cast<int>(X.rows());
  Eigen::MatrixXd G(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      const double v = kernel(X.row(i).transpose(), X.row(j).transpose());
      G(i, j) = v;
      G(j, i) = v;
    }
  }
  return G;
}

}  // namespace elastab

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "elastab/common.hpp"
#include "elastab/data.hpp"
#include "elastab/loss.hpp"
#include "elastab/model.hpp"

namespace elastab {

/// Step-size schedule and sampling plan for the SGD stability probes.
struct SGDConfig {
  enum class Schedule { constant, inverse };

  int T = 1;
  Schedule schedule = Schedule::constant;
  double eta = 0.1;                                     // constant schedule
  double c = 1.0;                                       // inverse: eta_t = min(c/t, cap)
  double cap = std::numeric_limits<double>::infinity();  // smoothness clamp, e.g. 2/alpha
  int batch = 1;
  std::uint64_t seed = 0;
  std::optional<double> projection_radius;

  double eta_at(int t) const {  // t is 1-based
    if (schedule == Schedule::constant) return eta;
    return std::min(c / t, cap);
  }

  void validate() const {
    require(T >= 0, "SGDConfig: T must be >= 0");
    require(batch >= 1, "SGDConfig: batch must be >= 1");
    if (schedule == Schedule::constant)
      require(eta > 0.0, "SGDConfig: eta must be positive");
    else
      require(c > 0.0 && cap > 0.0, "SGDConfig: c and cap must be positive");
    if (projection_radius)
      require(*projection_radius > 0.0, "SGDConfig: projection radius must be positive");
  }
};

/// Loss/gradient pair evolved by the probes. Kept separate from
/// TrainedModel so scalar toy objectives and penalized variants plug in
/// without a trainer.
struct SgdProblem {
  int dim = 1;
  std::function<double(const Eigen::VectorXd&, const Example&)> loss;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Example&)> grad;
};

/// Squared loss on a linear predictor.
inline SgdProblem ridge_sgd_problem(int d) {
  SgdProblem p;
  p.dim = d;
  p.loss = [](const Eigen::VectorXd& th, const Example& z) {
    const double r = th.dot(z.x) - z.y;
    return r * r;
  };
  p.grad = [](const Eigen::VectorXd& th, const Example& z) {
    return Eigen::VectorXd(2.0 * (th.dot(z.x) - z.y) * z.x);
  };
  return p;
}

/// Squared loss plus (mu/2)|theta|^2; mu-strongly convex.
inline SgdProblem penalized_ridge_sgd_problem(int d, double mu) {
  require(mu > 0.0, "penalized_ridge_sgd_problem: mu must be positive");
  SgdProblem p;
  p.dim = d;
  p.loss = [mu](const Eigen::VectorXd& th, const Example& z) {
    const double r = th.dot(z.x) - z.y;
    return r * r + 0.5 * mu * th.squaredNorm();
  };
  p.grad = [mu](const Eigen::VectorXd& th, const Example& z) {
    return Eigen::VectorXd(2.0 * (th.dot(z.x) - z.y) * z.x + mu * th);
  };
  return p;
}

/// Scalar nonconvex toy loss z^2 exp(-theta^2) with z = x(0).
inline SgdProblem toy_exp_sgd_problem() {
  SgdProblem p;
  p.dim = 1;
  p.loss = [](const Eigen::VectorXd& th, const Example& z) {
    return z.x(0) * z.x(0) * std::exp(-th(0) * th(0));
  };
  p.grad = [](const Eigen::VectorXd& th, const Example& z) {
    Eigen::VectorXd g(1);
    g(0) = -2.0 * z.x(0) * z.x(0) * th(0) * std::exp(-th(0) * th(0));
    return g;
  };
  return p;
}

/// |l(theta - eta grad l(theta, z_i), z) - l(theta, z)|: loss change at z
/// caused by one small probing gradient step on z_i.
inline double stepwise_sensitivity(const TrainedModel& model, const LossSpec& spec,
                                   const Example& z_i, const Example& z,
                                   double eta_probe = 1e-6) {
  require(eta_probe > 0.0, "stepwise_sensitivity: eta_probe must be positive");
  const Eigen::VectorXd gi = grad(model, spec, z_i);
  if (gi.norm() == 0.0) return 0.0;
  const TrainedModel stepped = model.with_theta(model.theta - eta_probe * gi);
  return std::abs(loss(stepped, spec, z) - loss(model, spec, z));
}

/// Coupled index stream for SGD on S and on S \ {i}. The S-side draw is
/// uniform on {0..m-1}; the removed-side draw substitutes a redraw from the
/// (m-1)-set whenever the S-side hits i, which leaves it exactly uniform on
/// {0..m-1} \ {i}. The two indices coincide whenever the S draw is not i.
class CoupledIndexSampler {
 public:
  CoupledIndexSampler(int m, int i, std::uint64_t seed) : m_(m), i_(i), rng_(seed) {
    require(m >= 2, "CoupledIndexSampler: m must be >= 2");
    require(i >= 0 && i < m, "CoupledIndexSampler: i out of range");
  }

  std::pair<int, int> next() {
    const int a = static_cast<int>(rng_.index(m_));
    if (a != i_) return {a, a};
    const int r = static_cast<int>(rng_.index(m_ - 1));
    return {a, r < i_ ? r : r + 1};
  }

 private:
  int m_;
  int i_;
  Rng rng_;
};

/// Parameter divergence of two coupled SGD runs, one per step.
struct CouplingTrace {
  int removed_index = 0;
  std::vector<double> delta;            // size T+1, delta[0] = 0
  std::vector<double> eta_used;         // size T
  std::vector<char> indices_differ;     // size T
  std::vector<double> step_grad_bound;  // size T: |g_S| + |g_loo| that step
  Eigen::VectorXd theta_S, theta_loo;

  double final_delta() const { return delta.back(); }
};

inline double loss_gap_at(const CouplingTrace& trace, const SgdProblem& problem,
                          const Example& z) {
  return std::abs(problem.loss(trace.theta_S, z) - problem.loss(trace.theta_loo, z));
}

/// Empirical gradient-norm maxima along the visited trajectories; stands in
/// for the Lipschitz constants when no closed form exists.
struct EnvelopeStats {
  double max_grad_removed = 0.0;  // L(z_i)
  double max_grad_any = 0.0;      // L
  double max_grad_probe = 0.0;    // L(z) of the probe example
};

/// Called after each update with (t, theta_S, theta_loo); t runs 1..T.
using StepObserver =
    std::function<void(int, const Eigen::VectorXd&, const Eigen::VectorXd&)>;

/// Runs SGD on S and on S \ {i} with coupled index draws sharing one seed.
/// batch >= m switches to deterministic full-batch gradients (each side
/// averaging over its own examples).
inline CouplingTrace coupled_run(const Dataset& ds, int i, const SgdProblem& problem,
                                 const SGDConfig& cfg, const Eigen::VectorXd& theta0,
                                 const Example* probe = nullptr,
                                 EnvelopeStats* stats = nullptr,
                                 const StepObserver& on_step = nullptr) {
  cfg.validate();
  const int m = ds.m();
  require(i >= 0 && i < m, "coupled_run: i out of range");
  require(theta0.size() == problem.dim, "coupled_run: theta0 dimension mismatch");

  CoupledIndexSampler sampler(m, i, cfg.seed);
  Eigen::VectorXd th_s = theta0, th_l = theta0;
  CouplingTrace trace;
  trace.removed_index = i;
  trace.delta.push_back(0.0);

  const bool full_batch = cfg.batch >= m;
  const auto track = [&](const Eigen::VectorXd& th) {
    if (!stats) return;
    for (int j = 0; j < m; ++j) {
      const double n = problem.grad(th, ds[j]).norm();
      stats->max_grad_any = std::max(stats->max_grad_any, n);
      if (j == i) stats->max_grad_removed = std::max(stats->max_grad_removed, n);
    }
    if (probe)
      stats->max_grad_probe =
          std::max(stats->max_grad_probe, problem.grad(th, *probe).norm());
  };

  for (int t = 1; t <= cfg.T; ++t) {
    track(th_s);
    track(th_l);
    const double eta = cfg.eta_at(t);
    Eigen::VectorXd g_s = Eigen::VectorXd::Zero(problem.dim);
    Eigen::VectorXd g_l = Eigen::VectorXd::Zero(problem.dim);
    bool differ = false;
    if (full_batch) {
      for (int j = 0; j < m; ++j) g_s += problem.grad(th_s, ds[j]);
      g_s /= m;
      for (int j = 0; j < m; ++j)
        if (j != i) g_l += problem.grad(th_l, ds[j]);
      g_l /= (m - 1);
    } else {
      for (int b = 0; b < cfg.batch; ++b) {
        const auto [a, bidx] = sampler.next();
        if (a != bidx) differ = true;
        g_s += problem.grad(th_s, ds[a]);
        g_l += problem.grad(th_l, ds[bidx]);
      }
      g_s /= cfg.batch;
      g_l /= cfg.batch;
    }
    trace.step_grad_bound.push_back(g_s.norm() + g_l.norm());
    trace.indices_differ.push_back(differ ? 1 : 0);
    trace.eta_used.push_back(eta);
    th_s -= eta * g_s;
    th_l -= eta * g_l;
    if (cfg.projection_radius) {
      const double r = *cfg.projection_radius;
      if (th_s.norm() > r) th_s *= r / th_s.norm();
      if (th_l.norm() > r) th_l *= r / th_l.norm();
    }
    trace.delta.push_back((th_s - th_l).norm());
    if (on_step) on_step(t, th_s, th_l);
  }
  track(th_s);
  track(th_l);

  trace.theta_S = std::move(th_s);
  trace.theta_loo = std::move(th_l);
  return trace;
}

struct StabilityEstimate {
  double mean_gap = 0.0;
  double stderr_gap = 0.0;
  int trials = 0;
};

/// Monte Carlo estimate of |E l(A_S, z) - E l(A_{S \ i}, z)| over the
/// algorithm's index randomness. Trials use derived seeds seed + k; the gap
/// of means is the mean of coupled per-trial gaps.
inline StabilityEstimate empirical_le_stability(const Dataset& ds, int i, const Example& z,
                                                const SgdProblem& problem,
                                                const SGDConfig& cfg,
                                                const Eigen::VectorXd& theta0, int trials) {
  require(trials >= 2, "empirical_le_stability: trials must be >= 2");
  std::vector<double> gaps(trials);
  for (int k = 0; k < trials; ++k) {
    SGDConfig ck = cfg;
    ck.seed = cfg.seed + static_cast<std::uint64_t>(k);
    const CouplingTrace trace = coupled_run(ds, i, problem, ck, theta0);
    gaps[k] = problem.loss(trace.theta_S, z) - problem.loss(trace.theta_loo, z);
  }
  double mean = 0.0;
  for (double g : gaps) mean += g;
  mean /= trials;
  double var = 0.0;
  for (double g : gaps) var += (g - mean) * (g - mean);
  var /= (trials - 1);
  StabilityEstimate est;
  est.mean_gap = std::abs(mean);
  est.stderr_gap = std::sqrt(var / trials);
  est.trials = trials;
  return est;
}

}  // namespace elastab

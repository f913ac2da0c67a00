#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <string>

#include "json.hpp"

#include "elastab/common.hpp"
#include "elastab/data.hpp"
#include "elastab/kernel.hpp"

namespace elastab {

enum class ModelFamily {
  linear_ridge,   // theta = w in R^d
  kernel_ridge,   // theta = dual coefficients over support_x rows
  svm_reg,        // dual coefficients, eps-insensitive objective
  softmax_head,   // theta = K x p head over frozen random features
  two_layer,      // theta = [vec(W) (k rows of d), a (k)]
  toy_scalar      // theta = single scalar, used with the toy_exp loss
};

inline std::string family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::linear_ridge: return "linear_ridge";
    case ModelFamily::kernel_ridge: return "kernel_ridge";
    case ModelFamily::svm_reg: return "svm_reg";
    case ModelFamily::softmax_head: return "softmax_head";
    case ModelFamily::two_layer: return "two_layer";
    case ModelFamily::toy_scalar: return "toy_scalar";
  }
  return "?";
}

inline ModelFamily family_from_name(const std::string& s) {
  if (s == "linear_ridge") return ModelFamily::linear_ridge;
  if (s == "kernel_ridge") return ModelFamily::kernel_ridge;
  if (s == "svm_reg") return ModelFamily::svm_reg;
  if (s == "softmax_head") return ModelFamily::softmax_head;
  if (s == "two_layer") return ModelFamily::two_layer;
  if (s == "toy_scalar") return ModelFamily::toy_scalar;
  throw std::invalid_argument("unknown model family '" + s + "'");
}

/// Frozen random ReLU feature map phi(x) = relu(W x + b). W and b are a
/// deterministic function of (input_dim, output_dim, seed), so serializing
/// the three scalars reproduces the map exactly.
struct FeatureMap {
  int input_dim = 0;
  int output_dim = 0;
  std::uint64_t seed = 0;
  Eigen::MatrixXd W;  // p x d
  Eigen::VectorXd b;  // p

  static FeatureMap random_relu(int input_dim, int output_dim, std::uint64_t seed) {
    require(input_dim >= 1 && output_dim >= 1, "FeatureMap: dims must be >= 1");
    FeatureMap fm;
    fm.input_dim = input_dim;
    fm.output_dim = output_dim;
    fm.seed = seed;
    Rng rng(seed);
    fm.W.resize(output_dim, input_dim);
    const double scale = std::sqrt(2.0 / input_dim);
    for (int i = 0; i < output_dim; ++i)
      for (int j = 0; j < input_dim; ++j) fm.W(i, j) = scale * rng.gaussian();
    fm.b.resize(output_dim);
    for (int i = 0; i < output_dim; ++i) fm.b(i) = rng.uniform(-0.5, 0.5);
    return fm;
  }

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const {
    return (W * x + b).cwiseMax(0.0);
  }
};

struct TrainedModel {
  ModelFamily family = ModelFamily::linear_ridge;
  Eigen::VectorXd theta;
  double lambda = 0.0;
  int train_m = 0;
  std::uint64_t seed = 0;

  // kernel families
  KernelSpec kernel{};
  double tau = 0.0;
  Eigen::MatrixXd support_x;  // rows the dual coefficients refer to
  double projection_radius = 0.0;  // > 0 when training projected onto a ball

  // softmax head
  FeatureMap feature_map{};
  int num_classes = 0;

  // two-layer net
  int hidden_k = 0;
  int input_dim = 0;

  TrainedModel with_theta(Eigen::VectorXd t) const {
    TrainedModel copy = *this;
    copy.theta = std::move(t);
    return copy;
  }

  /// Scalar regression output. softmax_head uses logits() instead.
  double predict(const Eigen::VectorXd& x) const {
    switch (family) {
      case ModelFamily::linear_ridge:
        return theta.dot(x);
      case ModelFamily::kernel_ridge:
      case ModelFamily::svm_reg: {
        double s = 0.0;
        for (int j = 0; j < support_x.rows(); ++j)
          s += theta(j) * kernel(support_x.row(j).transpose(), x);
        return s;
      }
      case ModelFamily::two_layer: {
        const int k = hidden_k, d = input_dim;
        double s = 0.0;
        for (int r = 0; r < k; ++r) {
          const double pre = theta.segment(r * d, d).dot(x);
          if (pre > 0.0) s += theta(k * d + r) * pre;
        }
        return s / k;
      }
      case ModelFamily::softmax_head:
        throw unsupported_operation("predict: softmax_head produces logits, not a scalar");
      case ModelFamily::toy_scalar:
        throw unsupported_operation("predict: toy_scalar has no predictor");
    }
    return 0.0;
  }

  Eigen::VectorXd logits(const Eigen::VectorXd& x) const {
    if (family != ModelFamily::softmax_head)
      throw unsupported_operation("logits: only defined for softmax_head");
    const Eigen::VectorXd phi = feature_map(x);
    const int p = feature_map.output_dim;
    Eigen::VectorXd out(num_classes);
    for (int c = 0; c < num_classes; ++c) out(c) = theta.segment(c * p, p).dot(phi);
    return out;
  }

  int argmax_class(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd z = logits(x);
    int best = 0;
    z.maxCoeff(&best);
    return best;
  }
};

namespace detail {
inline nlohmann::json vec_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}
inline Eigen::VectorXd vec_from_json(const nlohmann::json& a) {
  Eigen::VectorXd v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<int>(i)) = a[i].get<double>();
  return v;
}
inline nlohmann::json mat_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i).transpose()));
  return rows;
}
inline Eigen::MatrixXd mat_from_json(const nlohmann::json& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.row(static_cast<int>(i)) = vec_from_json(rows[i]).transpose();
  return m;
}
}  // namespace detail

inline nlohmann::json model_to_json(const TrainedModel& m) {
  nlohmann::json j;
  j["family"] = family_name(m.family);
  j["lambda"] = m.lambda;
  j["train_m"] = m.train_m;
  j["seed"] = m.seed;
  j["theta"] = detail::vec_to_json(m.theta);
  j["projection_radius"] = m.projection_radius;
  if (m.family == ModelFamily::kernel_ridge || m.family == ModelFamily::svm_reg) {
    j["kernel"] = {{"kind", m.kernel.kind == KernelKind::bilinear ? "bilinear" : "rbf"},
                   {"gamma", m.kernel.gamma},
                   {"kappa_bound", m.kernel.kappa_bound}};
    j["tau"] = m.tau;
    j["support_x"] = detail::mat_to_json(m.support_x);
  }
  if (m.family == ModelFamily::softmax_head) {
    j["feature_map"] = {{"input_dim", m.feature_map.input_dim},
                        {"output_dim", m.feature_map.output_dim},
                        {"seed", m.feature_map.seed}};
    j["num_classes"] = m.num_classes;
  }
  if (m.family == ModelFamily::two_layer) {
    j["hidden_k"] = m.hidden_k;
    j["input_dim"] = m.input_dim;
  }
  return j;
}

inline TrainedModel model_from_json(const nlohmann::json& j) {
  TrainedModel m;
  m.family = family_from_name(j.at("family").get<std::string>());
  m.lambda = j.at("lambda").get<double>();
  m.train_m = j.at("train_m").get<int>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.theta = detail::vec_from_json(j.at("theta"));
  m.projection_radius = j.value("projection_radius", 0.0);
  if (m.family == ModelFamily::kernel_ridge || m.family == ModelFamily::svm_reg) {
    const auto& k = j.at("kernel");
    m.kernel.kind = k.at("kind").get<std::string>() == "bilinear" ? KernelKind::bilinear
                                                                  : KernelKind::rbf;
    m.kernel.gamma = k.at("gamma").get<double>();
    m.kernel.kappa_bound = k.at("kappa_bound").get<double>();
    m.tau = j.value("tau", 0.0);
    m.support_x = detail::mat_from_json(j.at("support_x"));
  }
  if (m.family == ModelFamily::softmax_head) {
    const auto& f = j.at("feature_map");
    m.feature_map = FeatureMap::random_relu(f.at("input_dim").get<int>(),
                                            f.at("output_dim").get<int>(),
                                            f.at("seed").get<std::uint64_t>());
    m.num_classes = j.at("num_classes").get<int>();
  }
  if (m.family == ModelFamily::two_layer) {
    m.hidden_k = j.at("hidden_k").get<int>();
    m.input_dim = j.at("input_dim").get<int>();
  }
  return m;
}

inline void save_model(const TrainedModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_model: cannot open '" + path + "'");
  out << model_to_json(m).dump(2) << "\n";
}

inline TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_model: cannot open '" + path + "'");
  nlohmann::json j;
  in >> j;
  return model_from_json(j);
}

}  // namespace elastab

#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "elastab/common.hpp"
#include "elastab/data.hpp"
#include "elastab/influence.hpp"
#include "elastab/sgdprobe.hpp"
#include "elastab/stability.hpp"
#include "elastab/train.hpp"

namespace elastab {

/// Mean |loss change| aggregated over (train class, test class) cells.
struct ClassSensitivityMatrix {
  int K = 0;
  Eigen::MatrixXd mean;   // K x K, rows = train class, cols = test class
  Eigen::MatrixXi count;  // pairs per cell
  SensitivityMethod method = SensitivityMethod::influence;

  double diagonal_mean() const {
    double s = 0.0;
    for (int a = 0; a < K; ++a) s += mean(a, a);
    return s / K;
  }

  double off_diagonal_mean() const {
    double s = 0.0;
    int n = 0;
    for (int a = 0; a < K; ++a)
      for (int b = 0; b < K; ++b)
        if (a != b) {
          s += mean(a, b);
          ++n;
        }
    return n ? s / n : 0.0;
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("ClassSensitivityMatrix: cannot open '" + path + "'");
    out << "train_class";
    for (int b = 0; b < K; ++b) out << ",test_" << b;
    out << "\n";
    for (int a = 0; a < K; ++a) {
      out << a;
      for (int b = 0; b < K; ++b) out << "," << csv::format_double(mean(a, b));
      out << "\n";
    }
  }
};

inline ClassSensitivityMatrix class_matrix(const std::vector<SensitivityRecord>& records) {
  require(!records.empty(), "class_matrix: no records");
  int K = 0;
  for (const auto& r : records) {
    if (r.train_class < 0 || r.test_class < 0)
      throw std::invalid_argument("class_matrix: record without class tags");
    K = std::max({K, r.train_class + 1, r.test_class + 1});
  }
  ClassSensitivityMatrix cm;
  cm.K = K;
  cm.method = records.front().method;
  cm.mean = Eigen::MatrixXd::Zero(K, K);
  cm.count = Eigen::MatrixXi::Zero(K, K);
  for (const auto& r : records) {
    cm.mean(r.train_class, r.test_class) += r.beta_hat;
    cm.count(r.train_class, r.test_class) += 1;
  }
  for (int a = 0; a < K; ++a)
    for (int b = 0; b < K; ++b)
      if (cm.count(a, b) > 0) cm.mean(a, b) /= cm.count(a, b);
  return cm;
}

/// Worst-pair versus averaged sensitivity, both reported in the m-free
/// convention (raw beta_hat values are multiplied by m).
struct StabilitySummary {
  double M_beta_hat = 0.0;      // m * max beta_hat over all pairs
  double sup_E_beta_hat = 0.0;  // m * max over train points of mean over test points
  double mean_beta = 0.0;       // m * overall mean
  double ratio = 1.0;           // M_beta_hat / sup_E_beta_hat
  int m = 0;

  nlohmann::json to_json() const {
    return {{"M_beta_hat", M_beta_hat},
            {"sup_E_beta_hat", sup_E_beta_hat},
            {"mean_beta", mean_beta},
            {"ratio", ratio},
            {"m", m},
            {"convention", "times_m"}};
  }
};

inline StabilitySummary stability_summary(const std::vector<SensitivityRecord>& records,
                                          int m) {
  require(!records.empty(), "stability_summary: no records");
  require(m >= 1, "stability_summary: m must be >= 1");
  double max_beta = 0.0, total = 0.0;
  std::map<int, std::pair<double, int>> per_train;
  for (const auto& r : records) {
    max_beta = std::max(max_beta, r.beta_hat);
    total += r.beta_hat;
    auto& acc = per_train[r.train_index];
    acc.first += r.beta_hat;
    acc.second += 1;
  }
  double sup_mean = 0.0;
  for (const auto& [idx, acc] : per_train)
    sup_mean = std::max(sup_mean, acc.first / acc.second);
  StabilitySummary s;
  s.m = m;
  s.M_beta_hat = m * max_beta;
  s.sup_E_beta_hat = m * sup_mean;
  s.mean_beta = m * total / records.size();
  s.ratio = s.sup_E_beta_hat > 0.0 ? s.M_beta_hat / s.sup_E_beta_hat
                                   : std::numeric_limits<double>::infinity();
  return s;
}

// ---------------------------------------------------------------------------
// Pipelines. Each one consumes a JSON config, writes its artifacts plus a
// run manifest under `out_dir`, and returns the list of files written.
// Randomized outputs embed the seed in the filename.
// ---------------------------------------------------------------------------

namespace pipelines {

inline Dataset dataset_from_config(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "two_cluster")
    return gen_two_cluster(j.at("d").get<int>(), j.at("m").get<int>(),
                           j.at("seed").get<std::uint64_t>());
  if (kind == "blobs")
    return gen_blobs(j.at("d").get<int>(), j.at("K").get<int>(), j.at("per_class").get<int>(),
                     j.at("spread").get<double>(), j.at("seed").get<std::uint64_t>());
  if (kind == "csv") return load_csv(j.at("path").get<std::string>());
  throw std::invalid_argument("dataset config: unknown kind '" + kind + "'");
}

struct PreparedModel {
  TrainedModel model;
  LossSpec spec;
  double default_damping = 0.0;
};

/// Trains the configured family and pairs it with the loss the influence
/// machinery differentiates. Bilinear kernel ridge is converted to its
/// primal form so the Hessian lives in feature space.
inline PreparedModel model_from_config(const Dataset& ds, const nlohmann::json& j) {
  const std::string family = j.at("family").get<std::string>();
  PreparedModel out;
  if (family == "ridge") {
    out.model = train_ridge_closed_form(ds, j.at("lambda").get<double>());
    out.spec = LossSpec::squared();
    return out;
  }
  if (family == "kernel_ridge") {
    const KernelSpec kernel = bilinear_kernel(ds.norm_bound_Bprime());
    out.model = kernel_to_primal(
        train_kernel_ridge(ds, kernel, j.at("lambda").get<double>()));
    out.spec = LossSpec::squared();
    return out;
  }
  if (family == "softmax_head") {
    const int p = j.at("features").get<int>();
    const auto fm = FeatureMap::random_relu(ds.dim(), p, j.value("map_seed", 12345ull));
    out.model = train_softmax_head(ds, fm, j.at("lambda").get<double>(),
                                   j.at("epochs").get<int>(), j.at("lr").get<double>(),
                                   j.value("seed", 0ull));
    out.spec = LossSpec::softmax_xent();
    return out;
  }
  if (family == "two_layer") {
    out.model = train_two_layer(ds, j.at("k").get<int>(), j.at("lambda").get<double>(),
                                j.at("epochs").get<int>(), j.at("lr").get<double>(),
                                j.at("batch").get<int>(), j.value("seed", 0ull));
    out.spec = LossSpec::squared();
    out.default_damping = 1e-6;
    return out;
  }
  throw std::invalid_argument("model config: unsupported family '" + family +
                              "' for this pipeline");
}

/// Builds the Hessian and runs the sweep, raising the damping tenfold on a
/// stalled or indefinite solve. Returns the damping that succeeded.
inline std::pair<std::vector<SensitivityRecord>, double> sweep_with_adaptive_damping(
    const TrainedModel& model, const LossSpec& spec, const Dataset& train_ds,
    const Dataset& zprime_ds, const Dataset& test_ds, double damping) {
  HessianContext ctx = build_hessian(model, spec, train_ds, damping);
  for (int attempt = 0; attempt < 10; ++attempt) {
    try {
      return {pairwise_matrix(model, spec, ctx, zprime_ds, test_ds), ctx.damping};
    } catch (const numeric_error&) {
      ctx = ctx.with_damping(ctx.damping == 0.0 ? 1e-6 : ctx.damping * 10.0);
    }
  }
  throw numeric_error("sensitivity sweep: CG failed at every damping level");
}

inline void write_manifest(const std::filesystem::path& out_dir, const std::string& command,
                           const nlohmann::json& config, const nlohmann::json& extras,
                           const std::vector<std::string>& files) {
  nlohmann::json m;
  m["command"] = command;
  m["config"] = config;
  m["outputs"] = files;
  for (auto it = extras.begin(); it != extras.end(); ++it) m[it.key()] = it.value();
  std::ofstream out(out_dir / (command + "_manifest.json"), std::ios::binary);
  out << m.dump(2) << "\n";
}

/// Influence sweep -> records CSV (+ class matrix and summary when tagged).
inline std::vector<std::string> pipeline_sensitivity(const nlohmann::json& cfg,
                                                     const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const Dataset train_ds = dataset_from_config(cfg.at("dataset"));
  const Dataset test_ds = dataset_from_config(cfg.at("test_dataset"));
  const std::string zprime = cfg.value("zprime", std::string("train"));
  const Dataset zprime_ds =
      zprime == "fresh" ? dataset_from_config(cfg.at("zprime_dataset")) : train_ds;
  if (zprime != "train" && zprime != "fresh")
    throw std::invalid_argument("pipeline_sensitivity: zprime must be 'train' or 'fresh'");

  PreparedModel pm = model_from_config(train_ds, cfg.at("model"));
  const double damping = cfg.value("damping", pm.default_damping);
  auto [records, damping_used] = sweep_with_adaptive_damping(
      pm.model, pm.spec, train_ds, zprime_ds, test_ds, damping);

  const std::uint64_t seed = cfg.value("seed", 0ull);
  const std::string prefix = cfg.value("out_prefix", std::string("sensitivity")) +
                             "_seed" + std::to_string(seed);
  std::vector<std::string> files;
  const auto rec_path = std::filesystem::path(out_dir) / (prefix + "_records.csv");
  write_records_csv(records, rec_path.string());
  files.push_back(rec_path.string());

  nlohmann::json extras;
  extras["seed"] = seed;
  extras["damping"] = damping_used;
  extras["cg_tol"] = 1e-10;
  extras["zprime"] = zprime;

  if (zprime_ds.all_tagged() && test_ds.all_tagged()) {
    const auto cm = class_matrix(records);
    const auto cm_path = std::filesystem::path(out_dir) / (prefix + "_class_matrix.csv");
    cm.write_csv(cm_path.string());
    files.push_back(cm_path.string());
  }
  const auto summary = stability_summary(records, train_ds.m());
  const auto sum_path = std::filesystem::path(out_dir) / (prefix + "_summary.json");
  {
    std::ofstream out(sum_path, std::ios::binary);
    out << summary.to_json().dump(2) << "\n";
  }
  files.push_back(sum_path.string());
  write_manifest(out_dir, "sensitivity", cfg, extras, files);
  return files;
}

/// Influence-vs-exact-retraining validation -> summary JSON.
inline std::vector<std::string> pipeline_validate(const nlohmann::json& cfg,
                                                  const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const Dataset ds = dataset_from_config(cfg.at("dataset"));
  const Dataset test_ds = dataset_from_config(cfg.at("test_dataset"));
  const double lambda = cfg.at("lambda").get<double>();
  const int sample = cfg.at("sample").get<int>();
  const std::uint64_t seed = cfg.value("seed", 0ull);
  const ValidationSummary s = validate_if_vs_loo(ds, test_ds, lambda, sample, seed);

  const auto path = std::filesystem::path(out_dir) /
                    ("validate_seed" + std::to_string(seed) + "_summary.json");
  {
    std::ofstream out(path, std::ios::binary);
    out << nlohmann::json{{"median_rel_err", s.median_rel_err},
                          {"max_rel_err", s.max_rel_err},
                          {"pairs", s.pairs},
                          {"lambda", lambda}}
               .dump(2)
        << "\n";
  }
  nlohmann::json extras;
  extras["seed"] = seed;
  extras["cg_tol"] = 1e-10;
  extras["excluded_below"] = 1e-12;
  write_manifest(out_dir, "validate", cfg, extras, {path.string()});
  return {path.string()};
}

inline BoundInputs bound_inputs_from_config(const nlohmann::json& cfg) {
  if (!cfg.contains("m") || !cfg.contains("delta"))
    throw std::invalid_argument("bounds config: 'm' and 'delta' are required");
  BoundInputs in;
  in.m = cfg.at("m").get<int>();
  in.delta = cfg.at("delta").get<double>();
  in.M_l = cfg.value("M_l", 0.0);
  in.sup_E_beta = cfg.value("sup_E_beta", 0.0);
  in.M_beta = cfg.value("M_beta", 0.0);
  in.eta_slack = cfg.value("eta", 0.0);
  in.beta_H = cfg.value("beta_H", 0.0);
  if (cfg.contains("kernel")) {
    const auto& k = cfg.at("kernel");
    in.kernel.sigma = k.value("sigma", 0.0);
    in.kernel.kappa = k.value("kappa", 0.0);
    in.kernel.e_kappa = k.value("e_kappa", 0.0);
    in.kernel.lambda = k.value("lambda", 0.0);
    in.kernel.B = k.value("B", 0.0);
  }
  if (cfg.contains("sgd")) {
    const auto& s = cfg.at("sgd");
    in.sgd.L = s.value("L", 0.0);
    in.sgd.L_i = s.value("L_i", 0.0);
    in.sgd.L_z = s.value("L_z", 0.0);
    in.sgd.alpha = s.value("alpha", 0.0);
    in.sgd.c = s.value("c", 0.0);
    in.sgd.T = s.value("T", 0.0);
    in.sgd.mu = s.value("mu", 0.0);
    in.sgd.eta_schedule_sum = s.value("eta_schedule_sum", 0.0);
  }
  return in;
}

/// Every bound whose constants are present -> JSON + two-column CSV.
/// With "paper_text_kappa": true the kernel constants are squared before
/// use, matching the bilinear-kernel text variant (kappa = B'^2) instead of
/// the definition kappa(x) = sqrt(K(x,x)).
inline std::vector<std::string> pipeline_bounds(const nlohmann::json& cfg,
                                                const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  BoundReport report;
  report.inputs = bound_inputs_from_config(cfg);
  BoundInputs in = report.inputs;
  if (cfg.value("paper_text_kappa", false)) {
    in.kernel.kappa = in.kernel.kappa * in.kernel.kappa;
    in.kernel.e_kappa = in.kernel.e_kappa * in.kernel.e_kappa;
  }

  report.values["locally_elastic"] = bound_locally_elastic(in);
  report.values["uniform"] = bound_uniform(in);
  report.values["hypothesis"] = bound_hypothesis(in);
  report.verdicts["m_large_enough"] = m_large_enough_diagnostic(in);
  if (in.kernel.lambda > 0.0) {
    const auto [b1, b2] = svm_bounds(in);
    report.values["B1"] = b1;
    report.values["B2"] = b2;
    const auto [b3, b4] = rls_bounds(in);
    report.values["B3"] = b3;
    report.values["B4"] = b4;
    report.verdicts["condition_eq3"] = condition_eq3(in);
    report.values["kernel_beta_uniform"] =
        kernel_beta_uniform(in.kernel.sigma, in.kernel.kappa, in.kernel.lambda, in.m);
  }
  if (in.sgd.alpha > 0.0 && in.sgd.c > 0.0 && in.sgd.T > 0.0) {
    const auto [b5, b6] = sgd_bounds_b5_b6(in);
    report.values["B5"] = b5;
    report.values["B6"] = b6;
    report.values["sgd_beta_nonconvex_uniform"] = sgd_beta_nonconvex(
        in.sgd.L, in.sgd.L, in.sgd.L, in.sgd.alpha, in.sgd.c, in.sgd.T, in.m);
  }
  if (in.sgd.eta_schedule_sum > 0.0)
    report.values["sgd_beta_convex"] =
        sgd_beta_convex(in.sgd.L, in.sgd.L_i, in.sgd.L_z, in.sgd.eta_schedule_sum, in.m);
  if (in.sgd.mu > 0.0)
    report.values["sgd_beta_strongly_convex"] =
        sgd_beta_strongly_convex(in.sgd.L, in.sgd.L_i, in.sgd.L_z, in.sgd.mu, in.m);

  const auto json_path = std::filesystem::path(out_dir) / "bounds_report.json";
  {
    std::ofstream out(json_path, std::ios::binary);
    out << report.to_json().dump(2) << "\n";
  }
  const auto csv_path = std::filesystem::path(out_dir) / "bounds_report.csv";
  report.write_csv(csv_path.string());
  write_manifest(out_dir, "bounds", cfg, nlohmann::json::object(),
                 {json_path.string(), csv_path.string()});
  return {json_path.string(), csv_path.string()};
}

/// Stepwise probe sweep -> records CSV with method=stepwise.
inline std::vector<std::string> pipeline_sgd_probe(const nlohmann::json& cfg,
                                                   const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const Dataset train_ds = dataset_from_config(cfg.at("dataset"));
  const Dataset test_ds = dataset_from_config(cfg.at("test_dataset"));
  PreparedModel pm = model_from_config(train_ds, cfg.at("model"));
  const double eta_probe = cfg.value("eta_probe", 1e-6);
  const std::uint64_t seed = cfg.value("seed", 0ull);

  std::vector<SensitivityRecord> records;
  records.reserve(static_cast<std::size_t>(train_ds.m()) * test_ds.m());
  for (int i = 0; i < train_ds.m(); ++i)
    for (int t = 0; t < test_ds.m(); ++t) {
      SensitivityRecord r;
      r.train_index = i;
      r.test_id = t;
      r.train_class = train_ds[i].class_tag.value_or(-1);
      r.test_class = test_ds[t].class_tag.value_or(-1);
      r.beta_hat = stepwise_sensitivity(pm.model, pm.spec, train_ds[i], test_ds[t], eta_probe);
      r.method = SensitivityMethod::stepwise;
      records.push_back(r);
    }

  const std::string prefix = "sgd_probe_seed" + std::to_string(seed);
  const auto rec_path = std::filesystem::path(out_dir) / (prefix + "_records.csv");
  write_records_csv(records, rec_path.string());
  std::vector<std::string> files{rec_path.string()};
  if (train_ds.all_tagged() && test_ds.all_tagged()) {
    const auto cm = class_matrix(records);
    const auto cm_path = std::filesystem::path(out_dir) / (prefix + "_class_matrix.csv");
    cm.write_csv(cm_path.string());
    files.push_back(cm_path.string());
  }
  nlohmann::json extras;
  extras["seed"] = seed;
  extras["eta_probe"] = eta_probe;
  write_manifest(out_dir, "sgd_probe", cfg, extras, files);
  return files;
}

inline SGDConfig sgd_config_from_json(const nlohmann::json& j) {
  SGDConfig cfg;
  cfg.T = j.value("T", 1);
  const std::string sched = j.value("schedule", std::string("constant"));
  if (sched == "constant") {
    cfg.schedule = SGDConfig::Schedule::constant;
    cfg.eta = j.value("eta", 0.1);
  } else if (sched == "inverse") {
    cfg.schedule = SGDConfig::Schedule::inverse;
    cfg.c = j.value("c", 1.0);
    cfg.cap = j.value("cap", std::numeric_limits<double>::infinity());
  } else {
    throw std::invalid_argument("sgd config: unknown schedule '" + sched + "'");
  }
  cfg.batch = j.value("batch", 1);
  cfg.seed = j.value("seed", 0ull);
  if (j.contains("projection_radius"))
    cfg.projection_radius = j.at("projection_radius").get<double>();
  cfg.validate();
  return cfg;
}

inline SgdProblem sgd_problem_from_json(const nlohmann::json& j, int d) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "ridge") return ridge_sgd_problem(d);
  if (kind == "penalized_ridge")
    return penalized_ridge_sgd_problem(d, j.at("mu").get<double>());
  if (kind == "toy_exp") return toy_exp_sgd_problem();
  throw std::invalid_argument("sgd problem config: unknown kind '" + kind + "'");
}

/// One coupled trajectory pair -> trace CSV `t,delta_t,loss_S,loss_S_minus_i`
/// where the loss columns are each run's mean training loss at step t.
inline std::vector<std::string> pipeline_couple(const nlohmann::json& cfg,
                                                const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const Dataset ds = dataset_from_config(cfg.at("dataset"));
  const SgdProblem problem = sgd_problem_from_json(cfg.at("problem"), ds.dim());
  SGDConfig sc = sgd_config_from_json(cfg.at("sgd"));
  const int i = cfg.at("removed_index").get<int>();
  Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(problem.dim);
  if (cfg.contains("theta0")) {
    const auto& t0 = cfg.at("theta0");
    require(static_cast<int>(t0.size()) == problem.dim, "pipeline_couple: theta0 size");
    for (int q = 0; q < problem.dim; ++q) theta0(q) = t0[q].get<double>();
  }

  std::vector<double> loss_s, loss_l;
  const auto mean_losses = [&](const Eigen::VectorXd& ths, const Eigen::VectorXd& thl) {
    double a = 0.0, b = 0.0;
    for (int j = 0; j < ds.m(); ++j) {
      a += problem.loss(ths, ds[j]);
      if (j != i) b += problem.loss(thl, ds[j]);
    }
    loss_s.push_back(a / ds.m());
    loss_l.push_back(b / (ds.m() - 1));
  };

  mean_losses(theta0, theta0);
  const CouplingTrace trace = coupled_run(
      ds, i, problem, sc, theta0, nullptr, nullptr,
      [&](int, const Eigen::VectorXd& ths, const Eigen::VectorXd& thl) {
        mean_losses(ths, thl);
      });
  const std::vector<double>& deltas = trace.delta;

  const auto path = std::filesystem::path(out_dir) /
                    ("couple_seed" + std::to_string(sc.seed) + "_trace.csv");
  {
    std::ofstream out(path, std::ios::binary);
    out << "t,delta_t,loss_S,loss_S_minus_i\n";
    for (std::size_t t = 0; t < deltas.size(); ++t)
      out << t << "," << csv::format_double(deltas[t]) << ","
          << csv::format_double(loss_s[t]) << "," << csv::format_double(loss_l[t]) << "\n";
  }
  nlohmann::json extras;
  extras["seed"] = sc.seed;
  extras["removed_index"] = i;
  write_manifest(out_dir, "couple", cfg, extras, {path.string()});
  return {path.string()};
}

/// Records CSV -> stability summary JSON.
inline std::vector<std::string> pipeline_summary(const nlohmann::json& cfg,
                                                 const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto records = load_records_csv(cfg.at("records").get<std::string>());
  const int m = cfg.at("m").get<int>();
  const auto summary = stability_summary(records, m);
  const auto path = std::filesystem::path(out_dir) / "summary.json";
  {
    std::ofstream out(path, std::ios::binary);
    out << summary.to_json().dump(2) << "\n";
  }
  write_manifest(out_dir, "summary", cfg, nlohmann::json::object(), {path.string()});
  return {path.string()};
}

}  // namespace pipelines
}  // namespace elastab

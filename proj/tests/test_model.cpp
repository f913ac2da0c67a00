#include <gtest/gtest.h>

#include <cmath>

#include "elastab/loss.hpp"
#include "elastab/model.hpp"
#include "elastab/train.hpp"

using namespace elastab;

namespace {

Example make_example(std::initializer_list<double> xs, double y, int tag = -1) {
  Example e;
  e.x.resize(static_cast<int>(xs.size()));
  int i = 0;
  for (double v : xs) e.x(i++) = v;
  e.y = y;
  if (tag >= 0) e.class_tag = tag;
  return e;
}

Dataset random_regression_ds(int m, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Example> ex;
  for (int i = 0; i < m; ++i) {
    Example e;
    e.x.resize(d);
    for (int j = 0; j < d; ++j) e.x(j) = rng.uniform(-1.0, 1.0);
    e.y = rng.uniform(-1.0, 1.0);
    ex.push_back(std::move(e));
  }
  return Dataset::from_examples(std::move(ex));
}

/// Central finite differences of the loss in theta.
Eigen::VectorXd fd_grad(const TrainedModel& m, const LossSpec& spec, const Example& z,
                        double eps = 1e-5) {
  Eigen::VectorXd g(m.theta.size());
  for (int k = 0; k < m.theta.size(); ++k) {
    Eigen::VectorXd tp = m.theta, tm = m.theta;
    tp(k) += eps;
    tm(k) -= eps;
    g(k) = (loss(m.with_theta(tp), spec, z) - loss(m.with_theta(tm), spec, z)) / (2 * eps);
  }
  return g;
}

}  // namespace

// ---------------------------------------------------------------- trainers

TEST(Ridge, ZeroLabelsGiveZeroWeights) {
  std::vector<Example> ex{make_example({1.0, 2.0}, 0.0), make_example({-1.0, 0.5}, 0.0),
                          make_example({0.3, -0.2}, 0.0)};
  const auto m = train_ridge_closed_form(Dataset::from_examples(ex), 0.1);
  EXPECT_NEAR(m.theta.norm(), 0.0, 1e-12);
}

TEST(Ridge, HandSolvedTwoPointFit) {
  // (X'X/m + lambda I) w = X'y/m with x = 1, -1 and y = 1, -1, lambda = 0.5:
  // (1 + 0.5) w = 1 so w = 2/3.
  std::vector<Example> ex{make_example({1.0}, 1.0), make_example({-1.0}, -1.0)};
  const auto m = train_ridge_closed_form(Dataset::from_examples(ex), 0.5);
  EXPECT_NEAR(m.theta(0), 2.0 / 3.0, 1e-12);
}

TEST(Ridge, DuplicationInvariance) {
  const Dataset ds = random_regression_ds(20, 3, 1);
  std::vector<Example> doubled(ds.examples());
  doubled.insert(doubled.end(), ds.examples().begin(), ds.examples().end());
  const auto a = train_ridge_closed_form(ds, 0.05);
  const auto b = train_ridge_closed_form(Dataset::from_examples(doubled), 0.05);
  EXPECT_NEAR((a.theta - b.theta).norm(), 0.0, 1e-10);
}

TEST(Ridge, NormalEquationResidualTiny) {
  const Dataset ds = random_regression_ds(50, 4, 2);
  const auto m = train_ridge_closed_form(ds, 0.01);
  Eigen::VectorXd g = 2.0 * 0.01 * m.theta;
  for (const auto& e : ds.examples())
    g += (2.0 / ds.m()) * (m.theta.dot(e.x) - e.y) * e.x;
  EXPECT_LE(g.norm(), 1e-8 * (1.0 + m.theta.norm()));
}

TEST(RidgeLoo, RemovingInertPointChangesNothing) {
  std::vector<Example> ex{make_example({1.0}, 1.0), make_example({-1.0}, -1.0),
                          make_example({0.0}, 0.0)};
  const Dataset ds = Dataset::from_examples(ex);
  const auto full = train_ridge_closed_form(ds, 0.2);
  const auto loo = train_ridge_loo(ds, 2, 0.2);
  EXPECT_NEAR((full.theta - loo.theta).norm(), 0.0, 1e-12);
}

TEST(RidgeLoo, TwoPointClosedForm) {
  // Removing index 1 of an m=2 set keeps 1/m normalization:
  // w = (x0^2/2 + lambda)^{-1} x0 y0 / 2.
  std::vector<Example> ex{make_example({2.0}, 3.0), make_example({-1.0}, 1.0)};
  const Dataset ds = Dataset::from_examples(ex);
  const auto loo = train_ridge_loo(ds, 1, 0.25);
  const double expected = (2.0 * 3.0 / 2.0) / (4.0 / 2.0 + 0.25);
  EXPECT_NEAR(loo.theta(0), expected, 1e-12);
  EXPECT_THROW(train_ridge_loo(ds, 2, 0.25), std::invalid_argument);
  EXPECT_THROW(train_ridge_loo(ds, -1, 0.25), std::invalid_argument);
}

TEST(RidgeLoo, ReAddingRecoversFullSolution) {
  const Dataset ds = random_regression_ds(10, 2, 3);
  const auto full = train_ridge_closed_form(ds, 0.1);
  const auto again = train_ridge_closed_form(ds, 0.1);
  EXPECT_EQ(full.theta, again.theta);
}

TEST(KernelRidge, ZeroLabels) {
  Dataset ds = random_regression_ds(10, 2, 4);
  std::vector<Example> ex = ds.examples();
  for (auto& e : ex) e.y = 0.0;
  const auto m =
      train_kernel_ridge(Dataset::from_examples(ex), bilinear_kernel(2.0), 0.1);
  EXPECT_NEAR(m.theta.norm(), 0.0, 1e-12);
  EXPECT_NEAR(m.predict(Eigen::Vector2d(0.3, -0.7)), 0.0, 1e-12);
}

TEST(KernelRidge, BilinearMatchesPrimalRidge) {
  const Dataset ds = random_regression_ds(30, 3, 5);
  const auto dual = train_kernel_ridge(ds, bilinear_kernel(ds.norm_bound_Bprime()), 0.05);
  const auto primal = train_ridge_closed_form(ds, 0.05);
  Rng rng(6);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd x(3);
    for (int j = 0; j < 3; ++j) x(j) = rng.uniform(-1.0, 1.0);
    EXPECT_NEAR(dual.predict(x), primal.predict(x), 1e-6);
  }
  const auto converted = kernel_to_primal(dual);
  EXPECT_NEAR((converted.theta - primal.theta).norm(), 0.0, 1e-8);
}

TEST(KernelRidge, SingleSupportPointSolve) {
  // Leave index 1 out of an m=2 set: one support point, ridge term keeps
  // the full-m normalization, so a = y0 / (x0^2 + 2 lambda).
  std::vector<Example> ex{make_example({1.5}, 2.0), make_example({-0.5}, 1.0)};
  const Dataset ds = Dataset::from_examples(ex);
  const auto m = train_kernel_ridge(ds, bilinear_kernel(1.5), 0.1, 1);
  EXPECT_EQ(m.theta.size(), 1);
  EXPECT_NEAR(m.theta(0), 2.0 / (1.5 * 1.5 + 2.0 * 0.1), 1e-12);
}

TEST(SvmRegression, WideTubeKeepsZeroModel) {
  const Dataset ds = random_regression_ds(15, 2, 7);
  const double tau = ds.label_bound_B() + 1.0;
  const auto m = train_svm_regression(ds, bilinear_kernel(2.0), 0.1, tau, 50, 1);
  EXPECT_NEAR(m.theta.norm(), 0.0, 1e-15);
}

TEST(SvmRegression, DescentBeatsZeroModel) {
  const Dataset ds = random_regression_ds(25, 2, 8);
  const KernelSpec kernel = bilinear_kernel(ds.norm_bound_Bprime());
  const auto m = train_svm_regression(ds, kernel, 0.01, 0.0, 400, 1);
  const LossSpec spec = LossSpec::eps_insensitive(0.0);
  const auto zero = m.with_theta(Eigen::VectorXd::Zero(m.theta.size()));
  const Eigen::MatrixXd G = gram_matrix(kernel, m.support_x);
  const double obj_m = mean_loss(m, spec, ds) + 0.01 * m.theta.dot(G * m.theta);
  const double obj_zero = mean_loss(zero, spec, ds);
  EXPECT_LE(obj_m, obj_zero + 1e-12);
  EXPECT_LE(m.theta.norm(), 10.0 + 1e-9);  // projected family radius
}

TEST(SvmRegression, DeterministicGivenSeed) {
  const Dataset ds = random_regression_ds(12, 2, 9);
  const auto a = train_svm_regression(ds, bilinear_kernel(2.0), 0.05, 0.1, 100, 5);
  const auto b = train_svm_regression(ds, bilinear_kernel(2.0), 0.05, 0.1, 100, 5);
  EXPECT_EQ(a.theta, b.theta);
}

TEST(SoftmaxHead, HeavyRegularizationShrinksHead) {
  const Dataset ds = gen_blobs(4, 3, 30, 0.1, 11);
  const auto fm = FeatureMap::random_relu(4, 16, 77);
  const auto m = train_softmax_head(ds, fm, 1e3, 200, 5e-4, 3);
  EXPECT_LT(m.theta.norm(), 0.1);
}

TEST(SoftmaxHead, SeparableBlobsFitWell) {
  const Dataset ds = gen_blobs(6, 2, 40, 0.1, 13);
  const auto fm = FeatureMap::random_relu(6, 32, 78);
  const auto m = train_softmax_head(ds, fm, 1e-4, 300, 1.0, 3);
  int correct = 0;
  for (const auto& e : ds.examples()) correct += m.argmax_class(e.x) == *e.class_tag;
  EXPECT_GE(static_cast<double>(correct) / ds.m(), 0.95);
}

TEST(SoftmaxHead, DeterministicAndRejectsSingleClass) {
  const Dataset ds = gen_blobs(3, 2, 10, 0.1, 14);
  const auto fm = FeatureMap::random_relu(3, 8, 79);
  const auto a = train_softmax_head(ds, fm, 0.01, 20, 0.5, 5);
  const auto b = train_softmax_head(ds, fm, 0.01, 20, 0.5, 5);
  EXPECT_EQ(a.theta, b.theta);

  std::vector<Example> single;
  for (int i = 0; i < 5; ++i) single.push_back(make_example({double(i), 1.0, 0.0}, 0.0, 0));
  EXPECT_THROW(
      train_softmax_head(Dataset::from_examples(single), fm, 0.01, 10, 0.5, 1),
      std::invalid_argument);
}

TEST(TwoLayer, WideNetParameterLayout) {
  const Dataset ds = gen_two_cluster(10, 200, 15);
  const auto m = train_two_layer(ds, 100, 1e-6, 2, 1.0, 100, 4);
  EXPECT_EQ(m.theta.size(), 100 * 10 + 100);
  const LossSpec spec = LossSpec::squared();
  Rng rng(16);
  TrainedModel init = m;
  Rng init_rng(4);
  for (int i = 0; i < init.theta.size(); ++i) init.theta(i) = init_rng.uniform(-1.0, 1.0);
  EXPECT_LT(mean_loss(m, spec, ds), mean_loss(init, spec, ds));
}

TEST(TwoLayer, ZeroLearningRateFreezesParameters) {
  const Dataset ds = gen_two_cluster(4, 20, 17);
  const auto before = train_two_layer(ds, 5, 1e-6, 0, 1.0, 5, 9);
  const auto after = train_two_layer(ds, 5, 1e-6, 10, 0.0, 5, 9);
  EXPECT_EQ(before.theta, after.theta);
}

TEST(TwoLayer, ConvexInFirstLayerWhenSecondFrozenPositive) {
  // k = 1: with a > 0 fixed and relu active, full-batch loss is convex in W
  // on the active region; gradient descent decreases it monotonically.
  std::vector<Example> ex{make_example({1.0}, 1.0), make_example({2.0}, 2.0),
                          make_example({3.0}, 3.0)};
  const Dataset ds = Dataset::from_examples(ex);
  TrainedModel m;
  m.family = ModelFamily::two_layer;
  m.hidden_k = 1;
  m.input_dim = 1;
  m.lambda = 0.0;
  m.theta.resize(2);
  m.theta << 0.5, 1.0;  // W = 0.5, a = 1 (frozen by zeroing its gradient)
  const LossSpec spec = LossSpec::squared();
  double prev = mean_loss(m, spec, ds);
  for (int step = 0; step < 50; ++step) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(2);
    for (const auto& e : ds.examples()) g += grad(m, spec, e);
    g /= ds.m();
    g(1) = 0.0;
    m.theta -= 0.05 * g;
    const double cur = mean_loss(m, spec, ds);
    EXPECT_LE(cur, prev + 1e-12);
    prev = cur;
  }
}

TEST(TwoLayer, DeterministicGivenSeed) {
  const Dataset ds = gen_two_cluster(4, 30, 18);
  const auto a = train_two_layer(ds, 8, 1e-5, 3, 0.5, 4, 21);
  const auto b = train_two_layer(ds, 8, 1e-5, 3, 0.5, 4, 21);
  EXPECT_EQ(a.theta, b.theta);
}

// ------------------------------------------------------ loss derivatives

TEST(LossGrad, PerfectFitHasZeroGradient) {
  TrainedModel m;
  m.family = ModelFamily::linear_ridge;
  m.theta = Eigen::Vector2d(1.0, -1.0);
  const Example z = make_example({2.0, 1.0}, 1.0);  // w.x = 1 = y
  EXPECT_NEAR(grad(m, LossSpec::squared(), z).norm(), 0.0, 1e-14);
}

TEST(LossGrad, ToyExpStationaryAtZero) {
  TrainedModel m;
  m.family = ModelFamily::toy_scalar;
  m.theta = Eigen::VectorXd::Zero(1);
  const Example z = make_example({0.8}, 0.0);
  EXPECT_DOUBLE_EQ(grad(m, LossSpec::toy_exp(), z)(0), 0.0);
}

TEST(LossGrad, MatchesFiniteDifferencesAcrossFamilies) {
  Rng rng(31);
  const LossSpec sq = LossSpec::squared();

  for (int trial = 0; trial < 100; ++trial) {
    TrainedModel m;
    m.family = ModelFamily::linear_ridge;
    m.theta.resize(4);
    for (int j = 0; j < 4; ++j) m.theta(j) = rng.uniform(-2.0, 2.0);
    Example z;
    z.x.resize(4);
    for (int j = 0; j < 4; ++j) z.x(j) = rng.uniform(-2.0, 2.0);
    z.y = rng.uniform(-2.0, 2.0);
    const Eigen::VectorXd g = grad(m, sq, z);
    EXPECT_LE((g - fd_grad(m, sq, z)).norm(), 1e-4 * (1.0 + g.norm()));
  }

  const LossSpec toy = LossSpec::toy_exp();
  for (int trial = 0; trial < 100; ++trial) {
    TrainedModel m;
    m.family = ModelFamily::toy_scalar;
    m.theta.resize(1);
    m.theta(0) = rng.uniform(-3.0, 3.0);
    const Example z = make_example({rng.uniform(0.0, 1.0)}, 0.0);
    const Eigen::VectorXd g = grad(m, toy, z);
    EXPECT_LE((g - fd_grad(m, toy, z)).norm(), 1e-4 * (1.0 + g.norm()));
  }

  const LossSpec xent = LossSpec::softmax_xent();
  const auto fm = FeatureMap::random_relu(3, 6, 99);
  for (int trial = 0; trial < 100; ++trial) {
    TrainedModel m;
    m.family = ModelFamily::softmax_head;
    m.feature_map = fm;
    m.num_classes = 3;
    m.theta.resize(3 * 6);
    for (int j = 0; j < m.theta.size(); ++j) m.theta(j) = rng.uniform(-1.0, 1.0);
    Example z;
    z.x.resize(3);
    for (int j = 0; j < 3; ++j) z.x(j) = rng.uniform(-1.0, 1.0);
    z.class_tag = static_cast<int>(rng.index(3));
    const Eigen::VectorXd g = grad(m, xent, z);
    EXPECT_LE((g - fd_grad(m, xent, z)).norm(), 1e-4 * (1.0 + g.norm()));
  }

  // two_layer: skip draws whose pre-activations sit within the finite
  // difference step of a relu kink.
  int checked = 0;
  while (checked < 100) {
    TrainedModel m;
    m.family = ModelFamily::two_layer;
    m.hidden_k = 3;
    m.input_dim = 2;
    m.theta.resize(3 * 2 + 3);
    for (int j = 0; j < m.theta.size(); ++j) m.theta(j) = rng.uniform(-1.5, 1.5);
    Example z;
    z.x.resize(2);
    for (int j = 0; j < 2; ++j) z.x(j) = rng.uniform(-1.0, 1.0);
    z.y = rng.uniform(-1.0, 1.0);
    bool near_kink = false;
    for (int r = 0; r < 3; ++r)
      if (std::abs(m.theta.segment(r * 2, 2).dot(z.x)) < 1e-3) near_kink = true;
    if (near_kink) continue;
    const Eigen::VectorXd g = grad(m, sq, z);
    EXPECT_LE((g - fd_grad(m, sq, z)).norm(), 1e-4 * (1.0 + g.norm()));
    ++checked;
  }
}

TEST(LossHessian, SymmetricAndMatchesGradientDifferences) {
  Rng rng(37);
  TrainedModel m;
  m.family = ModelFamily::linear_ridge;
  m.theta.resize(3);
  for (int j = 0; j < 3; ++j) m.theta(j) = rng.uniform(-1.0, 1.0);
  Example z;
  z.x.resize(3);
  for (int j = 0; j < 3; ++j) z.x(j) = rng.uniform(-1.0, 1.0);
  z.y = 0.5;
  const LossSpec sq = LossSpec::squared();
  const Eigen::MatrixXd H = loss_hessian(m, sq, z);
  EXPECT_NEAR((H - H.transpose()).norm(), 0.0, 1e-12);
  const double eps = 1e-6;
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd tp = m.theta, tm = m.theta;
    tp(k) += eps;
    tm(k) -= eps;
    const Eigen::VectorXd col =
        (grad(m.with_theta(tp), sq, z) - grad(m.with_theta(tm), sq, z)) / (2 * eps);
    EXPECT_LE((H.col(k) - col).norm(), 1e-6 * (1.0 + H.col(k).norm()));
  }
}

TEST(LossHessian, RefusedFamilies) {
  TrainedModel nn;
  nn.family = ModelFamily::two_layer;
  nn.hidden_k = 1;
  nn.input_dim = 1;
  nn.theta = Eigen::Vector2d(1.0, 1.0);
  EXPECT_THROW(loss_hessian(nn, LossSpec::squared(), make_example({1.0}, 0.0)),
               unsupported_operation);

  TrainedModel svm;
  svm.family = ModelFamily::svm_reg;
  svm.theta = Eigen::VectorXd::Zero(1);
  svm.support_x = Eigen::MatrixXd::Ones(1, 1);
  svm.kernel = bilinear_kernel(1.0);
  EXPECT_THROW(loss_hessian(svm, LossSpec::eps_insensitive(0.1), make_example({1.0}, 0.0)),
               unsupported_operation);
}

// ------------------------------------------------------------- lipschitz

TEST(Lipschitz, ToyExpValues) {
  const LossSpec toy = LossSpec::toy_exp();
  const LossDomain none{};
  EXPECT_NEAR(lipschitz_of(toy, make_example({1.0}, 0.0), none),
              std::sqrt(2.0) * std::exp(-0.5), 1e-12);
  EXPECT_DOUBLE_EQ(lipschitz_of(toy, make_example({0.0}, 0.0), none), 0.0);
  EXPECT_NEAR(lipschitz_of(toy, make_example({0.5}, 0.0), none),
              0.25 * std::sqrt(2.0) * std::exp(-0.5), 1e-12);
}

TEST(Lipschitz, ToyExpMatchesGridMaximum) {
  // empirical Lipschitz constant: max |grad| over a theta grid in [-10, 10]
  const LossSpec toy = LossSpec::toy_exp();
  const Example z = make_example({0.7}, 0.0);
  const double bound = lipschitz_of(toy, z, LossDomain{});
  TrainedModel m;
  m.family = ModelFamily::toy_scalar;
  m.theta.resize(1);
  double max_slope = 0.0;
  for (int i = 0; i <= 20000; ++i) {
    m.theta(0) = -10.0 + 20.0 * i / 20000.0;
    max_slope = std::max(max_slope, std::abs(grad(m, toy, z)(0)));
  }
  EXPECT_LE(max_slope, bound * (1.0 + 1e-9));
  EXPECT_GE(max_slope, 0.99 * bound);
}

TEST(Lipschitz, SquaredNeedsBoundedDomain) {
  const LossSpec sq = LossSpec::squared();
  const Example z = make_example({3.0, 4.0}, 1.0);
  EXPECT_THROW(lipschitz_of(sq, z, LossDomain{}), std::invalid_argument);
  const double v = lipschitz_of(sq, z, LossDomain{true, 2.0, 1.0});
  EXPECT_NEAR(v, 2.0 * 3.0 * 5.0, 1e-12);  // 2 (sup|f| + B) |x|
}

// ----------------------------------------------------------- persistence

TEST(ModelIo, RoundTripAllFamilies) {
  const std::string path =
      (std::filesystem::temp_directory_path() / "elastab_model.json").string();

  const Dataset ds = random_regression_ds(8, 2, 51);
  for (const auto& model :
       {train_ridge_closed_form(ds, 0.1),
        train_kernel_ridge(ds, bilinear_kernel(ds.norm_bound_Bprime()), 0.1),
        train_svm_regression(ds, rbf_kernel(0.5), 0.1, 0.05, 40, 2)}) {
    save_model(model, path);
    const TrainedModel back = load_model(path);
    EXPECT_EQ(back.family, model.family);
    EXPECT_NEAR((back.theta - model.theta).norm(), 0.0, 0.0);
    Rng rng(52);
    Eigen::VectorXd x(2);
    x << rng.uniform(-1, 1), rng.uniform(-1, 1);
    EXPECT_DOUBLE_EQ(back.predict(x), model.predict(x));
  }

  const Dataset blobs = gen_blobs(3, 2, 10, 0.1, 53);
  const auto fm = FeatureMap::random_relu(3, 8, 54);
  const auto head = train_softmax_head(blobs, fm, 0.01, 30, 0.5, 55);
  save_model(head, path);
  const TrainedModel head_back = load_model(path);
  EXPECT_EQ(head_back.logits(blobs[0].x), head.logits(blobs[0].x));

  const auto nn = train_two_layer(blobs, 4, 1e-4, 2, 0.1, 4, 56);
  save_model(nn, path);
  const TrainedModel nn_back = load_model(path);
  EXPECT_DOUBLE_EQ(nn_back.predict(blobs[1].x), nn.predict(blobs[1].x));

  std::remove(path.c_str());
}

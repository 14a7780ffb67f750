#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "test_util.hpp"

using namespace cgprune;

namespace {

// Relative error with an absolute floor: near-zero gradient components are
// compared on an absolute scale of kGradFloor.
constexpr double kGradFloor = 1e-6;

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kGradFloor}); }

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
  Matrix m(rows, cols);
  for (double& v : m.data) v = scale * standard_normal(rng);
  return m;
}

std::vector<int> random_labels(Rng& rng, std::size_t n) {
  std::vector<int> y(n);
  for (int& v : y) v = uniform_unit(rng) < 0.5 ? 1 : 0;
  return y;
}

PrunerModel random_model(Rng& rng, std::size_t d, std::size_t h) {
  PrunerModel m(d, h);
  for (double& p : m.parameters()) p = 0.7 * standard_normal(rng);
  return m;
}

// Max relative error between analytic and central-difference gradients.
double gradient_check(PrunerModel m, const Matrix& x, std::span<const int> y, double w1, double w2) {
  const auto analytic = loss_gradients(m, x, y, w1, w2).gradients;
  double worst = 0.0;
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params[i];
    // Balances truncation against cancellation in up - down.
    const double step = std::cbrt(std::numeric_limits<double>::epsilon()) * std::max(1.0, std::abs(orig));
    params[i] = orig + step;
    const double up = batch_loss(m, x, y, w1, w2);
    params[i] = orig - step;
    const double down = batch_loss(m, x, y, w1, w2);
    params[i] = orig;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * step)));
  }
  return worst;
}

// Points on either side of a fixed plane through the origin, margin >= 0.1.
Dataset separable_2d(Rng& rng, std::size_t n) {
  Dataset ds{Matrix(0, 2), {}};
  const double a = 0.8, b = -0.6;
  while (ds.size() < n) {
    const double x0 = uniform_real(rng, -1, 1), x1 = uniform_real(rng, -1, 1);
    const double s = a * x0 + b * x1;
    if (std::abs(s) < 0.1) continue;
    const std::array<double, 2> row{x0, x1};
    ds.x.append_row(row);
    ds.y.push_back(s > 0 ? 1 : 0);
  }
  return ds;
}

}  // namespace

TEST(Softmax2, Values) {
  auto p = softmax2(0, 0);
  EXPECT_DOUBLE_EQ(p.prune, 0.5);
  EXPECT_DOUBLE_EQ(p.retain, 0.5);
  p = softmax2(0, std::log(3.0));
  EXPECT_NEAR(p.prune, 0.25, 1e-15);
  EXPECT_NEAR(p.retain, 0.75, 1e-15);
  p = softmax2(1000, 0);
  EXPECT_TRUE(std::isfinite(p.prune) && std::isfinite(p.retain));
  EXPECT_NEAR(p.prune, 1.0, 1e-15);
  EXPECT_NEAR(p.retain, 0.0, 1e-15);
}

TEST(Softmax2, SumsToOne) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double z0 = uniform_real(rng, -1e3, 1e3), z1 = uniform_real(rng, -1e3, 1e3);
    const auto p = softmax2(z0, z1);
    EXPECT_NEAR(p.prune + p.retain, 1.0, 1e-12);
    EXPECT_GE(p.prune, 0.0);
    EXPECT_GE(p.retain, 0.0);
  }
}

TEST(WeightedCrossEntropy, Values) {
  const std::vector<int> one{1}, zero{0};
  const std::vector<double> near_one{1.0 - 1e-15}, half{0.5};
  EXPECT_NEAR(weighted_ce_loss(one, near_one, 0.7, 0.3), 0.0, 1e-15);
  EXPECT_NEAR(weighted_ce_loss(one, half, 0.95, 0.05), 0.95 * std::log(2.0), 1e-15);
  EXPECT_NEAR(weighted_ce_loss(one, half, 0.95, 0.05), 0.6584898, 1e-7);
  EXPECT_NEAR(weighted_ce_loss(zero, half, 0.95, 0.05), 0.034657, 1e-6);
  EXPECT_THROW(weighted_ce_loss(std::vector<int>{}, std::vector<double>{}, 0.5, 0.5), UsageError);
}

TEST(WeightedCrossEntropy, NonNegativeAndZeroOnlyAtClampedExtremes) {
  Rng rng(2);
  for (int t = 0; t < 500; ++t) {
    const auto n = 1 + uniform_index(rng, 20);
    const auto y = random_labels(rng, n);
    std::vector<double> p(n);
    for (double& v : p) v = uniform_unit(rng);
    EXPECT_GE(weighted_ce_loss(y, p, uniform_unit(rng), uniform_unit(rng)), 0.0);
  }
  const std::vector<int> y{1, 0, 1};
  EXPECT_EQ(weighted_ce_loss(y, std::vector<double>{1.0, 0.0, 1.0}, 0.6, 0.4), 0.0);
  EXPECT_GT(weighted_ce_loss(y, std::vector<double>{1.0 - 1e-13, 1e-13, 1.0}, 0.6, 0.4), 0.0);
  EXPECT_GT(weighted_ce_loss(y, std::vector<double>{1.0, 1e-9, 1.0}, 0.6, 0.4), 0.0);
  // A confidently wrong prediction is capped, not infinite.
  EXPECT_NEAR(weighted_ce_loss(std::vector<int>{1}, std::vector<double>{0.0}, 1.0, 0.0), -std::log(1e-12), 1e-9);
}

TEST(WeightedCrossEntropy, EqualWeightsHalveBinaryCrossEntropy) {
  Rng rng(3);
  for (int t = 0; t < 200; ++t) {
    const auto n = 1 + uniform_index(rng, 30);
    const auto y = random_labels(rng, n);
    std::vector<double> p(n);
    for (double& v : p) v = uniform_real(rng, 0.001, 0.999);
    double bce = 0.0;
    for (std::size_t i = 0; i < n; ++i) bce -= y[i] ? std::log(p[i]) : std::log(1 - p[i]);
    bce /= static_cast<double>(n);
    EXPECT_NEAR(weighted_ce_loss(y, p, 0.5, 0.5), 0.5 * bce, 1e-14 * std::max(1.0, bce));
  }
}

TEST(Gradients, HandSizedLogisticMatchesFiniteDifferences) {
  PrunerModel m(2, 0);
  const std::vector<double> p = {0.3, -0.2, -0.5, 0.4, 0.1, -0.1};
  std::copy(p.begin(), p.end(), m.parameters().begin());
  Matrix x(1, 2);
  x.data = {0.7, -1.3};
  const std::vector<int> y{1};
  EXPECT_LT(gradient_check(m, x, y, 0.8, 0.2), 1e-5);
}

TEST(Gradients, RandomModelsMatchFiniteDifferences) {
  Rng rng(4);
  double worst = 0.0;
  for (int t = 0; t < 200; ++t) {
    const auto d = 1 + uniform_index(rng, 5);
    const auto h = uniform_index(rng, 4);  // 0 = logistic head
    const auto n = 1 + uniform_index(rng, 6);
    const auto m = random_model(rng, d, h);
    const auto x = random_matrix(rng, n, d);
    const auto y = random_labels(rng, n);
    const double w1 = uniform_real(rng, 0.05, 0.95);
    worst = std::max(worst, gradient_check(m, x, y, w1, 1 - w1));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Gradients, ZeroWeightClassGivesZeroGradient) {
  Rng rng(5);
  const auto m = random_model(rng, 3, 2);
  const auto x = random_matrix(rng, 4, 3);
  const std::vector<int> y{1, 1, 1, 1};
  for (double g : loss_gradients(m, x, y, 0.0, 1.0).gradients) EXPECT_EQ(g, 0.0);
}

TEST(Gradients, DuplicatedSampleEqualsSingle) {
  Rng rng(6);
  const auto m = random_model(rng, 4, 3);
  const auto x1 = random_matrix(rng, 1, 4);
  Matrix x2(0, 4);
  x2.append_row(x1.row(0));
  x2.append_row(x1.row(0));
  const auto g1 = loss_gradients(m, x1, std::vector<int>{1}, 0.7, 0.3).gradients;
  const auto g2 = loss_gradients(m, x2, std::vector<int>{1, 1}, 0.7, 0.3).gradients;
  ASSERT_EQ(g1.size(), g2.size());
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-15 * std::max(1.0, std::abs(g1[i])));
}

TEST(Gradients, DropoutMaskScalesInputs) {
  Rng rng(7);
  const auto mask = make_dropout_mask(200, 50, 0.25, rng);
  std::size_t zeros = 0;
  for (double v : mask.data) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    zeros += v == 0.0;
  }
  EXPECT_NEAR(static_cast<double>(zeros) / mask.data.size(), 0.25, 0.02);
  // A mask of ones is the same as no mask.
  const auto m = random_model(rng, 3, 2);
  const auto x = random_matrix(rng, 5, 3);
  const auto y = random_labels(rng, 5);
  const Matrix ones(5, 3, 1.0);
  EXPECT_EQ(loss_gradients(m, x, y, 0.6, 0.4, &ones).gradients, loss_gradients(m, x, y, 0.6, 0.4).gradients);
}

TEST(AdamW, SingleStep) {
  TrainConfig cfg;
  OptimizerState st;
  std::vector<double> theta{1.0};
  const std::vector<double> g{1.0};
  adamw_step(st, theta, g, 1e-3, cfg);
  // m_hat = v_hat = 1 after bias correction.
  EXPECT_NEAR(theta[0], 1.0 - 1e-3 / (1.0 + 1e-8) - 1e-3 * 0.01 * 1.0, 1e-12);
  EXPECT_NEAR(theta[0], 0.99899, 1e-7);
}

TEST(AdamW, FixedPointAndDeterminism) {
  TrainConfig cfg;
  OptimizerState st;
  std::vector<double> theta{0.0};
  adamw_step(st, theta, std::vector<double>{0.0}, 1e-3, cfg);
  EXPECT_EQ(theta[0], 0.0);

  Rng rng(8);
  std::vector<std::vector<double>> grads(20, std::vector<double>(6));
  for (auto& g : grads)
    for (double& v : g) v = standard_normal(rng);
  OptimizerState a, b;
  std::vector<double> pa(6, 0.5), pb(6, 0.5);
  for (const auto& g : grads) {
    adamw_step(a, pa, g, 1e-2, cfg);
    adamw_step(b, pb, g, 1e-2, cfg);
  }
  EXPECT_EQ(pa, pb);
  EXPECT_EQ(a, b);
}

TEST(AdamW, MultiStepMatchesReference) {
  // Reference recursion written out per step.
  TrainConfig cfg;
  cfg.weight_decay = 0.1;
  Rng rng(9);
  OptimizerState st;
  std::vector<double> theta{0.3};
  double m = 0, v = 0, ref = 0.3;
  for (int t = 1; t <= 50; ++t) {
    const double g = standard_normal(rng);
    const double lr = 1e-2 * t / 50.0;
    adamw_step(st, theta, std::vector<double>{g}, lr, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    ref = ref - lr * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * ref);
    ASSERT_NEAR(theta[0], ref, 1e-14);
  }
}

TEST(LrSchedule, Endpoints) {
  TrainConfig cfg;
  cfg.learning_rate = 2e-5;
  cfg.warmup_steps = 100;
  const std::size_t total = 1000;
  EXPECT_EQ(lr_at(0, cfg, total), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(50, cfg, total), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(100, cfg, total), 2e-5);
  EXPECT_DOUBLE_EQ(lr_at(550, cfg, total), 1e-5);
  EXPECT_EQ(lr_at(1000, cfg, total), 0.0);
  EXPECT_EQ(lr_at(5000, cfg, total), 0.0);
  cfg.warmup_steps = 0;
  EXPECT_DOUBLE_EQ(lr_at(0, cfg, total), 2e-5);
}

TEST(LrSchedule, TotalSteps) {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 128;
  EXPECT_EQ(schedule_steps(1000, cfg), 3u * 8u);
  EXPECT_EQ(schedule_steps(1024, cfg), 3u * 8u);
  EXPECT_EQ(schedule_steps(1025, cfg), 3u * 9u);
}

TEST(Predict, ZeroModelIsHalf) {
  Rng rng(10);
  for (std::size_t h : {0u, 3u}) {
    const PrunerModel m(4, h);
    for (int i = 0; i < 20; ++i) {
      std::vector<double> x(4);
      for (double& v : x) v = 10 * standard_normal(rng);
      EXPECT_DOUBLE_EQ(predict(m, x), 0.5);
    }
  }
}

TEST(Predict, LargeRetainScore) {
  PrunerModel m(2, 0);
  m.block("output_bias")[1] = 800.0;
  EXPECT_NEAR(predict(m, std::vector<double>{1.0, -1.0}), 1.0, 1e-15);
  EXPECT_THROW(predict(m, std::vector<double>{1.0}), UsageError);
}

TEST(Predict, RowOrderDoesNotMatter) {
  Rng rng(11);
  const auto m = random_model(rng, 5, 3);
  const auto x = random_matrix(rng, 30, 5);
  std::vector<double> fwd, rev;
  for (std::size_t i = 0; i < 30; ++i) fwd.push_back(predict(m, x.row(i)));
  for (std::size_t i = 30; i-- > 0;) rev.push_back(predict(m, x.row(i)));
  std::reverse(rev.begin(), rev.end());
  EXPECT_EQ(fwd, rev);
}

TEST(Predict, RandomBaselineIsAFairCoin) {
  const auto m = PrunerModel::random_baseline(3, 5);
  Rng rng(12);
  double sum = 0;
  std::size_t above = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const EdgeKey k{"app/S" + std::to_string(i), "lib/T", 0};
    const std::vector<double> x{1.0, 2.0, 3.0};  // identical features
    const double p = predict_edge(m, k, x);
    EXPECT_EQ(p, predict_edge(m, k, x));
    sum += p;
    above += p > 0.5;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.01);
  EXPECT_NEAR(static_cast<double>(above) / n, 0.5, 0.015);
}

TEST(Train, SeparableTwoDimensional) {
  Rng rng(13);
  const auto train_set = separable_2d(rng, 200);
  const auto test_set = separable_2d(rng, 1000);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 1;
  cfg.learning_rate = 0.1;
  cfg.warmup_steps = 0;
  cfg.dropout_rate = 0.0;
  cfg.seed = 1;
  const auto r = train(train_set, cfg);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i)
    correct += (predict(r.model, test_set.x.row(i)) > 0.5) == (test_set.y[i] == 1);
  EXPECT_GE(static_cast<double>(correct) / test_set.size(), 0.95);
  EXPECT_EQ(r.total_steps, 400u);
  EXPECT_EQ(r.log.size(), 2u);
}

TEST(Train, DeterministicForSeed) {
  Rng rng(14);
  const auto ds = separable_2d(rng, 300);
  TrainConfig cfg;
  cfg.hidden_dim = 4;
  cfg.learning_rate = 0.01;
  cfg.batch_size = 16;
  cfg.warmup_steps = 5;
  cfg.seed = 99;
  const auto a = train(ds, cfg);
  const auto b = train(ds, cfg);
  const auto pa = a.model.parameters(), pb = b.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i], pb[i]);
  cfg.seed = 100;
  const auto c = train(ds, cfg);
  EXPECT_NE(std::vector<double>(pa.begin(), pa.end()),
            std::vector<double>(c.model.parameters().begin(), c.model.parameters().end()));
}

// Higher weight on the retain class must not lower recall on an imbalanced
// set with overlapping classes.
TEST(Train, RetainWeightRaisesRecall) {
  Rng rng(15);
  Dataset ds{Matrix(0, 3), {}};
  Dataset test{Matrix(0, 3), {}};
  for (auto* d : {&ds, &test})
    for (int i = 0; i < 3000; ++i) {
      const int y = uniform_unit(rng) < 1.0 / 11.0 ? 1 : 0;
      const std::array<double, 3> row{standard_normal(rng) + 1.2 * y, standard_normal(rng) + 0.6 * y,
                                      standard_normal(rng)};
      d->x.append_row(row);
      d->y.push_back(y);
    }
  const std::vector<double> w1s = {0.6, 0.7, 0.8, 0.9, 0.95, 0.99};
  std::vector<double> recall, precision;
  for (double w1 : w1s) {
    TrainConfig cfg;
    cfg.w_retain = w1;
    cfg.learning_rate = 0.01;
    cfg.epochs = 5;
    cfg.batch_size = 32;
    cfg.warmup_steps = 10;
    cfg.seed = 3;
    const auto r = train(ds, cfg);
    double tp = 0, fp = 0, pos = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const bool keep = predict(r.model, test.x.row(i)) >= 0.5;
      pos += test.y[i];
      tp += keep && test.y[i];
      fp += keep && !test.y[i];
    }
    recall.push_back(tp / pos);
    precision.push_back(tp + fp > 0 ? tp / (tp + fp) : 1.0);
  }
  const auto rho_r = spearman(w1s, recall);
  const auto rho_p = spearman(w1s, precision);
  ASSERT_TRUE(rho_r && rho_p);
  EXPECT_GT(*rho_r, 0.0);
  EXPECT_LT(*rho_p, 0.0);
  for (std::size_t i = 1; i < recall.size(); ++i) EXPECT_GE(recall[i], recall[i - 1]);
}

TEST(Train, SingleClassWarns) {
  Dataset ds{Matrix(0, 1), {}};
  for (int i = 0; i < 10; ++i) {
    ds.x.append_row(std::vector<double>{double(i)});
    ds.y.push_back(0);
  }
  TrainConfig cfg;
  cfg.warmup_steps = 0;
  const auto r = train(ds, cfg);
  EXPECT_FALSE(r.warnings.empty());
}

TEST(Train, RejectsBadConfig) {
  TrainConfig cfg;
  cfg.w_retain = 1.0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = {};
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), UsageError);
  cfg = {};
  cfg.dropout_rate = 1.0;
  EXPECT_THROW(cfg.validate(), UsageError);
}

TEST(ModelFile, RoundTrip) {
  Rng rng(16);
  auto m = random_model(rng, 4, 2);
  m.fit_standardizer(random_matrix(rng, 10, 4));
  const auto back = model_from_json(Json::parse(model_to_json(m).dump()));
  EXPECT_EQ(back.input_dim(), 4u);
  EXPECT_EQ(back.hidden_dim(), 2u);
  const auto x = random_matrix(rng, 5, 4);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(predict(back, x.row(i)), predict(m, x.row(i)));
  auto j = model_to_json(m);
  j["parameters"]["output_bias"] = std::vector<double>{1.0};
  EXPECT_THROW(model_from_json(j), FormatError);
}

TEST(Forward, NonFiniteParameterNamesBlock) {
  PrunerModel m(2, 2);
  m.block("hidden_bias")[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    predict(m, std::vector<double>{1.0, 1.0});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("hidden"), std::string::npos) << e.what();
  }
}

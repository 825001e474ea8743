#include "placekit/errors.hpp"
#include "placekit/metrics.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace placekit;

namespace {

constexpr double kHalfLog2Pi = 0.918938533204673;

DenseGaussian diag_gaussian(const Eigen::VectorXd &mean, const Eigen::VectorXd &var) {
  return DenseGaussian{mean, var.asDiagonal()};
}

/// Predicts N(shift, scale^2 I) at every target, ignoring the context.
class ConstantModel : public Predictor {
public:
  ConstantModel(double shift, double var) : shift_(shift), var_(var) {}
  GaussianPredictive predict(const Task &t) const override {
    const Eigen::Index n = t.target_locations.rows();
    return diag_gaussian(Eigen::VectorXd::Constant(n, shift_), Eigen::VectorXd::Constant(n, var_));
  }
  std::string name() const override { return "constant"; }

private:
  double shift_, var_;
};

Task target_task(const Eigen::VectorXd &y) {
  Task t;
  t.contexts.emplace_back();
  t.contexts[0].values.resize(0, 1);
  t.target_locations = Locations::Zero(y.size(), 2);
  t.target_values = y;
  return t;
}

} // namespace

TEST_CASE("rmse: examples and shape check") {
  const Eigen::VectorXd y = Eigen::Vector4d(3, 4, 0, 0);
  const GaussianPredictive p = diag_gaussian(Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4));
  CHECK(rmse(p, y) == doctest::Approx(2.5).epsilon(1e-15));
  const GaussianPredictive exact = diag_gaussian(y, Eigen::VectorXd::Ones(4));
  CHECK(rmse(exact, y) == 0.0);
  CHECK_THROWS_AS(rmse(p, Eigen::VectorXd::Zero(3)), ShapeMismatch);
  CHECK_THROWS_AS(marginal_nll(p, Eigen::VectorXd::Zero(3)), ShapeMismatch);
  CHECK_THROWS_AS(pit_values(p, Eigen::VectorXd::Zero(3)), ShapeMismatch);
}

TEST_CASE("marginal_nll: examples and diagonal equivalence") {
  const Eigen::VectorXd y = Eigen::Vector3d(0.5, -1.0, 2.0);
  const GaussianPredictive at_mean = diag_gaussian(y, Eigen::VectorXd::Ones(3));
  CHECK(marginal_nll(at_mean, y) == doctest::Approx(kHalfLog2Pi).epsilon(1e-14));
  const GaussianPredictive off_by_one =
      diag_gaussian((y.array() + 1.0).matrix(), Eigen::VectorXd::Ones(3));
  CHECK(marginal_nll(off_by_one, y) == doctest::Approx(kHalfLog2Pi + 0.5).epsilon(1e-14));

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd var(12);
    for (auto &v : var)
      v = u(rng);
    const GaussianPredictive p = diag_gaussian(testing::random_vector(rng, 12), var);
    const Eigen::VectorXd yy = testing::random_vector(rng, 12, 2.0);
    CHECK(std::abs(joint_nll_normalized(p, yy) - marginal_nll(p, yy)) <= 1e-10);
  }
}

TEST_CASE("joint_nll_normalized: correlation ridge and low-rank path") {
  // Two targets with correlation 0.95, both observed one standard deviation up.
  Eigen::Matrix2d k;
  k << 1.0, 0.95, 0.95, 1.0;
  const GaussianPredictive p = DenseGaussian{Eigen::VectorXd::Zero(2), k};
  const Eigen::VectorXd y = Eigen::Vector2d(1.0, 1.0);
  // Closed form: quadratic form 2 / (1 + rho), log det 1 - rho^2.
  const double rho = 0.95;
  const double want = 0.5 * (2.0 * std::log(2 * M_PI) + std::log(1 - rho * rho) + 2.0 / (1 + rho)) / 2.0;
  CHECK(joint_nll_normalized(p, y) == doctest::Approx(want).epsilon(1e-12));
  CHECK(joint_nll_normalized(p, y) < marginal_nll(p, y));

  std::mt19937_64 rng(2);
  LowRankDiagGaussian lr{testing::random_vector(rng, 30), testing::random_matrix(rng, 30, 4),
                         Eigen::VectorXd::Constant(30, 0.3)};
  const GaussianPredictive dense = DenseGaussian{lr.mean, materialize_cov(lr)};
  const Eigen::VectorXd yy = testing::random_vector(rng, 30);
  CHECK(testing::rel_err(joint_nll_normalized(lr, yy), joint_nll_normalized(dense, yy)) <= 1e-8);
  CHECK(testing::rel_err(marginal_nll(lr, yy), marginal_nll(dense, yy)) <= 1e-12);
}

TEST_CASE("pit_values: examples and self-consistency") {
  const Eigen::VectorXd mu = Eigen::Vector3d(0.0, 1.0, -2.0);
  const Eigen::VectorXd var = Eigen::Vector3d(1.0, 4.0, 0.25);
  const GaussianPredictive p = diag_gaussian(mu, var);
  CHECK((pit_values(p, mu).array() == 0.5).all());
  const Eigen::VectorXd up = (mu.array() + var.array().sqrt()).matrix();
  const Eigen::VectorXd pit = pit_values(p, up);
  for (Eigen::Index i = 0; i < 3; ++i)
    CHECK(pit(i) == doctest::Approx(0.841344746068543).epsilon(1e-12));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.1, 4.0);
  constexpr int n = 10000;
  LowRankDiagGaussian lr{testing::random_vector(rng, n), testing::random_matrix(rng, n, 3, 0.5),
                         Eigen::VectorXd(n)};
  for (auto &d : lr.diag)
    d = u(rng);
  // One independent draw per target from its own marginal.
  const Eigen::VectorXd sd = marginal_variances(lr).cwiseSqrt();
  const Eigen::VectorXd y = lr.mean + sd.cwiseProduct(testing::random_vector(rng, n));
  const double ks = ks_uniform(pit_values(lr, y));
  MESSAGE("KS " << ks);
  CHECK(ks < 0.02);

  // Miscalibrated: variances four times too small.
  LowRankDiagGaussian narrow = lr;
  narrow.factor *= 0.5;
  narrow.diag *= 0.25;
  CHECK(ks_uniform(pit_values(narrow, y)) > 0.1);
}

TEST_CASE("ks_uniform and pit_histogram oracles") {
  Eigen::VectorXd u(4);
  u << 0.1, 0.4, 0.6, 0.9;
  // Brute force: sup over the empirical CDF steps.
  double want = 0.0;
  Eigen::VectorXd s = u;
  std::sort(s.begin(), s.end());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    want = std::max({want, (i + 1.0) / 4.0 - s(i), s(i) - i / 4.0});
  CHECK(ks_uniform(u) == doctest::Approx(want).epsilon(1e-15));
  CHECK(ks_uniform(Eigen::VectorXd::Constant(5, 0.0)) == doctest::Approx(1.0));

  Eigen::VectorXd v(6);
  v << 0.0, 0.049, 0.05, 0.5, 0.999, 1.0;
  const std::vector<int> h = pit_histogram(v);
  REQUIRE(h.size() == 20);
  CHECK(h[0] == 2);
  CHECK(h[1] == 1);
  CHECK(h[10] == 1);
  CHECK(h[19] == 2);
  int total = 0;
  for (int c : h)
    total += c;
  CHECK(total == 6);
}

TEST_CASE("sharpness: examples and low-rank formula") {
  const GaussianPredictive p = diag_gaussian(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Constant(3, 4.0));
  CHECK(sharpness(p) == 2.0);
  const GaussianPredictive shifted = diag_gaussian(Eigen::VectorXd::Constant(3, 7.0), Eigen::VectorXd::Constant(3, 4.0));
  CHECK(sharpness(shifted) == sharpness(p));

  std::mt19937_64 rng(4);
  LowRankDiagGaussian lr{Eigen::VectorXd::Zero(8), testing::random_matrix(rng, 8, 3),
                         Eigen::VectorXd::Constant(8, 0.7)};
  double want = 0.0;
  for (Eigen::Index i = 0; i < 8; ++i)
    want += std::sqrt(lr.factor.row(i).squaredNorm() + lr.diag(i));
  CHECK(sharpness(lr) == doctest::Approx(want / 8.0).epsilon(1e-14));
}

TEST_CASE("metrics are invariant under a joint permutation of targets") {
  std::mt19937_64 rng(5);
  LowRankDiagGaussian lr{testing::random_vector(rng, 20), testing::random_matrix(rng, 20, 3),
                         Eigen::VectorXd::Constant(20, 0.4)};
  const Eigen::VectorXd y = testing::random_vector(rng, 20);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(20);
  perm.setIdentity();
  std::shuffle(perm.indices().data(), perm.indices().data() + 20, rng);
  const LowRankDiagGaussian q{perm * lr.mean, perm * lr.factor, perm * lr.diag};
  const Eigen::VectorXd py = perm * y;
  CHECK(rmse(q, py) == doctest::Approx(rmse(lr, y)).epsilon(1e-14));
  CHECK(marginal_nll(q, py) == doctest::Approx(marginal_nll(lr, y)).epsilon(1e-14));
  CHECK(joint_nll_normalized(q, py) == doctest::Approx(joint_nll_normalized(lr, y)).epsilon(1e-12));
  CHECK(sharpness(q) == doctest::Approx(sharpness(lr)).epsilon(1e-14));
}

TEST_CASE("aggregate_reports and evaluate_tasks") {
  std::vector<MetricReport> per;
  for (double v : {1.0, 2.0, 4.0}) {
    MetricReport r;
    r.rmse = v;
    r.marginal_nll = -v;
    r.joint_nll_normalized = 2 * v;
    r.sharpness = v / 2;
    r.n_targets = 10;
    r.n_tasks = 1;
    per.push_back(r);
  }
  const MetricReport agg = aggregate_reports(per);
  const double mean = 7.0 / 3.0;
  const double sd = std::sqrt(((1 - mean) * (1 - mean) + (2 - mean) * (2 - mean) + (4 - mean) * (4 - mean)) / 2.0);
  CHECK(agg.rmse == doctest::Approx(mean));
  CHECK(agg.marginal_nll == doctest::Approx(-mean));
  CHECK(agg.rmse_stderr == doctest::Approx(sd / std::sqrt(3.0)));
  CHECK(agg.joint_nll_stderr == doctest::Approx(2 * sd / std::sqrt(3.0)));
  CHECK(agg.n_targets == 30);
  CHECK(agg.n_tasks == 3);

  // Model N(1, 4) against y = 3 everywhere; in units with mean 10, std 2 the
  // residual doubles and the NLL picks up log 2.
  const ConstantModel model(1.0, 4.0);
  const std::vector<Task> tasks{target_task(Eigen::VectorXd::Constant(5, 3.0)),
                                target_task(Eigen::VectorXd::Constant(7, 3.0))};
  const MetricReport norm = evaluate_tasks(model, tasks);
  CHECK(norm.rmse == doctest::Approx(2.0));
  CHECK(norm.marginal_nll == doctest::Approx(kHalfLog2Pi + std::log(2.0) + 0.5));
  CHECK(norm.rmse_stderr == doctest::Approx(0.0));
  const MetricReport units = evaluate_tasks(model, tasks, Normalizer{10.0, 2.0});
  CHECK(units.rmse == doctest::Approx(4.0));
  CHECK(units.marginal_nll == doctest::Approx(norm.marginal_nll + std::log(2.0)));
  CHECK(units.sharpness == doctest::Approx(4.0));
  CHECK(units.n_targets == 12);
  CHECK(units.n_tasks == 2);
}

TEST_CASE("write_metric_rows format") {
  MetricReport r;
  r.rmse = 0.5;
  std::ostringstream os;
  write_metric_rows(os, "EQ", 10, r, true);
  write_metric_rows(os, "EQ", 20, r, false);
  const std::string s = os.str();
  CHECK(s.rfind("model,n_context,metric,value,stderr\n", 0) == 0);
  CHECK(s.find("EQ,10,rmse,0.5,") != std::string::npos);
  CHECK(s.find("EQ,20,marginal_nll,") != std::string::npos);
  CHECK(s.find("model,n_context", 5) == std::string::npos);
}

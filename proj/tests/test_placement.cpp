#include "placekit/errors.hpp"
#include "placekit/experiment.hpp"
#include "placekit/gp.hpp"
#include "placekit/neural_process.hpp"
#include "placekit/placement.hpp"
#include "placekit/random.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

using namespace placekit;

namespace {

KernelParams eq_params(double variance, double ell, double noise) {
  return KernelParams{EQParams{variance, ell, ell}, noise};
}

/// Task with the given observations and no targets.
Task obs_task(const Locations &x, const Eigen::VectorXd &y, int date = 0) {
  Task t;
  t.date = date;
  ContextSet c;
  c.locations = x;
  c.values = y;
  t.contexts.push_back(c);
  t.target_locations = Locations(0, 2);
  return t;
}

Locations pts(std::initializer_list<std::pair<double, double>> xs) {
  Locations out(static_cast<Eigen::Index>(xs.size()), 2);
  Eigen::Index i = 0;
  for (const auto &[a, b] : xs) {
    out(i, 0) = a;
    out(i, 1) = b;
    ++i;
  }
  return out;
}

/// Mean target variance after adding (x, model mean) to the task.
double variance_after(const Predictor &model, const Task &task, const Location2D &x,
                      const Locations &targets) {
  Task t = task;
  t.target_locations = targets;
  t.target_values.reset();
  const Task after = with_observation(t, x, impute_observation(model, t, x));
  return marginal_variances(model.predict(after)).mean();
}

std::vector<bool> brute_front(const std::vector<std::pair<double, double>> &p) {
  std::vector<bool> front(p.size(), true);
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) {
      const bool geq = p[j].first >= p[i].first && p[j].second <= p[i].second;
      const bool strict = p[j].first > p[i].first || p[j].second < p[i].second;
      if (geq && strict)
        front[i] = false;
    }
  return front;
}

} // namespace

TEST_CASE("kind names round trip") {
  for (AcquisitionKind k :
       {AcquisitionKind::JointMI, AcquisitionKind::MarginalMI, AcquisitionKind::DeltaVar,
        AcquisitionKind::ContextDist, AcquisitionKind::Random, AcquisitionKind::OracleJointNLL,
        AcquisitionKind::OracleMarginalNLL, AcquisitionKind::OracleRMSE})
    CHECK(parse_kind(kind_name(k)) == k);
  CHECK(is_oracle(AcquisitionKind::OracleRMSE));
  CHECK_FALSE(is_oracle(AcquisitionKind::DeltaVar));
  CHECK_THROWS_AS(parse_kind("MaxVar"), InvalidConfig);
}

TEST_CASE("acquisition_eval: ContextDist and Random") {
  const GPModel gp(eq_params(1.0, 0.3, 0.01));
  const Task t = obs_task(pts({{0, 0}, {0.9, 0.9}}), Eigen::Vector2d(0.1, 0.2), 4);
  const Locations search = pts({{0.3, 0.4}, {0.9, 0.5}});
  const Eigen::VectorXd d = acquisition_eval(gp, AcquisitionKind::ContextDist, t, search, search);
  CHECK(d(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(d(1) == doctest::Approx(0.4).epsilon(1e-14));
  const Task empty = obs_task(Locations(0, 2), Eigen::VectorXd(0));
  CHECK_THROWS_AS(acquisition_eval(gp, AcquisitionKind::ContextDist, empty, search, search),
                  EmptyContext);

  const Eigen::VectorXd r1 = acquisition_eval(gp, AcquisitionKind::Random, t, search, search, 7);
  CHECK(r1 == acquisition_eval(gp, AcquisitionKind::Random, t, search, search, 7));
  CHECK(r1 != acquisition_eval(gp, AcquisitionKind::Random, t, search, search, 8));
  CHECK(r1(0) == hash_uniform(derive_seed(7, {4, 0})));
  CHECK(((r1.array() >= 0.0) && (r1.array() < 1.0)).all());
  CHECK_THROWS_AS(acquisition_eval(gp, AcquisitionKind::OracleRMSE, t, search, search),
                  InvalidConfig);
}

TEST_CASE("acquisition_eval: GP closed forms on one target") {
  const double s2 = 1.3, eps = 0.1;
  const GPModel gp(eq_params(s2, 0.4, eps));
  const Task t = obs_task(pts({{-0.8, 0.7}}), Eigen::VectorXd::Constant(1, 0.4));
  const Locations query = pts({{0.2, 0.1}});

  // Query colocated with the target, far from the existing context.
  const Eigen::VectorXd dv = acquisition_eval(gp, AcquisitionKind::DeltaVar, t, query, query);
  // Prior is barely touched by the distant context point: use the exact
  // prior-plus-context variance as the "before" term.
  const Task tq = [&] {
    Task x = t;
    x.target_locations = query;
    return x;
  }();
  const double v_before = materialize_cov(gp.predict(tq))(0, 0);
  const double latent = v_before - eps;
  CHECK(dv(0) == doctest::Approx(latent * latent / (latent + eps)).epsilon(1e-9));

  // Without any context the closed form is sigma^4 / (sigma^2 + eps).
  const Task none = obs_task(Locations(0, 2), Eigen::VectorXd(0));
  const Eigen::VectorXd dv0 = acquisition_eval(gp, AcquisitionKind::DeltaVar, none, query, query);
  CHECK(std::abs(dv0(0) - s2 * s2 / (s2 + eps)) <= 1e-9);

  // JointMI between one query and one distinct target: -1/2 log(1 - rho^2)
  // with rho the noisy correlation.
  const Locations target = pts({{0.45, -0.05}});
  const double k = kernel_eval(gp.params(), query.row(0), target.row(0));
  const double rho = k / (s2 + eps);
  const Eigen::VectorXd mi = acquisition_eval(gp, AcquisitionKind::JointMI, none, query, target);
  CHECK(std::abs(mi(0) - (-0.5 * std::log(1.0 - rho * rho))) <= 1e-9);
  const Eigen::VectorXd mmi = acquisition_eval(gp, AcquisitionKind::MarginalMI, none, query, target);
  CHECK(std::abs(mmi(0) - mi(0)) <= 1e-12);
  const Eigen::VectorXd dvt = acquisition_eval(gp, AcquisitionKind::DeltaVar, none, query, target);
  CHECK(std::abs(dvt(0) - k * k / (s2 + eps)) <= 1e-9);
}

TEST_CASE("acquisition_average") {
  std::mt19937_64 rng(1);
  const Eigen::VectorXd f = testing::random_vector(rng, 9);
  CHECK(acquisition_average({f}) == f);
  CHECK(acquisition_average({f, Eigen::VectorXd(-f)}).cwiseAbs().maxCoeff() == 0.0);
  std::vector<Eigen::VectorXd> stack;
  for (int j = 0; j < 4; ++j)
    stack.push_back(testing::random_vector(rng, 9));
  for (Eigen::Index i = 0; i < 9; ++i) {
    const double naive = (stack[0](i) + stack[1](i) + stack[2](i) + stack[3](i)) / 4.0;
    CHECK(std::abs(acquisition_average(stack)(i) - naive) <= 1e-12);
  }
  CHECK_THROWS_AS(acquisition_average({f, Eigen::VectorXd::Zero(3)}), ShapeMismatch);
  CHECK_THROWS_AS(acquisition_average({}), ShapeMismatch);
}

TEST_CASE("GP acquisitions are nonnegative, value-free and date-free") {
  const Dataset &data = testing::small_data();
  const GPModel gp(eq_params(1.0, 0.35, 0.02));
  const std::vector<int> stations{5, 40, 77, 130, 201};
  const std::vector<int> cells = lattice_cells(data.environment(), 3, false);
  const Locations search = cell_locations(data.environment(), cells);
  for (AcquisitionKind kind :
       {AcquisitionKind::JointMI, AcquisitionKind::MarginalMI, AcquisitionKind::DeltaVar}) {
    const Task a = make_task(data, 3, stations, cells);
    Task b = a;
    std::mt19937_64 rng(2);
    b.observations().values = testing::random_matrix(rng, 5, 1, 3.0);
    const Eigen::VectorXd fa = acquisition_eval(gp, kind, a, search, search);
    CHECK(fa == acquisition_eval(gp, kind, b, search, search));
    CHECK((fa.array() >= 0.0).all());
    for (int date : {50, 120})
      CHECK(fa == acquisition_eval(gp, kind, make_task(data, date, stations, cells), search, search));
  }
}

TEST_CASE("greedy_place: K = 1 matches a brute-force sweep on 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const GPModel gp(eq_params(1.0, 0.3, 0.05));
    const Locations ctx = testing::random_locations(rng, 4);
    const Locations search = testing::random_locations(rng, seed == 0 ? 3 : 12);
    const Locations targets = testing::random_locations(rng, 15);
    std::vector<Task> tasks;
    for (int d = 0; d < 2; ++d)
      tasks.push_back(obs_task(ctx, testing::random_vector(rng, 4), d));
    const PlacementPlan plan = greedy_place(gp, AcquisitionKind::DeltaVar, tasks, search, targets, 1);
    REQUIRE(plan.steps.size() == 1);

    Task base = tasks[0];
    base.target_locations = targets;
    const double before = marginal_variances(gp.predict(base)).mean();
    int best = 0;
    double best_gain = -1e300;
    for (Eigen::Index i = 0; i < search.rows(); ++i) {
      double gain = 0.0;
      for (const Task &t : tasks)
        gain += before - variance_after(gp, t, search.row(i), targets);
      gain /= 2.0;
      if (gain > best_gain) {
        best_gain = gain;
        best = static_cast<int>(i);
      }
    }
    CHECK(plan.steps[0].search_index == best);
    CHECK(plan.steps[0].alpha == doctest::Approx(best_gain).epsilon(1e-10));
  }
}

TEST_CASE("greedy_place: ContextDist, K = S, ties, argument checks") {
  const GPModel gp(eq_params(1.0, 0.3, 0.05));
  std::mt19937_64 rng(3);
  const Locations ctx = testing::random_locations(rng, 3, 0.2);
  const Locations search = testing::random_locations(rng, 25);
  const std::vector<Task> tasks{obs_task(ctx, Eigen::Vector3d(0.1, 0.2, 0.3))};
  const PlacementPlan far = greedy_place(gp, AcquisitionKind::ContextDist, tasks, search, search, 2);
  int want = 0;
  double dist = -1.0;
  for (Eigen::Index i = 0; i < search.rows(); ++i) {
    const double d = std::sqrt((ctx.rowwise() - search.row(i)).rowwise().squaredNorm().minCoeff());
    if (d > dist) {
      dist = d;
      want = static_cast<int>(i);
    }
  }
  CHECK(far.steps[0].search_index == want);
  CHECK(far.steps[1].search_index != want);

  const Locations small = testing::random_locations(rng, 6);
  const PlacementPlan all = greedy_place(gp, AcquisitionKind::DeltaVar, tasks, small, small, 6);
  std::vector<int> idx = all.indices();
  std::sort(idx.begin(), idx.end());
  CHECK(idx == std::vector<int>{0, 1, 2, 3, 4, 5});

  const FieldFn flat = [](const Task &, const Locations &s, const Locations &) {
    return Eigen::VectorXd::Constant(s.rows(), 2.0).eval();
  };
  const PlacementPlan tied = greedy_place_with(gp, AcquisitionKind::DeltaVar, flat, tasks, small, small, 3);
  CHECK(tied.indices() == std::vector<int>{0, 1, 2});

  CHECK(greedy_place(gp, AcquisitionKind::DeltaVar, tasks, small, small, 0).steps.empty());
  CHECK_THROWS_AS(greedy_place(gp, AcquisitionKind::DeltaVar, tasks, small, small, 7), InvalidConfig);
  CHECK_THROWS_AS(greedy_place(gp, AcquisitionKind::DeltaVar, {}, small, small, 1), InvalidConfig);
}

TEST_CASE("greedy_place: constant shifts per date leave the plan unchanged") {
  const GPModel gp(eq_params(1.0, 0.3, 0.05));
  std::mt19937_64 rng(4);
  const Locations search = testing::random_locations(rng, 20);
  const Locations targets = testing::random_locations(rng, 10);
  std::vector<Task> tasks;
  for (int d = 0; d < 3; ++d)
    tasks.push_back(obs_task(testing::random_locations(rng, 3), testing::random_vector(rng, 3), d));
  for (AcquisitionKind kind :
       {AcquisitionKind::JointMI, AcquisitionKind::MarginalMI, AcquisitionKind::DeltaVar}) {
    const FieldFn plain = [&](const Task &t, const Locations &s, const Locations &x) {
      return acquisition_eval(gp, kind, t, s, x);
    };
    const FieldFn shifted = [&](const Task &t, const Locations &s, const Locations &x) {
      return (acquisition_eval(gp, kind, t, s, x).array() + 100.0 * (t.date + 1) - 37.5)
          .matrix()
          .eval();
    };
    const auto a = greedy_place_with(gp, kind, plain, tasks, search, targets, 4).indices();
    const auto b = greedy_place_with(gp, kind, shifted, tasks, search, targets, 4).indices();
    CHECK(a == b);
  }
}

TEST_CASE("JointMI: explicit difference ranks like the constant-dropped form") {
  const GPModel gp(eq_params(1.0, 0.25, 0.05));
  std::mt19937_64 rng(5);
  const Locations search = testing::random_locations(rng, 40);
  const Locations targets = testing::random_locations(rng, 25);
  const Task t = obs_task(testing::random_locations(rng, 5), testing::random_vector(rng, 5));
  const Eigen::VectorXd full = acquisition_eval(gp, AcquisitionKind::JointMI, t, search, targets);
  Eigen::VectorXd dropped(search.rows());
  Task base = t;
  base.target_locations = targets;
  for (Eigen::Index i = 0; i < search.rows(); ++i) {
    const Task after = with_observation(base, search.row(i), impute_observation(gp, base, search.row(i)));
    dropped(i) = -0.5 * predictive_logdet(gp.predict(after));
  }
  Eigen::Index am = 0, bm = 0;
  full.maxCoeff(&am);
  dropped.maxCoeff(&bm);
  CHECK(am == bm);
  CHECK(kendall_kappa(full, dropped) == 1.0);
}

TEST_CASE("oracle_acquisition: near-duplicate reveal and definition") {
  const GPModel gp(eq_params(1.0, 0.3, 1e-6));
  std::mt19937_64 rng(6);
  const Locations ctx = testing::random_locations(rng, 4);
  const Eigen::VectorXd yc = testing::random_vector(rng, 4);
  const Locations targets = testing::random_locations(rng, 12);
  Task t = obs_task(ctx, yc, 2);
  t.target_locations = targets;
  t.target_values = testing::random_vector(rng, 12);
  const Locations search = ctx.topRows(1);
  const std::vector<Eigen::VectorXd> truth{yc.head(1)};
  for (AcquisitionKind m : {AcquisitionKind::OracleJointNLL, AcquisitionKind::OracleMarginalNLL,
                            AcquisitionKind::OracleRMSE}) {
    const AcquisitionField f = oracle_acquisition(gp, m, {t}, truth, search, targets);
    REQUIRE(f.values.size() == 1);
    CHECK(std::abs(f.values(0)) < 1e-3);
    CHECK(f.dates_used == std::vector<int>{2});
  }

  // Definition: metric before minus metric after revealing the truth.
  const Locations s2 = testing::random_locations(rng, 3);
  const Eigen::VectorXd truth2 = testing::random_vector(rng, 3);
  const AcquisitionField f = oracle_acquisition(gp, AcquisitionKind::OracleRMSE, {t}, {truth2}, s2, targets);
  const double before = rmse(gp.predict(t), *t.target_values);
  for (Eigen::Index i = 0; i < 3; ++i) {
    const double after = rmse(gp.predict(with_observation(t, s2.row(i), truth2(i))), *t.target_values);
    CHECK(f.values(i) == before - after);
  }
  CHECK_THROWS_AS(oracle_acquisition(gp, AcquisitionKind::DeltaVar, {t}, {truth2}, s2, targets),
                  InvalidConfig);
}

TEST_CASE("pearson_r: examples, oracle, degeneracy") {
  std::mt19937_64 rng(7);
  const Eigen::VectorXd a = testing::random_vector(rng, 100);
  CHECK(pearson_r(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson_r(a, (-2.0 * a.array() + 7.0).matrix()) == doctest::Approx(-1.0).epsilon(1e-15));
  const Eigen::VectorXd b = a + testing::random_vector(rng, 100);
  double sa = 0, sb = 0, sab = 0, ma = a.mean(), mb = b.mean();
  for (Eigen::Index i = 0; i < 100; ++i) {
    sab += (a(i) - ma) * (b(i) - mb);
    sa += (a(i) - ma) * (a(i) - ma);
    sb += (b(i) - mb) * (b(i) - mb);
  }
  CHECK(std::abs(pearson_r(a, b) - sab / std::sqrt(sa * sb)) <= 1e-12);
  CHECK(std::abs(pearson_r((3.0 * a.array() + 1.0).matrix(), b) - pearson_r(a, b)) <= 1e-12);
  CHECK_THROWS_AS(pearson_r(Eigen::VectorXd::Constant(5, 2.0), a.head(5)), DegenerateInput);
  CHECK_THROWS_AS(pearson_r(a.head(1), a.head(1)), DegenerateInput);
}

TEST_CASE("kendall_kappa: examples and monotone invariance") {
  const Eigen::Vector3d a(1, 2, 3);
  CHECK(kendall_kappa(a, a) == 1.0);
  CHECK(kendall_kappa(a, Eigen::Vector3d(3, 2, 1)) == -1.0);
  CHECK(kendall_kappa(a, Eigen::Vector3d(1, 3, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // One tied pair out of three contributes nothing.
  CHECK(kendall_kappa(a, Eigen::Vector3d(1, 1, 2)) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  std::mt19937_64 rng(8);
  const Eigen::VectorXd x = testing::random_vector(rng, 60);
  const Eigen::VectorXd y = x + testing::random_vector(rng, 60);
  CHECK(kendall_kappa(x.array().exp().matrix(), y) == kendall_kappa(x, y));
}

TEST_CASE("bootstrap_ci: perfect correlation, determinism, containment") {
  std::mt19937_64 rng(9);
  const Eigen::VectorXd a = testing::random_vector(rng, 40);
  const auto perfect = bootstrap_ci(a, a, pearson_r, 200, 1);
  CHECK(perfect.first == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(perfect.second == doctest::Approx(1.0).epsilon(1e-15));
  // Resampled duplicates form tied pairs, which count zero.
  const auto k = bootstrap_ci(a, a, kendall_kappa, 200, 1);
  CHECK(k.first <= k.second);
  CHECK(k.second <= 1.0);
  CHECK(k.first > 0.9);

  int contained = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd x = testing::random_vector(rng, 50);
    const Eigen::VectorXd y = 0.6 * x + testing::random_vector(rng, 50);
    const auto ci = bootstrap_ci(x, y, pearson_r, 300, trial);
    CHECK(ci == bootstrap_ci(x, y, pearson_r, 300, trial));
    const double r = pearson_r(x, y);
    contained += (ci.first <= r && r <= ci.second);
  }
  CHECK(contained == 100);

  // Two distinct values only: many resamples are constant and get redrawn.
  Eigen::VectorXd two = Eigen::VectorXd::Zero(6);
  two(0) = 1.0;
  const auto redrawn = bootstrap_ci(two, two, pearson_r, 100, 3);
  CHECK(redrawn.first == doctest::Approx(1.0));

  const CorrelationReport rep = correlation_report(a, (a.array() * 2.0).matrix(), 100, 4);
  CHECK(rep.n_resamples == 100);
  CHECK(rep.kendall_kappa == 1.0);
  std::ostringstream os;
  write_correlation_csv(os, "DeltaVar_vs_OracleRMSE", rep, true);
  CHECK(os.str().rfind("label,statistic,value,lo,hi,n_resamples\nDeltaVar_vs_OracleRMSE,pearson_r,", 0) == 0);
}

TEST_CASE("pareto_ranks: examples and brute-force dominance") {
  CHECK(pareto_ranks({{0.3, 0.4}}) == std::vector<int>{1});
  // Higher informativeness at higher cost is a genuine trade-off.
  CHECK(pareto_ranks({{3, 3}, {2, 2}, {1, 1}}) == std::vector<int>{1, 1, 1});
  // More informative and cheaper dominates outright.
  CHECK(pareto_ranks({{3, 1}, {2, 2}, {1, 3}}) == std::vector<int>{1, 2, 3});
  CHECK(pareto_ranks({{3, 1}, {2, 1}, {2, 2}}) == std::vector<int>{1, 2, 3});

  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> coarse(0, 30);
  std::uniform_real_distribution<double> fine(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<std::pair<double, double>> p(1000);
    for (auto &q : p)
      q = trial % 2 == 0 ? std::make_pair(fine(rng), fine(rng))
                         : std::make_pair(double(coarse(rng)), double(coarse(rng)));
    const std::vector<int> ranks = pareto_ranks(p);
    const std::vector<bool> front = brute_front(p);
    for (std::size_t i = 0; i < p.size(); ++i)
      CHECK((ranks[i] == 1) == front[i]);
    // Peeling: no point is dominated by one of equal or higher rank, and every
    // point of rank r > 1 is dominated by some point of rank r - 1.
    const std::vector<ParetoPoint> pp = [&] {
      std::vector<ParetoPoint> v(p.size());
      for (std::size_t i = 0; i < p.size(); ++i)
        v[i] = ParetoPoint{int(i), p[i].first, p[i].second, ranks[i]};
      return v;
    }();
    for (std::size_t i = 0; i < p.size(); ++i) {
      bool parent = pp[i].rank == 1;
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (!dominates(pp[j], pp[i]))
          continue;
        CHECK(pp[j].rank < pp[i].rank);
        parent = parent || pp[j].rank == pp[i].rank - 1;
      }
      CHECK(parent);
    }
  }
  const std::vector<ParetoPoint> pts = pareto_points(Eigen::Vector3d(3, 2, 2), Eigen::Vector3d(1, 1, 2));
  CHECK(pts[2].index == 2);
  CHECK(pts[2].rank == 3);
  CHECK_THROWS_AS(pareto_points(Eigen::Vector3d(1, 2, 3), Eigen::Vector2d(1, 2)), ShapeMismatch);
}

TEST_CASE("evaluate_plan: baseline row, interpolation, monotone GP variance") {
  const Dataset &data = testing::small_data();
  const std::vector<int> stations{12, 100, 180};
  const std::vector<int> targets = lattice_cells(data.environment(), 2, false);
  const std::vector<int> dates{0, 40, 80};
  const GPModel gp(eq_params(1.0, 0.3, 1e-10));

  const PlanEvaluation none = evaluate_plan(gp, data, dates, stations, {}, targets);
  REQUIRE(none.reports.size() == 1);
  std::vector<Task> tasks;
  for (int d : dates)
    tasks.push_back(make_task(data, d, stations, targets));
  const MetricReport base = evaluate_tasks(gp, tasks);
  CHECK(none.reports[0].rmse == base.rmse);
  CHECK(none.reports[0].marginal_nll == base.marginal_nll);
  CHECK(none.reports[0].joint_nll_normalized == base.joint_nll_normalized);

  // Revealing a target cell pins the prediction there.
  const int cell = targets[10];
  Task t = make_task(data, 0, {cell}, {cell});
  const Eigen::VectorXd mu = predictive_mean(gp.predict(t));
  CHECK(std::abs(mu(0) - (*t.target_values)(0)) <= 1e-6);

  const Locations search = cell_locations(data.environment(), targets);
  std::vector<Task> plan_tasks;
  for (int d : dates)
    plan_tasks.push_back(make_task(data, d, stations, targets));
  const GPModel noisy(eq_params(1.0, 0.3, 0.01));
  const PlacementPlan plan = greedy_place(noisy, AcquisitionKind::DeltaVar, plan_tasks, search, search, 5);
  std::vector<int> placed;
  for (int i : plan.indices())
    placed.push_back(targets[std::size_t(i)]);
  const PlanEvaluation ev = evaluate_plan(noisy, data, dates, stations, placed, targets);
  REQUIRE(ev.mean_variance.size() == 6);
  for (std::size_t k = 1; k < ev.mean_variance.size(); ++k)
    CHECK(ev.mean_variance[k] <= ev.mean_variance[k - 1]);
  const PlanEvaluation again = evaluate_plan(noisy, data, dates, stations, placed, targets);
  CHECK(again.reports[5].rmse == ev.reports[5].rmse);
}

TEST_CASE("neural-process covariance does depend on context values") {
  NPArchitecture arch;
  arch.auxiliary_grid_size = 16;
  const NPModel np(arch, 31);
  const Dataset &data = testing::small_data();
  const std::vector<int> stations{12, 100, 180, 33};
  const std::vector<int> cells = lattice_cells(data.environment(), 3, false);
  const Locations search = cell_locations(data.environment(), cells);
  const Task a = make_task(data, 3, stations, cells);
  Task b = a;
  b.observations().values.array() += 1.5;
  CHECK(acquisition_eval(np, AcquisitionKind::DeltaVar, a, search, search) !=
        acquisition_eval(np, AcquisitionKind::DeltaVar, b, search, search));
  CHECK(materialize_cov(np.predict(a)) != materialize_cov(np.predict(b)));
  CHECK(np.covariance_depends_on_values());
}

TEST_CASE("field and plan CSV layout") {
  AcquisitionField f{pts({{0.5, -0.25}}), Eigen::VectorXd::Constant(1, 0.125), AcquisitionKind::JointMI, {1}};
  std::ostringstream os;
  write_field_csv(os, f);
  CHECK(os.str() == "x1,x2,alpha,kind\n0.5,-0.25,0.125,JointMI\n");
  PlacementPlan plan;
  PlacementStep s;
  s.search_index = 3;
  s.location = Location2D(0.25, 0.75);
  s.alpha = 2.0;
  plan.steps.push_back(s);
  std::ostringstream ps;
  write_plan_csv(ps, plan);
  CHECK(ps.str() == "step,x1,x2,alpha\n1,0.25,0.75,2\n");
}

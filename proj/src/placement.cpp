#include "placekit/placement.hpp"

#include "placekit/csv.hpp"
#include "placekit/errors.hpp"
#include "placekit/parallel.hpp"
#include "placekit/random.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

namespace placekit {

namespace {

constexpr std::array<std::pair<AcquisitionKind, const char *>, 8> kKindNames{{
    {AcquisitionKind::JointMI, "JointMI"},
    {AcquisitionKind::MarginalMI, "MarginalMI"},
    {AcquisitionKind::DeltaVar, "DeltaVar"},
    {AcquisitionKind::ContextDist, "ContextDist"},
    {AcquisitionKind::Random, "Random"},
    {AcquisitionKind::OracleJointNLL, "OracleJointNLL"},
    {AcquisitionKind::OracleMarginalNLL, "OracleMarginalNLL"},
    {AcquisitionKind::OracleRMSE, "OracleRMSE"},
}};

Task retarget(const Task &task, const Locations &targets) {
  Task t = task;
  t.target_locations = targets;
  t.target_values.reset();
  return t;
}

struct Uncertainty {
  double logdet = 0.0;
  double sum_log_var = 0.0;
  double mean_var = 0.0;
};

Uncertainty uncertainty(const GaussianPredictive &p, AcquisitionKind kind) {
  Uncertainty u;
  if (kind == AcquisitionKind::JointMI) {
    u.logdet = predictive_logdet(p);
  } else {
    const Eigen::VectorXd var = marginal_variances(p);
    if (kind == AcquisitionKind::MarginalMI)
      u.sum_log_var = var.array().log().sum();
    else
      u.mean_var = var.mean();
  }
  return u;
}

double reduction(const Uncertainty &before, const Uncertainty &after, AcquisitionKind kind) {
  switch (kind) {
  case AcquisitionKind::JointMI:
    return 0.5 * (before.logdet - after.logdet);
  case AcquisitionKind::MarginalMI:
    return 0.5 * (before.sum_log_var - after.sum_log_var);
  default:
    return before.mean_var - after.mean_var;
  }
}

double oracle_metric(AcquisitionKind metric, const GaussianPredictive &pred,
                     const Eigen::VectorXd &y) {
  switch (metric) {
  case AcquisitionKind::OracleJointNLL:
    return joint_nll_normalized(pred, y);
  case AcquisitionKind::OracleMarginalNLL:
    return marginal_nll(pred, y);
  case AcquisitionKind::OracleRMSE:
    return rmse(pred, y);
  default:
    throw InvalidConfig("not an oracle metric: " + kind_name(metric));
  }
}

double sum_squares_centered(const Eigen::VectorXd &x, Eigen::VectorXd &centered) {
  centered = x.array() - x.mean();
  return centered.squaredNorm();
}

bool negligible(double ss, const Eigen::VectorXd &x) {
  const double scale = x.cwiseAbs().maxCoeff();
  const double tol = std::numeric_limits<double>::epsilon() * scale;
  return !(ss > tol * tol * static_cast<double>(x.size()));
}

double percentile(std::vector<double> sorted, double q) {
  std::sort(sorted.begin(), sorted.end());
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

} // namespace

std::string kind_name(AcquisitionKind kind) {
  for (const auto &[k, name] : kKindNames)
    if (k == kind)
      return name;
  return "unknown";
}

AcquisitionKind parse_kind(const std::string &name) {
  for (const auto &[k, n] : kKindNames)
    if (name == n)
      return k;
  throw InvalidConfig("unknown acquisition kind '" + name + "'");
}

bool is_oracle(AcquisitionKind kind) {
  return kind == AcquisitionKind::OracleJointNLL ||
         kind == AcquisitionKind::OracleMarginalNLL || kind == AcquisitionKind::OracleRMSE;
}

double impute_observation(const Predictor &model, const Task &task, const Location2D &x) {
  Locations at(1, 2);
  at.row(0) = x;
  return predictive_mean(model.predict(retarget(task, at)))(0);
}

Eigen::VectorXd acquisition_eval(const Predictor &model, AcquisitionKind kind,
                                 const Task &task, const Locations &search,
                                 const Locations &targets, std::uint64_t seed) {
  const Eigen::Index S = search.rows();
  Eigen::VectorXd alpha(S);
  switch (kind) {
  case AcquisitionKind::ContextDist: {
    const Locations &obs = task.observations().locations;
    if (obs.rows() == 0)
      throw EmptyContext("ContextDist needs at least one observation");
    for (Eigen::Index i = 0; i < S; ++i)
      alpha(i) = std::sqrt((obs.rowwise() - search.row(i)).rowwise().squaredNorm().minCoeff());
    return alpha;
  }
  case AcquisitionKind::Random:
    for (Eigen::Index i = 0; i < S; ++i)
      alpha(i) = hash_uniform(derive_seed(
          seed, {static_cast<std::uint64_t>(task.date), static_cast<std::uint64_t>(i)}));
    return alpha;
  case AcquisitionKind::JointMI:
  case AcquisitionKind::MarginalMI:
  case AcquisitionKind::DeltaVar:
    break;
  default:
    throw InvalidConfig(kind_name(kind) + " needs ground truth; use oracle_acquisition");
  }

  const Task target_task = retarget(task, targets);
  const Uncertainty before = uncertainty(model.predict(target_task), kind);
  const Eigen::VectorXd imputed = predictive_mean(model.predict(retarget(task, search)));
  parallel_for(static_cast<std::size_t>(S), [&](std::size_t i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const Task after_task = with_observation(target_task, search.row(ii), imputed(ii));
    alpha(ii) = reduction(before, uncertainty(model.predict(after_task), kind), kind);
  });
  return alpha;
}

Eigen::VectorXd acquisition_average(const std::vector<Eigen::VectorXd> &per_date) {
  if (per_date.empty())
    throw ShapeMismatch("cannot average zero acquisition fields");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(per_date.front().size());
  for (const auto &f : per_date) {
    if (f.size() != sum.size())
      throw ShapeMismatch("acquisition fields differ in length");
    sum += f;
  }
  return sum / static_cast<double>(per_date.size());
}

std::vector<int> PlacementPlan::indices() const {
  std::vector<int> out;
  for (const auto &s : steps)
    out.push_back(s.search_index);
  return out;
}

PlacementPlan greedy_place(const Predictor &model, AcquisitionKind kind,
                           const std::vector<Task> &date_tasks, const Locations &search,
                           const Locations &targets, int K, std::uint64_t seed) {
  const FieldFn field = [&](const Task &t, const Locations &s, const Locations &x) {
    return acquisition_eval(model, kind, t, s, x, seed);
  };
  return greedy_place_with(model, kind, field, date_tasks, search, targets, K);
}

PlacementPlan greedy_place_with(const Predictor &model, AcquisitionKind kind,
                                const FieldFn &field, const std::vector<Task> &date_tasks,
                                const Locations &search, const Locations &targets, int K) {
  if (K < 0 || K > search.rows())
    throw InvalidConfig("K = " + std::to_string(K) + " must lie in [0, " +
                        std::to_string(search.rows()) + "]");
  if (date_tasks.empty())
    throw InvalidConfig("greedy placement needs at least one date");

  std::vector<Task> tasks = date_tasks;
  std::vector<int> dates;
  for (const Task &t : tasks)
    dates.push_back(t.date);
  std::vector<bool> taken(static_cast<std::size_t>(search.rows()), false);

  PlacementPlan plan;
  plan.kind = kind;
  for (int step = 0; step < K; ++step) {
    std::vector<Eigen::VectorXd> per_date;
    for (const Task &t : tasks)
      per_date.push_back(field(t, search, targets));
    const Eigen::VectorXd alpha = acquisition_average(per_date);

    int best = -1;
    for (Eigen::Index i = 0; i < alpha.size(); ++i) {
      if (taken[static_cast<std::size_t>(i)])
        continue;
      if (best < 0 || alpha(i) > alpha(best))
        best = static_cast<int>(i);
    }
    taken[static_cast<std::size_t>(best)] = true;

    PlacementStep s;
    s.search_index = best;
    s.location = search.row(best);
    s.alpha = alpha(best);
    s.field = AcquisitionField{search, alpha, kind, dates};
    plan.steps.push_back(std::move(s));

    for (Task &t : tasks)
      t = with_observation(t, search.row(best),
                           impute_observation(model, t, search.row(best)));
  }
  return plan;
}

AcquisitionField oracle_acquisition(const Predictor &model, AcquisitionKind metric,
                                    const std::vector<Task> &date_tasks,
                                    const std::vector<Eigen::VectorXd> &search_truth,
                                    const Locations &search, const Locations &targets) {
  if (!is_oracle(metric))
    throw InvalidConfig(kind_name(metric) + " is not an oracle acquisition");
  if (date_tasks.size() != search_truth.size())
    throw ShapeMismatch("one search-truth vector per date is required");
  AcquisitionField out;
  out.search_locations = search;
  out.kind = metric;
  std::vector<Eigen::VectorXd> per_date;
  for (std::size_t d = 0; d < date_tasks.size(); ++d) {
    const Task &task = date_tasks[d];
    if (!task.target_values || task.target_values->size() != targets.rows())
      throw ShapeMismatch("oracle tasks need true values at every target");
    if (search_truth[d].size() != search.rows())
      throw ShapeMismatch("search truth length differs from search size");
    Task t = task;
    t.target_locations = targets;
    const Eigen::VectorXd &y = *task.target_values;
    const double before = oracle_metric(metric, model.predict(t), y);
    Eigen::VectorXd alpha(search.rows());
    parallel_for(static_cast<std::size_t>(search.rows()), [&](std::size_t i) {
      const auto ii = static_cast<Eigen::Index>(i);
      const Task after = with_observation(t, search.row(ii), search_truth[d](ii));
      alpha(ii) = before - oracle_metric(metric, model.predict(after), y);
    });
    per_date.push_back(std::move(alpha));
    out.dates_used.push_back(task.date);
  }
  out.values = acquisition_average(per_date);
  return out;
}

double pearson_r(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
  if (a.size() != b.size())
    throw ShapeMismatch("pearson_r inputs differ in length");
  if (a.size() < 2)
    throw DegenerateInput("pearson_r needs at least two points");
  Eigen::VectorXd ca, cb;
  const double saa = sum_squares_centered(a, ca);
  const double sbb = sum_squares_centered(b, cb);
  if (negligible(saa, a) || negligible(sbb, b))
    throw DegenerateInput("pearson_r input has zero variance");
  return std::clamp(ca.dot(cb) / std::sqrt(saa * sbb), -1.0, 1.0);
}

double kendall_kappa(const Eigen::VectorXd &a, const Eigen::VectorXd &b) {
  if (a.size() != b.size())
    throw ShapeMismatch("kendall_kappa inputs differ in length");
  if (a.size() < 2)
    throw DegenerateInput("kendall_kappa needs at least two points");
  auto sgn = [](double x) { return (x > 0.0) - (x < 0.0); };
  long long sum = 0;
  const Eigen::Index n = a.size();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      sum += sgn(a(i) - a(j)) * sgn(b(i) - b(j));
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  // With sgn(0) = 0, 2 N_con / N_pairs - 1 reduces to the mean sign product.
  return static_cast<double>(sum) / pairs;
}

std::pair<double, double> bootstrap_ci(const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                                       const Statistic &statistic, int n_resamples,
                                       std::uint64_t seed) {
  if (a.size() != b.size())
    throw ShapeMismatch("bootstrap inputs differ in length");
  if (a.size() < 2)
    throw DegenerateInput("bootstrap needs at least two points");
  if (n_resamples < 1)
    throw InvalidConfig("bootstrap needs at least one resample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, a.size() - 1);
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(n_resamples));
  Eigen::VectorXd ra(a.size()), rb(b.size());
  for (int r = 0; r < n_resamples; ++r) {
    for (int attempt = 0;; ++attempt) {
      for (Eigen::Index i = 0; i < a.size(); ++i) {
        const Eigen::Index k = pick(rng);
        ra(i) = a(k);
        rb(i) = b(k);
      }
      try {
        stats.push_back(statistic(ra, rb));
        break;
      } catch (const DegenerateInput &) {
        if (attempt >= 100)
          throw;
      }
    }
  }
  return {percentile(stats, 0.025), percentile(stats, 0.975)};
}

CorrelationReport correlation_report(const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                                     int n_resamples, std::uint64_t seed) {
  CorrelationReport r;
  r.pearson_r = pearson_r(a, b);
  r.kendall_kappa = kendall_kappa(a, b);
  r.pearson_ci = bootstrap_ci(a, b, pearson_r, n_resamples, derive_seed(seed, {1}));
  r.kendall_ci = bootstrap_ci(a, b, kendall_kappa, n_resamples, derive_seed(seed, {2}));
  r.n_resamples = n_resamples;
  return r;
}

PlanEvaluation evaluate_plan(const Predictor &model, const Dataset &data,
                             const std::vector<int> &dates,
                             const std::vector<int> &station_cells,
                             const std::vector<int> &placed_cells,
                             const std::vector<int> &target_cells,
                             const std::optional<Normalizer> &units) {
  if (dates.empty())
    throw InvalidConfig("plan evaluation needs at least one date");
  PlanEvaluation out;
  for (std::size_t k = 0; k <= placed_cells.size(); ++k) {
    std::vector<int> context = station_cells;
    context.insert(context.end(), placed_cells.begin(),
                   placed_cells.begin() + static_cast<std::ptrdiff_t>(k));
    std::vector<MetricReport> reports(dates.size());
    std::vector<double> variances(dates.size());
    parallel_for(dates.size(), [&](std::size_t d) {
      const Task task = make_task(data, dates[d], context, target_cells);
      GaussianPredictive pred = model.predict(task);
      Eigen::VectorXd y = *task.target_values;
      if (units) {
        pred = affine_transform(pred, units->mean, units->std);
        y = denormalize(y, *units);
      }
      reports[d] = evaluate_prediction(pred, y);
      variances[d] = marginal_variances(pred).mean();
    });
    out.reports.push_back(aggregate_reports(reports));
    double mean = 0.0;
    for (double v : variances)
      mean += v;
    out.mean_variance.push_back(mean / static_cast<double>(variances.size()));
  }
  return out;
}

bool dominates(const ParetoPoint &p, const ParetoPoint &q) {
  return p.informativeness >= q.informativeness && p.cost <= q.cost &&
         (p.informativeness > q.informativeness || p.cost < q.cost);
}

std::vector<int> pareto_ranks(const std::vector<std::pair<double, double>> &points) {
  std::vector<ParetoPoint> pts(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    pts[i].informativeness = points[i].first;
    pts[i].cost = points[i].second;
  }
  std::vector<int> ranks(points.size(), 0);
  std::vector<std::size_t> remaining(points.size());
  for (std::size_t i = 0; i < remaining.size(); ++i)
    remaining[i] = i;
  for (int rank = 1; !remaining.empty(); ++rank) {
    std::vector<std::size_t> front, rest;
    for (std::size_t i : remaining) {
      bool dominated = false;
      for (std::size_t j : remaining)
        if (j != i && dominates(pts[j], pts[i])) {
          dominated = true;
          break;
        }
      (dominated ? rest : front).push_back(i);
    }
    for (std::size_t i : front)
      ranks[i] = rank;
    remaining = std::move(rest);
  }
  return ranks;
}

std::vector<ParetoPoint> pareto_points(const Eigen::VectorXd &informativeness,
                                       const Eigen::VectorXd &cost) {
  if (informativeness.size() != cost.size())
    throw ShapeMismatch("informativeness and cost differ in length");
  std::vector<std::pair<double, double>> raw;
  for (Eigen::Index i = 0; i < cost.size(); ++i)
    raw.emplace_back(informativeness(i), cost(i));
  const std::vector<int> ranks = pareto_ranks(raw);
  std::vector<ParetoPoint> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    out[i] = ParetoPoint{static_cast<int>(i), raw[i].first, raw[i].second, ranks[i]};
  return out;
}

void write_field_csv(std::ostream &os, const AcquisitionField &field) {
  os << "x1,x2,alpha,kind\n";
  const std::string kind = kind_name(field.kind);
  for (Eigen::Index i = 0; i < field.values.size(); ++i)
    os << format_double(field.search_locations(i, 0)) << ','
       << format_double(field.search_locations(i, 1)) << ','
       << format_double(field.values(i)) << ',' << kind << '\n';
}

void write_plan_csv(std::ostream &os, const PlacementPlan &plan) {
  os << "step,x1,x2,alpha\n";
  for (std::size_t k = 0; k < plan.steps.size(); ++k) {
    const auto &s = plan.steps[k];
    os << k + 1 << ',' << format_double(s.location(0)) << ','
       << format_double(s.location(1)) << ',' << format_double(s.alpha) << '\n';
  }
}

void write_correlation_csv(std::ostream &os, const std::string &label,
                           const CorrelationReport &r, bool header) {
  if (header)
    os << "label,statistic,value,lo,hi,n_resamples\n";
  os << label << ",pearson_r," << format_double(r.pearson_r) << ','
     << format_double(r.pearson_ci.first) << ',' << format_double(r.pearson_ci.second) << ','
     << r.n_resamples << '\n';
  os << label << ",kendall_kappa," << format_double(r.kendall_kappa) << ','
     << format_double(r.kendall_ci.first) << ',' << format_double(r.kendall_ci.second)
     << ',' << r.n_resamples << '\n';
}

} // namespace placekit

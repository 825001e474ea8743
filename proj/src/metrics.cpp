#include "placekit/metrics.hpp"

#include "placekit/csv.hpp"
#include "placekit/errors.hpp"
#include "placekit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace placekit {

namespace {

void check_lengths(const GaussianPredictive &pred, const Eigen::VectorXd &y) {
  if (predictive_size(pred) != y.size())
    throw ShapeMismatch("predictive has " + std::to_string(predictive_size(pred)) +
                        " targets, values have " + std::to_string(y.size()));
  if (y.size() == 0)
    throw ShapeMismatch("metrics need at least one target");
}

double mean_and_stderr(const std::vector<double> &xs, double &stderr_out) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs)
    mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : xs)
    ss += (x - mean) * (x - mean);
  stderr_out = xs.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return mean;
}

} // namespace

double rmse(const GaussianPredictive &pred, const Eigen::VectorXd &y) {
  check_lengths(pred, y);
  return std::sqrt((predictive_mean(pred) - y).squaredNorm() /
                   static_cast<double>(y.size()));
}

double marginal_nll(const GaussianPredictive &pred, const Eigen::VectorXd &y) {
  check_lengths(pred, y);
  const Eigen::VectorXd var = marginal_variances(pred);
  const Eigen::VectorXd r = y - predictive_mean(pred);
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i)
    total += 0.5 * (kLog2Pi + std::log(var(i)) + r(i) * r(i) / var(i));
  return total / static_cast<double>(y.size());
}

double joint_nll_normalized(const GaussianPredictive &pred, const Eigen::VectorXd &y) {
  check_lengths(pred, y);
  return -predictive_logpdf(pred, y) / static_cast<double>(y.size());
}

Eigen::VectorXd pit_values(const GaussianPredictive &pred, const Eigen::VectorXd &y) {
  check_lengths(pred, y);
  const Eigen::VectorXd sd = marginal_variances(pred).cwiseSqrt();
  const Eigen::VectorXd &mu = predictive_mean(pred);
  Eigen::VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    out(i) = 0.5 * std::erfc(-(y(i) - mu(i)) / (sd(i) * std::numbers::sqrt2));
  return out;
}

double sharpness(const GaussianPredictive &pred) {
  const Eigen::VectorXd var = marginal_variances(pred);
  if (var.size() == 0)
    throw ShapeMismatch("sharpness needs at least one target");
  return var.cwiseSqrt().mean();
}

std::vector<int> pit_histogram(const Eigen::VectorXd &pit, int bins) {
  if (bins < 1)
    throw InvalidConfig("histogram needs at least one bin");
  std::vector<int> counts(static_cast<std::size_t>(bins), 0);
  for (double u : pit) {
    const int b = std::clamp(static_cast<int>(std::floor(u * bins)), 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

double ks_uniform(const Eigen::VectorXd &u) {
  if (u.size() == 0)
    throw ShapeMismatch("KS statistic needs at least one value");
  std::vector<double> s(u.data(), u.data() + u.size());
  std::sort(s.begin(), s.end());
  const double n = static_cast<double>(s.size());
  double d = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double x = std::clamp(s[i], 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - x,
                  x - static_cast<double>(i) / n});
  }
  return d;
}

MetricReport evaluate_prediction(const GaussianPredictive &pred, const Eigen::VectorXd &y) {
  MetricReport r;
  r.rmse = rmse(pred, y);
  r.marginal_nll = marginal_nll(pred, y);
  r.joint_nll_normalized = joint_nll_normalized(pred, y);
  r.sharpness = sharpness(pred);
  r.n_targets = static_cast<long>(y.size());
  r.n_tasks = 1;
  return r;
}

MetricReport aggregate_reports(const std::vector<MetricReport> &per_task) {
  if (per_task.empty())
    throw ShapeMismatch("cannot aggregate zero reports");
  std::vector<double> rm, mn, jn, sh;
  MetricReport out;
  for (const auto &r : per_task) {
    rm.push_back(r.rmse);
    mn.push_back(r.marginal_nll);
    jn.push_back(r.joint_nll_normalized);
    sh.push_back(r.sharpness);
    out.n_targets += r.n_targets;
  }
  double unused = 0.0;
  out.rmse = mean_and_stderr(rm, out.rmse_stderr);
  out.marginal_nll = mean_and_stderr(mn, out.marginal_nll_stderr);
  out.joint_nll_normalized = mean_and_stderr(jn, out.joint_nll_stderr);
  out.sharpness = mean_and_stderr(sh, unused);
  out.n_tasks = static_cast<int>(per_task.size());
  return out;
}

MetricReport evaluate_tasks(const Predictor &model, const std::vector<Task> &tasks,
                            const std::optional<Normalizer> &units) {
  if (tasks.empty())
    throw ShapeMismatch("evaluate_tasks needs at least one task");
  std::vector<MetricReport> reports(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) {
    const Task &t = tasks[i];
    if (!t.target_values)
      throw ShapeMismatch("evaluation task without target values");
    GaussianPredictive pred = model.predict(t);
    Eigen::VectorXd y = *t.target_values;
    if (units) {
      pred = affine_transform(pred, units->mean, units->std);
      y = denormalize(y, *units);
    }
    reports[i] = evaluate_prediction(pred, y);
  });
  return aggregate_reports(reports);
}

void write_metric_rows(std::ostream &os, const std::string &model, int n_context,
                       const MetricReport &report, bool header) {
  if (header)
    os << "model,n_context,metric,value,stderr\n";
  auto row = [&](const char *metric, double value, double se) {
    os << model << ',' << n_context << ',' << metric << ',' << format_double(value) << ','
       << format_double(se) << '\n';
  };
  row("rmse", report.rmse, report.rmse_stderr);
  row("marginal_nll", report.marginal_nll, report.marginal_nll_stderr);
  row("joint_nll_normalized", report.joint_nll_normalized, report.joint_nll_stderr);
}

} // namespace placekit

#pragma once

#include "placekit/core_math.hpp"
#include "placekit/predictor.hpp"
#include "placekit/tasks.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace placekit {

double rmse(const GaussianPredictive &pred, const Eigen::VectorXd &y);

/// Mean over targets of -log N(y_i; mu_i, k_ii).
double marginal_nll(const GaussianPredictive &pred, const Eigen::VectorXd &y);

/// -log N(y; mu, K) / N_t.
double joint_nll_normalized(const GaussianPredictive &pred, const Eigen::VectorXd &y);

/// Phi((y_i - mu_i) / sqrt(k_ii)).
Eigen::VectorXd pit_values(const GaussianPredictive &pred, const Eigen::VectorXd &y);

/// Mean marginal standard deviation.
double sharpness(const GaussianPredictive &pred);

/// Counts of PIT values in `bins` equal-width bins over [0, 1].
std::vector<int> pit_histogram(const Eigen::VectorXd &pit, int bins = 20);

/// Kolmogorov-Smirnov distance between the empirical CDF of `u` and U(0, 1).
double ks_uniform(const Eigen::VectorXd &u);

struct MetricReport {
  double rmse = 0.0;
  double marginal_nll = 0.0;
  double joint_nll_normalized = 0.0;
  double sharpness = 0.0;
  // Standard errors of the across-task means.
  double rmse_stderr = 0.0;
  double marginal_nll_stderr = 0.0;
  double joint_nll_stderr = 0.0;
  long n_targets = 0;
  int n_tasks = 0;
};

/// Metrics for a single prediction.
MetricReport evaluate_prediction(const GaussianPredictive &pred, const Eigen::VectorXd &y);

/// Unweighted mean over tasks, with standard errors. When `units` is given,
/// predictions and targets are mapped back to target-variable units first.
MetricReport evaluate_tasks(const Predictor &model, const std::vector<Task> &tasks,
                            const std::optional<Normalizer> &units = std::nullopt);

/// Aggregates per-task reports (mean and standard error).
MetricReport aggregate_reports(const std::vector<MetricReport> &per_task);

/// Writes rows (model, n_context, metric, value, stderr); include the header
/// once by passing `header`.
void write_metric_rows(std::ostream &os, const std::string &model, int n_context,
                       const MetricReport &report, bool header);

} // namespace placekit

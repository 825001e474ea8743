#pragma once

#include "placekit/metrics.hpp"
#include "placekit/predictor.hpp"
#include "placekit/tasks.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace placekit {

enum class AcquisitionKind {
  JointMI,
  MarginalMI,
  DeltaVar,
  ContextDist,
  Random,
  OracleJointNLL,
  OracleMarginalNLL,
  OracleRMSE,
};

std::string kind_name(AcquisitionKind kind);
AcquisitionKind parse_kind(const std::string &name);
bool is_oracle(AcquisitionKind kind);

struct AcquisitionField {
  Locations search_locations;
  Eigen::VectorXd values;
  AcquisitionKind kind = AcquisitionKind::DeltaVar;
  std::vector<int> dates_used;
};

/// Per-date acquisition values at every search location. Model-based kinds
/// condition on (x_i, model mean at x_i) and compare the target predictive
/// before and after. Random draws hash_uniform(derive_seed(seed, {date, i})).
/// Throws EmptyContext for ContextDist without observations and
/// InvalidConfig for oracle kinds (see oracle_acquisition).
Eigen::VectorXd acquisition_eval(const Predictor &model, AcquisitionKind kind,
                                 const Task &task, const Locations &search,
                                 const Locations &targets, std::uint64_t seed = 0);

/// Arithmetic mean of per-date fields.
Eigen::VectorXd acquisition_average(const std::vector<Eigen::VectorXd> &per_date);

/// Model mean at `x` given the task's contexts; the imputed query value.
double impute_observation(const Predictor &model, const Task &task, const Location2D &x);

struct PlacementStep {
  int search_index = 0;
  Location2D location;
  double alpha = 0.0;
  AcquisitionField field; // date-averaged field the choice was made from
};

struct PlacementPlan {
  AcquisitionKind kind = AcquisitionKind::DeltaVar;
  std::vector<PlacementStep> steps;

  std::vector<int> indices() const;
};

/// Per-date field for (task, search, targets); lets callers wrap or replace
/// the acquisition used by the greedy loop.
using FieldFn = std::function<Eigen::VectorXd(const Task &, const Locations &,
                                              const Locations &)>;

/// Greedy sequential placement: average the per-date fields, take the argmax
/// over sites not yet chosen (lowest index on ties), add the site to every
/// date's observations with the model-mean value, repeat K times.
PlacementPlan greedy_place(const Predictor &model, AcquisitionKind kind,
                           const std::vector<Task> &date_tasks, const Locations &search,
                           const Locations &targets, int K, std::uint64_t seed = 0);

PlacementPlan greedy_place_with(const Predictor &model, AcquisitionKind kind,
                                const FieldFn &field, const std::vector<Task> &date_tasks,
                                const Locations &search, const Locations &targets, int K);

/// metric(before) - metric(after revealing search_truth[d](i) at search i),
/// averaged over dates. Each task's target_values must hold the truth at
/// `targets`.
AcquisitionField oracle_acquisition(const Predictor &model, AcquisitionKind metric,
                                    const std::vector<Task> &date_tasks,
                                    const std::vector<Eigen::VectorXd> &search_truth,
                                    const Locations &search, const Locations &targets);

/// Sample Pearson correlation clamped to [-1, 1]. Throws DegenerateInput.
double pearson_r(const Eigen::VectorXd &a, const Eigen::VectorXd &b);

/// 2 N_con / N_pairs - 1 with tied pairs contributing zero.
double kendall_kappa(const Eigen::VectorXd &a, const Eigen::VectorXd &b);

using Statistic = std::function<double(const Eigen::VectorXd &, const Eigen::VectorXd &)>;

/// Percentile (2.5 %, 97.5 %) interval over paired resamples with
/// replacement. Resamples where the statistic throws DegenerateInput are
/// redrawn, up to 100 times each.
std::pair<double, double> bootstrap_ci(const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                                       const Statistic &statistic, int n_resamples,
                                       std::uint64_t seed);

struct CorrelationReport {
  double pearson_r = 0.0;
  double kendall_kappa = 0.0;
  std::pair<double, double> pearson_ci;
  std::pair<double, double> kendall_ci;
  int n_resamples = 0;
};

CorrelationReport correlation_report(const Eigen::VectorXd &a, const Eigen::VectorXd &b,
                                     int n_resamples, std::uint64_t seed);

struct PlanEvaluation {
  std::vector<MetricReport> reports;  // k = 0..K
  std::vector<double> mean_variance;  // mean marginal variance per k
};

/// For k = 0..K, reveal the truth at the stations plus the first k placed
/// cells on each date and score predictions at `target_cells`.
PlanEvaluation evaluate_plan(const Predictor &model, const Dataset &data,
                             const std::vector<int> &dates,
                             const std::vector<int> &station_cells,
                             const std::vector<int> &placed_cells,
                             const std::vector<int> &target_cells,
                             const std::optional<Normalizer> &units = std::nullopt);

struct ParetoPoint {
  int index = 0;
  double informativeness = 0.0; // maximized
  double cost = 0.0;            // minimized
  int rank = 0;
};

bool dominates(const ParetoPoint &p, const ParetoPoint &q);

/// Ranks by repeatedly peeling the non-dominated set; rank 1 is the front.
std::vector<int> pareto_ranks(const std::vector<std::pair<double, double>> &points);

std::vector<ParetoPoint> pareto_points(const Eigen::VectorXd &informativeness,
                                       const Eigen::VectorXd &cost);

void write_field_csv(std::ostream &os, const AcquisitionField &field);
void write_plan_csv(std::ostream &os, const PlacementPlan &plan);
void write_correlation_csv(std::ostream &os, const std::string &label,
                           const CorrelationReport &report, bool header);

} // namespace placekit

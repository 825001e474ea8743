#pragma once

#include "placekit/core_math.hpp"
#include "placekit/predictor.hpp"
#include "placekit/tasks.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

namespace placekit {

struct EQParams {
  double variance = 1.0;
  double l1 = 0.3;
  double l2 = 0.3;
};

struct RQParams {
  double variance = 1.0;
  double l1 = 0.3;
  double l2 = 0.3;
  double alpha = 1.0;
};

/// Gibbs kernel whose length-scale fields are positive sums of Gaussian
/// bumps centred on a regular grid; basis_scale equals the grid spacing.
struct GibbsParams {
  double variance = 1.0;
  Eigen::VectorXd theta1;
  Eigen::VectorXd theta2;
  Locations centers;
  double basis_scale = 1.0;

  /// per_side x per_side centres on [-1, 1]^2 with weights chosen so the
  /// length-scale fields start close to `initial_lengthscale` everywhere.
  static GibbsParams regular(int per_side, double initial_lengthscale,
                             double variance = 1.0);
};

enum class KernelVariant { EQ, RQ, Gibbs };

std::string variant_name(KernelVariant v);
KernelVariant parse_variant(const std::string &name);

struct KernelParams {
  std::variant<EQParams, RQParams, GibbsParams> kernel;
  double noise_var = 1e-6;

  KernelVariant variant() const {
    return static_cast<KernelVariant>(kernel.index());
  }
  double variance() const;
  void validate() const;
};

inline constexpr double kNoiseFloor = 1e-6;

/// (l1(x), l2(x)) of a Gibbs kernel.
std::pair<double, double> lengthscale_field(const GibbsParams &gibbs,
                                            const Location2D &x);

double kernel_eval(const KernelParams &params, const Location2D &x,
                   const Location2D &xp);

/// Cross-covariance matrix k(A_i, B_j), noise excluded.
Eigen::MatrixXd kernel_matrix(const KernelParams &params, const Locations &A,
                              const Locations &B);

/// Exact GP posterior over the latent function at `targets` given the
/// (single-channel) observation context. Empty contexts return the prior.
DenseGaussian gp_predict(const KernelParams &params, const ContextSet &context,
                         const Locations &targets);

/// -log N(y_c; 0, K_cc + noise_var I) on the task's observation context.
double gp_nlml(const KernelParams &params, const Task &task);

/// Unconstrained (log-space) view of the parameters used by the optimizer.
/// Layout: [log variance, kernel-specific logs..., log(noise - floor)].
Eigen::VectorXd pack_log_params(const KernelParams &params);
KernelParams unpack_log_params(const KernelParams &shape,
                               const Eigen::VectorXd &packed);

/// NLML and its gradient with respect to pack_log_params(params).
double gp_nlml_with_gradient(const KernelParams &params, const Task &task,
                             Eigen::VectorXd &gradient);

struct GPFitConfig {
  double learning_rate = 0.05;
  int batch_size = 10;
  int max_epochs = 100;
  int patience = 5;
  std::uint64_t seed = 0;
};

struct GPFitResult {
  KernelParams params;
  double initial_objective = 0.0; // mean per-point NLML on validation tasks
  double best_objective = 0.0;
  int epochs_run = 0;
  std::vector<double> history; // validation objective per epoch (index 0 = init)
};

/// Adam on log-parameters of the mean per-point NLML over training tasks,
/// keeping the parameters with the best validation objective and stopping
/// after `patience` epochs without improvement. When `validation` is empty
/// the training tasks are used for checkpointing.
GPFitResult fit_gp(const KernelParams &initial, const std::vector<Task> &train,
                   const std::vector<Task> &validation, const GPFitConfig &cfg);

/// Default starting point for each variant.
KernelParams default_kernel_params(KernelVariant variant, int gibbs_per_side = 10,
                                   double initial_lengthscale = 0.3);

/// GP baseline as a prediction map over tasks. Only the observation context is
/// used; the predictive covers noisy observations (noise_var on the diagonal).
class GPModel : public Predictor {
public:
  explicit GPModel(KernelParams params, std::string label = "")
      : params_(std::move(params)), label_(std::move(label)) {}

  GaussianPredictive predict(const Task &task) const override;
  std::string name() const override;
  bool covariance_depends_on_values() const override { return false; }

  const KernelParams &params() const { return params_; }

private:
  KernelParams params_;
  std::string label_;
};

} // namespace placekit

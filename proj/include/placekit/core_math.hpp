#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <variant>

namespace placekit {

/// Joint Gaussian with an explicit N x N covariance (GP predictives).
struct DenseGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Joint Gaussian with covariance factor * factor^T + Diag(diag).
///
/// The factor has one column per covariance basis function. All algebra on
/// this type is O(N R^2); the N x N covariance is never formed except by
/// `materialize`.
struct LowRankDiagGaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd factor;
  Eigen::VectorXd diag;
};

using GaussianPredictive = std::variant<DenseGaussian, LowRankDiagGaussian>;

inline constexpr double kLog2Pi = 1.8378770664093454836;

/// Lower Cholesky factor of A + jitter * I.
///
/// On failure the jitter is raised to max(jitter, 1e-8 * mean(diag(A))) and
/// multiplied by ten up to four times. The jitter finally applied is written
/// to `applied` when non-null. Throws NotPositiveDefinite when every attempt
/// fails.
Eigen::MatrixXd cholesky_psd(const Eigen::MatrixXd &A, double jitter = 0.0,
                             double *applied = nullptr);

/// log N(y; mean, cov + noise_var * I).
double dense_logpdf(const DenseGaussian &g, const Eigen::VectorXd &y,
                    double noise_var = 0.0);

/// log N(y; mean, F F^T + D) via the Woodbury identity and the matrix
/// determinant lemma.
double lowrank_logpdf(const LowRankDiagGaussian &g, const Eigen::VectorXd &y);

/// log det(F F^T + Diag(d)).
double lowrank_logdet(const Eigen::MatrixXd &factor, const Eigen::VectorXd &diag);

/// log det of a symmetric positive definite matrix (via cholesky_psd).
double dense_logdet(const Eigen::MatrixXd &cov);

/// Draws `count` samples, one per row. Deterministic in `seed`.
Eigen::MatrixXd sample_mvn(const DenseGaussian &g, std::uint64_t seed, int count);
Eigen::MatrixXd sample_mvn(const LowRankDiagGaussian &g, std::uint64_t seed,
                           int count);

/// Samples mean + L z for a precomputed lower factor L.
Eigen::MatrixXd sample_mvn_factored(const Eigen::VectorXd &mean,
                                    const Eigen::MatrixXd &lower,
                                    std::uint64_t seed, int count);

// Uniform accessors over either predictive representation.
Eigen::Index predictive_size(const GaussianPredictive &p);
const Eigen::VectorXd &predictive_mean(const GaussianPredictive &p);
Eigen::VectorXd marginal_variances(const GaussianPredictive &p);
double predictive_logpdf(const GaussianPredictive &p, const Eigen::VectorXd &y);
double predictive_logdet(const GaussianPredictive &p);
Eigen::MatrixXd materialize_cov(const GaussianPredictive &p);

/// Affine map y -> shift + scale * y applied to the distribution.
GaussianPredictive affine_transform(const GaussianPredictive &p, double shift,
                                    double scale);

} // namespace placekit

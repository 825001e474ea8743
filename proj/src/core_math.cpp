#include "placekit/core_math.hpp"

#include "placekit/errors.hpp"

#include <cmath>
#include <random>
#include <string>

namespace placekit {

namespace {

constexpr int kMaxJitterEscalations = 4;

bool try_llt(const Eigen::MatrixXd &A, double jitter, Eigen::MatrixXd &out) {
  Eigen::MatrixXd shifted = A;
  shifted.diagonal().array() += jitter;
  Eigen::LLT<Eigen::MatrixXd> llt(shifted);
  if (llt.info() != Eigen::Success)
    return false;
  out = llt.matrixL();
  return out.allFinite();
}

void check_dims(Eigen::Index n, Eigen::Index m, const char *what) {
  if (n != m)
    throw ShapeMismatch(std::string(what) + ": " + std::to_string(n) +
                        " vs " + std::to_string(m));
}

} // namespace

Eigen::MatrixXd cholesky_psd(const Eigen::MatrixXd &A, double jitter,
                             double *applied) {
  if (A.rows() != A.cols())
    throw ShapeMismatch("cholesky_psd expects a square matrix");
  Eigen::MatrixXd L;
  if (A.rows() == 0) {
    if (applied)
      *applied = jitter;
    return L;
  }
  if (try_llt(A, jitter, L)) {
    if (applied)
      *applied = jitter;
    return L;
  }
  const double mean_diag = A.diagonal().mean();
  double j = std::max(jitter, 1e-8 * std::abs(mean_diag));
  for (int attempt = 0; attempt <= kMaxJitterEscalations; ++attempt) {
    if (j > jitter && try_llt(A, j, L)) {
      if (applied)
        *applied = j;
      return L;
    }
    j *= 10.0;
  }
  throw NotPositiveDefinite("factorization failed at jitter " +
                            std::to_string(j / 10.0) + " (n = " +
                            std::to_string(A.rows()) + ")");
}

double dense_logpdf(const DenseGaussian &g, const Eigen::VectorXd &y,
                    double noise_var) {
  check_dims(g.mean.size(), y.size(), "dense_logpdf");
  check_dims(g.cov.rows(), y.size(), "dense_logpdf");
  const Eigen::Index n = y.size();
  Eigen::MatrixXd cov = g.cov;
  cov.diagonal().array() += noise_var;
  const Eigen::MatrixXd L = cholesky_psd(cov);
  const Eigen::VectorXd z =
      L.triangularView<Eigen::Lower>().solve(y - g.mean);
  const double half_logdet = L.diagonal().array().log().sum();
  return -0.5 * z.squaredNorm() - half_logdet - 0.5 * n * kLog2Pi;
}

namespace {

struct Capacitance {
  Eigen::MatrixXd scaled_factor; // D^{-1} F
  Eigen::LLT<Eigen::MatrixXd> llt; // of I + F^T D^{-1} F
};

Capacitance capacitance(const Eigen::MatrixXd &factor,
                        const Eigen::VectorXd &diag) {
  check_dims(factor.rows(), diag.size(), "low-rank factor/diag");
  if ((diag.array() <= 0.0).any())
    throw NotPositiveDefinite("low-rank diagonal must be strictly positive");
  Capacitance c;
  c.scaled_factor = diag.cwiseInverse().asDiagonal() * factor;
  Eigen::MatrixXd cap = factor.transpose() * c.scaled_factor;
  cap.diagonal().array() += 1.0;
  c.llt.compute(cap);
  if (c.llt.info() != Eigen::Success)
    throw NotPositiveDefinite("capacitance matrix factorization failed");
  return c;
}

} // namespace

double lowrank_logdet(const Eigen::MatrixXd &factor,
                      const Eigen::VectorXd &diag) {
  const Capacitance c = capacitance(factor, diag);
  const Eigen::MatrixXd Lc = c.llt.matrixL();
  return diag.array().log().sum() + 2.0 * Lc.diagonal().array().log().sum();
}

double lowrank_logpdf(const LowRankDiagGaussian &g, const Eigen::VectorXd &y) {
  check_dims(g.mean.size(), y.size(), "lowrank_logpdf");
  const Capacitance c = capacitance(g.factor, g.diag);
  const Eigen::VectorXd r = y - g.mean;
  const Eigen::VectorXd projected = c.scaled_factor.transpose() * r;
  const Eigen::MatrixXd Lc = c.llt.matrixL();
  const Eigen::VectorXd w = Lc.triangularView<Eigen::Lower>().solve(projected);
  const double quad = (r.array().square() / g.diag.array()).sum() - w.squaredNorm();
  const double logdet =
      g.diag.array().log().sum() + 2.0 * Lc.diagonal().array().log().sum();
  return -0.5 * quad - 0.5 * logdet - 0.5 * y.size() * kLog2Pi;
}

double dense_logdet(const Eigen::MatrixXd &cov) {
  const Eigen::MatrixXd L = cholesky_psd(cov);
  return 2.0 * L.diagonal().array().log().sum();
}

namespace {

Eigen::MatrixXd standard_normals(std::mt19937_64 &rng, Eigen::Index rows,
                                 Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd z(rows, cols);
  // Fill row by row so that sample k does not depend on the total count.
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      z(i, j) = normal(rng);
  return z;
}

} // namespace

Eigen::MatrixXd sample_mvn_factored(const Eigen::VectorXd &mean,
                                    const Eigen::MatrixXd &lower,
                                    std::uint64_t seed, int count) {
  check_dims(mean.size(), lower.rows(), "sample_mvn");
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd z = standard_normals(rng, count, lower.cols());
  Eigen::MatrixXd out = z * lower.transpose();
  out.rowwise() += mean.transpose();
  return out;
}

Eigen::MatrixXd sample_mvn(const DenseGaussian &g, std::uint64_t seed,
                           int count) {
  return sample_mvn_factored(g.mean, cholesky_psd(g.cov), seed, count);
}

Eigen::MatrixXd sample_mvn(const LowRankDiagGaussian &g, std::uint64_t seed,
                           int count) {
  check_dims(g.mean.size(), g.factor.rows(), "sample_mvn");
  check_dims(g.mean.size(), g.diag.size(), "sample_mvn");
  std::mt19937_64 rng(seed);
  const Eigen::Index n = g.mean.size();
  const Eigen::Index r = g.factor.cols();
  const Eigen::MatrixXd z = standard_normals(rng, count, r + n);
  Eigen::MatrixXd out = z.leftCols(r) * g.factor.transpose();
  out += z.rightCols(n) * g.diag.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  out.rowwise() += g.mean.transpose();
  return out;
}

Eigen::Index predictive_size(const GaussianPredictive &p) {
  return predictive_mean(p).size();
}

const Eigen::VectorXd &predictive_mean(const GaussianPredictive &p) {
  return std::visit([](const auto &g) -> const Eigen::VectorXd & { return g.mean; },
                    p);
}

Eigen::VectorXd marginal_variances(const GaussianPredictive &p) {
  if (const auto *d = std::get_if<DenseGaussian>(&p))
    return d->cov.diagonal();
  const auto &l = std::get<LowRankDiagGaussian>(p);
  return l.factor.rowwise().squaredNorm() + l.diag;
}

double predictive_logpdf(const GaussianPredictive &p, const Eigen::VectorXd &y) {
  if (const auto *d = std::get_if<DenseGaussian>(&p))
    return dense_logpdf(*d, y);
  return lowrank_logpdf(std::get<LowRankDiagGaussian>(p), y);
}

double predictive_logdet(const GaussianPredictive &p) {
  if (const auto *d = std::get_if<DenseGaussian>(&p))
    return dense_logdet(d->cov);
  const auto &l = std::get<LowRankDiagGaussian>(p);
  return lowrank_logdet(l.factor, l.diag);
}

Eigen::MatrixXd materialize_cov(const GaussianPredictive &p) {
  if (const auto *d = std::get_if<DenseGaussian>(&p))
    return d->cov;
  const auto &l = std::get<LowRankDiagGaussian>(p);
  Eigen::MatrixXd cov = l.factor * l.factor.transpose();
  cov.diagonal() += l.diag;
  return cov;
}

GaussianPredictive affine_transform(const GaussianPredictive &p, double shift,
                                    double scale) {
  if (const auto *d = std::get_if<DenseGaussian>(&p)) {
    DenseGaussian out;
    out.mean = (d->mean.array() * scale + shift).matrix();
    out.cov = d->cov * (scale * scale);
    return out;
  }
  const auto &l = std::get<LowRankDiagGaussian>(p);
  LowRankDiagGaussian out;
  out.mean = (l.mean.array() * scale + shift).matrix();
  out.factor = l.factor * std::abs(scale);
  out.diag = l.diag * (scale * scale);
  return out;
}

} // namespace placekit

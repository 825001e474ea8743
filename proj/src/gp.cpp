#include "placekit/gp.hpp"

#include "placekit/errors.hpp"
#include "placekit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace placekit {

namespace {

template <class... Ts> struct overloaded : Ts... { using Ts::operator()...; };
template <class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

} // namespace

GibbsParams GibbsParams::regular(int per_side, double initial_lengthscale,
                                 double variance) {
  if (per_side < 2)
    throw InvalidConfig("Gibbs basis grid needs at least 2 centres per side");
  GibbsParams g;
  g.variance = variance;
  const GridSpec grid{per_side, per_side};
  g.centers = grid.nodes();
  g.basis_scale = 2.0 / (per_side - 1);
  const Eigen::Index m = g.centers.rows();
  // Solve for per-centre weights so that l(x_m) ~ initial at every centre;
  // one Jacobi-style normalisation by the local basis mass is enough.
  Eigen::VectorXd mass(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j)
      s += std::exp(-(g.centers.row(i) - g.centers.row(j)).squaredNorm() /
                    (2.0 * g.basis_scale * g.basis_scale));
    mass(i) = s;
  }
  g.theta1 = (initial_lengthscale / mass.array()).matrix();
  g.theta2 = g.theta1;
  return g;
}

std::string variant_name(KernelVariant v) {
  switch (v) {
  case KernelVariant::EQ:
    return "eq";
  case KernelVariant::RQ:
    return "rq";
  case KernelVariant::Gibbs:
    return "gibbs";
  }
  return "unknown";
}

KernelVariant parse_variant(const std::string &name) {
  std::string s = name;
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (s == "eq")
    return KernelVariant::EQ;
  if (s == "rq")
    return KernelVariant::RQ;
  if (s == "gibbs")
    return KernelVariant::Gibbs;
  throw InvalidConfig("unknown GP variant '" + name + "'");
}

double KernelParams::variance() const {
  return std::visit([](const auto &k) { return k.variance; }, kernel);
}

void KernelParams::validate() const {
  auto positive = [](double v, const char *what) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw InvalidConfig(std::string(what) + " must be positive and finite");
  };
  if (!(noise_var >= 0.0))
    throw InvalidConfig("noise_var must be non-negative");
  std::visit(overloaded{
                 [&](const EQParams &k) {
                   positive(k.variance, "variance");
                   positive(k.l1, "l1");
                   positive(k.l2, "l2");
                 },
                 [&](const RQParams &k) {
                   positive(k.variance, "variance");
                   positive(k.l1, "l1");
                   positive(k.l2, "l2");
                   positive(k.alpha, "alpha");
                 },
                 [&](const GibbsParams &k) {
                   positive(k.variance, "variance");
                   positive(k.basis_scale, "basis_scale");
                   if (k.theta1.size() != k.centers.rows() ||
                       k.theta2.size() != k.centers.rows() || k.centers.rows() == 0)
                     throw ShapeMismatch("Gibbs weights do not match centres");
                   if ((k.theta1.array() <= 0.0).any() ||
                       (k.theta2.array() <= 0.0).any())
                     throw InvalidConfig("Gibbs weights must be positive");
                 },
             },
             kernel);
}

namespace {

/// Basis activations exp(-|x - c_m|^2 / (2 lambda^2)), one row per point.
Eigen::MatrixXd basis_activations(const GibbsParams &g, const Locations &X) {
  Eigen::MatrixXd phi(X.rows(), g.centers.rows());
  const double inv = 1.0 / (2.0 * g.basis_scale * g.basis_scale);
  for (Eigen::Index m = 0; m < g.centers.rows(); ++m)
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      phi(i, m) = std::exp(-(X.row(i) - g.centers.row(m)).squaredNorm() * inv);
  return phi;
}

} // namespace

std::pair<double, double> lengthscale_field(const GibbsParams &gibbs,
                                            const Location2D &x) {
  double l1 = 0.0, l2 = 0.0;
  const double inv = 1.0 / (2.0 * gibbs.basis_scale * gibbs.basis_scale);
  for (Eigen::Index m = 0; m < gibbs.centers.rows(); ++m) {
    const double w = std::exp(-(x - gibbs.centers.row(m)).squaredNorm() * inv);
    l1 += gibbs.theta1(m) * w;
    l2 += gibbs.theta2(m) * w;
  }
  return {l1, l2};
}

double kernel_eval(const KernelParams &params, const Location2D &x,
                   const Location2D &xp) {
  const double dx = x(0) - xp(0), dy = x(1) - xp(1);
  return std::visit(
      overloaded{
          [&](const EQParams &k) { return kernel::eq(k.variance, k.l1, k.l2, dx, dy); },
          [&](const RQParams &k) {
            return kernel::rq(k.variance, k.l1, k.l2, k.alpha, dx, dy);
          },
          [&](const GibbsParams &k) {
            const auto [a1, a2] = lengthscale_field(k, x);
            const auto [b1, b2] = lengthscale_field(k, xp);
            return kernel::gibbs(k.variance, a1, a2, b1, b2, dx, dy);
          },
      },
      params.kernel);
}

Eigen::MatrixXd kernel_matrix(const KernelParams &params, const Locations &A,
                              const Locations &B) {
  Eigen::MatrixXd K(A.rows(), B.rows());
  std::visit(
      overloaded{
          [&](const EQParams &k) {
            for (Eigen::Index j = 0; j < B.rows(); ++j)
              for (Eigen::Index i = 0; i < A.rows(); ++i)
                K(i, j) = kernel::eq(k.variance, k.l1, k.l2, A(i, 0) - B(j, 0),
                                     A(i, 1) - B(j, 1));
          },
          [&](const RQParams &k) {
            for (Eigen::Index j = 0; j < B.rows(); ++j)
              for (Eigen::Index i = 0; i < A.rows(); ++i)
                K(i, j) = kernel::rq(k.variance, k.l1, k.l2, k.alpha,
                                     A(i, 0) - B(j, 0), A(i, 1) - B(j, 1));
          },
          [&](const GibbsParams &k) {
            const Eigen::MatrixXd pa = basis_activations(k, A);
            const Eigen::MatrixXd pb = basis_activations(k, B);
            const Eigen::VectorXd a1 = pa * k.theta1, a2 = pa * k.theta2;
            const Eigen::VectorXd b1 = pb * k.theta1, b2 = pb * k.theta2;
            for (Eigen::Index j = 0; j < B.rows(); ++j)
              for (Eigen::Index i = 0; i < A.rows(); ++i)
                K(i, j) = kernel::gibbs(k.variance, a1(i), a2(i), b1(j), b2(j),
                                        A(i, 0) - B(j, 0), A(i, 1) - B(j, 1));
          },
      },
      params.kernel);
  return K;
}

DenseGaussian gp_predict(const KernelParams &params, const ContextSet &context,
                         const Locations &targets) {
  context.validate();
  DenseGaussian out;
  const Eigen::MatrixXd Ktt = kernel_matrix(params, targets, targets);
  if (context.size() == 0) {
    out.mean = Eigen::VectorXd::Zero(targets.rows());
    out.cov = Ktt;
    return out;
  }
  if (context.channels() != 1)
    throw ShapeMismatch("GP baselines take a single-channel observation context");
  Eigen::MatrixXd Kcc = kernel_matrix(params, context.locations, context.locations);
  Kcc.diagonal().array() += params.noise_var;
  const Eigen::MatrixXd L = cholesky_psd(Kcc);
  const Eigen::MatrixXd Kct = kernel_matrix(params, context.locations, targets);
  const auto tri = L.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd V = tri.solve(Kct);
  const Eigen::VectorXd z = tri.solve(context.values.col(0));
  out.mean = V.transpose() * z;
  out.cov = Ktt - V.transpose() * V;
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

double gp_nlml(const KernelParams &params, const Task &task) {
  const ContextSet &ctx = task.observations();
  if (ctx.size() == 0)
    throw ShapeMismatch("NLML needs at least one observation");
  DenseGaussian prior;
  prior.mean = Eigen::VectorXd::Zero(ctx.size());
  prior.cov = kernel_matrix(params, ctx.locations, ctx.locations);
  return -dense_logpdf(prior, ctx.values.col(0), params.noise_var);
}

Eigen::VectorXd pack_log_params(const KernelParams &params) {
  std::vector<double> v;
  std::visit(overloaded{
                 [&](const EQParams &k) {
                   v = {std::log(k.variance), std::log(k.l1), std::log(k.l2)};
                 },
                 [&](const RQParams &k) {
                   v = {std::log(k.variance), std::log(k.l1), std::log(k.l2),
                        std::log(k.alpha)};
                 },
                 [&](const GibbsParams &k) {
                   v.push_back(std::log(k.variance));
                   for (Eigen::Index m = 0; m < k.theta1.size(); ++m)
                     v.push_back(std::log(k.theta1(m)));
                   for (Eigen::Index m = 0; m < k.theta2.size(); ++m)
                     v.push_back(std::log(k.theta2(m)));
                 },
             },
             params.kernel);
  v.push_back(std::log(std::max(params.noise_var - kNoiseFloor, 1e-300)));
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

KernelParams unpack_log_params(const KernelParams &shape,
                               const Eigen::VectorXd &packed) {
  KernelParams out = shape;
  Eigen::Index i = 0;
  std::visit(overloaded{
                 [&](EQParams &k) {
                   k.variance = std::exp(packed(i++));
                   k.l1 = std::exp(packed(i++));
                   k.l2 = std::exp(packed(i++));
                 },
                 [&](RQParams &k) {
                   k.variance = std::exp(packed(i++));
                   k.l1 = std::exp(packed(i++));
                   k.l2 = std::exp(packed(i++));
                   k.alpha = std::exp(packed(i++));
                 },
                 [&](GibbsParams &k) {
                   k.variance = std::exp(packed(i++));
                   for (Eigen::Index m = 0; m < k.theta1.size(); ++m)
                     k.theta1(m) = std::exp(packed(i++));
                   for (Eigen::Index m = 0; m < k.theta2.size(); ++m)
                     k.theta2(m) = std::exp(packed(i++));
                 },
             },
             out.kernel);
  if (i + 1 != packed.size())
    throw ShapeMismatch("packed parameter vector has the wrong length");
  out.noise_var = kNoiseFloor + std::exp(packed(i));
  return out;
}

double gp_nlml_with_gradient(const KernelParams &params, const Task &task,
                             Eigen::VectorXd &gradient) {
  const ContextSet &ctx = task.observations();
  const Eigen::Index n = ctx.size();
  if (n == 0)
    throw ShapeMismatch("NLML needs at least one observation");
  const Locations &X = ctx.locations;
  const Eigen::VectorXd y = ctx.values.col(0);

  const Eigen::MatrixXd Kf = kernel_matrix(params, X, X);
  Eigen::MatrixXd K = Kf;
  K.diagonal().array() += params.noise_var;
  const Eigen::MatrixXd L = cholesky_psd(K);
  const auto tri = L.triangularView<Eigen::Lower>();
  const Eigen::MatrixXd Linv = tri.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd Kinv = Linv.transpose() * Linv;
  const Eigen::VectorXd alpha = Kinv * y;
  const double nlml = 0.5 * y.dot(alpha) + L.diagonal().array().log().sum() +
                      0.5 * n * kLog2Pi;

  // dNLML/dK = W (entrywise, K treated as unconstrained).
  const Eigen::MatrixXd W = 0.5 * (Kinv - alpha * alpha.transpose());

  std::vector<double> g;
  g.push_back((W.array() * Kf.array()).sum()); // d / d log variance
  std::visit(
      overloaded{
          [&](const EQParams &k) {
            double g1 = 0.0, g2 = 0.0;
            for (Eigen::Index j = 0; j < n; ++j)
              for (Eigen::Index i = 0; i < n; ++i) {
                const double dx = X(i, 0) - X(j, 0), dy = X(i, 1) - X(j, 1);
                const double wk = W(i, j) * Kf(i, j);
                g1 += wk * dx * dx / (k.l1 * k.l1);
                g2 += wk * dy * dy / (k.l2 * k.l2);
              }
            g.push_back(g1);
            g.push_back(g2);
          },
          [&](const RQParams &k) {
            double g1 = 0.0, g2 = 0.0, ga = 0.0;
            for (Eigen::Index j = 0; j < n; ++j)
              for (Eigen::Index i = 0; i < n; ++i) {
                const double dx = X(i, 0) - X(j, 0), dy = X(i, 1) - X(j, 1);
                const double u1 = dx * dx / (k.l1 * k.l1);
                const double u2 = dy * dy / (k.l2 * k.l2);
                const double base = 1.0 + (u1 + u2) / (2.0 * k.alpha);
                const double kij = Kf(i, j);
                // dk/dlog l = k * u / base; dk/dlog alpha as derived from
                // log k = log s2 - alpha log(base).
                g1 += W(i, j) * kij * u1 / base;
                g2 += W(i, j) * kij * u2 / base;
                ga += W(i, j) * kij * k.alpha *
                      (-std::log(base) + (u1 + u2) / (2.0 * k.alpha * base));
              }
            g.push_back(g1);
            g.push_back(g2);
            g.push_back(ga);
          },
          [&](const GibbsParams &k) {
            const Eigen::MatrixXd phi = basis_activations(k, X);
            const Eigen::VectorXd l1 = phi * k.theta1, l2 = phi * k.theta2;
            Eigen::VectorXd dl1 = Eigen::VectorXd::Zero(n);
            Eigen::VectorXd dl2 = Eigen::VectorXd::Zero(n);
            for (Eigen::Index b = 0; b < n; ++b)
              for (Eigen::Index a = 0; a < n; ++a) {
                if (a == b)
                  continue;
                const double dx = X(a, 0) - X(b, 0), dy = X(a, 1) - X(b, 1);
                const double s1 = l1(a) * l1(a) + l1(b) * l1(b);
                const double s2 = l2(a) * l2(a) + l2(b) * l2(b);
                // Row a and column a both depend on l(x_a).
                const double wk = 2.0 * W(a, b) * Kf(a, b);
                dl1(a) += wk * (0.5 / l1(a) - l1(a) / s1 +
                                2.0 * l1(a) * dx * dx / (s1 * s1));
                dl2(a) += wk * (0.5 / l2(a) - l2(a) / s2 +
                                2.0 * l2(a) * dy * dy / (s2 * s2));
              }
            const Eigen::VectorXd gt1 =
                (phi.transpose() * dl1).cwiseProduct(k.theta1);
            const Eigen::VectorXd gt2 =
                (phi.transpose() * dl2).cwiseProduct(k.theta2);
            g.insert(g.end(), gt1.data(), gt1.data() + gt1.size());
            g.insert(g.end(), gt2.data(), gt2.data() + gt2.size());
          },
      },
      params.kernel);
  g.push_back(W.trace() * (params.noise_var - kNoiseFloor));
  gradient = Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
  return nlml;
}

namespace {

double mean_objective(const KernelParams &params, const std::vector<Task> &tasks) {
  double total = 0.0;
  for (const Task &t : tasks)
    total += gp_nlml(params, t) / static_cast<double>(t.observations().size());
  return total / static_cast<double>(tasks.size());
}

} // namespace

GPFitResult fit_gp(const KernelParams &initial, const std::vector<Task> &train,
                   const std::vector<Task> &validation, const GPFitConfig &cfg) {
  if (train.empty())
    throw InvalidConfig("fit_gp needs at least one training task");
  if (cfg.batch_size < 1 || cfg.max_epochs < 0 || cfg.patience < 1 ||
      !(cfg.learning_rate >= 0.0))
    throw InvalidConfig("invalid GP optimizer configuration");
  initial.validate();
  const std::vector<Task> &check = validation.empty() ? train : validation;

  GPFitResult result;
  KernelParams current = initial;
  if (current.noise_var <= kNoiseFloor)
    current.noise_var = kNoiseFloor * 2.0;
  Eigen::VectorXd theta = pack_log_params(current);
  result.params = current;
  result.initial_objective = mean_objective(current, check);
  result.best_objective = result.initial_objective;
  result.history.push_back(result.initial_objective);

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(theta.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(theta.size());
  long step = 0;
  int since_best = 0;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
      for (std::size_t b = start; b < end; ++b) {
        const Task &t = train[order[b]];
        Eigen::VectorXd gt;
        const double value = gp_nlml_with_gradient(current, t, gt);
        if (!std::isfinite(value) || !gt.allFinite())
          throw OptimizationDiverged("non-finite NLML at epoch " +
                                     std::to_string(epoch));
        grad += gt / static_cast<double>(t.observations().size());
      }
      grad /= static_cast<double>(end - start);
      ++step;
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      theta.array() -= cfg.learning_rate * (m.array() / c1) /
                       ((v.array() / c2).sqrt() + eps);
      // Keep the noise parameter from underflowing into the floor forever.
      theta(theta.size() - 1) = std::max(theta(theta.size() - 1), -40.0);
      current = unpack_log_params(current, theta);
    }
    const double objective = mean_objective(current, check);
    if (!std::isfinite(objective))
      throw OptimizationDiverged("non-finite validation NLML at epoch " +
                                 std::to_string(epoch));
    result.history.push_back(objective);
    result.epochs_run = epoch;
    if (objective < result.best_objective) {
      result.best_objective = objective;
      result.params = current;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

KernelParams default_kernel_params(KernelVariant variant, int gibbs_per_side,
                                   double initial_lengthscale) {
  KernelParams p;
  p.noise_var = 1e-3;
  switch (variant) {
  case KernelVariant::EQ:
    p.kernel = EQParams{1.0, initial_lengthscale, initial_lengthscale};
    break;
  case KernelVariant::RQ:
    p.kernel = RQParams{1.0, initial_lengthscale, initial_lengthscale, 1.0};
    break;
  case KernelVariant::Gibbs:
    p.kernel = GibbsParams::regular(gibbs_per_side, initial_lengthscale);
    break;
  }
  return p;
}

GaussianPredictive GPModel::predict(const Task &task) const {
  DenseGaussian g = gp_predict(params_, task.observations(), task.target_locations);
  g.cov.diagonal().array() += params_.noise_var;
  return g;
}

std::string GPModel::name() const {
  return label_.empty() ? variant_name(params_.variant()) + "-gp" : label_;
}

} // namespace placekit

#include "placekit/neural_process.hpp"

#include "placekit/csv.hpp"
#include "placekit/errors.hpp"
#include "placekit/parallel.hpp"
#include "placekit/random.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <numbers>
#include <numeric>
#include <random>

namespace placekit {

int internal_grid_size(int ppu) { return 2 * ppu + 1; }

void NPArchitecture::validate() const {
  if (internal_grid_size(ppu) < 4)
    throw InvalidConfig("ppu " + std::to_string(ppu) +
                        " yields an internal grid smaller than 4x4");
  if (width < 1 || rank < 1 || hidden < 1 || observation_channels < 1 ||
      auxiliary_channels < 0)
    throw InvalidConfig("neural process layer sizes must be positive");
}

// ---------------------------------------------------------------------------
// SetConv

GridEncoding setconv_encode(const std::vector<ContextSet> &contexts, int ppu,
                            double scale) {
  if (contexts.empty())
    throw ShapeMismatch("setconv_encode needs at least one context set");
  const int n = internal_grid_size(ppu);
  if (n < 4)
    throw InvalidConfig("ppu " + std::to_string(ppu) +
                        " yields an internal grid smaller than 4x4");
  if (!(scale > 0.0))
    throw InvalidConfig("SetConv length scale must be positive");

  int channels = 0;
  for (const auto &c : contexts) {
    c.validate();
    channels += 1 + static_cast<int>(c.channels());
  }
  GridEncoding enc;
  enc.ppu = ppu;
  enc.tensor = Tensor(channels, n, n);

  const double inv = 1.0 / (2.0 * scale * scale);
  int channel = 0;
  for (const auto &c : contexts) {
    const Eigen::Index p = c.size();
    if (p > 0) {
      if ((c.locations.array().abs() > 1.0 + 1e-12).any())
        throw OutOfDomain("context location outside [-1, 1]^2");
      // Sum in a canonical point order so shuffled contexts encode identically.
      std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
      std::iota(order.begin(), order.end(), Eigen::Index{0});
      std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        for (Eigen::Index k = 0; k < 2; ++k)
          if (c.locations(a, k) != c.locations(b, k))
            return c.locations(a, k) < c.locations(b, k);
        for (Eigen::Index k = 0; k < c.channels(); ++k)
          if (c.values(a, k) != c.values(b, k))
            return c.values(a, k) < c.values(b, k);
        return false;
      });
      // The bump is separable: exp(-dx^2 inv) * exp(-dy^2 inv).
      Eigen::MatrixXd ax(p, n), ay(p, n), vals(p, c.channels());
      for (Eigen::Index i = 0; i < p; ++i)
        vals.row(i) = c.values.row(order[static_cast<std::size_t>(i)]);
      for (int k = 0; k < n; ++k) {
        const double node = -1.0 + static_cast<double>(k) / ppu;
        for (Eigen::Index i = 0; i < p; ++i) {
          const Eigen::Index src = order[static_cast<std::size_t>(i)];
          const double dx = c.locations(src, 0) - node;
          const double dy = c.locations(src, 1) - node;
          ax(i, k) = std::exp(-dx * dx * inv);
          ay(i, k) = std::exp(-dy * dy * inv);
        }
      }
      auto put = [&](int ch, const Eigen::MatrixXd &grid) {
        for (int h = 0; h < n; ++h)
          for (int w = 0; w < n; ++w)
            enc.tensor.at(ch, h, w) = grid(h, w);
      };
      put(channel, ay.transpose() * ax);
      for (Eigen::Index k = 0; k < c.channels(); ++k)
        put(channel + 1 + static_cast<int>(k),
            ay.transpose() * (vals.col(k).asDiagonal() * ax));
    }
    channel += 1 + static_cast<int>(c.channels());
  }
  return enc;
}

void divide_by_density(GridEncoding &enc, const std::vector<ContextSet> &contexts,
                       double floor) {
  int channel = 0;
  for (const auto &c : contexts) {
    const int values = static_cast<int>(c.channels());
    if (channel + values >= enc.tensor.channels)
      throw ShapeMismatch("encoding has fewer channels than the context sets");
    const Eigen::RowVectorXd denom = enc.tensor.data.row(channel).array() + floor;
    for (int k = 1; k <= values; ++k)
      enc.tensor.data.row(channel + k).array() /= denom.array();
    channel += 1 + values;
  }
  if (channel != enc.tensor.channels)
    throw ShapeMismatch("encoding has more channels than the context sets");
}

// ---------------------------------------------------------------------------
// Target interpolation

namespace {

struct Stencil {
  int h0, w0;
  double ty, tx;
};

std::vector<Stencil> stencils(const Tensor &R, const Locations &targets) {
  std::vector<Stencil> out(static_cast<std::size_t>(targets.rows()));
  for (Eigen::Index i = 0; i < targets.rows(); ++i) {
    const double x1 = targets(i, 0), x2 = targets(i, 1);
    if (!(std::abs(x1) <= 1.0 + 1e-12) || !(std::abs(x2) <= 1.0 + 1e-12))
      throw OutOfDomain("target (" + std::to_string(x1) + ", " +
                        std::to_string(x2) + ") outside [-1, 1]^2");
    const double fx = std::clamp((x1 + 1.0) * 0.5 * (R.width - 1), 0.0,
                                 static_cast<double>(R.width - 1));
    const double fy = std::clamp((x2 + 1.0) * 0.5 * (R.height - 1), 0.0,
                                 static_cast<double>(R.height - 1));
    Stencil s;
    s.w0 = std::min(static_cast<int>(std::floor(fx)), R.width - 2);
    s.h0 = std::min(static_cast<int>(std::floor(fy)), R.height - 2);
    s.tx = fx - s.w0;
    s.ty = fy - s.h0;
    out[static_cast<std::size_t>(i)] = s;
  }
  return out;
}

Eigen::MatrixXd interpolate_with(const Tensor &R, const std::vector<Stencil> &st) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(st.size()), R.channels);
  for (std::size_t i = 0; i < st.size(); ++i) {
    const Stencil &s = st[i];
    const int a = s.h0 * R.width + s.w0;
    const double w00 = (1 - s.ty) * (1 - s.tx), w01 = (1 - s.ty) * s.tx;
    const double w10 = s.ty * (1 - s.tx), w11 = s.ty * s.tx;
    for (int c = 0; c < R.channels; ++c)
      out(static_cast<Eigen::Index>(i), c) =
          w00 * R.data(c, a) + w01 * R.data(c, a + 1) +
          w10 * R.data(c, a + R.width) + w11 * R.data(c, a + R.width + 1);
  }
  return out;
}

void interpolate_backward(const std::vector<Stencil> &st, const Eigen::MatrixXd &dr,
                          Tensor &dR) {
  for (std::size_t i = 0; i < st.size(); ++i) {
    const Stencil &s = st[i];
    const int a = s.h0 * dR.width + s.w0;
    const double w00 = (1 - s.ty) * (1 - s.tx), w01 = (1 - s.ty) * s.tx;
    const double w10 = s.ty * (1 - s.tx), w11 = s.ty * s.tx;
    for (int c = 0; c < dR.channels; ++c) {
      const double g = dr(static_cast<Eigen::Index>(i), c);
      dR.data(c, a) += w00 * g;
      dR.data(c, a + 1) += w01 * g;
      dR.data(c, a + dR.width) += w10 * g;
      dR.data(c, a + dR.width + 1) += w11 * g;
    }
  }
}

} // namespace

Eigen::MatrixXd interpolate_representation(const Tensor &R, const Locations &targets) {
  if (R.height < 2 || R.width < 2)
    throw ShapeMismatch("representation must be at least 2x2");
  return interpolate_with(R, stencils(R, targets));
}

// ---------------------------------------------------------------------------
// Layers

namespace {

int conv_out_size(int n, int stride) { return (n - 1) / stride + 1; }

RowMatrix im2col(const Tensor &x, int stride) {
  const int ho = conv_out_size(x.height, stride);
  const int wo = conv_out_size(x.width, stride);
  RowMatrix col(x.channels * 9, ho * wo);
  for (int c = 0; c < x.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double *row = col.row(c * 9 + ky * 3 + kx).data();
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride + ky - 1;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride + kx - 1;
            row[oh * wo + ow] = (ih >= 0 && ih < x.height && iw >= 0 && iw < x.width)
                                    ? x.data(c, ih * x.width + iw)
                                    : 0.0;
          }
        }
      }
  return col;
}

void col2im(const RowMatrix &dcol, int stride, Tensor &dx) {
  const int ho = conv_out_size(dx.height, stride);
  const int wo = conv_out_size(dx.width, stride);
  for (int c = 0; c < dx.channels; ++c)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double *row = dcol.row(c * 9 + ky * 3 + kx).data();
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride + ky - 1;
          if (ih < 0 || ih >= dx.height)
            continue;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride + kx - 1;
            if (iw >= 0 && iw < dx.width)
              dx.data(c, ih * dx.width + iw) += row[oh * wo + ow];
          }
        }
      }
}

Tensor conv_forward(const Conv2d &layer, const Tensor &x, RowMatrix &col) {
  if (x.channels != layer.in)
    throw ShapeMismatch("convolution expects " + std::to_string(layer.in) +
                        " channels, got " + std::to_string(x.channels));
  col = im2col(x, layer.stride);
  Tensor y(layer.out, conv_out_size(x.height, layer.stride),
           conv_out_size(x.width, layer.stride));
  y.data.noalias() = layer.weight * col;
  y.data.colwise() += layer.bias;
  return y;
}

/// Accumulates weight gradients; returns dx when `want_input` is set.
Tensor conv_backward(const Conv2d &layer, const Tensor &x, const RowMatrix &col,
                     const RowMatrix &dy, Conv2d &grad, bool want_input) {
  grad.weight.noalias() += dy * col.transpose();
  grad.bias += dy.rowwise().sum();
  Tensor dx;
  if (want_input) {
    dx = Tensor(x.channels, x.height, x.width);
    const RowMatrix dcol = layer.weight.transpose() * dy;
    col2im(dcol, layer.stride, dx);
  }
  return dx;
}

void relu_inplace(Tensor &t) { t.data = t.data.cwiseMax(0.0); }

void relu_backward(const Tensor &activated, RowMatrix &grad) {
  grad = (activated.data.array() > 0.0).select(grad, 0.0);
}

/// Align-corners linear interpolation operator from `from` nodes to `to` nodes.
Eigen::MatrixXd resize_operator(int from, int to) {
  Eigen::MatrixXd op = Eigen::MatrixXd::Zero(to, from);
  for (int i = 0; i < to; ++i) {
    const double src = to > 1 ? static_cast<double>(i) * (from - 1) / (to - 1) : 0.0;
    int i0 = std::min(static_cast<int>(std::floor(src)), std::max(from - 2, 0));
    const double t = src - i0;
    op(i, i0) += 1.0 - t;
    if (from > 1)
      op(i, i0 + 1) += t;
  }
  return op;
}

using ChannelMap = Eigen::Map<RowMatrix>;
using ConstChannelMap = Eigen::Map<const RowMatrix>;

Tensor resize_forward(const Tensor &x, int h, int w) {
  const Eigen::MatrixXd ry = resize_operator(x.height, h);
  const Eigen::MatrixXd rx = resize_operator(x.width, w);
  Tensor y(x.channels, h, w);
  for (int c = 0; c < x.channels; ++c) {
    ConstChannelMap in(x.data.row(c).data(), x.height, x.width);
    ChannelMap out(y.data.row(c).data(), h, w);
    out.noalias() = ry * in * rx.transpose();
  }
  return y;
}

Tensor resize_backward(const RowMatrix &dy, int h, int w, int from_h, int from_w) {
  const Eigen::MatrixXd ry = resize_operator(from_h, h);
  const Eigen::MatrixXd rx = resize_operator(from_w, w);
  Tensor dx(static_cast<int>(dy.rows()), from_h, from_w);
  for (int c = 0; c < dx.channels; ++c) {
    ConstChannelMap g(dy.row(c).data(), h, w);
    ChannelMap out(dx.data.row(c).data(), from_h, from_w);
    out.noalias() = ry.transpose() * g * rx;
  }
  return dx;
}

Tensor concat(const Tensor &a, const Tensor &b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeMismatch("concatenated tensors differ in spatial size");
  Tensor out(a.channels + b.channels, a.height, a.width);
  out.data.topRows(a.channels) = a.data;
  out.data.bottomRows(b.channels) = b.data;
  return out;
}

struct BackboneCache {
  Tensor x, e0, e1, e2, up1_in, u1, up2_in, out;
  RowMatrix col_in, col_d1, col_d2, col_u1, col_u2;
};

void backbone_forward_cached(const NPModel &m, const Tensor &x, BackboneCache &c) {
  c.x = x;
  c.e0 = conv_forward(m.conv_in, c.x, c.col_in);
  relu_inplace(c.e0);
  c.e1 = conv_forward(m.down1, c.e0, c.col_d1);
  relu_inplace(c.e1);
  c.e2 = conv_forward(m.down2, c.e1, c.col_d2);
  relu_inplace(c.e2);
  c.up1_in = concat(resize_forward(c.e2, c.e1.height, c.e1.width), c.e1);
  c.u1 = conv_forward(m.up1, c.up1_in, c.col_u1);
  relu_inplace(c.u1);
  c.up2_in = concat(resize_forward(c.u1, c.e0.height, c.e0.width), c.e0);
  c.out = conv_forward(m.up2, c.up2_in, c.col_u2);
}

void backbone_backward(const NPModel &m, const BackboneCache &c, RowMatrix dout,
                       NPModel &g) {
  const int w = m.arch.width;
  Tensor d_up2_in = conv_backward(m.up2, c.up2_in, c.col_u2, dout, g.up2, true);
  RowMatrix d_e0 = d_up2_in.data.bottomRows(w);
  RowMatrix d_u1 = resize_backward(d_up2_in.data.topRows(w), c.e0.height, c.e0.width,
                                   c.u1.height, c.u1.width)
                       .data;
  relu_backward(c.u1, d_u1);
  Tensor d_up1_in = conv_backward(m.up1, c.up1_in, c.col_u1, d_u1, g.up1, true);
  RowMatrix d_e1 = d_up1_in.data.bottomRows(w);
  RowMatrix d_e2 = resize_backward(d_up1_in.data.topRows(w), c.e1.height, c.e1.width,
                                   c.e2.height, c.e2.width)
                       .data;
  relu_backward(c.e2, d_e2);
  d_e1 += conv_backward(m.down2, c.e1, c.col_d2, d_e2, g.down2, true).data;
  relu_backward(c.e1, d_e1);
  d_e0 += conv_backward(m.down1, c.e0, c.col_d1, d_e1, g.down1, true).data;
  relu_backward(c.e0, d_e0);
  conv_backward(m.conv_in, c.x, c.col_in, d_e0, g.conv_in, false);
}

// Heads -----------------------------------------------------------------------

struct HeadCache {
  Eigen::MatrixXd r;
  Eigen::MatrixXd hidden_mean, hidden_basis, hidden_diag; // post-ReLU
  Eigen::VectorXd diag_pre;
};

/// Plain per-row dot products: a target's output does not depend on which
/// other targets share the batch.
Eigen::MatrixXd dense_forward(const DenseLayer &l, const Eigen::MatrixXd &x) {
  Eigen::MatrixXd y(x.rows(), l.weight.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < l.weight.rows(); ++j) {
      double acc = l.bias(j);
      for (Eigen::Index k = 0; k < x.cols(); ++k)
        acc += x(i, k) * l.weight(j, k);
      y(i, j) = acc;
    }
  return y;
}

/// Accumulates parameter gradients and returns dL/dx.
Eigen::MatrixXd dense_backward(const DenseLayer &l, const Eigen::MatrixXd &x,
                               const Eigen::MatrixXd &dy, DenseLayer &g) {
  g.weight.noalias() += dy.transpose() * x;
  g.bias += dy.colwise().sum().transpose();
  return dy * l.weight;
}

double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

LowRankDiagGaussian heads_forward(const NPModel &m, const Eigen::MatrixXd &r,
                                  HeadCache &c) {
  c.r = r;
  c.hidden_mean = dense_forward(m.mean_hidden, r).cwiseMax(0.0);
  c.hidden_basis = dense_forward(m.basis_hidden, r).cwiseMax(0.0);
  c.hidden_diag = dense_forward(m.diag_hidden, r).cwiseMax(0.0);
  LowRankDiagGaussian out;
  out.mean = dense_forward(m.mean_out, c.hidden_mean).col(0);
  out.factor = dense_forward(m.basis_out, c.hidden_basis);
  c.diag_pre = dense_forward(m.diag_out, c.hidden_diag).col(0);
  out.diag = c.diag_pre.unaryExpr([](double z) { return softplus(z) + kDiagFloor; });
  return out;
}

Eigen::MatrixXd heads_backward(const NPModel &m, const HeadCache &c,
                               const Eigen::VectorXd &d_mean,
                               const Eigen::MatrixXd &d_factor,
                               const Eigen::VectorXd &d_diag, NPModel &g) {
  auto relu_mask = [](const Eigen::MatrixXd &act, Eigen::MatrixXd grad) {
    return (act.array() > 0.0).select(grad, 0.0).matrix().eval();
  };
  const Eigen::VectorXd d_diag_pre =
      d_diag.cwiseProduct(c.diag_pre.unaryExpr([](double z) { return sigmoid(z); }));

  Eigen::MatrixXd dr =
      dense_backward(m.mean_hidden, c.r,
                     relu_mask(c.hidden_mean,
                               dense_backward(m.mean_out, c.hidden_mean,
                                              Eigen::MatrixXd(d_mean), g.mean_out)),
                     g.mean_hidden);
  dr += dense_backward(
      m.basis_hidden, c.r,
      relu_mask(c.hidden_basis,
                dense_backward(m.basis_out, c.hidden_basis, d_factor, g.basis_out)),
      g.basis_hidden);
  dr += dense_backward(
      m.diag_hidden, c.r,
      relu_mask(c.hidden_diag, dense_backward(m.diag_out, c.hidden_diag,
                                              Eigen::MatrixXd(d_diag_pre), g.diag_out)),
      g.diag_hidden);
  return dr;
}

// Initialisation ---------------------------------------------------------------

Conv2d make_conv(int in, int out, int stride, std::mt19937_64 &rng,
                 const Eigen::VectorXd &input_scale) {
  Conv2d c;
  c.in = in;
  c.out = out;
  c.stride = stride;
  c.weight.resize(out, in * 9);
  c.bias = Eigen::VectorXd::Zero(out);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in * 9)));
  for (int o = 0; o < out; ++o)
    for (int k = 0; k < in * 9; ++k)
      c.weight(o, k) = normal(rng) / input_scale(k / 9);
  return c;
}

DenseLayer make_dense(int in, int out, double gain, std::mt19937_64 &rng) {
  DenseLayer d;
  d.weight.resize(out, in);
  d.bias = Eigen::VectorXd::Zero(out);
  std::normal_distribution<double> normal(0.0, gain * std::sqrt(1.0 / in));
  for (int o = 0; o < out; ++o)
    for (int i = 0; i < in; ++i)
      d.weight(o, i) = normal(rng);
  return d;
}

} // namespace

NPModel::NPModel(const NPArchitecture &a, std::uint64_t seed)
    : arch(a), setconv_scale(2.0 / a.ppu), init_seed(seed) {
  arch.validate();
  std::mt19937_64 rng(derive_seed(seed, {0x1417}));
  const int w = arch.width;

  // A gridded context set has density ~ 2 pi s^2 / h^2 in the interior;
  // scale its first-layer weights so initial activations stay O(1).
  const double h = 2.0 / std::max(arch.auxiliary_grid_size - 1, 1);
  const double grid_density =
      std::max(1.0, 2.0 * std::numbers::pi * setconv_scale * setconv_scale / (h * h));
  Eigen::VectorXd scale = Eigen::VectorXd::Ones(arch.input_channels());
  if (arch.auxiliary_channels > 0)
    scale(1 + arch.observation_channels) = grid_density;

  conv_in = make_conv(arch.input_channels(), w, 1, rng, scale);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(2 * w);
  down1 = make_conv(w, w, 2, rng, ones);
  down2 = make_conv(w, w, 2, rng, ones);
  up1 = make_conv(2 * w, w, 1, rng, ones);
  up2 = make_conv(2 * w, w, 1, rng, ones);
  mean_hidden = make_dense(w, arch.hidden, std::sqrt(2.0), rng);
  mean_out = make_dense(arch.hidden, 1, 1.0, rng);
  basis_hidden = make_dense(w, arch.hidden, std::sqrt(2.0), rng);
  basis_out = make_dense(arch.hidden, arch.rank, 0.5, rng);
  diag_hidden = make_dense(w, arch.hidden, std::sqrt(2.0), rng);
  diag_out = make_dense(arch.hidden, 1, 1.0, rng);
}

std::vector<NPModel::Param> NPModel::parameters() {
  std::vector<Param> out;
  auto add = [&](const std::string &name, auto &m) {
    out.push_back(Param{name,
                        {static_cast<std::uint64_t>(m.rows()),
                         static_cast<std::uint64_t>(m.cols())},
                        std::span<double>(m.data(), static_cast<std::size_t>(m.size()))});
  };
  auto conv = [&](const std::string &name, Conv2d &c) {
    add(name + ".weight", c.weight);
    add(name + ".bias", c.bias);
  };
  auto dense = [&](const std::string &name, DenseLayer &d) {
    add(name + ".weight", d.weight);
    add(name + ".bias", d.bias);
  };
  conv("conv_in", conv_in);
  conv("down1", down1);
  conv("down2", down2);
  conv("up1", up1);
  conv("up2", up2);
  dense("mean_hidden", mean_hidden);
  dense("mean_out", mean_out);
  dense("basis_hidden", basis_hidden);
  dense("basis_out", basis_out);
  dense("diag_hidden", diag_hidden);
  dense("diag_out", diag_out);
  return out;
}

std::size_t NPModel::parameter_count() {
  std::size_t n = 0;
  for (const auto &p : parameters())
    n += p.values.size();
  return n;
}

NPModel NPModel::zeros_like() const {
  NPModel z = *this;
  for (auto &p : z.parameters())
    std::fill(p.values.begin(), p.values.end(), 0.0);
  return z;
}

Tensor backbone_forward(const GridEncoding &enc, const NPModel &model) {
  BackboneCache cache;
  backbone_forward_cached(model, enc.tensor, cache);
  return std::move(cache.out);
}

namespace {

struct ForwardState {
  BackboneCache backbone;
  std::vector<Stencil> stencil;
  HeadCache heads;
};

LowRankDiagGaussian forward(const NPModel &model, const Task &task, ForwardState &s) {
  task.validate();
  GridEncoding enc = setconv_encode(task.contexts, model.arch.ppu, model.setconv_scale);
  divide_by_density(enc, task.contexts);
  backbone_forward_cached(model, enc.tensor, s.backbone);
  s.stencil = stencils(s.backbone.out, task.target_locations);
  const Eigen::MatrixXd r = interpolate_with(s.backbone.out, s.stencil);
  return heads_forward(model, r, s.heads);
}

} // namespace

LowRankDiagGaussian np_predict(const NPModel &model, const Task &task) {
  ForwardState s;
  return forward(model, task, s);
}

GaussianPredictive NPModel::predict(const Task &task) const {
  return np_predict(*this, task);
}

double np_loss(const NPModel &model, const Task &task) {
  if (!task.target_values)
    throw ShapeMismatch("np_loss needs target values");
  const LowRankDiagGaussian pred = np_predict(model, task);
  return -lowrank_logpdf(pred, *task.target_values) /
         static_cast<double>(task.target_locations.rows());
}

double np_gradients(const NPModel &model, const Task &task, NPModel &gradient) {
  if (!task.target_values)
    throw ShapeMismatch("np_gradients needs target values");
  gradient = model.zeros_like();
  ForwardState s;
  const LowRankDiagGaussian pred = forward(model, task, s);
  const Eigen::VectorXd &y = *task.target_values;
  const double n = static_cast<double>(y.size());
  const double loss = -lowrank_logpdf(pred, y) / n;

  // Woodbury pieces: Sigma^{-1} = D^{-1} - D^{-1} F C^{-1} F^T D^{-1}.
  const Eigen::VectorXd dinv = pred.diag.cwiseInverse();
  const Eigen::MatrixXd scaled = dinv.asDiagonal() * pred.factor; // D^{-1} F
  Eigen::MatrixXd cap = pred.factor.transpose() * scaled;
  cap.diagonal().array() += 1.0;
  const Eigen::LLT<Eigen::MatrixXd> llt(cap);
  const Eigen::VectorXd r = y - pred.mean;
  const Eigen::VectorXd a =
      dinv.cwiseProduct(r) - scaled * llt.solve(scaled.transpose() * r);
  const Eigen::MatrixXd sigma_inv_f = llt.solve(scaled.transpose()).transpose();
  const Eigen::VectorXd sigma_inv_diag =
      dinv - (scaled * llt.solve(scaled.transpose())).diagonal();

  const Eigen::VectorXd d_mean = -a / n;
  const Eigen::MatrixXd d_factor =
      (sigma_inv_f - a * (a.transpose() * pred.factor)) / n;
  const Eigen::VectorXd d_diag =
      0.5 * (sigma_inv_diag - a.cwiseProduct(a)) / n;

  const Eigen::MatrixXd dr = heads_backward(model, s.heads, d_mean, d_factor, d_diag,
                                            gradient);
  Tensor dR(s.backbone.out.channels, s.backbone.out.height, s.backbone.out.width);
  interpolate_backward(s.stencil, dr, dR);
  backbone_backward(model, s.backbone, std::move(dR.data), gradient);
  return loss;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw InvalidConfig("learning_rate must be a finite non-negative number");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw InvalidConfig("weight_decay must be a finite non-negative number");
  if (final_learning_rate &&
      (!(*final_learning_rate >= 0.0) || !std::isfinite(*final_learning_rate)))
    throw InvalidConfig("final_learning_rate must be a finite non-negative number");
  if (batch_size < 1)
    throw InvalidConfig("batch_size must be positive");
  if (max_epochs < 0)
    throw InvalidConfig("max_epochs must be non-negative");
  if (tasks_per_epoch < 1)
    throw InvalidConfig("tasks_per_epoch must be positive");
  if (validation_tasks < 1)
    throw InvalidConfig("validation_tasks must be positive");
  if (patience < 0)
    throw InvalidConfig("patience must be non-negative");
}

double scheduled_learning_rate(const TrainConfig &cfg, int epoch) {
  if (!cfg.final_learning_rate || cfg.max_epochs <= 1)
    return cfg.learning_rate;
  const double t = static_cast<double>(std::clamp(epoch, 1, cfg.max_epochs) - 1) /
                   static_cast<double>(cfg.max_epochs - 1);
  const double lo = *cfg.final_learning_rate;
  return lo + 0.5 * (cfg.learning_rate - lo) * (1.0 + std::cos(std::numbers::pi * t));
}

std::vector<Task> fixed_tasks(const Dataset &data, const std::vector<int> &dates,
                              int count, std::uint64_t seed,
                              const TaskSamplingConfig &sampling) {
  if (dates.empty())
    throw InvalidConfig("no dates to draw tasks from");
  std::vector<Task> tasks;
  tasks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
    const int date = dates[static_cast<std::size_t>(i) % dates.size()];
    tasks.push_back(sample_task(data, date, rng, sampling));
  }
  return tasks;
}

double mean_np_loss(const NPModel &model, const std::vector<Task> &tasks) {
  if (tasks.empty())
    throw InvalidConfig("mean_np_loss needs at least one task");
  std::vector<double> losses(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t i) { losses[i] = np_loss(model, tasks[i]); });
  double total = 0.0;
  for (double l : losses)
    total += l;
  return total / static_cast<double>(tasks.size());
}

TrainResult np_train(const NPModel &initial, const Dataset &data,
                     const std::vector<int> &train_dates,
                     const std::vector<int> &val_dates, const TrainConfig &cfg,
                     const std::function<void(const EpochRecord &)> &on_epoch) {
  cfg.validate();
  if (train_dates.empty() || val_dates.empty())
    throw InvalidConfig("training and validation date splits must be non-empty");

  const std::vector<Task> validation =
      fixed_tasks(data, val_dates, cfg.validation_tasks,
                  derive_seed(cfg.seed, {0x7a11}), cfg.sampling);

  TrainResult result;
  NPModel current = initial;
  result.model = current;
  result.best_val_nll = mean_np_loss(current, validation);
  if (!std::isfinite(result.best_val_nll))
    throw OptimizationDiverged("non-finite validation NLL before training");

  const std::size_t n = current.parameter_count();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = scheduled_learning_rate(cfg, epoch);
    std::mt19937_64 rng(derive_seed(cfg.seed, {0x7ea1, static_cast<std::uint64_t>(epoch)}));
    std::uniform_int_distribution<std::size_t> pick(0, train_dates.size() - 1);
    std::vector<Task> tasks;
    tasks.reserve(static_cast<std::size_t>(cfg.tasks_per_epoch));
    for (int i = 0; i < cfg.tasks_per_epoch; ++i)
      tasks.push_back(sample_task(data, train_dates[pick(rng)], rng, cfg.sampling));

    double train_total = 0.0;
    for (std::size_t start = 0; start < tasks.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(tasks.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t count = end - start;
      std::vector<NPModel> grads(count);
      std::vector<double> losses(count);
      parallel_for(count, [&](std::size_t b) {
        losses[b] = np_gradients(current, tasks[start + b], grads[b]);
      });

      Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
      for (std::size_t b = 0; b < count; ++b) {
        if (!std::isfinite(losses[b]))
          throw OptimizationDiverged("non-finite training loss at epoch " +
                                     std::to_string(epoch));
        train_total += losses[b];
        Eigen::Index offset = 0;
        for (const auto &p : grads[b].parameters()) {
          for (double x : p.values)
            g(offset++) += x;
        }
      }
      g /= static_cast<double>(count);
      if (!g.allFinite())
        throw OptimizationDiverged("non-finite gradient at epoch " +
                                   std::to_string(epoch));

      ++step;
      m = beta1 * m + (1.0 - beta1) * g;
      v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      Eigen::Index offset = 0;
      for (auto &p : current.parameters()) {
        for (double &x : p.values) {
          x -= lr * ((m(offset) / c1) / (std::sqrt(v(offset) / c2) + eps) +
                     cfg.weight_decay * x);
          ++offset;
        }
      }
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = train_total / static_cast<double>(tasks.size());
    rec.val_nll = mean_np_loss(current, validation);
    if (!std::isfinite(rec.val_nll))
      throw OptimizationDiverged("non-finite validation NLL at epoch " +
                                 std::to_string(epoch));
    if (rec.val_nll < result.best_val_nll) {
      result.best_val_nll = rec.val_nll;
      result.model = current;
      rec.checkpointed = true;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.history.push_back(rec);
    if (on_epoch)
      on_epoch(rec);
    if (cfg.patience > 0 && since_best >= cfg.patience)
      break;
  }
  return result;
}

void write_history_csv(std::ostream &os, const std::vector<EpochRecord> &history) {
  os << "epoch,train_nll,val_nll,checkpointed\n";
  for (const auto &r : history)
    os << r.epoch << ',' << format_double(r.train_nll) << ',' << format_double(r.val_nll)
       << ',' << (r.checkpointed ? 1 : 0) << '\n';
}

} // namespace placekit

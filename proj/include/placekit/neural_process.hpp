#pragma once

#include "placekit/core_math.hpp"
#include "placekit/predictor.hpp"
#include "placekit/tasks.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace placekit {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// C x H x W tensor; row c of `data` is channel c in row-major (h, w) order.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  RowMatrix data;

  Tensor() = default;
  Tensor(int c, int h, int w) : channels(c), height(h), width(w), data(c, h * w) {
    data.setZero();
  }
  double &at(int c, int h, int w) { return data(c, h * width + w); }
  double at(int c, int h, int w) const { return data(c, h * width + w); }
};

/// SetConv output on the internal grid. Node (h, w) sits at
/// (x1, x2) = (-1 + w / ppu, -1 + h / ppu).
struct GridEncoding {
  Tensor tensor;
  int ppu = 0;
};

/// Number of internal grid nodes per axis for a given density.
int internal_grid_size(int ppu);

/// Per context set: a density channel (sum of unit Gaussian bumps of length
/// scale `scale`) followed by one data channel per value dimension (bumps
/// weighted by the value). Gridded and off-grid sets are treated alike.
GridEncoding setconv_encode(const std::vector<ContextSet> &contexts, int ppu,
                            double scale);

/// Divides every data channel by its set's density channel plus `floor`, so
/// data channels hold kernel-weighted averages of the values. Density
/// channels are left as they are.
void divide_by_density(GridEncoding &enc, const std::vector<ContextSet> &contexts,
                       double floor = 1e-8);

/// Bilinear interpolation of every channel at each target; rows are targets.
/// Tensor nodes span [-1, 1] on both axes. Throws OutOfDomain.
Eigen::MatrixXd interpolate_representation(const Tensor &R, const Locations &targets);

struct Conv2d {
  int in = 0;
  int out = 0;
  int stride = 1;
  Eigen::MatrixXd weight; // out x (in * 9), column = c * 9 + ky * 3 + kx
  Eigen::VectorXd bias;
};

struct DenseLayer {
  Eigen::MatrixXd weight; // out x in
  Eigen::VectorXd bias;
};

struct NPArchitecture {
  int ppu = 16;
  int width = 16;   // channels of every U-Net stage
  int rank = 16;    // covariance basis functions
  int hidden = 32;  // head MLP width
  int observation_channels = 1;
  int auxiliary_channels = 6;
  int auxiliary_grid_size = 32; // used only to scale initial weights

  int input_channels() const {
    return (1 + observation_channels) + (1 + auxiliary_channels);
  }
  void validate() const;
};

inline constexpr double kDiagFloor = 1e-6;

/// Convolutional Gaussian neural process: SetConv -> U-Net -> bilinear
/// interpolation -> mean / covariance-basis / diagonal heads.
class NPModel : public Predictor {
public:
  NPModel() = default;
  NPModel(const NPArchitecture &arch, std::uint64_t seed);

  NPArchitecture arch;
  double setconv_scale = 0.125;
  std::uint64_t init_seed = 0;
  Normalizer normalizer; // stored alongside the weights for the CLI

  // Backbone: conv_in -> down1 -> down2 -> (resize, concat) up1 -> (resize,
  // concat) up2.
  Conv2d conv_in, down1, down2, up1, up2;
  DenseLayer mean_hidden, mean_out;
  DenseLayer basis_hidden, basis_out;
  DenseLayer diag_hidden, diag_out;

  GaussianPredictive predict(const Task &task) const override;
  std::string name() const override { return "convgnp"; }

  /// Every trainable array, in a fixed order.
  struct Param {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::span<double> values;
  };
  std::vector<Param> parameters();
  std::size_t parameter_count();

  /// Same architecture, all weights zero.
  NPModel zeros_like() const;
};

/// Backbone representation, width x H x W with H, W matching the encoding.
Tensor backbone_forward(const GridEncoding &enc, const NPModel &model);

LowRankDiagGaussian np_predict(const NPModel &model, const Task &task);

/// -lowrank_logpdf(targets) / N_t.
double np_loss(const NPModel &model, const Task &task);

/// Loss and its gradient with respect to every weight (same layout as model).
double np_gradients(const NPModel &model, const Task &task, NPModel &gradient);

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0; // decoupled (AdamW), scaled by the learning rate
  // Cosine-annealed from learning_rate at epoch 1 to this at max_epochs.
  // Unset keeps the rate constant.
  std::optional<double> final_learning_rate;
  int batch_size = 2;
  int max_epochs = 100;
  int tasks_per_epoch = 64;
  int validation_tasks = 32;
  int patience = 0; // 0 disables early stopping
  std::uint64_t seed = 0;
  TaskSamplingConfig sampling;

  void validate() const;
};

/// Learning rate used during `epoch` (1-based).
double scheduled_learning_rate(const TrainConfig &cfg, int epoch);

struct EpochRecord {
  int epoch = 0;
  double train_nll = 0.0;
  double val_nll = 0.0;
  bool checkpointed = false;
};

struct TrainResult {
  NPModel model; // best-validation checkpoint
  std::vector<EpochRecord> history;
  double best_val_nll = 0.0;
};

/// Validation tasks for `dates`, deterministically seeded.
std::vector<Task> fixed_tasks(const Dataset &data, const std::vector<int> &dates,
                              int count, std::uint64_t seed,
                              const TaskSamplingConfig &sampling);

/// Adam over batches of cfg.batch_size tasks, fresh training tasks every
/// epoch, fixed validation tasks; returns the best-validation checkpoint.
/// `on_epoch` (optional) is called after each epoch.
TrainResult np_train(const NPModel &initial, const Dataset &data,
                     const std::vector<int> &train_dates,
                     const std::vector<int> &val_dates, const TrainConfig &cfg,
                     const std::function<void(const EpochRecord &)> &on_epoch = {});

/// Mean np_loss over tasks.
double mean_np_loss(const NPModel &model, const std::vector<Task> &tasks);

void write_history_csv(std::ostream &os, const std::vector<EpochRecord> &history);

} // namespace placekit

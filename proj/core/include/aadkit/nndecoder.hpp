#pragma once

#include "aadkit/lagspace.hpp"
#include "aadkit/types.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace aadkit::nn {

// One convolutional hidden layer with tanh units followed by a linear
// output unit. Each hidden kernel spans all channels and delta+1 taps and
// is stored as a row of W in the lag matrix's channel-major-lag order, so
// sliding the kernel over the recording equals multiplying the lag matrix.
struct ConvEstimator {
  Eigen::MatrixXd W;  // filters x (channels * (delta + 1))
  Eigen::VectorXd b;  // hidden biases
  Eigen::VectorXd v;  // output weights
  double b_out = 0.0;
  int delta = 0;
  int channel_count = 0;

  int filter_count() const noexcept { return static_cast<int>(W.rows()); }
  int kernel_size() const noexcept { return delta + 1; }
  Eigen::Index parameter_count() const noexcept { return W.size() + b.size() + v.size() + 1; }
};

// Flat parameter layout: W row-major, then b, v, b_out.
Eigen::VectorXd pack(const ConvEstimator& net);
void unpack(const Eigen::VectorXd& params, ConvEstimator& net);

// Glorot-uniform kernels and output weights, zero biases.
ConvEstimator init_network(int channels, int delta, int filters, std::uint64_t seed);

// keep[f] is 0 or 1; kept units are scaled by 1/(1 - rate).
struct DropoutMask {
  Eigen::VectorXd keep;
  double rate = 0.0;
};

Envelope forward(const ConvEstimator& net, const LagMatrix& lag, const DropoutMask* mask = nullptr);

// 1 - pearson(e, e_hat), in [0, 2]. A single constant window counts as zero
// correlation; two constant windows raise UndefinedCorrelationError.
double correlation_loss(std::span<const double> e, std::span<const double> e_hat);

// A contiguous block of rows from one recording plus its dropout mask.
struct BatchWindow {
  const LagMatrix* lag = nullptr;
  const Envelope* env = nullptr;
  Eigen::Index start = 0;
  Eigen::Index length = 0;
  std::optional<DropoutMask> mask;
};

struct Gradients {
  Eigen::MatrixXd W;
  Eigen::VectorXd b;
  Eigen::VectorXd v;
  double b_out = 0.0;
};

struct LossGradients {
  double loss = 0.0;  // mean correlation loss over the batch windows
  Gradients grad;
};

// Exact gradients of the mean correlation loss. A constant envelope or
// constant network output in any window raises UndefinedCorrelationError.
LossGradients loss_and_gradients(const ConvEstimator& net, std::span<const BatchWindow> batch);

// Whole lag matrix as a single window.
LossGradients loss_and_gradients(const ConvEstimator& net, const LagMatrix& lag, const Envelope& env,
                                 const DropoutMask* mask = nullptr);

Eigen::VectorXd pack(const Gradients& g);

struct NadamConfig {
  double learning_rate = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum_decay = 0.004;  // psi of the momentum warm-up schedule
};

struct NadamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long long step = 0;
  double mu_product = 1.0;  // prod_{i<=t} mu_i
};

// Nesterov-accelerated Adam with the momentum warm-up schedule
//   mu_t = b1 (1 - 0.5 * 0.96^(t psi)):
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   m_hat = mu_{t+1} m / (1 - prod_{i<=t+1} mu_i) + (1-mu_t) g / (1 - prod_{i<=t} mu_i)
//   v_hat = v / (1 - b2^t)
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
void nadam_step(NadamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads, const NadamConfig& config);

struct TrainConfig {
  int filters = 5;
  double learning_rate = 0.002;
  int iterations = 3000;
  std::size_t batch_samples = 3840;  // 60 s at 64 Hz
  std::size_t windows_per_batch = 1;
  double dropout_rate = 0.25;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum_decay = 0.004;
  // Validation is scored every eval_every iterations when validation folds are given.
  int eval_every = 100;

  void check() const;
};

struct TrainResult {
  ConvEstimator net;
  std::vector<double> loss_trace;  // one entry per iteration
  std::vector<std::pair<int, double>> validation_trace;  // (iteration, mean validation correlation)
  int selected_iteration = 0;
};

// Trains on `train` folds. With validation folds the parameters of the
// iteration with the best mean validation correlation are returned.
// Throws TrainingError (with the loss trace) when the loss goes non-finite.
TrainResult train(std::span<const Fold> train, std::span<const Fold> validation, const TrainConfig& config);

// Mean Pearson correlation between network output and envelope over folds.
double mean_correlation(const ConvEstimator& net, std::span<const Fold> folds);

// Writes <stem>.json (architecture header) and <stem>.bin (packed parameters, float64 LE).
void save_network(const ConvEstimator& net, const std::filesystem::path& stem);
ConvEstimator load_network(const std::filesystem::path& stem);

}  // namespace aadkit::nn

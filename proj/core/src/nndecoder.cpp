#include "aadkit/nndecoder.hpp"

#include "aadkit/binary_io.hpp"
#include "aadkit/corrwin.hpp"
#include "aadkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

namespace aadkit::nn {

Eigen::VectorXd pack(const ConvEstimator& net) {
  Eigen::VectorXd p(net.parameter_count());
  Eigen::Index o = 0;
  for (Eigen::Index f = 0; f < net.W.rows(); ++f) {
    p.segment(o, net.W.cols()) = net.W.row(f).transpose();
    o += net.W.cols();
  }
  p.segment(o, net.b.size()) = net.b;
  o += net.b.size();
  p.segment(o, net.v.size()) = net.v;
  o += net.v.size();
  p(o) = net.b_out;
  return p;
}

void unpack(const Eigen::VectorXd& params, ConvEstimator& net) {
  if (params.size() != net.parameter_count()) throw ParameterError("unpack: parameter count mismatch");
  Eigen::Index o = 0;
  for (Eigen::Index f = 0; f < net.W.rows(); ++f) {
    net.W.row(f) = params.segment(o, net.W.cols()).transpose();
    o += net.W.cols();
  }
  net.b = params.segment(o, net.b.size());
  o += net.b.size();
  net.v = params.segment(o, net.v.size());
  o += net.v.size();
  net.b_out = params(o);
}

Eigen::VectorXd pack(const Gradients& g) {
  ConvEstimator shape;
  shape.W = g.W;
  shape.b = g.b;
  shape.v = g.v;
  shape.b_out = g.b_out;
  return pack(shape);
}

ConvEstimator init_network(int channels, int delta, int filters, std::uint64_t seed) {
  if (channels < 1 || delta < 0 || filters < 1) throw ParameterError("init_network: invalid architecture");
  ConvEstimator net;
  net.delta = delta;
  net.channel_count = channels;
  const Eigen::Index inputs = regressor_dim(channels, delta);
  std::mt19937_64 rng(seed);
  const double hidden_limit = std::sqrt(6.0 / static_cast<double>(inputs + filters));
  const double out_limit = std::sqrt(6.0 / static_cast<double>(filters + 1));
  std::uniform_real_distribution<double> hidden(-hidden_limit, hidden_limit);
  std::uniform_real_distribution<double> out(-out_limit, out_limit);
  net.W.resize(filters, inputs);
  for (Eigen::Index f = 0; f < filters; ++f)
    for (Eigen::Index j = 0; j < inputs; ++j) net.W(f, j) = hidden(rng);
  net.b = Eigen::VectorXd::Zero(filters);
  net.v.resize(filters);
  for (Eigen::Index f = 0; f < filters; ++f) net.v(f) = out(rng);
  net.b_out = 0.0;
  return net;
}

namespace {

void check_layout(const ConvEstimator& net, const LagMatrix& lag) {
  if (lag.cols() != net.W.cols() || lag.delta != net.delta || lag.channel_count != net.channel_count)
    throw ParameterError("network does not match lag matrix layout");
}

Eigen::VectorXd output_scale(const ConvEstimator& net, const DropoutMask* mask) {
  if (mask == nullptr) return net.v;
  if (mask->keep.size() != net.v.size()) throw ParameterError("dropout mask size does not match filter count");
  if (!(mask->rate >= 0.0 && mask->rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
  return net.v.cwiseProduct(mask->keep) / (1.0 - mask->rate);
}

}  // namespace

Envelope forward(const ConvEstimator& net, const LagMatrix& lag, const DropoutMask* mask) {
  check_layout(net, lag);
  const Eigen::VectorXd scale = output_scale(net, mask);
  Eigen::MatrixXd h = lag.values * net.W.transpose();
  h.rowwise() += net.b.transpose();
  h = h.array().tanh().matrix();
  Envelope out;
  out.rate = lag.rate;
  out.samples.resize(static_cast<std::size_t>(lag.rows()));
  Eigen::Map<Eigen::VectorXd> y(out.samples.data(), lag.rows());
  y = h * scale;
  y.array() += net.b_out;
  return out;
}

double correlation_loss(std::span<const double> e, std::span<const double> e_hat) {
  if (e.size() != e_hat.size()) throw ParameterError("correlation_loss: length mismatch");
  if (e.size() < 2) throw ParameterError("correlation_loss: need at least 2 samples");
  auto constant = [](std::span<const double> x) {
    for (double v : x)
      if (v != x.front()) return false;
    return true;
  };
  const bool ce = constant(e);
  const bool ch = constant(e_hat);
  if (ce && ch) throw UndefinedCorrelationError("correlation_loss: both windows constant");
  if (ce || ch) return 1.0;
  return 1.0 - pearson(e, e_hat);
}

LossGradients loss_and_gradients(const ConvEstimator& net, std::span<const BatchWindow> batch) {
  if (batch.empty()) throw ParameterError("loss_and_gradients: empty batch");
  const Eigen::Index filters = net.W.rows();
  LossGradients out;
  out.grad.W = Eigen::MatrixXd::Zero(filters, net.W.cols());
  out.grad.b = Eigen::VectorXd::Zero(filters);
  out.grad.v = Eigen::VectorXd::Zero(filters);
  out.grad.b_out = 0.0;
  const double inv_windows = 1.0 / static_cast<double>(batch.size());

  for (const BatchWindow& w : batch) {
    check_layout(net, *w.lag);
    if (w.length < 2 || w.start < 0 || w.start + w.length > w.lag->rows() ||
        static_cast<Eigen::Index>(w.env->size()) != w.lag->rows())
      throw ParameterError("loss_and_gradients: window out of range");
    const auto X = w.lag->values.middleRows(w.start, w.length);
    const Eigen::Map<const Eigen::VectorXd> e(w.env->samples.data() + w.start, w.length);

    Eigen::VectorXd keep_scale = Eigen::VectorXd::Ones(filters);
    if (w.mask) {
      if (w.mask->keep.size() != filters) throw ParameterError("dropout mask size does not match filter count");
      keep_scale = w.mask->keep / (1.0 - w.mask->rate);
    }
    const Eigen::VectorXd scaled_v = net.v.cwiseProduct(keep_scale);

    Eigen::MatrixXd H = X * net.W.transpose();
    H.rowwise() += net.b.transpose();
    H = H.array().tanh().matrix();
    Eigen::VectorXd y = H * scaled_v;
    y.array() += net.b_out;

    const Eigen::VectorXd ec = e.array() - e.mean();
    const Eigen::VectorXd yc = y.array() - y.mean();
    const double ne = ec.norm();
    const double ny = yc.norm();
    if (!(ne > 0.0)) throw UndefinedCorrelationError("loss_and_gradients: constant envelope window");
    if (!(ny > 0.0)) throw UndefinedCorrelationError("loss_and_gradients: constant network output");
    const double rho = ec.dot(yc) / (ne * ny);
    out.loss += (1.0 - rho) * inv_windows;

    // d(1 - rho)/dy, averaged over windows.
    const Eigen::VectorXd gy = -(ec / (ne * ny) - rho * yc / (ny * ny)) * inv_windows;

    out.grad.b_out += gy.sum();
    out.grad.v += (H.transpose() * gy).cwiseProduct(keep_scale);
    const Eigen::MatrixXd GA = (gy * scaled_v.transpose()).cwiseProduct((1.0 - H.array().square()).matrix());
    out.grad.W.noalias() += GA.transpose() * X;
    out.grad.b += GA.colwise().sum().transpose();
  }
  return out;
}

LossGradients loss_and_gradients(const ConvEstimator& net, const LagMatrix& lag, const Envelope& env,
                                 const DropoutMask* mask) {
  BatchWindow w;
  w.lag = &lag;
  w.env = &env;
  w.start = 0;
  w.length = lag.rows();
  if (mask) w.mask = *mask;
  return loss_and_gradients(net, std::span<const BatchWindow>(&w, 1));
}

void nadam_step(NadamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads, const NadamConfig& config) {
  if (grads.size() != params.size()) throw ParameterError("nadam_step: gradient size mismatch");
  if (state.m.size() == 0) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
    state.mu_product = 1.0;
  }
  if (state.m.size() != params.size()) throw ParameterError("nadam_step: optimizer state size mismatch");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double b1 = config.beta1;
  const double b2 = config.beta2;
  auto mu = [&](double step) { return b1 * (1.0 - 0.5 * std::pow(0.96, step * config.momentum_decay)); };
  const double mu_t = mu(t);
  const double mu_next = mu(t + 1.0);
  state.mu_product *= mu_t;
  const double prod_next = state.mu_product * mu_next;
  state.m = b1 * state.m + (1.0 - b1) * grads;
  state.v = b2 * state.v + (1.0 - b2) * grads.cwiseProduct(grads);
  const Eigen::VectorXd m_hat =
      (mu_next / (1.0 - prod_next)) * state.m + ((1.0 - mu_t) / (1.0 - state.mu_product)) * grads;
  const Eigen::VectorXd v_hat = state.v / (1.0 - std::pow(b2, t));
  params.array() -= config.learning_rate * m_hat.array() / (v_hat.array().sqrt() + config.epsilon);
}

void TrainConfig::check() const {
  if (filters < 1) throw ParameterError("TrainConfig: filters must be positive");
  if (!(learning_rate > 0.0)) throw ParameterError("TrainConfig: learning_rate must be positive");
  if (iterations < 0) throw ParameterError("TrainConfig: iterations must be non-negative");
  if (batch_samples < 2) throw ParameterError("TrainConfig: batch_samples must be >= 2");
  if (windows_per_batch < 1) throw ParameterError("TrainConfig: windows_per_batch must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ParameterError("TrainConfig: dropout_rate in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) || !(epsilon > 0.0) ||
      !(momentum_decay >= 0.0))
    throw ParameterError("TrainConfig: invalid Nadam constants");
  if (eval_every < 1) throw ParameterError("TrainConfig: eval_every must be positive");
}

double mean_correlation(const ConvEstimator& net, std::span<const Fold> folds) {
  double sum = 0.0;
  std::size_t used = 0;
  for (const Fold& f : folds) {
    const auto y = forward(net, f.lag);
    try {
      sum += pearson(y.samples, f.env.samples);
      ++used;
    } catch (const UndefinedCorrelationError&) {
    }
  }
  return used > 0 ? sum / static_cast<double>(used) : 0.0;
}

namespace {

bool window_has_variance(const Envelope& env, Eigen::Index start, Eigen::Index length) {
  const double first = env.samples[static_cast<std::size_t>(start)];
  for (Eigen::Index i = 1; i < length; ++i)
    if (env.samples[static_cast<std::size_t>(start + i)] != first) return true;
  return false;
}

}  // namespace

TrainResult train(std::span<const Fold> train_folds, std::span<const Fold> validation, const TrainConfig& config) {
  config.check();
  if (train_folds.empty()) throw ParameterError("train: no training data");
  const int channels = train_folds.front().lag.channel_count;
  const int delta = train_folds.front().lag.delta;
  for (const Fold& f : train_folds) {
    if (f.lag.channel_count != channels || f.lag.delta != delta)
      throw ParameterError("train: folds have different layouts");
    if (static_cast<Eigen::Index>(f.env.size()) != f.lag.rows())
      throw ParameterError("train: fold envelope length does not match lag rows");
  }

  // Window length: the configured batch, shortened to the longest fold if needed.
  Eigen::Index longest = 0;
  for (const Fold& f : train_folds) longest = std::max(longest, f.lag.rows());
  const Eigen::Index length = std::min<Eigen::Index>(static_cast<Eigen::Index>(config.batch_samples), longest);
  if (length < 2) throw ParameterError("train: training folds too short");
  std::vector<double> start_weights;
  for (const Fold& f : train_folds) start_weights.push_back(f.lag.rows() >= length ? double(f.lag.rows() - length + 1) : 0.0);

  TrainResult result;
  result.net = init_network(channels, delta, config.filters, config.seed);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::discrete_distribution<std::size_t> pick_fold(start_weights.begin(), start_weights.end());
  std::bernoulli_distribution keep(1.0 - config.dropout_rate);

  const NadamConfig nadam{config.learning_rate, config.beta1, config.beta2, config.epsilon, config.momentum_decay};
  NadamState state;
  Eigen::VectorXd params = pack(result.net);
  Eigen::VectorXd best_params = params;
  double best_score = -std::numeric_limits<double>::infinity();
  const bool validate_runs = !validation.empty();

  auto score_validation = [&](int iteration) {
    unpack(params, result.net);
    const double s = mean_correlation(result.net, validation);
    result.validation_trace.emplace_back(iteration, s);
    if (s > best_score) {
      best_score = s;
      best_params = params;
      result.selected_iteration = iteration;
    }
  };

  std::vector<BatchWindow> batch(config.windows_per_batch);
  result.loss_trace.reserve(static_cast<std::size_t>(config.iterations));
  for (int it = 1; it <= config.iterations; ++it) {
    for (BatchWindow& w : batch) {
      // Redraw windows with a constant envelope (silence) a bounded number of times.
      std::size_t fi = 0;
      Eigen::Index start = 0;
      for (int attempt = 0; attempt < 100; ++attempt) {
        fi = pick_fold(rng);
        std::uniform_int_distribution<Eigen::Index> pick_start(0, train_folds[fi].lag.rows() - length);
        start = pick_start(rng);
        if (window_has_variance(train_folds[fi].env, start, length)) break;
      }
      w.lag = &train_folds[fi].lag;
      w.env = &train_folds[fi].env;
      w.start = start;
      w.length = length;
      if (config.dropout_rate > 0.0) {
        DropoutMask mask{Eigen::VectorXd::Zero(config.filters), config.dropout_rate};
        do {
          for (int f = 0; f < config.filters; ++f) mask.keep(f) = keep(rng) ? 1.0 : 0.0;
        } while (mask.keep.sum() == 0.0);
        w.mask = std::move(mask);
      } else {
        w.mask.reset();
      }
    }
    unpack(params, result.net);
    LossGradients lg;
    try {
      lg = loss_and_gradients(result.net, batch);
    } catch (const UndefinedCorrelationError& e) {
      throw TrainingError(std::string("train: ") + e.what() + " at iteration " + std::to_string(it),
                          result.loss_trace);
    }
    result.loss_trace.push_back(lg.loss);
    const Eigen::VectorXd g = pack(lg.grad);
    if (!std::isfinite(lg.loss) || !g.allFinite())
      throw TrainingError("train: loss diverged at iteration " + std::to_string(it), result.loss_trace);
    nadam_step(state, params, g, nadam);
    if (validate_runs && (it % config.eval_every == 0 || it == config.iterations)) score_validation(it);
  }

  if (validate_runs) {
    if (config.iterations == 0) score_validation(0);
    unpack(best_params, result.net);
  } else {
    unpack(params, result.net);
    result.selected_iteration = config.iterations;
  }
  return result;
}

void save_network(const ConvEstimator& net, const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  auto bin_path = stem;
  bin_path += ".bin";
  nlohmann::json j;
  j["format"] = "aadkit-conv-estimator";
  j["version"] = 1;
  j["channels"] = net.channel_count;
  j["delta"] = net.delta;
  j["kernel_size"] = net.kernel_size();
  j["filters"] = net.filter_count();
  j["hidden_activation"] = "tanh";
  j["output_activation"] = "linear";
  j["column_order"] = kColumnOrderTag;
  j["parameter_layout"] = "W[filters][channels*(delta+1)] row-major, b[filters], v[filters], b_out";
  j["parameter_count"] = net.parameter_count();
  j["dtype"] = "float64-le";
  j["weights_file"] = bin_path.filename().string();
  io::write_json(json_path, j);
  const Eigen::VectorXd p = pack(net);
  io::write_f64_le(bin_path, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
}

ConvEstimator load_network(const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  const auto j = io::read_json(json_path);
  const std::string ctx = json_path.filename().string();
  if (io::require<std::string>(j, "format", ctx) != "aadkit-conv-estimator")
    throw FormatError(ctx + ": not a network header");
  if (io::require<std::string>(j, "hidden_activation", ctx) != "tanh" ||
      io::require<std::string>(j, "output_activation", ctx) != "linear")
    throw FormatError(ctx + ": unsupported activation");
  const int channels = io::require<int>(j, "channels", ctx);
  const int delta = io::require<int>(j, "delta", ctx);
  const int filters = io::require<int>(j, "filters", ctx);
  if (channels < 1 || delta < 0 || filters < 1) throw FormatError(ctx + ": invalid architecture");
  ConvEstimator net;
  net.channel_count = channels;
  net.delta = delta;
  net.W = Eigen::MatrixXd::Zero(filters, regressor_dim(channels, delta));
  net.b = Eigen::VectorXd::Zero(filters);
  net.v = Eigen::VectorXd::Zero(filters);
  const auto count = io::require<std::size_t>(j, "parameter_count", ctx);
  if (count != static_cast<std::size_t>(net.parameter_count()))
    throw FormatError(ctx + ": parameter_count inconsistent with architecture");
  const auto p = io::read_f64_le(stem.parent_path() / io::require<std::string>(j, "weights_file", ctx), count,
                                 "parameters");
  unpack(Eigen::Map<const Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size())), net);
  return net;
}

}  // namespace aadkit::nn

#include "aadkit/lsdecoder.hpp"

#include "aadkit/binary_io.hpp"
#include "aadkit/corrwin.hpp"
#include "aadkit/error.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace aadkit::ls {

MomentPair accumulate_moments(const LagMatrix& lag, const Envelope& env) {
  const Eigen::Index k = lag.rows();
  if (static_cast<Eigen::Index>(env.size()) != k)
    throw ParameterError("accumulate_moments: envelope length " + std::to_string(env.size()) +
                         " does not match lag rows " + std::to_string(k));
  if (k == 0) throw ParameterError("accumulate_moments: no samples");
  const Eigen::Index dim = lag.cols();
  MomentPair m;
  m.sample_count = static_cast<std::size_t>(k);
  m.Q = Eigen::MatrixXd::Zero(dim, dim);
  m.Q.selfadjointView<Eigen::Lower>().rankUpdate(lag.values.transpose(), 1.0 / static_cast<double>(k));
  m.Q.triangularView<Eigen::StrictlyUpper>() = m.Q.transpose();
  const Eigen::Map<const Eigen::VectorXd> e(env.samples.data(), k);
  m.q = lag.values.transpose() * e / static_cast<double>(k);
  return m;
}

MomentPair merge(const MomentPair& a, const MomentPair& b) {
  if (a.sample_count == 0) return b;
  if (b.sample_count == 0) return a;
  if (a.Q.rows() != b.Q.rows()) throw ParameterError("merge: moment dimensions differ");
  const double ka = static_cast<double>(a.sample_count);
  const double kb = static_cast<double>(b.sample_count);
  const double k = ka + kb;
  MomentPair m;
  m.sample_count = a.sample_count + b.sample_count;
  m.Q = (ka * a.Q + kb * b.Q) / k;
  m.q = (ka * a.q + kb * b.q) / k;
  return m;
}

DerivativeRegularizer build_derivative_regularizer(int channels, int delta) {
  if (channels < 1 || delta < 0) throw ParameterError("build_derivative_regularizer: need C >= 1, delta >= 0");
  const Eigen::Index taps = delta + 1;
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(taps, taps);
  for (Eigen::Index i = 0; i < delta; ++i) {
    block(i, i) += 1.0;
    block(i + 1, i + 1) += 1.0;
    block(i, i + 1) -= 1.0;
    block(i + 1, i) -= 1.0;
  }
  DerivativeRegularizer r;
  r.channels = channels;
  r.delta = delta;
  r.D = Eigen::MatrixXd::Zero(channels * taps, channels * taps);
  for (Eigen::Index c = 0; c < channels; ++c) r.D.block(c * taps, c * taps, taps, taps) = block;
  return r;
}

LinearEstimator solve_estimator(const MomentPair& m, const DerivativeRegularizer& D, double beta) {
  const Eigen::Index dim = m.Q.rows();
  if (m.Q.cols() != dim || m.q.size() != dim || D.D.rows() != dim)
    throw ParameterError("solve_estimator: dimension mismatch between moments and regularizer");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ParameterError("solve_estimator: beta must be finite and >= 0");

  const Eigen::MatrixXd A = m.Q + beta * D.D;
  LinearEstimator est;
  est.delta = D.delta;
  est.channel_count = D.channels;
  est.beta = beta;

  const Eigen::LLT<Eigen::MatrixXd> llt(A);
  const bool factored = llt.info() == Eigen::Success && llt.rcond() > 1e-12;
  if (factored) {
    est.weights = llt.solve(m.q);
  } else if (beta == 0.0) {
    throw SingularityError("solve_estimator: Q is singular or ill-conditioned; use beta > 0");
  } else {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
    if (eig.info() != Eigen::Success) throw NumericalError("solve_estimator: eigendecomposition failed");
    const Eigen::VectorXd& lambda = eig.eigenvalues();
    const double cutoff = 1e-10 * lambda.cwiseAbs().maxCoeff();
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      if (lambda(i) > cutoff) inv(i) = 1.0 / lambda(i);
    est.weights = eig.eigenvectors() * inv.asDiagonal() * (eig.eigenvectors().transpose() * m.q);
    est.used_pseudo_inverse = true;
  }
  if (!est.weights.allFinite()) throw NumericalError("solve_estimator: non-finite weights");
  return est;
}

Envelope reconstruct(const LinearEstimator& est, const LagMatrix& lag) {
  if (lag.cols() != est.weights.size() || lag.delta != est.delta || lag.channel_count != est.channel_count)
    throw ParameterError("reconstruct: estimator does not match lag matrix layout");
  Envelope out;
  out.rate = lag.rate;
  out.samples.resize(static_cast<std::size_t>(lag.rows()));
  Eigen::Map<Eigen::VectorXd>(out.samples.data(), lag.rows()) = lag.values * est.weights;
  return out;
}

std::vector<double> default_beta_grid(const MomentPair& pooled, int count, double lo_exp, double hi_exp) {
  if (count < 1) throw ParameterError("default_beta_grid: count must be positive");
  const double dim = static_cast<double>(pooled.Q.rows());
  const double scale = dim > 0 ? pooled.Q.trace() / dim : 1.0;
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const double e = count == 1 ? lo_exp : lo_exp + (hi_exp - lo_exp) * i / (count - 1);
    grid[static_cast<std::size_t>(i)] = std::pow(10.0, e) * scale;
  }
  return grid;
}

namespace {

bool has_variance(const std::vector<double>& v) {
  for (double x : v)
    if (x != v.front()) return true;
  return false;
}

}  // namespace

BetaSearch cross_validate_beta(std::span<const Fold> folds, std::span<const double> grid) {
  std::vector<MomentPair> moments;
  moments.reserve(folds.size());
  for (const Fold& f : folds) moments.push_back(accumulate_moments(f.lag, f.env));
  return cross_validate_beta(folds, moments, grid);
}

BetaSearch cross_validate_beta(std::span<const Fold> folds, std::span<const MomentPair> fold_moments,
                               std::span<const double> grid) {
  if (folds.size() < 2) throw ParameterError("cross_validate_beta: need at least 2 folds");
  if (fold_moments.size() != folds.size()) throw ParameterError("cross_validate_beta: one moment pair per fold");
  if (grid.empty()) throw ParameterError("cross_validate_beta: empty beta grid");

  BetaSearch out;
  out.betas.assign(grid.begin(), grid.end());
  std::vector<double> sums(grid.size(), 0.0);
  std::size_t used = 0;

  const int channels = folds.front().lag.channel_count;
  const int delta = folds.front().lag.delta;
  const auto D = build_derivative_regularizer(channels, delta);

  for (std::size_t held = 0; held < folds.size(); ++held) {
    const Fold& test = folds[held];
    if (!has_variance(test.env.samples)) {
      out.warnings.push_back("fold " + std::to_string(held) + " (" + test.provenance +
                             ") skipped: constant envelope");
      ++out.skipped_folds;
      continue;
    }
    // Fixed merge order: ascending fold index.
    MomentPair train;
    for (std::size_t i = 0; i < folds.size(); ++i)
      if (i != held) train = merge(train, fold_moments[i]);
    for (std::size_t b = 0; b < grid.size(); ++b) {
      double score = 0.0;
      try {
        const auto est = solve_estimator(train, D, grid[b]);
        const auto rec = reconstruct(est, test.lag);
        score = pearson(rec.samples, test.env.samples);
      } catch (const UndefinedCorrelationError&) {
        score = 0.0;
      } catch (const SingularityError&) {
        score = -std::numeric_limits<double>::infinity();
      }
      sums[b] += score;
    }
    ++used;
  }
  if (used == 0) throw DataError("cross_validate_beta: every fold has a constant envelope");

  out.mean_scores.resize(grid.size());
  std::size_t best = 0;
  for (std::size_t b = 0; b < grid.size(); ++b) {
    out.mean_scores[b] = sums[b] / static_cast<double>(used);
    // Strict improvement beyond rounding noise; ties keep the smaller beta.
    if (out.mean_scores[b] > out.mean_scores[best] + 1e-12) best = b;
  }
  out.best_beta = grid[best];
  return out;
}

void save_estimator(const LinearEstimator& est, const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  auto bin_path = stem;
  bin_path += ".bin";
  nlohmann::json j;
  j["format"] = "aadkit-linear-estimator";
  j["version"] = 1;
  j["channels"] = est.channel_count;
  j["delta"] = est.delta;
  j["beta"] = est.beta;
  j["column_order"] = kColumnOrderTag;
  j["weight_count"] = est.weights.size();
  j["dtype"] = "float64-le";
  j["weights_file"] = bin_path.filename().string();
  j["used_pseudo_inverse"] = est.used_pseudo_inverse;
  io::write_json(json_path, j);
  io::write_f64_le(bin_path, std::span<const double>(est.weights.data(), static_cast<std::size_t>(est.weights.size())));
}

LinearEstimator load_estimator(const std::filesystem::path& stem) {
  auto json_path = stem;
  json_path += ".json";
  const auto j = io::read_json(json_path);
  const std::string ctx = json_path.filename().string();
  if (io::require<std::string>(j, "format", ctx) != "aadkit-linear-estimator")
    throw FormatError(ctx + ": not a linear estimator header");
  if (io::require<std::string>(j, "column_order", ctx) != kColumnOrderTag)
    throw FormatError(ctx + ": unsupported column order");
  LinearEstimator est;
  est.channel_count = io::require<int>(j, "channels", ctx);
  est.delta = io::require<int>(j, "delta", ctx);
  est.beta = io::require<double>(j, "beta", ctx);
  est.used_pseudo_inverse = j.value("used_pseudo_inverse", false);
  const auto count = io::require<std::size_t>(j, "weight_count", ctx);
  if (est.channel_count < 1 || est.delta < 0 ||
      count != static_cast<std::size_t>(regressor_dim(est.channel_count, est.delta)))
    throw FormatError(ctx + ": weight_count inconsistent with channels and delta");
  const auto w = io::read_f64_le(stem.parent_path() / io::require<std::string>(j, "weights_file", ctx), count,
                                 "weights");
  est.weights = Eigen::Map<const Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  return est;
}

}  // namespace aadkit::ls

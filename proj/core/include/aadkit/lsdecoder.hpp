#pragma once

#include "aadkit/lagspace.hpp"
#include "aadkit/types.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace aadkit::ls {

// Normalized second moments of the regressors: Q = (1/K) sum r r^T,
// q = (1/K) sum r e.
struct MomentPair {
  Eigen::MatrixXd Q;
  Eigen::VectorXd q;
  std::size_t sample_count = 0;
};

MomentPair accumulate_moments(const LagMatrix& lag, const Envelope& env);

// Sample-count-weighted combination, equal to the moments of the pooled rows.
MomentPair merge(const MomentPair& a, const MomentPair& b);

// Block-diagonal L^T L with L the delta x (delta+1) first-difference
// operator along the lag axis of each channel.
struct DerivativeRegularizer {
  Eigen::MatrixXd D;
  int channels = 0;
  int delta = 0;
};

DerivativeRegularizer build_derivative_regularizer(int channels, int delta);

struct LinearEstimator {
  Eigen::VectorXd weights;  // channel-major-lag, length channels*(delta+1)
  int delta = 0;
  int channel_count = 0;
  double beta = 0.0;
  // Set when the Cholesky factorization failed and the eigenvalue-clipped
  // pseudo-inverse was used instead.
  bool used_pseudo_inverse = false;
};

// g = (Q + beta D)^-1 q. With beta == 0 an ill-conditioned Q (reciprocal
// condition below 1e-12) raises SingularityError; with beta > 0 a failed
// factorization falls back to the pseudo-inverse.
LinearEstimator solve_estimator(const MomentPair& m, const DerivativeRegularizer& D, double beta);

// e_hat[k] = g^T r[k].
Envelope reconstruct(const LinearEstimator& est, const LagMatrix& lag);

struct BetaSearch {
  double best_beta = 0.0;
  std::vector<double> betas;
  std::vector<double> mean_scores;  // mean held-out Pearson per beta
  std::vector<std::string> warnings;
  std::size_t skipped_folds = 0;
};

// 13 log-spaced multipliers 1e-6 ... 1e6 scaled by trace(Q)/dim.
std::vector<double> default_beta_grid(const MomentPair& pooled, int count = 13, double lo_exp = -6.0,
                                      double hi_exp = 6.0);

// Leave-one-fold-out search over `grid`. Each beta is scored by the mean
// Pearson correlation between reconstruction and envelope over held-out
// folds; the highest score wins and ties go to the smaller beta. Folds with a
// constant envelope are skipped with a warning; if all are, DataError.
BetaSearch cross_validate_beta(std::span<const Fold> folds, std::span<const double> grid);

// Same, reusing moments the caller already accumulated (one per fold).
BetaSearch cross_validate_beta(std::span<const Fold> folds, std::span<const MomentPair> fold_moments,
                               std::span<const double> grid);

// Writes <stem>.json (header) and <stem>.bin (little-endian float64 weights).
void save_estimator(const LinearEstimator& est, const std::filesystem::path& stem);
LinearEstimator load_estimator(const std::filesystem::path& stem);

}  // namespace aadkit::ls

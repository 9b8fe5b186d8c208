#pragma once

#include "aadkit/corrwin.hpp"
#include "aadkit/types.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace aadkit::ssm {

// AR(1) coefficient and Inverse-Gamma(a0, b0) prior on the process-noise variance.
struct Hyper {
  double c0 = 1.0;
  double a0 = 2.008;
  double b0 = 0.2016;

  void check() const;
  // Mode of the Inverse-Gamma prior, used to initialize a new instant.
  double eta_prior_mode() const noexcept { return b0 / (a0 + 1.0); }
};

// Log-Normal model of |rho|: log|rho| ~ N(mu, sigma^2).
struct LogNormalParams {
  double mu = 0.0;
  double sigma = 1.0;
};

inline constexpr double kMinMagnitude = 1e-6;
inline constexpr double kSigmaFloor = 1e-3;

// Parameters of one smoothing window. `anchor` is the fixed state preceding
// the window's first instant (the AR(1) predecessor of z[0]).
struct State {
  std::vector<double> z;
  std::vector<double> eta;
  LogNormalParams attended;
  LogNormalParams unattended;
  Hyper hyper;
  double anchor = 0.0;
};

struct AttentionPosterior {
  std::vector<double> p1;  // p(d = 1) = logistic(z); p(d = 2) = 1 - p1
  std::vector<Speaker> decision;
};

// Logistic link 1 / (1 + exp(-z)).
double attention_probability(double z) noexcept;

// |rho| clamped to [1e-6, 1].
double clamp_magnitude(double rho) noexcept;

// Maximum-likelihood fit on log-magnitudes: mu = mean, sigma = population
// standard deviation floored at 1e-3. Needs at least two samples.
LogNormalParams fit_lognormal(std::span<const double> rho);

// Log-Normal log density at clamp_magnitude(rho).
double observation_loglik(double rho, const LogNormalParams& params) noexcept;

// Windowed log-posterior that EM increases: the log of the evidence
// marginalized over the attention label, plus the AR(1) Gaussian and
// Inverse-Gamma log priors (constants dropped).
double map_objective(std::span<const double> rho1, std::span<const double> rho2, const State& state);

struct EmResult {
  State state;
  AttentionPosterior posterior;
  std::vector<double> objective_trace;  // initial value, then one per sweep
};

struct EmOptions {
  int iterations = 20;
  // Re-estimate the unattended Log-Normal inside each sweep instead of keeping it fixed.
  bool refit_unattended = false;
};

// Runs EM sweeps on one smoothing window:
//   E:   q_k = s(z_k) A_k / (s(z_k) A_k + (1 - s(z_k)) B_k), with
//        A_k = LN(|rho1|; att) LN(|rho2|; unatt), B_k = LN(|rho1|; unatt) LN(|rho2|; att)
//   M-z: damped Newton on sum q log s(z) + (1-q) log(1-s(z)) - sum (z_k - c0 z_{k-1})^2 / (2 eta_k)
//   M-eta: eta_k = (b0 + d_k^2 / 2) / (a0 + 3/2),  d_k = z_k - c0 z_{k-1}
// Throws NumericalError if a Newton step cannot be made to increase the
// objective within 50 step halvings.
EmResult em_smoother(std::span<const double> rho1, std::span<const double> rho2, const State& init,
                     const EmOptions& options = {});

// Speaker 1 iff p1 > 0.5 at k_star.
Speaker decode_window(const AttentionPosterior& posterior, std::size_t k_star);

struct OnlineConfig {
  Hyper hyper;
  int k_p = 1;
  int k_a = 1;
  int em_iterations = 20;
  double init_span_s = 15.0;
  bool refit_unattended = false;

  int window_length() const noexcept { return k_p + k_a + 1; }
  void check() const;
};

struct ObservationModels {
  LogNormalParams attended;
  LogNormalParams unattended;
  std::size_t init_windows = 0;
};

// Fits both Log-Normals on the oracle-labelled windows lying entirely inside
// the first init_span_s seconds. Throws LengthError with fewer than 2 such windows.
ObservationModels fit_observation_models(const CorrelationSeries& series, std::span<const Speaker> truth,
                                         double init_span_s);

struct OnlineTrace {
  std::vector<std::size_t> instant;  // decoded correlation-window index k*
  std::vector<double> t_s;           // start time of window k*
  std::vector<double> p1;
  std::vector<double> z;
  std::vector<double> eta;
  std::vector<Speaker> decision;
  ObservationModels models;
};

// Slides the smoothing window over the series one instant at a time,
// decoding k* = k0 - k_a and warm-starting each window from the previous one.
OnlineTrace run_online(const CorrelationSeries& series, const ObservationModels& models, const OnlineConfig& config);

// Convenience: fits the observation models from oracle labels first.
OnlineTrace run_online(const CorrelationSeries& series, std::span<const Speaker> oracle_labels,
                       const OnlineConfig& config);

// columns: instant,t_s,p1,z,eta,decision
void write_posterior_csv(const OnlineTrace& trace, const std::filesystem::path& path);

}  // namespace aadkit::ssm

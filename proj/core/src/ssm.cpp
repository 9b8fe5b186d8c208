#include "aadkit/ssm.hpp"

#include "aadkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <string>

namespace aadkit::ssm {

namespace {

// log(logistic(z)), stable for large |z|.
double log_sigmoid(double z) noexcept { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double log_add_exp(double a, double b) noexcept {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Log-likelihoods of the two labelings of one instant:
//   la: speaker 1 attended, lb: speaker 2 attended.
struct Evidence {
  std::vector<double> la;
  std::vector<double> lb;
};

Evidence evidence(std::span<const double> rho1, std::span<const double> rho2, const LogNormalParams& att,
                  const LogNormalParams& un) {
  Evidence ev;
  ev.la.resize(rho1.size());
  ev.lb.resize(rho1.size());
  for (std::size_t k = 0; k < rho1.size(); ++k) {
    ev.la[k] = observation_loglik(rho1[k], att) + observation_loglik(rho2[k], un);
    ev.lb[k] = observation_loglik(rho1[k], un) + observation_loglik(rho2[k], att);
  }
  return ev;
}

double prior_term(const State& s) {
  const Hyper& h = s.hyper;
  double total = 0.0;
  double prev = s.anchor;
  for (std::size_t k = 0; k < s.z.size(); ++k) {
    const double d = s.z[k] - h.c0 * prev;
    total += -(h.a0 + 1.5) * std::log(s.eta[k]) - (h.b0 + 0.5 * d * d) / s.eta[k];
    prev = s.z[k];
  }
  return total;
}

double objective(const Evidence& ev, const State& s) {
  double total = prior_term(s);
  for (std::size_t k = 0; k < s.z.size(); ++k)
    total += log_add_exp(log_sigmoid(s.z[k]) + ev.la[k], log_sigmoid(-s.z[k]) + ev.lb[k]);
  return total;
}

// Label responsibilities. q2 = 1 - q1 is kept separately so that swapping the
// speakers mirrors every computation exactly.
struct Responsibilities {
  std::vector<double> q1;
  std::vector<double> q2;
};

// Expected complete-data log-posterior in z for fixed q and eta.
double z_objective(const std::vector<double>& z, const Responsibilities& q, const std::vector<double>& eta,
                   double anchor, double c0) {
  double total = 0.0;
  double prev = anchor;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double d = z[k] - c0 * prev;
    total += q.q1[k] * log_sigmoid(z[k]) + q.q2[k] * log_sigmoid(-z[k]) - d * d / (2.0 * eta[k]);
    prev = z[k];
  }
  return total;
}

// Solves the symmetric tridiagonal system (diag, off) x = rhs (Thomas algorithm).
std::vector<double> solve_tridiagonal(std::vector<double> diag, const std::vector<double>& off,
                                      std::vector<double> rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double w = off[i - 1] / diag[i - 1];
    diag[i] -= w * off[i - 1];
    rhs[i] -= w * rhs[i - 1];
  }
  std::vector<double> x(n);
  x[n - 1] = rhs[n - 1] / diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) x[i] = (rhs[i] - off[i] * x[i + 1]) / diag[i];
  return x;
}

void maximize_z(std::vector<double>& z, const Responsibilities& q, const std::vector<double>& eta, double anchor,
                double c0) {
  const std::size_t n = z.size();
  constexpr int kMaxNewton = 100;
  constexpr int kMaxHalvings = 50;
  double f = z_objective(z, q, eta, anchor, c0);
  for (int it = 0; it < kMaxNewton; ++it) {
    // Gradient and the negated (positive-definite) Hessian.
    std::vector<double> g(n), diag(n), off(n > 0 ? n - 1 : 0);
    double prev = anchor;
    double gmax = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double s1 = attention_probability(z[k]);
      const double s2 = attention_probability(-z[k]);
      const double d = z[k] - c0 * prev;
      g[k] = q.q1[k] * s2 - q.q2[k] * s1 - d / eta[k];
      diag[k] = (q.q1[k] + q.q2[k]) * s1 * s2 + 1.0 / eta[k];
      if (k + 1 < n) {
        const double d_next = z[k + 1] - c0 * z[k];
        g[k] += c0 * d_next / eta[k + 1];
        diag[k] += c0 * c0 / eta[k + 1];
        off[k] = -c0 / eta[k + 1];
      }
      gmax = std::max(gmax, std::abs(g[k]));
      prev = z[k];
    }
    if (gmax < 1e-12) return;
    const auto step = solve_tridiagonal(diag, off, g);

    double t = 1.0;
    bool accepted = false;
    std::vector<double> trial(n);
    for (int h = 0; h <= kMaxHalvings; ++h) {
      for (std::size_t k = 0; k < n; ++k) trial[k] = z[k] + t * step[k];
      const double f_trial = z_objective(trial, q, eta, anchor, c0);
      if (f_trial >= f) {
        z = trial;
        f = f_trial;
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // At the optimum rounding noise can reject every step.
      if (gmax < 1e-8) return;
      throw NumericalError("em_smoother: Newton step failed after " + std::to_string(kMaxHalvings) +
                           " halvings (gradient norm " + std::to_string(gmax) + ")");
    }
    double smax = 0.0;
    for (double s : step) smax = std::max(smax, std::abs(t * s));
    if (smax < 1e-14) return;
  }
}

LogNormalParams weighted_lognormal(const std::vector<double>& x, const std::vector<double>& w) {
  double sw = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += w[i];
    mean += w[i] * std::log(clamp_magnitude(x[i]));
  }
  LogNormalParams p;
  if (!(sw > 0.0)) return p;
  mean /= sw;
  double var = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = std::log(clamp_magnitude(x[i])) - mean;
    var += w[i] * d * d;
  }
  p.mu = mean;
  p.sigma = std::max(std::sqrt(var / sw), kSigmaFloor);
  return p;
}

}  // namespace

void Hyper::check() const {
  if (!(std::abs(c0) <= 1.0)) throw ParameterError("ssm hyper: |c0| must be <= 1");
  if (!(a0 > 1.0)) throw ParameterError("ssm hyper: a0 must exceed 1");
  if (!(b0 > 0.0)) throw ParameterError("ssm hyper: b0 must be positive");
}

double attention_probability(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double clamp_magnitude(double rho) noexcept { return std::clamp(std::abs(rho), kMinMagnitude, 1.0); }

LogNormalParams fit_lognormal(std::span<const double> rho) {
  if (rho.size() < 2) throw DataError("fit_lognormal: need at least 2 samples");
  double mean = 0.0;
  for (double r : rho) mean += std::log(clamp_magnitude(r));
  mean /= static_cast<double>(rho.size());
  double var = 0.0;
  for (double r : rho) {
    const double d = std::log(clamp_magnitude(r)) - mean;
    var += d * d;
  }
  var /= static_cast<double>(rho.size());
  return {mean, std::max(std::sqrt(var), kSigmaFloor)};
}

double observation_loglik(double rho, const LogNormalParams& p) noexcept {
  const double x = clamp_magnitude(rho);
  const double lx = std::log(x);
  const double u = (lx - p.mu) / p.sigma;
  return -std::log(x * p.sigma * std::sqrt(2.0 * std::numbers::pi)) - 0.5 * u * u;
}

double map_objective(std::span<const double> rho1, std::span<const double> rho2, const State& state) {
  if (rho1.size() != state.z.size() || rho2.size() != state.z.size() || state.eta.size() != state.z.size())
    throw ParameterError("map_objective: window sizes differ");
  return objective(evidence(rho1, rho2, state.attended, state.unattended), state);
}

EmResult em_smoother(std::span<const double> rho1, std::span<const double> rho2, const State& init,
                     const EmOptions& options) {
  const std::size_t n = init.z.size();
  if (n == 0 || rho1.size() != n || rho2.size() != n || init.eta.size() != n)
    throw ParameterError("em_smoother: window sizes differ");
  init.hyper.check();
  if (options.iterations < 0) throw ParameterError("em_smoother: iterations must be >= 0");
  for (std::size_t k = 0; k < n; ++k) {
    if (!(init.eta[k] > 0.0) || !std::isfinite(init.z[k]))
      throw ParameterError("em_smoother: eta must be positive and z finite");
    if (!std::isfinite(rho1[k]) || !std::isfinite(rho2[k])) throw ParameterError("em_smoother: non-finite rho");
  }
  if (!(init.attended.sigma > 0.0) || !(init.unattended.sigma > 0.0))
    throw ParameterError("em_smoother: Log-Normal sigma must be positive");

  EmResult out;
  out.state = init;
  State& s = out.state;
  const Hyper& h = s.hyper;
  Evidence ev = evidence(rho1, rho2, s.attended, s.unattended);
  out.objective_trace.push_back(objective(ev, s));

  Responsibilities q{std::vector<double>(n), std::vector<double>(n)};
  for (int sweep = 0; sweep < options.iterations; ++sweep) {
    for (std::size_t k = 0; k < n; ++k) {
      const double a = log_sigmoid(s.z[k]) + ev.la[k];
      const double b = log_sigmoid(-s.z[k]) + ev.lb[k];
      q.q1[k] = attention_probability(a - b);
      q.q2[k] = attention_probability(b - a);
    }
    maximize_z(s.z, q, s.eta, s.anchor, h.c0);
    double prev = s.anchor;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = s.z[k] - h.c0 * prev;
      s.eta[k] = (h.b0 + 0.5 * d * d) / (h.a0 + 1.5);
      prev = s.z[k];
    }
    if (options.refit_unattended) {
      // Unattended magnitudes: rho2 when speaker 1 is attended, rho1 otherwise.
      std::vector<double> x(2 * n), w(2 * n);
      for (std::size_t k = 0; k < n; ++k) {
        x[2 * k] = rho2[k];
        w[2 * k] = q.q1[k];
        x[2 * k + 1] = rho1[k];
        w[2 * k + 1] = q.q2[k];
      }
      s.unattended = weighted_lognormal(x, w);
      ev = evidence(rho1, rho2, s.attended, s.unattended);
    }
    out.objective_trace.push_back(objective(ev, s));
  }

  out.posterior.p1.resize(n);
  out.posterior.decision.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.posterior.p1[k] = attention_probability(s.z[k]);
    out.posterior.decision[k] = decode_window(out.posterior, k);
  }
  return out;
}

Speaker decode_window(const AttentionPosterior& posterior, std::size_t k_star) {
  if (k_star >= posterior.p1.size()) throw ParameterError("decode_window: k_star outside the window");
  return posterior.p1[k_star] > 0.5 ? Speaker::One : Speaker::Two;
}

void OnlineConfig::check() const {
  hyper.check();
  if (k_p < 0 || k_a < 0) throw ParameterError("ssm: K_P and K_A must be non-negative");
  if (em_iterations < 0) throw ParameterError("ssm: EM iterations must be non-negative");
  if (!(init_span_s > 0.0)) throw ParameterError("ssm: init span must be positive");
}

ObservationModels fit_observation_models(const CorrelationSeries& series, std::span<const Speaker> truth,
                                         double init_span_s) {
  if (truth.size() != series.size()) throw ParameterError("fit_observation_models: one label per window required");
  const double window_s = static_cast<double>(series.spec.length_samples) / series.spec.rate;
  std::vector<double> att, un;
  for (std::size_t k = 0; k < series.size(); ++k) {
    if (series.t_start[k] + window_s > init_span_s + 1e-9) break;
    const bool one = truth[k] == Speaker::One;
    att.push_back(one ? series.rho1[k] : series.rho2[k]);
    un.push_back(one ? series.rho2[k] : series.rho1[k]);
  }
  if (att.size() < 2)
    throw LengthError("fit_observation_models: fewer than 2 correlation windows inside the initialization span");
  ObservationModels m;
  m.attended = fit_lognormal(att);
  m.unattended = fit_lognormal(un);
  m.init_windows = att.size();
  return m;
}

OnlineTrace run_online(const CorrelationSeries& series, const ObservationModels& models, const OnlineConfig& config) {
  config.check();
  const std::size_t len = static_cast<std::size_t>(config.window_length());
  const std::size_t n = series.size();
  if (n < len)
    throw LengthError("run_online: series of " + std::to_string(n) + " windows is shorter than the smoothing window");

  OnlineTrace trace;
  trace.models = models;
  const std::span<const double> r1(series.rho1);
  const std::span<const double> r2(series.rho2);
  const EmOptions options{config.em_iterations, config.refit_unattended};

  State state;
  state.hyper = config.hyper;
  state.attended = models.attended;
  state.unattended = models.unattended;
  state.anchor = 0.0;
  state.z.assign(len, 0.0);
  state.eta.assign(len, config.hyper.eta_prior_mode());

  const std::size_t k_star_offset = static_cast<std::size_t>(config.k_p);
  for (std::size_t k0 = len - 1; k0 < n; ++k0) {
    const std::size_t first = k0 + 1 - len;
    const auto result = em_smoother(r1.subspan(first, len), r2.subspan(first, len), state, options);
    const std::size_t k_star = first + k_star_offset;
    trace.instant.push_back(k_star);
    trace.t_s.push_back(series.t_start[k_star]);
    trace.p1.push_back(result.posterior.p1[k_star_offset]);
    trace.z.push_back(result.state.z[k_star_offset]);
    trace.eta.push_back(result.state.eta[k_star_offset]);
    trace.decision.push_back(result.posterior.decision[k_star_offset]);

    // Warm start: shift by one instant; the dropped state becomes the anchor.
    const State& prev = result.state;
    state.anchor = prev.z.front();
    state.unattended = prev.unattended;
    for (std::size_t i = 0; i + 1 < len; ++i) {
      state.z[i] = prev.z[i + 1];
      state.eta[i] = prev.eta[i + 1];
    }
    state.z[len - 1] = prev.z.back();
    state.eta[len - 1] = config.hyper.eta_prior_mode();
  }
  return trace;
}

OnlineTrace run_online(const CorrelationSeries& series, std::span<const Speaker> oracle_labels,
                       const OnlineConfig& config) {
  config.check();
  return run_online(series, fit_observation_models(series, oracle_labels, config.init_span_s), config);
}

void write_posterior_csv(const OnlineTrace& trace, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "instant,t_s,p1,z,eta,decision\n" << std::setprecision(17);
  for (std::size_t i = 0; i < trace.instant.size(); ++i)
    os << trace.instant[i] << ',' << trace.t_s[i] << ',' << trace.p1[i] << ',' << trace.z[i] << ',' << trace.eta[i]
       << ',' << to_int(trace.decision[i]) << '\n';
}

}  // namespace aadkit::ssm

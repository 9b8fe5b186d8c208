#include "aadkit/error.hpp"
#include "aadkit/ssm.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace aadkit;
using namespace aadkit::ssm;

namespace {

State window_state(std::size_t n, LogNormalParams att, LogNormalParams un, double anchor = 0.0) {
  State s;
  s.z.assign(n, anchor);
  s.eta.assign(n, s.hyper.eta_prior_mode());
  s.attended = att;
  s.unattended = un;
  s.anchor = anchor;
  return s;
}

oracle::SsmProblem as_problem(std::span<const double> r1, std::span<const double> r2, const State& s) {
  oracle::SsmProblem p;
  for (std::size_t k = 0; k < r1.size(); ++k) {
    p.la.push_back(oracle::lognormal_logpdf(r1[k], s.attended.mu, s.attended.sigma) +
                   oracle::lognormal_logpdf(r2[k], s.unattended.mu, s.unattended.sigma));
    p.lb.push_back(oracle::lognormal_logpdf(r1[k], s.unattended.mu, s.unattended.sigma) +
                   oracle::lognormal_logpdf(r2[k], s.attended.mu, s.attended.sigma));
  }
  p.anchor = s.anchor;
  p.c0 = s.hyper.c0;
  p.a0 = s.hyper.a0;
  p.b0 = s.hyper.b0;
  return p;
}

const LogNormalParams kAtt{std::log(0.2), 0.5};
const LogNormalParams kUn{std::log(0.05), 0.5};

}  // namespace

TEST(SsmLink, Values) {
  EXPECT_EQ(attention_probability(0.0), 0.5);
  EXPECT_NEAR(attention_probability(1.0), 0.7310585786, 1e-9);
  EXPECT_NEAR(attention_probability(40.0), 1.0, 1e-15);
  EXPECT_NEAR(attention_probability(-40.0), 0.0, 1e-15);
  double prev = 0.0;
  for (double z = -10.0; z <= 10.0; z += 0.25) {
    const double p = attention_probability(z);
    EXPECT_GT(p, prev);
    EXPECT_NEAR(p + attention_probability(-z), 1.0, 1e-15);
    prev = p;
  }
}

TEST(SsmHyper, Validation) {
  Hyper h;
  EXPECT_NO_THROW(h.check());
  EXPECT_EQ(h.c0, 1.0);
  EXPECT_EQ(h.a0, 2.008);
  EXPECT_EQ(h.b0, 0.2016);
  h.c0 = 1.5;
  EXPECT_THROW(h.check(), ParameterError);
  h = Hyper{};
  h.a0 = 1.0;
  EXPECT_THROW(h.check(), ParameterError);
  h = Hyper{};
  h.b0 = 0.0;
  EXPECT_THROW(h.check(), ParameterError);
}

TEST(SsmLogNormal, EqualSamplesFloorSigma) {
  const std::vector<double> x(10, 0.5);
  const auto p = fit_lognormal(x);
  EXPECT_NEAR(p.mu, std::log(0.5), 1e-15);
  EXPECT_EQ(p.sigma, 1e-3);
}

TEST(SsmLogNormal, RecoversSampledParameters) {
  std::mt19937_64 rng(42);
  std::lognormal_distribution<double> d(-2.0, 0.5);
  std::vector<double> x(100000);
  for (double& v : x) v = d(rng);
  const auto p = fit_lognormal(x);
  EXPECT_NEAR(p.mu, -2.0, 0.01);
  EXPECT_NEAR(p.sigma, 0.5, 0.01);
}

TEST(SsmLogNormal, SignAndClampHandling) {
  const std::vector<double> x{-0.3, 0.3};
  const auto p = fit_lognormal(x);
  EXPECT_NEAR(p.mu, std::log(0.3), 1e-15);
  EXPECT_EQ(clamp_magnitude(0.0), 1e-6);
  EXPECT_EQ(clamp_magnitude(-2.0), 1.0);
  EXPECT_TRUE(std::isfinite(observation_loglik(0.0, kAtt)));
  EXPECT_THROW(fit_lognormal(std::vector<double>{0.4}), DataError);
  EXPECT_THROW(fit_lognormal(std::vector<double>{}), DataError);
}

TEST(SsmLogNormal, LoglikAtMode) {
  const LogNormalParams p{-1.3, 0.7};
  EXPECT_NEAR(observation_loglik(std::exp(p.mu), p), -p.mu - std::log(p.sigma * std::sqrt(2.0 * oracle::kPi)), 1e-12);
  EXPECT_NEAR(observation_loglik(-0.4, p), oracle::lognormal_logpdf(0.4, p.mu, p.sigma), 1e-14);
}

TEST(SsmLogNormal, DensityIntegratesToOne) {
  // Mass above the clamp at 1 is negligible for these parameters; integrate in log x.
  const LogNormalParams p{-3.0, 0.4};
  const double lo = p.mu - 12.0 * p.sigma, hi = 0.0;
  const int n = 20000;
  const double h = (hi - lo) / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double u = lo + h * i;
    const double f = std::exp(observation_loglik(std::exp(u), p) + u);
    sum += (i == 0 || i == n) ? 0.5 * f : f;
  }
  EXPECT_NEAR(sum * h, 1.0, 1e-6);
}

TEST(SsmLogNormal, LikelihoodRatioMonotone) {
  for (double x = 0.15; x < 1.0; x += 0.05) EXPECT_GT(observation_loglik(x, kAtt), observation_loglik(x, kUn));
}

TEST(SsmEm, SymmetricEvidenceStaysUndecided) {
  const std::vector<double> r{0.1, 0.07, 0.12};
  const auto res = em_smoother(r, r, window_state(3, kAtt, kUn));
  for (double p : res.posterior.p1) EXPECT_NEAR(p, 0.5, 1e-9);
  for (Speaker d : res.posterior.decision) EXPECT_EQ(d, Speaker::Two);
}

TEST(SsmEm, ObjectiveIsNonDecreasing) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.4, 0.4), z0(-3.0, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3 + static_cast<std::size_t>(trial % 5);
    std::vector<double> r1(n), r2(n);
    for (std::size_t k = 0; k < n; ++k) {
      r1[k] = u(rng);
      r2[k] = u(rng);
    }
    State s = window_state(n, kAtt, kUn, z0(rng));
    for (double& z : s.z) z = z0(rng);
    const auto res = em_smoother(r1, r2, s, EmOptions{20, trial % 2 == 1});
    ASSERT_EQ(res.objective_trace.size(), 21u);
    for (std::size_t i = 1; i < res.objective_trace.size(); ++i)
      EXPECT_GE(res.objective_trace[i], res.objective_trace[i - 1] - 1e-9) << "trial " << trial << " sweep " << i;
    EXPECT_NEAR(res.objective_trace.back(), map_objective(r1, r2, res.state), 1e-9);
    for (double e : res.state.eta) EXPECT_GT(e, 0.0);
  }
}

TEST(SsmEm, EtaIsProfiledMaximizer) {
  const std::vector<double> r1{0.2, 0.18, 0.25}, r2{0.05, 0.07, 0.04};
  const auto res = em_smoother(r1, r2, window_state(3, kAtt, kUn, 1.0));
  const auto& s = res.state;
  double prev = s.anchor;
  for (std::size_t k = 0; k < 3; ++k) {
    const double d = s.z[k] - s.hyper.c0 * prev;
    EXPECT_NEAR(s.eta[k], (s.hyper.b0 + 0.5 * d * d) / (s.hyper.a0 + 1.5), 1e-12);
    prev = s.z[k];
  }
}

TEST(SsmEm, StrongEvidenceAgreesWithGridOracle) {
  const std::vector<double> r1{0.2, 0.22, 0.18}, r2{0.05, 0.04, 0.06};
  const State init = window_state(3, kAtt, kUn, 3.0);
  const auto res = em_smoother(r1, r2, init, EmOptions{500});
  const auto z = oracle::grid_map(as_problem(r1, r2, init));
  EXPECT_GT(res.posterior.p1[1], 0.9);
  for (std::size_t k = 0; k < 3; ++k)
    EXPECT_NEAR(res.posterior.p1[k], attention_probability(z[k]), 1e-3) << "instant " << k;
  EXPECT_EQ(decode_window(res.posterior, 1), Speaker::One);
}

TEST(SsmEm, RandomWindowsAgreeWithGridOracle) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 0.08);
  std::uniform_real_distribution<double> a(-2.0, 2.0);
  int agree = 0;
  const int trials = 15;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> r1(3), r2(3);
    for (int k = 0; k < 3; ++k) {
      r1[k] = 0.1 + g(rng);
      r2[k] = 0.1 + g(rng);
    }
    const State init = window_state(3, kAtt, kUn, a(rng));
    const auto res = em_smoother(r1, r2, init, EmOptions{200});
    const auto z = oracle::grid_map(as_problem(r1, r2, init));
    if ((res.posterior.p1[1] > 0.5) == (z[1] > 0.0)) ++agree;
    EXPECT_NEAR(res.posterior.p1[1], attention_probability(z[1]), 1e-2) << "trial " << t;
  }
  EXPECT_EQ(agree, trials);
}

TEST(SsmEm, InvalidInputs) {
  const std::vector<double> r{0.1, 0.2, 0.3};
  const std::vector<double> r2{0.1, 0.2};
  EXPECT_THROW(em_smoother(r, r2, window_state(3, kAtt, kUn)), ParameterError);
  State bad = window_state(3, kAtt, kUn);
  bad.eta[1] = 0.0;
  EXPECT_THROW(em_smoother(r, r, bad), ParameterError);
  bad = window_state(3, kAtt, kUn);
  bad.attended.sigma = 0.0;
  EXPECT_THROW(em_smoother(r, r, bad), ParameterError);
}

TEST(SsmDecode, TieRule) {
  AttentionPosterior post;
  post.p1 = {0.94, 0.5, 0.4999};
  EXPECT_EQ(decode_window(post, 0), Speaker::One);
  EXPECT_EQ(decode_window(post, 1), Speaker::Two);
  EXPECT_EQ(decode_window(post, 2), Speaker::Two);
}

namespace {

// Correlation series with a known attention sequence: the attended stream
// draws around 0.2, the unattended around 0.
CorrelationSeries labelled_series(std::size_t n, std::size_t switch_at, std::uint64_t seed, double noise,
                                  std::vector<Speaker>& truth) {
  CorrelationSeries s;
  s.spec = WindowSpec::from_seconds(5.0, 4.5, 64.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, noise);
  truth.clear();
  for (std::size_t k = 0; k < n; ++k) {
    const Speaker att = k < switch_at ? Speaker::One : Speaker::Two;
    truth.push_back(att);
    const double a = 0.2 + g(rng), u = g(rng);
    s.rho1.push_back(att == Speaker::One ? a : u);
    s.rho2.push_back(att == Speaker::One ? u : a);
    s.t_start.push_back(s.spec.start_time(k));
    s.undefined.push_back(false);
  }
  return s;
}

}  // namespace

TEST(SsmOnline, InitializationWindowsInFifteenSeconds) {
  std::vector<Speaker> truth;
  const auto s = labelled_series(100, 100, 1, 0.05, truth);
  EXPECT_EQ(s.spec.length_samples, 320u);
  EXPECT_EQ(s.spec.hop_samples, 32u);
  const auto m = fit_observation_models(s, truth, 15.0);
  EXPECT_EQ(m.init_windows, 21u);
  EXPECT_GT(m.attended.mu, m.unattended.mu);
  EXPECT_THROW(fit_observation_models(s, truth, 5.2), LengthError);
}

TEST(SsmOnline, TracksSwitch) {
  std::vector<Speaker> truth;
  const auto s = labelled_series(400, 200, 7, 0.08, truth);
  OnlineConfig cfg;
  const auto trace = run_online(s, truth, cfg);
  ASSERT_EQ(trace.instant.size(), 398u);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < trace.instant.size(); ++i) {
    EXPECT_EQ(trace.instant[i], i + 1);
    EXPECT_GT(trace.p1[i], 0.0);
    EXPECT_LT(trace.p1[i], 1.0);
    if (trace.decision[i] == truth[trace.instant[i]]) ++correct;
  }
  EXPECT_GT(static_cast<double>(correct) / trace.instant.size(), 0.9);
}

TEST(SsmOnline, DecodesMiddleInstant) {
  std::vector<Speaker> truth;
  const auto s = labelled_series(60, 60, 2, 0.05, truth);
  OnlineConfig cfg;
  cfg.k_p = 2;
  cfg.k_a = 1;
  const auto trace = run_online(s, truth, cfg);
  ASSERT_EQ(trace.instant.size(), 57u);
  EXPECT_EQ(trace.instant.front(), 2u);
  EXPECT_EQ(trace.instant.back(), 58u);
  EXPECT_DOUBLE_EQ(trace.t_s.front(), s.t_start[2]);
}

TEST(SsmOnline, LengthAndConfigErrors) {
  std::vector<Speaker> truth;
  const auto s = labelled_series(2, 2, 1, 0.05, truth);
  ObservationModels m{kAtt, kUn, 0};
  EXPECT_THROW(run_online(s, m, OnlineConfig{}), LengthError);
  OnlineConfig bad;
  bad.k_p = -1;
  EXPECT_THROW(bad.check(), ParameterError);
  std::vector<Speaker> wrong(1, Speaker::One);
  const auto longer = labelled_series(100, 100, 1, 0.05, truth);
  EXPECT_THROW(fit_observation_models(longer, wrong, 15.0), ParameterError);
}

TEST(SsmProperties, SwappingStreamsMirrorsPosterior) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> r1(3), r2(3);
    for (int k = 0; k < 3; ++k) {
      r1[k] = u(rng);
      r2[k] = u(rng);
    }
    const auto a = em_smoother(r1, r2, window_state(3, kAtt, kUn));
    const auto b = em_smoother(r2, r1, window_state(3, kAtt, kUn));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(a.posterior.p1[k], 1.0 - b.posterior.p1[k], 1e-12);
  }
}

TEST(SsmProperties, StrongerAttendedEvidenceRaisesPosterior) {
  const std::vector<double> r2{0.06, 0.05, 0.07};
  double prev = 0.0;
  for (double x = 0.02; x <= 0.5; x += 0.02) {
    const std::vector<double> r1{0.1, x, 0.1};
    const double p = em_smoother(r1, r2, window_state(3, kAtt, kUn)).posterior.p1[1];
    EXPECT_GE(p, prev - 1e-12) << "x = " << x;
    prev = p;
  }
}

TEST(SsmProperties, EtaLimitForConstantState) {
  // Symmetric evidence keeps z at the anchor, so every increment is zero.
  const std::vector<double> r{0.1, 0.1, 0.1};
  const auto res = em_smoother(r, r, window_state(3, kAtt, kUn));
  const Hyper h;
  for (double e : res.state.eta) EXPECT_DOUBLE_EQ(e, h.b0 / (h.a0 + 1.5));
}

TEST(SsmOnline, ConstantEvidenceDecodesSpeakerOne) {
  std::vector<Speaker> truth;
  const auto s = labelled_series(120, 120, 4, 0.0, truth);
  ObservationModels m{kAtt, kUn, 0};
  const auto trace = run_online(s, m, OnlineConfig{});
  for (Speaker d : trace.decision) EXPECT_EQ(d, Speaker::One);
}

namespace {

std::size_t switch_latency(const OnlineTrace& trace, std::size_t sw) {
  for (std::size_t i = 0; i < trace.instant.size(); ++i)
    if (trace.instant[i] >= sw && trace.decision[i] == Speaker::Two) return trace.instant[i] - sw;
  return trace.instant.size();
}

}  // namespace

// Per instant the logistic evidence moves z by at most about eta, so after a
// long steady stretch the default prior (eta near 0.058) needs tens of instants
// to cross back. A prior five times looser crosses within five.
TEST(SsmOnline, SwitchLatency) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<Speaker> truth;
    const std::size_t sw = 150;
    const auto s = labelled_series(300, sw, seed, 0.05, truth);
    const auto base = run_online(s, truth, OnlineConfig{});
    EXPECT_LE(switch_latency(base, sw), 40u) << "seed " << seed;
    for (std::size_t i = 0; i < base.instant.size(); ++i)
      if (base.instant[i] >= sw + 40) {
        EXPECT_EQ(base.decision[i], Speaker::Two);
      }
    OnlineConfig loose;
    loose.hyper.b0 = 1.0;
    EXPECT_LE(switch_latency(run_online(s, truth, loose), sw), 5u) << "seed " << seed;
  }
}

TEST(SsmOnline, PosteriorCsvHeader) {
  std::vector<Speaker> truth;
  const auto s = labelled_series(60, 60, 2, 0.05, truth);
  const auto trace = run_online(s, truth, OnlineConfig{});
  const auto path = std::filesystem::temp_directory_path() / "aadkit_posterior.csv";
  write_posterior_csv(trace, path);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, "instant,t_s,p1,z,eta,decision");
  std::filesystem::remove(path);
}

#include "aadkit/corrwin.hpp"
#include "aadkit/dsp.hpp"
#include "aadkit/lagspace.hpp"
#include "aadkit/lsdecoder.hpp"
#include "aadkit/nndecoder.hpp"
#include "aadkit/ssm.hpp"

#include <benchmark/benchmark.h>

#include <cmath>
#include <random>

using namespace aadkit;

namespace {

MultichannelSignal noise_eeg(int channels, Eigen::Index samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  MultichannelSignal x;
  x.rate = 64.0;
  x.data.resize(channels, samples);
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = g(rng);
  return x;
}

Envelope noise_envelope(Eigen::Index samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Envelope e{std::vector<double>(static_cast<std::size_t>(samples)), 64.0};
  for (double& v : e.samples) v = g(rng);
  return e;
}

}  // namespace

// 64 channels, one minute at 64 Hz.
static void BM_Filtfilt(benchmark::State& state) {
  const auto x = noise_eeg(64, 3840, 1);
  const auto f = dsp::design_butterworth_bandpass(3, 2.0, 8.0, 64.0);
  for (auto _ : state) benchmark::DoNotOptimize(dsp::filtfilt(f, x));
  state.SetItemsProcessed(state.iterations() * x.data.size());
}
BENCHMARK(BM_Filtfilt);

static void BM_HilbertEnvelope(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  SampledSignal x{std::vector<double>(static_cast<std::size_t>(state.range(0))), 8000.0};
  for (double& v : x.samples) v = g(rng);
  for (auto _ : state) benchmark::DoNotOptimize(dsp::hilbert_envelope(x));
}
BENCHMARK(BM_HilbertEnvelope)->Arg(1 << 14)->Arg(480000);

// Moment accumulation over C channels with delta = 20.
static void BM_Moments(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const auto lag = build_lag_matrix(noise_eeg(channels, 3840 + 20, 3), 20);
  const auto env = noise_envelope(lag.rows(), 4);
  for (auto _ : state) benchmark::DoNotOptimize(ls::accumulate_moments(lag, env));
}
BENCHMARK(BM_Moments)->Arg(16)->Arg(64);

static void BM_SolveEstimator(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const auto lag = build_lag_matrix(noise_eeg(channels, 3840 + 20, 5), 20);
  const auto m = ls::accumulate_moments(lag, noise_envelope(lag.rows(), 6));
  const auto D = ls::build_derivative_regularizer(channels, 20);
  for (auto _ : state) benchmark::DoNotOptimize(ls::solve_estimator(m, D, 1.0));
}
BENCHMARK(BM_SolveEstimator)->Arg(16)->Arg(64);

// Loss and gradients on one 60 s batch window, F = 5.
static void BM_NnGradients(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const auto lag = build_lag_matrix(noise_eeg(channels, 3840 + 20, 7), 20);
  const auto env = noise_envelope(lag.rows(), 8);
  const auto net = nn::init_network(channels, 20, 5, 9);
  for (auto _ : state) benchmark::DoNotOptimize(nn::loss_and_gradients(net, lag, env));
}
BENCHMARK(BM_NnGradients)->Arg(16)->Arg(64);

static void BM_WindowedCorrelations(benchmark::State& state) {
  const auto r = noise_envelope(64 * 600, 10), e1 = noise_envelope(64 * 600, 11), e2 = noise_envelope(64 * 600, 12);
  const auto spec = WindowSpec::from_seconds(5.0, 4.5, 64.0);
  for (auto _ : state) benchmark::DoNotOptimize(windowed_correlations(r, e1, e2, spec));
}
BENCHMARK(BM_WindowedCorrelations);

// One EM window of K_SSM = 3, 20 sweeps.
static void BM_EmWindow(benchmark::State& state) {
  ssm::State s;
  s.z.assign(3, 0.5);
  s.eta.assign(3, s.hyper.eta_prior_mode());
  s.attended = {std::log(0.15), 0.6};
  s.unattended = {std::log(0.05), 0.8};
  const std::vector<double> r1{0.18, 0.12, 0.2}, r2{0.03, 0.08, -0.02};
  for (auto _ : state) benchmark::DoNotOptimize(ssm::em_smoother(r1, r2, s));
}
BENCHMARK(BM_EmWindow);
BENCHMARK_MAIN();

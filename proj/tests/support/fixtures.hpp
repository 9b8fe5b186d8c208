#pragma once

// Test helpers that build inputs through the library.

#include "aadkit/lagspace.hpp"
#include "aadkit/nndecoder.hpp"
#include "aadkit/types.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace fixture {

inline aadkit::MultichannelSignal gaussian_signal(int channels, Eigen::Index samples, std::uint64_t seed,
                                                  double rate = 64.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  aadkit::MultichannelSignal x;
  x.rate = rate;
  x.data.resize(channels, samples);
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = g(rng);
  return x;
}

inline aadkit::Envelope gaussian_envelope(Eigen::Index samples, std::uint64_t seed, double rate = 64.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  aadkit::Envelope e;
  e.rate = rate;
  e.samples.resize(static_cast<std::size_t>(samples));
  for (double& v : e.samples) v = g(rng);
  return e;
}

struct GradCheck {
  double worst_rel = 0.0;
  Eigen::Index worst_index = -1;
};

// 1 - pearson(e, y) for the network output, evaluated independently of the
// library in extended precision so that central differences at h = 1e-6 are
// not dominated by rounding.
inline long double reference_loss(const aadkit::nn::ConvEstimator& net, const aadkit::LagMatrix& lag,
                                  const aadkit::Envelope& env, const aadkit::nn::DropoutMask* mask) {
  using LD = long double;
  const Eigen::Index n = lag.rows();
  std::vector<LD> y(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) {
    LD out = net.b_out;
    for (Eigen::Index f = 0; f < net.W.rows(); ++f) {
      LD a = net.b(f);
      for (Eigen::Index j = 0; j < net.W.cols(); ++j) a += static_cast<LD>(net.W(f, j)) * lag.values(k, j);
      LD scale = net.v(f);
      if (mask) scale = scale * mask->keep(f) / (1.0L - mask->rate);
      out += scale * std::tanh(a);
    }
    y[static_cast<std::size_t>(k)] = out;
  }
  LD me = 0, my = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    me += env.samples[static_cast<std::size_t>(k)];
    my += y[static_cast<std::size_t>(k)];
  }
  me /= n;
  my /= n;
  LD sxy = 0, sxx = 0, syy = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const LD de = env.samples[static_cast<std::size_t>(k)] - me, dy = y[static_cast<std::size_t>(k)] - my;
    sxy += de * dy;
    sxx += de * de;
    syy += dy * dy;
  }
  return 1.0L - sxy / std::sqrt(sxx * syy);
}

// Central differences of the whole-window correlation loss compared with the
// library's backward pass. Relative error per entry: |a - n| / max(|a|, |n|, floor).
inline GradCheck check_gradients(const aadkit::nn::ConvEstimator& net, const aadkit::LagMatrix& lag,
                                 const aadkit::Envelope& env, const aadkit::nn::DropoutMask* mask,
                                 double h = 1e-6, double floor = 1e-9) {
  using namespace aadkit::nn;
  const Eigen::VectorXd analytic = pack(loss_and_gradients(net, lag, env, mask).grad);
  Eigen::VectorXd p = pack(net);
  ConvEstimator probe = net;
  auto loss_at = [&](const Eigen::VectorXd& q) {
    unpack(q, probe);
    return reference_loss(probe, lag, env, mask);
  };
  GradCheck out;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double saved = p(i);
    p(i) = saved + h;
    const long double up = loss_at(p);
    p(i) = saved - h;
    const long double down = loss_at(p);
    p(i) = saved;
    const double numeric = static_cast<double>((up - down) / (2.0L * h));
    const double rel = std::abs(analytic(i) - numeric) / std::max({std::abs(analytic(i)), std::abs(numeric), floor});
    if (rel > out.worst_rel) {
      out.worst_rel = rel;
      out.worst_index = i;
    }
  }
  return out;
}

}  // namespace fixture

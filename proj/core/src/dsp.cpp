#include "aadkit/dsp.hpp"

#include "aadkit/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>
#include <numeric>
#include <string>

namespace aadkit {

SampledSignal MultichannelSignal::channel(std::size_t c) const {
  SampledSignal out;
  out.rate = rate;
  out.samples.assign(data.row(static_cast<Eigen::Index>(c)).begin(),
                     data.row(static_cast<Eigen::Index>(c)).end());
  return out;
}

Speaker speaker_from_int(int label) {
  if (label == 1) return Speaker::One;
  if (label == 2) return Speaker::Two;
  throw ParameterError("speaker label must be 1 or 2, got " + std::to_string(label));
}

void validate(const SampledSignal& x, const char* what) {
  if (!(x.rate > 0.0) || !std::isfinite(x.rate))
    throw ParameterError(std::string(what) + ": sampling rate must be positive");
  for (double v : x.samples)
    if (!std::isfinite(v)) throw ParameterError(std::string(what) + ": non-finite sample");
}

void validate(const MultichannelSignal& x, const char* what) {
  if (!(x.rate > 0.0) || !std::isfinite(x.rate))
    throw ParameterError(std::string(what) + ": sampling rate must be positive");
  if (x.data.rows() < 1) throw ParameterError(std::string(what) + ": needs at least one channel");
  if (!x.data.allFinite()) throw ParameterError(std::string(what) + ": non-finite sample");
}

}  // namespace aadkit

namespace aadkit::dsp {

namespace {

using cplx = std::complex<double>;
constexpr double kPi = std::numbers::pi;

// Analog Butterworth prototype poles, unit cutoff.
std::vector<cplx> prototype_poles(int order) {
  std::vector<cplx> poles;
  poles.reserve(static_cast<std::size_t>(order));
  for (int k = 0; k < order; ++k) {
    const double theta = kPi * (2.0 * k + order + 1) / (2.0 * order);
    poles.push_back(std::polar(1.0, theta));
  }
  return poles;
}

cplx bilinear(cplx s, double fs2) { return (fs2 + s) / (fs2 - s); }

cplx section_response(const Biquad& s, double omega) {
  const cplx z1 = std::polar(1.0, -omega);
  const cplx z2 = z1 * z1;
  return (s.b0 + s.b1 * z1 + s.b2 * z2) / (1.0 + s.a1 * z1 + s.a2 * z2);
}

double pole_radius(double a1, double a2) {
  // Roots of z^2 + a1 z + a2.
  const cplx disc = std::sqrt(cplx(a1 * a1 - 4.0 * a2, 0.0));
  const cplx r1 = (-a1 + disc) / 2.0;
  const cplx r2 = (-a1 - disc) / 2.0;
  return std::max(std::abs(r1), std::abs(r2));
}

// Groups digital poles into first/second-order denominators: conjugate pairs
// together, real poles two at a time, a leftover real pole on its own.
std::vector<std::pair<double, double>> pole_sections(std::vector<cplx> poles) {
  constexpr double kImagTol = 1e-12;
  std::vector<double> reals;
  std::vector<cplx> upper;
  for (const cplx& p : poles) {
    if (std::abs(p.imag()) <= kImagTol * std::max(1.0, std::abs(p)))
      reals.push_back(p.real());
    else if (p.imag() > 0.0)
      upper.push_back(p);
  }
  std::vector<std::pair<double, double>> dens;
  for (const cplx& p : upper) dens.emplace_back(-2.0 * p.real(), std::norm(p));
  std::sort(reals.begin(), reals.end());
  std::size_t i = 0;
  for (; i + 1 < reals.size(); i += 2) dens.emplace_back(-(reals[i] + reals[i + 1]), reals[i] * reals[i + 1]);
  if (i < reals.size()) dens.emplace_back(-reals[i], 0.0);
  return dens;
}

void finalize(BiquadCascade& cascade, double ref_omega) {
  for (Biquad& s : cascade.sections) {
    const double g = std::abs(section_response(s, ref_omega));
    if (!(g > 0.0) || !std::isfinite(g)) throw NumericalError("filter design: degenerate section gain");
    s.b0 /= g;
    s.b1 /= g;
    s.b2 /= g;
  }
  std::stable_sort(cascade.sections.begin(), cascade.sections.end(),
                   [](const Biquad& a, const Biquad& b) { return a.max_pole_radius() < b.max_pole_radius(); });
  for (const Biquad& s : cascade.sections)
    if (!(s.max_pole_radius() < 1.0 - 1e-9)) throw NumericalError("filter design: unstable section");
}

// Steady-state transposed direct-form II states for a unit step at the input
// of the cascade. Entry i holds (z1, z2) of section i.
std::vector<std::array<double, 2>> step_initial_states(const BiquadCascade& c) {
  std::vector<std::array<double, 2>> zi;
  zi.reserve(c.sections.size());
  double scale = 1.0;
  for (const Biquad& s : c.sections) {
    const double gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double z2 = s.b2 - s.a2 * gain;
    const double z1 = s.b1 + s.b2 - (s.a1 + s.a2) * gain;
    zi.push_back({scale * z1, scale * z2});
    scale *= gain;
  }
  return zi;
}

void run_cascade(const BiquadCascade& c, std::vector<double>& x, const std::vector<std::array<double, 2>>& zi,
                 double zi_scale) {
  for (std::size_t si = 0; si < c.sections.size(); ++si) {
    const Biquad& s = c.sections[si];
    double z1 = zi.empty() ? 0.0 : zi[si][0] * zi_scale;
    double z2 = zi.empty() ? 0.0 : zi[si][1] * zi_scale;
    for (double& v : x) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
  }
}

std::vector<double> filtfilt_vector(const BiquadCascade& c, const std::vector<double>& x) {
  const std::size_t pad = 3 * static_cast<std::size_t>(c.total_order());
  const std::size_t n = x.size();
  if (n <= pad)
    throw LengthError("filtfilt: signal length " + std::to_string(n) + " must exceed padding " +
                      std::to_string(pad));
  if (n == 0) return {};
  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x.front() - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x.back() - x[n - 1 - i]);

  const auto zi = step_initial_states(c);
  run_cascade(c, ext, zi, ext.front());
  std::reverse(ext.begin(), ext.end());
  run_cascade(c, ext, zi, ext.front());
  std::reverse(ext.begin(), ext.end());
  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

// In-place complex DFT. sign = FFTW_FORWARD or FFTW_BACKWARD (unnormalized).
void fft_inplace(std::vector<cplx>& buf, int sign) {
  auto* data = reinterpret_cast<fftw_complex*>(buf.data());
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_plan_mutex());
    plan = fftw_plan_dft_1d(static_cast<int>(buf.size()), data, data, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  if (plan == nullptr) throw NumericalError("fft: plan creation failed");
  fftw_execute(plan);
  std::lock_guard lock(fftw_plan_mutex());
  fftw_destroy_plan(plan);
}

void check_rate_pair(double freq, double rate, const char* what) {
  if (!(freq > 0.0) || !(freq < rate / 2.0))
    throw ParameterError(std::string(what) + ": frequency must lie in (0, rate/2)");
}

std::vector<double> apply_resample(const std::vector<double>& x, double rate, int up, int down) {
  const double out_rate = rate * up / down;
  const double cutoff = 0.9 * std::min(rate, out_rate) / 2.0;
  const std::size_t n = x.size();
  std::vector<double> work;
  if (up > 1) {
    work.assign(n * static_cast<std::size_t>(up), 0.0);
    for (std::size_t i = 0; i < n; ++i) work[i * static_cast<std::size_t>(up)] = x[i] * up;
    const auto anti_image = design_butterworth_lowpass(3, cutoff, rate * up);
    work = filtfilt_vector(anti_image, work);
  } else {
    work = x;
  }
  if (down > 1) {
    const auto anti_alias = design_butterworth_lowpass(3, cutoff, rate * up);
    work = filtfilt_vector(anti_alias, work);
    const std::size_t m = (work.size() + static_cast<std::size_t>(down) - 1) / static_cast<std::size_t>(down);
    std::vector<double> out(m);
    for (std::size_t i = 0; i < m; ++i) out[i] = work[i * static_cast<std::size_t>(down)];
    return out;
  }
  return work;
}

std::pair<int, int> rational_factors(double rate, double target_rate) {
  const double r = std::round(rate);
  const double t = std::round(target_rate);
  if (std::abs(r - rate) > 1e-9 || std::abs(t - target_rate) > 1e-9 || r < 1.0 || t < 1.0)
    throw ParameterError("resample_to: rates must be positive integers in Hz");
  const long long g = std::gcd(static_cast<long long>(r), static_cast<long long>(t));
  return {static_cast<int>(static_cast<long long>(t) / g), static_cast<int>(static_cast<long long>(r) / g)};
}

}  // namespace

double Biquad::max_pole_radius() const { return pole_radius(a1, a2); }

int BiquadCascade::total_order() const noexcept {
  int total = 0;
  for (const Biquad& s : sections) total += s.order();
  return total;
}

BiquadCascade design_butterworth_bandpass(int order, double low_hz, double high_hz, double rate) {
  if (order < 1) throw ParameterError("butterworth band-pass: order must be positive");
  if (!(rate > 0.0) || !(low_hz > 0.0) || !(low_hz < high_hz) || !(high_hz < rate / 2.0))
    throw ParameterError("butterworth band-pass: need 0 < low_hz < high_hz < rate/2");

  const double fs2 = 2.0 * rate;
  const double wl = fs2 * std::tan(kPi * low_hz / rate);
  const double wh = fs2 * std::tan(kPi * high_hz / rate);
  const double bw = wh - wl;
  const double w0 = std::sqrt(wl * wh);

  std::vector<cplx> digital;
  for (const cplx& p : prototype_poles(order)) {
    const cplx a = p * (bw / 2.0);
    const cplx d = std::sqrt(a * a - w0 * w0);
    digital.push_back(bilinear(a + d, fs2));
    digital.push_back(bilinear(a - d, fs2));
  }

  BiquadCascade c;
  c.kind = FilterKind::BandPass;
  c.prototype_order = order;
  c.low_hz = low_hz;
  c.high_hz = high_hz;
  c.rate = rate;
  for (const auto& [a1, a2] : pole_sections(digital)) {
    // One zero at DC and one at Nyquist per section.
    c.sections.push_back(Biquad{1.0, 0.0, -1.0, a1, a2});
  }
  finalize(c, 2.0 * std::atan(w0 / fs2));
  return c;
}

BiquadCascade design_butterworth_lowpass(int order, double cutoff_hz, double rate) {
  if (order < 1) throw ParameterError("butterworth low-pass: order must be positive");
  if (!(rate > 0.0)) throw ParameterError("butterworth low-pass: rate must be positive");
  check_rate_pair(cutoff_hz, rate, "butterworth low-pass");

  const double fs2 = 2.0 * rate;
  const double wc = fs2 * std::tan(kPi * cutoff_hz / rate);
  std::vector<cplx> digital;
  for (const cplx& p : prototype_poles(order)) digital.push_back(bilinear(p * wc, fs2));

  BiquadCascade c;
  c.kind = FilterKind::LowPass;
  c.prototype_order = order;
  c.high_hz = cutoff_hz;
  c.rate = rate;
  for (const auto& [a1, a2] : pole_sections(digital)) {
    if (a2 == 0.0)
      c.sections.push_back(Biquad{1.0, 1.0, 0.0, a1, 0.0});
    else
      c.sections.push_back(Biquad{1.0, 2.0, 1.0, a1, a2});
  }
  finalize(c, 0.0);
  return c;
}

double magnitude_response(const BiquadCascade& cascade, double freq_hz) {
  const double omega = 2.0 * kPi * freq_hz / cascade.rate;
  double mag = 1.0;
  for (const Biquad& s : cascade.sections) mag *= std::abs(section_response(s, omega));
  return mag;
}

std::vector<double> sosfilt(const BiquadCascade& cascade, const std::vector<double>& x) {
  std::vector<double> y = x;
  run_cascade(cascade, y, {}, 0.0);
  return y;
}

SampledSignal filtfilt(const BiquadCascade& cascade, const SampledSignal& x) {
  validate(x, "filtfilt");
  return {filtfilt_vector(cascade, x.samples), x.rate};
}

MultichannelSignal filtfilt(const BiquadCascade& cascade, const MultichannelSignal& x) {
  validate(x, "filtfilt");
  MultichannelSignal out{RowMatrix(x.data.rows(), x.data.cols()), x.rate};
  std::vector<double> row(static_cast<std::size_t>(x.data.cols()));
  for (Eigen::Index c = 0; c < x.data.rows(); ++c) {
    std::copy(x.data.row(c).begin(), x.data.row(c).end(), row.begin());
    const auto y = filtfilt_vector(cascade, row);
    std::copy(y.begin(), y.end(), out.data.row(c).begin());
  }
  return out;
}

MultichannelSignal common_average_reference(const MultichannelSignal& x) {
  validate(x, "common_average_reference");
  if (x.data.rows() < 2) throw ParameterError("common_average_reference: needs at least two channels");
  MultichannelSignal out{x.data, x.rate};
  const Eigen::RowVectorXd mean = x.data.colwise().mean();
  out.data.rowwise() -= mean;
  return out;
}

SampledSignal hilbert_envelope(const SampledSignal& x) {
  validate(x, "hilbert_envelope");
  const std::size_t n = x.size();
  if (n < 8) throw LengthError("hilbert_envelope: need at least 8 samples");

  std::vector<cplx> buf(x.samples.begin(), x.samples.end());
  fft_inplace(buf, FFTW_FORWARD);
  // Analytic-signal mask: keep DC (and Nyquist for even n), double positive
  // frequencies, zero negative ones.
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < n; ++k) {
    if (k < half || (k == half && n % 2 == 1))
      buf[k] *= 2.0;
    else if (k > half)
      buf[k] = 0.0;
  }
  fft_inplace(buf, FFTW_BACKWARD);
  SampledSignal out;
  out.rate = x.rate;
  out.samples.resize(n);
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) out.samples[k] = std::abs(buf[k]) * inv;
  return out;
}

SampledSignal decimate(const SampledSignal& x, int factor) {
  if (factor < 1) throw ParameterError("decimate: factor must be >= 1");
  validate(x, "decimate");
  if (factor == 1) return x;
  return {apply_resample(x.samples, x.rate, 1, factor), x.rate / factor};
}

SampledSignal resample(const SampledSignal& x, int up, int down) {
  if (up < 1 || down < 1) throw ParameterError("resample: factors must be >= 1");
  validate(x, "resample");
  const int g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == 1 && down == 1) return x;
  return {apply_resample(x.samples, x.rate, up, down), x.rate * up / down};
}

MultichannelSignal resample(const MultichannelSignal& x, int up, int down) {
  if (up < 1 || down < 1) throw ParameterError("resample: factors must be >= 1");
  validate(x, "resample");
  const int g = std::gcd(up, down);
  up /= g;
  down /= g;
  if (up == 1 && down == 1) return x;
  std::vector<double> row(static_cast<std::size_t>(x.data.cols()));
  MultichannelSignal out;
  out.rate = x.rate * up / down;
  for (Eigen::Index c = 0; c < x.data.rows(); ++c) {
    std::copy(x.data.row(c).begin(), x.data.row(c).end(), row.begin());
    const auto y = apply_resample(row, x.rate, up, down);
    if (c == 0) out.data.resize(x.data.rows(), static_cast<Eigen::Index>(y.size()));
    std::copy(y.begin(), y.end(), out.data.row(c).begin());
  }
  return out;
}

SampledSignal resample_to(const SampledSignal& x, double target_rate) {
  const auto [up, down] = rational_factors(x.rate, target_rate);
  auto out = resample(x, up, down);
  out.rate = target_rate;
  return out;
}

MultichannelSignal resample_to(const MultichannelSignal& x, double target_rate) {
  const auto [up, down] = rational_factors(x.rate, target_rate);
  auto out = resample(x, up, down);
  out.rate = target_rate;
  return out;
}

Envelope extract_envelope(const SampledSignal& audio, double target_rate, double cutoff_hz, int lowpass_order) {
  auto env = hilbert_envelope(audio);
  env = filtfilt(design_butterworth_lowpass(lowpass_order, cutoff_hz, audio.rate), env);
  if (std::abs(env.rate - target_rate) > 1e-9) env = resample_to(env, target_rate);
  return env;
}

MultichannelSignal preprocess_eeg(const MultichannelSignal& raw, const EegPreprocessing& options) {
  validate(raw, "preprocess_eeg");
  MultichannelSignal x = raw;
  if (options.common_average && x.channels() >= 2) x = common_average_reference(x);
  if (options.bandpass)
    x = filtfilt(design_butterworth_bandpass(options.bandpass_order, options.low_hz, options.high_hz, x.rate), x);
  if (std::abs(x.rate - options.target_rate) > 1e-9) x = resample_to(x, options.target_rate);
  return x;
}

}  // namespace aadkit::dsp

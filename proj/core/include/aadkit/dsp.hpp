#pragma once

#include "aadkit/types.hpp"

#include <array>
#include <cstddef>
#include <vector>

namespace aadkit::dsp {

// One second-order section, transfer function
//   (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2).
// First-order sections have b2 == a2 == 0.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  int order() const noexcept { return (a2 != 0.0 || b2 != 0.0) ? 2 : ((a1 != 0.0 || b1 != 0.0) ? 1 : 0); }
  double max_pole_radius() const;
};

enum class FilterKind { LowPass, BandPass };

struct BiquadCascade {
  std::vector<Biquad> sections;  // ascending pole radius
  FilterKind kind = FilterKind::LowPass;
  int prototype_order = 0;
  double low_hz = 0.0;   // band-pass lower corner; unused for low-pass
  double high_hz = 0.0;  // band-pass upper corner or low-pass cutoff
  double rate = 0.0;

  // Sum of section orders.
  int total_order() const noexcept;
};

// Butterworth band-pass of prototype order `order` (the digital filter has
// order 2*order). Bilinear transform with both corners pre-warped, so the
// response is -3.01 dB at low_hz and high_hz and unity at the warped center.
BiquadCascade design_butterworth_bandpass(int order, double low_hz, double high_hz, double rate);

// Butterworth low-pass, pre-warped cutoff, unity DC gain.
BiquadCascade design_butterworth_lowpass(int order, double cutoff_hz, double rate);

// |H(e^{j 2 pi f / rate})|.
double magnitude_response(const BiquadCascade& cascade, double freq_hz);

// Causal single pass through the cascade (zero initial state).
std::vector<double> sosfilt(const BiquadCascade& cascade, const std::vector<double>& x);

// Zero-phase forward-backward filtering with odd-reflection padding of
// 3 * total_order samples and steady-state initial conditions.
// Throws LengthError when the signal is not longer than the padding.
SampledSignal filtfilt(const BiquadCascade& cascade, const SampledSignal& x);
MultichannelSignal filtfilt(const BiquadCascade& cascade, const MultichannelSignal& x);

// Subtract the instantaneous channel mean from every channel. Needs C >= 2.
MultichannelSignal common_average_reference(const MultichannelSignal& x);

// |analytic signal| via a full-length FFT.
SampledSignal hilbert_envelope(const SampledSignal& x);

// Keep every factor-th sample after a zero-phase Butterworth anti-alias
// low-pass at 0.9x the output Nyquist rate. factor == 1 is the identity.
SampledSignal decimate(const SampledSignal& x, int factor);

// Rational resampling by up/down: zero-stuffing with anti-image low-pass,
// then anti-alias low-pass and decimation. Both filters are third-order
// Butterworth at 0.9x the smaller Nyquist rate, applied zero-phase.
// Output length is ceil(N * up / down).
SampledSignal resample(const SampledSignal& x, int up, int down);
MultichannelSignal resample(const MultichannelSignal& x, int up, int down);

// Picks up/down from integer-valued rates (500 -> 64 gives 16/125).
SampledSignal resample_to(const SampledSignal& x, double target_rate);
MultichannelSignal resample_to(const MultichannelSignal& x, double target_rate);

// Speech-envelope chain: Hilbert magnitude, low-pass at cutoff_hz, resample to target_rate.
Envelope extract_envelope(const SampledSignal& audio, double target_rate, double cutoff_hz = 8.0,
                          int lowpass_order = 3);

// EEG chain: common average reference, band-pass, resample to target_rate.
struct EegPreprocessing {
  bool common_average = true;
  bool bandpass = true;
  int bandpass_order = 3;
  double low_hz = 2.0;
  double high_hz = 8.0;
  double target_rate = 64.0;
};
MultichannelSignal preprocess_eeg(const MultichannelSignal& raw, const EegPreprocessing& options);

}  // namespace aadkit::dsp

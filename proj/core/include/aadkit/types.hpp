#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace aadkit {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Single-channel real signal with its sampling rate in Hz.
struct SampledSignal {
  std::vector<double> samples;
  double rate = 0.0;

  std::size_t size() const noexcept { return samples.size(); }
  double duration() const noexcept { return rate > 0.0 ? samples.size() / rate : 0.0; }
};

// Speech envelopes (attended, reconstructed, per-speaker) share the
// single-channel representation.
using Envelope = SampledSignal;

// C x N sample matrix, one row per channel.
struct MultichannelSignal {
  RowMatrix data;
  double rate = 0.0;

  std::size_t channels() const noexcept { return static_cast<std::size_t>(data.rows()); }
  std::size_t length() const noexcept { return static_cast<std::size_t>(data.cols()); }

  SampledSignal channel(std::size_t c) const;
};

enum class Speaker : std::uint8_t { One = 1, Two = 2 };

inline int to_int(Speaker s) noexcept { return static_cast<int>(s); }
inline Speaker other(Speaker s) noexcept { return s == Speaker::One ? Speaker::Two : Speaker::One; }
Speaker speaker_from_int(int label);

// Throws ParameterError when rate <= 0 or a sample is NaN/Inf.
void validate(const SampledSignal& x, const char* what = "signal");
void validate(const MultichannelSignal& x, const char* what = "signal");

}  // namespace aadkit

#pragma once

#include "aadkit/types.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace aadkit {

// Correlation window geometry in samples.
struct WindowSpec {
  std::size_t length_samples = 0;
  std::size_t hop_samples = 0;
  double rate = 0.0;

  // length = round(length_s * rate), hop = round((length_s - overlap_s) * rate).
  static WindowSpec from_seconds(double length_s, double overlap_s, double rate);

  // floor((n - length) / hop) + 1, or 0 when n < length.
  std::size_t window_count(std::size_t n) const noexcept;
  double start_time(std::size_t k) const noexcept { return static_cast<double>(k * hop_samples) / rate; }
  void check() const;
};

// Per-window Pearson coefficients of the reconstruction against speaker 1
// and speaker 2. `undefined[k]` marks windows where a constant window made
// the correlation undefined; those entries are stored as 0.
struct CorrelationSeries {
  std::vector<double> rho1;
  std::vector<double> rho2;
  std::vector<double> t_start;
  std::vector<bool> undefined;
  WindowSpec spec;

  std::size_t size() const noexcept { return rho1.size(); }
};

// Centered, normalized correlation. Throws UndefinedCorrelationError when
// either input is constant and ParameterError on length mismatch / n < 2.
double pearson(std::span<const double> x, std::span<const double> y);

// Throws LengthError when the envelopes are shorter than one window.
CorrelationSeries windowed_correlations(const Envelope& reconstructed, const Envelope& e1, const Envelope& e2,
                                        const WindowSpec& spec);

// Speaker 1 iff rho1 > rho2; ties go to speaker 2.
Speaker instantaneous_decision(double rho1, double rho2) noexcept;
std::vector<Speaker> instantaneous_decisions(const CorrelationSeries& series);

struct SummaryStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

// Quartiles by linear interpolation between order statistics.
SummaryStats summarize(std::span<const double> values);

struct AttendedUnattended {
  std::vector<double> rho_attended;
  std::vector<double> rho_unattended;
  SummaryStats attended;
  SummaryStats unattended;
};

AttendedUnattended attended_unattended_metrics(const Envelope& reconstructed, const Envelope& attended,
                                               const Envelope& unattended, const WindowSpec& spec);

// Per-window attended/unattended split of a series given the attended speaker of each window.
AttendedUnattended attended_unattended_metrics(const CorrelationSeries& series, std::span<const Speaker> truth);

// columns: window_index,t_start_s,rho1,rho2
void write_correlation_csv(const CorrelationSeries& series, const std::filesystem::path& path);

}  // namespace aadkit

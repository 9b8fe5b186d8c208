#include "aadkit/corrwin.hpp"

#include "aadkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <string>

namespace aadkit {

WindowSpec WindowSpec::from_seconds(double length_s, double overlap_s, double rate) {
  if (!(rate > 0.0)) throw ParameterError("WindowSpec: rate must be positive");
  if (!(length_s > 0.0) || overlap_s < 0.0 || !(overlap_s < length_s))
    throw ParameterError("WindowSpec: need 0 <= overlap < length");
  WindowSpec spec;
  spec.length_samples = static_cast<std::size_t>(std::llround(length_s * rate));
  spec.hop_samples = static_cast<std::size_t>(std::llround((length_s - overlap_s) * rate));
  spec.rate = rate;
  spec.check();
  return spec;
}

std::size_t WindowSpec::window_count(std::size_t n) const noexcept {
  if (hop_samples == 0 || n < length_samples) return 0;
  return (n - length_samples) / hop_samples + 1;
}

void WindowSpec::check() const {
  if (!(rate > 0.0)) throw ParameterError("WindowSpec: rate must be positive");
  if (length_samples < 2) throw ParameterError("WindowSpec: window must span at least 2 samples");
  if (hop_samples == 0 || hop_samples > length_samples) throw ParameterError("WindowSpec: need 0 < hop <= length");
}

namespace {

// Two-pass centered correlation; returns NaN when a window is constant.
double pearson_or_nan(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::nan("");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ParameterError("pearson: length mismatch");
  if (x.size() < 2) throw ParameterError("pearson: need at least 2 samples");
  const double r = pearson_or_nan(x, y);
  if (std::isnan(r)) throw UndefinedCorrelationError("pearson: constant window");
  return r;
}

CorrelationSeries windowed_correlations(const Envelope& reconstructed, const Envelope& e1, const Envelope& e2,
                                        const WindowSpec& spec) {
  spec.check();
  const std::size_t n = reconstructed.size();
  if (e1.size() != n || e2.size() != n) throw ParameterError("windowed_correlations: envelope lengths differ");
  if (n < spec.length_samples)
    throw LengthError("windowed_correlations: envelope of " + std::to_string(n) +
                      " samples is shorter than one window of " + std::to_string(spec.length_samples));
  const std::size_t count = spec.window_count(n);
  CorrelationSeries out;
  out.spec = spec;
  out.rho1.resize(count);
  out.rho2.resize(count);
  out.t_start.resize(count);
  out.undefined.assign(count, false);
  const std::span<const double> rec(reconstructed.samples);
  const std::span<const double> s1(e1.samples);
  const std::span<const double> s2(e2.samples);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = k * spec.hop_samples;
    const auto w = rec.subspan(start, spec.length_samples);
    double r1 = pearson_or_nan(w, s1.subspan(start, spec.length_samples));
    double r2 = pearson_or_nan(w, s2.subspan(start, spec.length_samples));
    if (std::isnan(r1) || std::isnan(r2)) out.undefined[k] = true;
    out.rho1[k] = std::isnan(r1) ? 0.0 : r1;
    out.rho2[k] = std::isnan(r2) ? 0.0 : r2;
    out.t_start[k] = spec.start_time(k);
  }
  return out;
}

Speaker instantaneous_decision(double rho1, double rho2) noexcept {
  return rho1 > rho2 ? Speaker::One : Speaker::Two;
}

std::vector<Speaker> instantaneous_decisions(const CorrelationSeries& series) {
  std::vector<Speaker> out(series.size());
  for (std::size_t k = 0; k < series.size(); ++k) out[k] = instantaneous_decision(series.rho1[k], series.rho2[k]);
  return out;
}

SummaryStats summarize(std::span<const double> values) {
  SummaryStats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto quantile = [&v](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] + frac * (v[hi] - v[lo]);
  };
  s.median = quantile(0.5);
  s.q1 = quantile(0.25);
  s.q3 = quantile(0.75);
  s.min = v.front();
  s.max = v.back();
  return s;
}

AttendedUnattended attended_unattended_metrics(const Envelope& reconstructed, const Envelope& attended,
                                               const Envelope& unattended, const WindowSpec& spec) {
  const auto series = windowed_correlations(reconstructed, attended, unattended, spec);
  AttendedUnattended out;
  out.rho_attended = series.rho1;
  out.rho_unattended = series.rho2;
  out.attended = summarize(out.rho_attended);
  out.unattended = summarize(out.rho_unattended);
  return out;
}

AttendedUnattended attended_unattended_metrics(const CorrelationSeries& series, std::span<const Speaker> truth) {
  if (truth.size() != series.size()) throw ParameterError("attended_unattended_metrics: label count mismatch");
  AttendedUnattended out;
  out.rho_attended.resize(series.size());
  out.rho_unattended.resize(series.size());
  for (std::size_t k = 0; k < series.size(); ++k) {
    const bool one = truth[k] == Speaker::One;
    out.rho_attended[k] = one ? series.rho1[k] : series.rho2[k];
    out.rho_unattended[k] = one ? series.rho2[k] : series.rho1[k];
  }
  out.attended = summarize(out.rho_attended);
  out.unattended = summarize(out.rho_unattended);
  return out;
}

void write_correlation_csv(const CorrelationSeries& series, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "window_index,t_start_s,rho1,rho2\n" << std::setprecision(17);
  for (std::size_t k = 0; k < series.size(); ++k)
    os << k << ',' << series.t_start[k] << ',' << series.rho1[k] << ',' << series.rho2[k] << '\n';
}

}  // namespace aadkit

#include "aadkit/lagspace.hpp"

#include "aadkit/error.hpp"

#include <string>

namespace aadkit {

LagMatrix build_lag_matrix(const MultichannelSignal& x, int delta) {
  validate(x, "build_lag_matrix");
  if (delta < 0) throw ParameterError("build_lag_matrix: delta must be non-negative");
  const Eigen::Index n = x.data.cols();
  if (n <= delta)
    throw LengthError("build_lag_matrix: signal length " + std::to_string(n) + " must exceed delta " +
                      std::to_string(delta));
  const Eigen::Index channels = x.data.rows();
  const Eigen::Index taps = delta + 1;
  const Eigen::Index rows = n - delta;

  LagMatrix out;
  out.delta = delta;
  out.channel_count = static_cast<int>(channels);
  out.rate = x.rate;
  out.values.resize(rows, channels * taps);
  for (Eigen::Index c = 0; c < channels; ++c)
    for (Eigen::Index tau = 0; tau < taps; ++tau)
      out.values.col(c * taps + tau) = x.data.row(c).segment(tau, rows).transpose();
  return out;
}

LagMatrix stack_rows(const LagMatrix& top, const LagMatrix& bottom) {
  if (top.values.size() == 0) return bottom;
  if (bottom.values.size() == 0) return top;
  if (top.delta != bottom.delta || top.channel_count != bottom.channel_count || top.cols() != bottom.cols())
    throw ParameterError("stack_rows: lag matrices have different layouts");
  LagMatrix out;
  out.delta = top.delta;
  out.channel_count = top.channel_count;
  out.rate = top.rate;
  out.values.resize(top.rows() + bottom.rows(), top.cols());
  out.values.topRows(top.rows()) = top.values;
  out.values.bottomRows(bottom.rows()) = bottom.values;
  return out;
}

}  // namespace aadkit

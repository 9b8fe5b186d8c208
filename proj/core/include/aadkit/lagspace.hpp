#pragma once

#include "aadkit/types.hpp"

#include <cstddef>
#include <string>

namespace aadkit {

// Stacked spatio-temporal regressors. Row k holds, channel by channel,
// x_c[k], x_c[k+1], ..., x_c[k+delta]; column c*(delta+1)+tau is x_c[k+tau].
// This channel-major-then-lag column order is the layout contract for
// serialized estimator weights. Rows whose lag window would run past the
// end of the signal are dropped, so rows() == N - delta.
struct LagMatrix {
  Eigen::MatrixXd values;
  int delta = 0;
  int channel_count = 0;
  double rate = 0.0;

  Eigen::Index rows() const noexcept { return values.rows(); }
  Eigen::Index cols() const noexcept { return values.cols(); }
};

inline constexpr const char* kColumnOrderTag = "channel-major-lag";

inline Eigen::Index regressor_dim(int channels, int delta) noexcept {
  return static_cast<Eigen::Index>(channels) * (delta + 1);
}

// Throws LengthError when N <= delta, ParameterError when delta < 0.
LagMatrix build_lag_matrix(const MultichannelSignal& x, int delta);

// Regressor rows paired with their target envelope, used as a training or
// cross-validation fold. Segments from different recordings may be stacked
// into one fold; `provenance` names where the rows came from.
struct Fold {
  LagMatrix lag;
  Envelope env;
  std::string provenance;
};

// Concatenate row blocks built from separate recordings (no row spans a seam).
LagMatrix stack_rows(const LagMatrix& top, const LagMatrix& bottom);

}  // namespace aadkit

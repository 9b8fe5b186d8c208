#include "aadkit/error.hpp"
#include "aadkit/lagspace.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace aadkit;

namespace {

MultichannelSignal channels_from(std::initializer_list<std::vector<double>> rows) {
  MultichannelSignal x;
  x.rate = 64.0;
  x.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) x.data(r, static_cast<Eigen::Index>(k)) = row[k];
    ++r;
  }
  return x;
}

}  // namespace

TEST(LagMatrix, SingleChannelExample) {
  const auto lag = build_lag_matrix(channels_from({{1, 2, 3, 4}}), 1);
  Eigen::MatrixXd expected(3, 2);
  expected << 1, 2, 2, 3, 3, 4;
  EXPECT_EQ(lag.values, expected);
}

TEST(LagMatrix, ChannelMajorColumnOrder) {
  const auto lag = build_lag_matrix(channels_from({{1, 2, 3, 4, 5}, {10, 20, 30, 40, 50}}), 2);
  ASSERT_EQ(lag.rows(), 3);
  ASSERT_EQ(lag.cols(), 6);
  Eigen::RowVectorXd row0(6);
  row0 << 1, 2, 3, 10, 20, 30;
  EXPECT_EQ(lag.values.row(0), row0);
  EXPECT_EQ(lag.values(2, 5), 50);
}

TEST(LagMatrix, ShapeInvariantOnRandomInputs) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> cdist(1, 6), ddist(0, 25), ndist(30, 200);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    const int c = cdist(rng), delta = ddist(rng), n = ndist(rng);
    MultichannelSignal x;
    x.rate = 64.0;
    x.data.resize(c, n);
    for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = g(rng);
    const auto lag = build_lag_matrix(x, delta);
    EXPECT_EQ(lag.rows(), n - delta);
    EXPECT_EQ(lag.cols(), regressor_dim(c, delta));
    for (int probe = 0; probe < 10; ++probe) {
      const int k = std::uniform_int_distribution<int>(0, n - delta - 1)(rng);
      const int ch = std::uniform_int_distribution<int>(0, c - 1)(rng);
      const int tau = std::uniform_int_distribution<int>(0, delta)(rng);
      EXPECT_EQ(lag.values(k, ch * (delta + 1) + tau), x.data(ch, k + tau));
    }
  }
}

TEST(LagMatrix, Errors) {
  EXPECT_THROW(build_lag_matrix(channels_from({{1, 2, 3}}), 3), LengthError);
  EXPECT_THROW(build_lag_matrix(channels_from({{1, 2, 3}}), -1), ParameterError);
}

TEST(LagMatrix, StackRowsKeepsSeams) {
  const auto a = build_lag_matrix(channels_from({{1, 2, 3, 4}}), 1);
  const auto b = build_lag_matrix(channels_from({{7, 8, 9}}), 1);
  const auto s = stack_rows(a, b);
  ASSERT_EQ(s.rows(), 5);
  EXPECT_EQ(s.values(3, 0), 7);
  EXPECT_EQ(s.values(2, 1), 4);
  const auto other = build_lag_matrix(channels_from({{7, 8, 9}}), 0);
  EXPECT_THROW(stack_rows(a, other), ParameterError);
  EXPECT_EQ(stack_rows(LagMatrix{}, a).values, a.values);
}

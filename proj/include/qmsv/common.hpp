// qmsv/common.hpp

// Copyright 2026  The qmsv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace qmsv {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of two objects that must agree do not.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// An argument violates a documented precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Reading or writing a file failed, or its contents are malformed.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Numerically stable log(sum(exp(x))) over any Eigen expression.
template <typename Derived>
typename Derived::Scalar LogSumExp(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar max = x.maxCoeff();
  if (!std::isfinite(max)) return max;
  return max + std::log((x.array() - max).exp().sum());
}

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace qmsv

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>
#include <vector>

namespace tightcap {

template <typename Scalar>
using Vec2T = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3T = Eigen::Matrix<Scalar, 3, 3>;

using Vec2 = Vec2T<double>;
using Vec3 = Vec3T<double>;
using Mat3 = Mat3T<double>;

// Row-major so that a vertex row is contiguous.
using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Colors = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using UVs = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

// Nearest float value as a double. Out of line: GCC 11's SLP vectorizer at -O3
// drops an inlined double->float->double round trip.
double round_to_float(double x);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file; message names the line or byte offset.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Data violates a structural invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Caller passed arguments outside an operation's precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Binary container (CGI1) is malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace tightcap

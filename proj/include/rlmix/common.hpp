#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace rlmix {

using Index = Eigen::Index;
using NodeId = Eigen::Index;
using ArcId = Eigen::Index;

/// Raised when an input violates an operation's precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical procedure cannot produce a usable result.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Feature channels of the path-choice utility, in storage order.
enum Feature : int {
  kTravelTimeNonResidential = 0,
  kTravelTimeResidential = 1,
  kIntersection = 2,
  kLeftTurn = 3,
  kUTurn = 4,
  kNumFeatures = 5
};

using Weights = Eigen::Matrix<double, kNumFeatures, 1>;

// Flat parameter vectors hold the five choice weights followed by one travel
// time per arc. These helpers name the two blocks.
inline auto weight_block(Eigen::VectorXd& v) { return v.head<kNumFeatures>(); }
inline auto weight_block(const Eigen::VectorXd& v) { return v.head<kNumFeatures>(); }
inline auto time_block(Eigen::VectorXd& v) { return v.tail(v.size() - kNumFeatures); }
inline auto time_block(const Eigen::VectorXd& v) { return v.tail(v.size() - kNumFeatures); }

inline Eigen::VectorXd zero_params(Index num_arcs) {
  return Eigen::VectorXd::Zero(kNumFeatures + num_arcs);
}

}  // namespace rlmix

#pragma once

#include "rlmix/mixture.hpp"

#include <span>
#include <vector>

namespace rlmix {

struct PredictOptions {
  Index samples = 100;
  Index max_steps = 0;
  bool exact_when_enumerable = true;
  Index enumeration_limit = 10000;
  double knot_fraction = 0.01;  // minimum knot spacing, relative to the median
  Index max_knots = 512;
};

/// Distribution of the predicted path time t_hat for one OD pair: weighted
/// support points (weights sum to 1).
struct RouteTimeDistribution {
  std::vector<double> times;
  std::vector<double> weights;
  bool exact = false;
};

RouteTimeDistribution route_time_distribution(const ModelState& state, NodeId o, NodeId d,
                                              const PredictOptions& opts, Rng& rng);

/// E[t_hat] over routes.
double expected_path_time(const RouteTimeDistribution& dist);

/// exp(E_r[E_t[ln t | r]]), the MSLE-optimal point prediction.
double predict_geomean(const RouteTimeDistribution& dist, const ObservationDensity& density);
/// E[t] including the density's mean multiplier.
double predict_mean(const RouteTimeDistribution& dist, const ObservationDensity& density);
/// Maximizer of the mixture density sum_k w_k f(x; t_hat_k), found on an
/// adaptive knot grid and refined by golden-section search.
double predict_mode(const RouteTimeDistribution& dist, const ObservationDensity& density,
                    const PredictOptions& opts = {});

struct Prediction {
  NodeId o = 0;
  NodeId d = 0;
  double mean = 0.0;
  double geomean = 0.0;
  double mode = 0.0;
  Index samples = 0;
  bool exact = false;
};

Prediction predict(const ModelState& state, const ObservationDensity& density, NodeId o, NodeId d,
                   const PredictOptions& opts, Rng& rng);

/// sqrt(mean((ln a - ln b)^2)). Throws on size mismatch or nonpositive values.
double rmsle(std::span<const double> predicted, std::span<const double> observed);
double rmsle(const Eigen::VectorXd& predicted, const Eigen::VectorXd& observed);

struct EvaluationRecord {
  NodeId o = 0;
  NodeId d = 0;
  double observed = 0.0;
  Prediction prediction;
  double sq_log_error = 0.0;  // of the geometric-mean prediction
};

struct EvaluationReport {
  std::vector<EvaluationRecord> records;
  double rmsle_geomean = 0.0;
  double rmsle_mean = 0.0;
  double rmsle_mode = 0.0;
};

/// Predicts every timed record with a destination. OD pair (o, d) uses the
/// stream derive_seed(seed, o, d), so the report does not depend on record
/// order or thread count.
EvaluationReport evaluate(std::span<const Observation> observations, const ModelState& state,
                          const ObservationDensity& density, const PredictOptions& opts,
                          std::uint64_t seed, int threads = 1);

}  // namespace rlmix

#pragma once

#include "rlmix/data.hpp"
#include "rlmix/inference.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace rlmix {

/// Smoothness penalty over consecutive arc pairs (a, a'):
/// sum (ln(T_a / L_a) - ln(T_a' / L_a'))^2 / (L_a + L_a').
struct RegularizationTerms {
  double value = 0.0;
  Eigen::VectorXd gradient;  // d value / d T
};

RegularizationTerms regularization(const Eigen::VectorXd& travel_time, const Eigen::VectorXd& lengths,
                                   std::span<const std::pair<ArcId, ArcId>> pairs);

/// Elementwise clamp into [lower, upper].
Eigen::VectorXd project_T(const Eigen::VectorXd& travel_time, const TravelTimeBounds& bounds);

struct EstimatorConfig {
  double eta = 0.01;           // Adam step size
  double lambda = 0.0;         // regularization weight
  double gamma = 1.0;          // observation density sharpness
  Index samples = 100;         // K, routes per path-free record
  Index batch_size = 0;        // 0 = full data every iteration
  Index stop_window = 50;
  double stop_delta = 0.01;    // required gain of the smoothed objective per window
  Index max_iters = 1000;
  std::uint64_t seed = 1;
  int threads = 1;
  EstimatorKind estimator = EstimatorKind::online;
  Index offline_refresh = 20;  // iterations between proposal refreshes
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  ChoiceParams b0{};                      // initial weights and the fixed mask
  std::optional<Eigen::VectorXd> T0;      // default: lower bound / 0.9, projected
  bool exact_when_enumerable = false;
};

struct TraceRow {
  Index iteration = 0;
  double objective = 0.0;       // batch estimate scaled to the full data
  double smoothed = 0.0;        // window mean of objective
  double reference_rmsle = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

struct FitDiagnostics {
  Index clamped_values = 0;
  Index negative_values = 0;
  Index trapped_walks = 0;
  Index factorizations = 0;
  Index iterations = 0;
  Index best_iteration = 0;
  bool stopped_early = false;
};

struct FitResult {
  Weights b;
  Eigen::VectorXd T;
  std::vector<TraceRow> trace;
  FitDiagnostics diagnostics;
  double seconds = 0.0;
};

/// Maximizes the mixed log-likelihood minus lambda times the regularization
/// with projected Adam. Returns the iterate with the best smoothed objective.
/// When `reference_times` is given its RMSLE against T is traced.
FitResult fit(const ObservationSet& data, const TurnGraph& graph, const TravelTimeBounds& bounds,
              const EstimatorConfig& config, const Eigen::VectorXd* reference_times = nullptr);

/// Exact objective pieces at (b, T) for records that need no sampling
/// (full and path-only records): total log-likelihood and its gradient.
ObservationGradient deterministic_objective(std::span<const Observation> data, const TurnGraph& graph,
                                            const Weights& b, const Eigen::VectorXd& travel_time);

// Two-arc illustration: arcs of time x and 1 between o and d, choice
// probability of the first arc p(x) = e^-x / (e^-x + e^-1), one observed trip
// of 2 minutes.

enum class AlternatingVariant { expected_time, expected_loss };

struct AlternatingTrace {
  std::vector<double> x;          // x_0 = 1, then one entry per iteration
  std::vector<double> p;          // choice probability at each x
  std::vector<double> loss;       // expected MSLE at each x
  bool diverged = false;          // stopped at the first non-finite x
};

double two_arc_choice_probability(double x);
double two_arc_expected_msle(double x, double p, double observed = 2.0);

AlternatingTrace naive_alternating_fit(AlternatingVariant variant, Index iters, double observed = 2.0);

/// Minimizes the expected MSLE jointly over x with p = p(x). Returns (x, loss).
std::pair<double, double> two_arc_joint_minimum(double observed = 2.0);

struct SearchRanges {
  std::array<double, 2> eta{1e-3, 1e-1};
  std::array<double, 2> gamma{0.25, 4.0};
  std::array<double, 2> lambda{1e-4, 1.0};
};

struct SearchEntry {
  EstimatorConfig config;
  double validation_rmsle = std::numeric_limits<double>::infinity();
  std::string status = "ok";
};

struct SearchResult {
  EstimatorConfig best;
  double best_rmsle = std::numeric_limits<double>::infinity();
  std::vector<SearchEntry> leaderboard;  // in evaluation order
};

/// Random search: eta, gamma and lambda drawn log-uniformly; each candidate is
/// fitted on `train` and scored by geometric-mean RMSLE on `validation`. With
/// include_default the base config is the first candidate.
SearchResult random_search(const SearchRanges& ranges, Index budget, const ObservationSet& train,
                           const ObservationSet& validation, const TurnGraph& graph,
                           const TravelTimeBounds& bounds, const EstimatorConfig& base,
                           bool include_default = false);

std::string to_string(EstimatorKind kind);

}  // namespace rlmix

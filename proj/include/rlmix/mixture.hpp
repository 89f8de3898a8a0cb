#pragma once

#include "rlmix/density.hpp"
#include "rlmix/route_choice.hpp"

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace rlmix {

enum class Granularity {
  full,            // o, d, path, time
  no_path,         // o, d, time
  no_time,         // o, d, path
  no_destination,  // o, time
  od_only          // o, d
};

/// A trip record. The destination of an observation with a path is the path's
/// last node.
struct Observation {
  NodeId o = 0;
  std::optional<NodeId> d;
  std::optional<double> t;          // minutes
  std::vector<NodeId> path;         // node sequence, empty when unobserved
  double weight = 1.0;

  bool has_path() const { return !path.empty(); }
  std::optional<NodeId> destination() const {
    if (d) return d;
    if (has_path()) return path.back();
    return std::nullopt;
  }
  Granularity granularity() const;
  /// Same trip with the path and/or time dropped.
  Observation without_path() const;
  Observation without_time() const;
};

/// Throws InvalidInput when an observation is malformed for `network`.
void validate(const Observation& obs, const Network& network);

/// Empirical origin and destination-given-origin frequencies (weighted).
class ODDistributions {
 public:
  ODDistributions() = default;
  explicit ODDistributions(std::span<const Observation> observations);

  double log_p_origin(NodeId o) const;
  double log_p_destination(NodeId o, NodeId d) const;
  /// Destinations seen after o, ascending, with their conditional probability.
  std::vector<std::pair<NodeId, double>> destinations_of(NodeId o) const;
  bool empty() const { return total_ == 0.0; }

 private:
  double total_ = 0.0;
  std::map<NodeId, double> origin_;
  std::map<NodeId, std::map<NodeId, double>> dest_;
};

/// Model evaluated at one (b, T): value functions and transition tables for a
/// set of destinations.
class ModelState {
 public:
  explicit ModelState(ValueSolution values);

  const ValueSolution& values() const { return values_; }
  const TurnGraph& graph() const { return values_.graph(); }
  const Eigen::VectorXd& travel_times() const { return values_.travel_times(); }
  const TransitionTable& table(NodeId d) const;
  bool has_destination(NodeId d) const { return values_.has_destination(d); }

 private:
  ValueSolution values_;
  std::unordered_map<NodeId, TransitionTable> tables_;
};

/// Solves for every destination any observation may need: its own, or for
/// destination-free records every destination seen after its origin.
ModelState evaluate_model(ValueSolver& solver, const Weights& b, const Eigen::VectorXd& travel_time,
                          std::span<const Observation> observations, const ODDistributions& od);

struct SamplingOptions {
  Index samples = 100;            // K
  Index max_steps = 0;            // per walk; <= 0 uses the graph default
  int retries = 10;
  bool exact_when_enumerable = false;
  Index enumeration_limit = 10000;
};

/// Likelihood context shared by the functions below. `od` may be null, in
/// which case the origin/destination terms are left out (they are constants
/// of the optimization).
struct MixtureContext {
  const ModelState* state = nullptr;
  const ObservationDensity* density = nullptr;
  const ODDistributions* od = nullptr;
  SamplingOptions sampling;
};

double loglik_full(const Observation& obs, const MixtureContext& ctx);
double loglik_no_time(const Observation& obs, const MixtureContext& ctx);
double loglik_no_path(const Observation& obs, const MixtureContext& ctx, Rng& rng);
double loglik_no_destination(const Observation& obs, const MixtureContext& ctx, Rng& rng);
/// Dispatches on the observation's granularity; multiplies by its weight.
double observation_loglik(const Observation& obs, const MixtureContext& ctx, Rng& rng);

/// P(d | o, t) over candidate destinations, in candidate order. Priors come
/// from ctx.od when it knows o, otherwise they are uniform.
Eigen::VectorXd dest_posterior(NodeId o, double t, std::span<const NodeId> candidates,
                               const MixtureContext& ctx, Rng& rng);

/// Weighted sum over a set. Observation i draws from derive_seed(seed, i).
double mixed_loglik(std::span<const Observation> observations, const MixtureContext& ctx,
                    std::uint64_t seed, int threads = 1);

/// Cache of grad w(o; d), filled by one adjoint solve per origin.
class OriginValueGradients {
 public:
  OriginValueGradients() = default;
  OriginValueGradients(const ValueSolution& values, std::span<const std::pair<NodeId, NodeId>> pairs,
                       int threads);
  /// Computes on demand when the pair was not precomputed (not thread safe
  /// in that case; precompute for concurrent use).
  const ParamGradient& get(const ValueSolution& values, NodeId o, NodeId d) const;

 private:
  mutable std::map<std::pair<NodeId, NodeId>, ParamGradient> cache_;
};

/// Fixed proposal samples for the offline estimator.
struct OfflineSamples {
  std::vector<std::vector<ArcId>> routes;
  std::vector<double> log_q;  // proposal log-probability of each route
};

enum class EstimatorKind { online, offline };

struct ObservationGradient {
  double loglik = 0.0;
  ParamGradient grad;
  // Deferred -c grad w(o; d) terms, filled when no gradient cache is given.
  std::vector<ValueTerm> value_terms;
};

/// Log-likelihood and its gradient for one observation (weight included).
/// Path-free records use the online estimator unless `offline` is given.
/// Without `wgrad` the grad w(o; d) part is returned in value_terms so that a
/// caller can sum it over many records with one solve.
ObservationGradient observation_gradient(const Observation& obs, const MixtureContext& ctx, Rng& rng,
                                         const OriginValueGradients* wgrad,
                                         const OfflineSamples* offline = nullptr);

/// Online estimate of grad ln E_r[f(t; t_hat)] for an (o, d, t) record,
/// self-normalized with logsumexp.
ParamGradient grad_online(const Observation& obs, const MixtureContext& ctx, Rng& rng);

/// Offline estimate of the same quantity from proposal samples.
ParamGradient grad_offline(const Observation& obs, const MixtureContext& ctx,
                           const OfflineSamples& samples);

/// A finite proposal distribution over routes.
struct RouteProposal {
  std::vector<std::vector<ArcId>> routes;
  std::vector<double> probs;
};

/// Draws K routes from a proposal. Throws InvalidInput when the model puts
/// mass on a route the proposal does not cover (checked when the model's
/// routes can be enumerated).
OfflineSamples draw_offline_samples(const Observation& obs, const MixtureContext& ctx,
                                    const RouteProposal& proposal, Index K, Rng& rng);

/// Mean and standard error of per-sample estimates, flattened as
/// [b (5), T (arcs)].
struct GradientStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd std_error;
  Index samples = 0;
};

/// Per-sample unbiased estimates of grad E_r[f(t; t_hat)]:
/// online  g_k = f_k (grad ln f_k + grad ln P(r_k)),  r_k ~ model;
/// offline g_k = (P(r_k) / q(r_k)) f_k (grad ln f_k + grad ln P(r_k)).
GradientStats grad_online_stats(const Observation& obs, const MixtureContext& ctx, Index K, Rng& rng);
GradientStats grad_offline_stats(const Observation& obs, const MixtureContext& ctx,
                                 const OfflineSamples& samples);

/// grad E_r[f(t; t_hat)] and E_r[f] by enumeration; nullopt when the routes
/// cannot be enumerated.
std::optional<std::pair<Eigen::VectorXd, double>> exact_expected_gradient(const Observation& obs,
                                                                          const MixtureContext& ctx);

Eigen::VectorXd flatten(const ParamGradient& g);

}  // namespace rlmix

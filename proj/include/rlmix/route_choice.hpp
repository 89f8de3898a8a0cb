#pragma once

#include "rlmix/numerics.hpp"
#include "rlmix/turn_graph.hpp"

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace rlmix {

/// Utility weights aligned with the feature channels. Fixed weights are left
/// out of the estimated gradient.
struct ChoiceParams {
  Weights b = default_weights();
  std::array<bool, kNumFeatures> fixed{false, false, false, false, true};

  static Weights default_weights() {
    Weights w;
    w << -2.0, -2.0, -2.0, -2.0, -5.0;
    return w;
  }
  /// Zeroes the components of a weight gradient that are held fixed.
  Weights mask(Weights g) const {
    for (int k = 0; k < kNumFeatures; ++k)
      if (fixed[static_cast<std::size_t>(k)]) g[k] = 0.0;
    return g;
  }
};

/// Gradient with respect to the choice weights and the arc travel times.
struct ParamGradient {
  Weights b = Weights::Zero();
  Eigen::VectorXd T;

  ParamGradient() = default;
  explicit ParamGradient(Index num_arcs) : T(Eigen::VectorXd::Zero(num_arcs)) {}

  ParamGradient& operator+=(const ParamGradient& o) {
    b += o.b;
    T += o.T;
    return *this;
  }
  ParamGradient& operator*=(double s) {
    b *= s;
    T *= s;
    return *this;
  }
  /// this += s * o
  void axpy(double s, const ParamGradient& o) {
    b += s * o.b;
    T += s * o.T;
  }
};

/// v = F b, one utility per transition.
Eigen::VectorXd compute_utilities(const FeatureSet& features, const Weights& b);

struct SolveDiagnostics {
  Index clamped = 0;   // entries raised to the floor
  Index negative = 0;  // entries replaced by their absolute value
};

inline constexpr double kValueFloor = 1e-250;

namespace detail {
using Lu = Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>;

// Everything a solution needs from the evaluation point, shared by copies.
struct Evaluation {
  const TurnGraph* graph = nullptr;
  Weights b;
  Eigen::VectorXd T;
  FeatureSet features;
  Eigen::VectorXd utilities;
  Eigen::VectorXd exp_utilities;
  Lu lu;
};
}  // namespace detail

/// Exponentiated value functions z^d for a set of destinations, plus the
/// factorization of I - M that produced them.
///
/// Rows of z are states (arc states, origin states, absorbing state last);
/// the absorbing entry is 1 by construction. Safe for concurrent reads.
class ValueSolution {
 public:
  const TurnGraph& graph() const { return *eval_->graph; }
  const Weights& weights() const { return eval_->b; }
  const Eigen::VectorXd& travel_times() const { return eval_->T; }
  const FeatureSet& features() const { return eval_->features; }
  const Eigen::VectorXd& utilities() const { return eval_->utilities; }
  const Eigen::VectorXd& exp_utilities() const { return eval_->exp_utilities; }

  std::span<const NodeId> destinations() const { return destinations_; }
  bool has_destination(NodeId d) const;
  /// Column of z for destination d; throws if d was not solved.
  Eigen::Ref<const Eigen::VectorXd> z(NodeId d) const;
  const Eigen::MatrixXd& z_matrix() const { return z_; }

  /// w(s; d) = ln z^d_s.
  double value(Index state, NodeId d) const;
  /// w at the trip-start state of o.
  double origin_value(NodeId o, NodeId d) const { return value(graph().origin_state(o), d); }

  /// y with (I - M)^T y = e_{origin(o)}; independent of the destination.
  Eigen::VectorXd adjoint(NodeId o) const;
  /// X with (I - M)^T X = R for a block of right-hand sides over the
  /// non-absorbing states.
  Eigen::MatrixXd adjoint_solve(const Eigen::MatrixXd& rhs) const;
  /// Column of z for destination d, or -1.
  Index column(NodeId d) const { return has_destination(d) ? column_[static_cast<std::size_t>(d)] : -1; }

  const SolveDiagnostics& diagnostics() const { return diag_; }

 private:
  friend class ValueSolver;
  std::shared_ptr<detail::Evaluation> eval_;
  std::vector<NodeId> destinations_;
  std::vector<Index> column_;  // node -> column of z, -1 when absent
  Eigen::MatrixXd z_;
  SolveDiagnostics diag_;
};

/// Builds and factorizes I - M on a fixed turn graph. The sparsity pattern and
/// the slot of every transition in it are computed once and reused.
class ValueSolver {
 public:
  explicit ValueSolver(const TurnGraph& graph);

  ValueSolution solve(const Weights& b, const Eigen::VectorXd& travel_time,
                      std::span<const NodeId> destinations);

  /// Number of LU factorizations performed so far.
  Index factorizations() const { return factorizations_; }
  const TurnGraph& graph() const { return *graph_; }

 private:
  const TurnGraph* graph_;
  Eigen::SparseMatrix<double> pattern_;  // I - M with placeholder values
  std::vector<Index> slot_;              // transition -> index into valuePtr
  Index factorizations_ = 0;
};

/// One-shot convenience around ValueSolver.
ValueSolution solve_values(const TurnGraph& graph, const Weights& b,
                           const Eigen::VectorXd& travel_time, std::span<const NodeId> destinations);

/// Transition probabilities P(. | s; d) for one destination.
struct TransitionTable {
  NodeId destination = 0;
  std::vector<double> prob;         // per transition id
  Eigen::VectorXd absorb;           // per arc state: probability of ending here
  std::vector<bool> defined;        // per state: state reaches d
  double row_sum(const TurnGraph& graph, Index state) const;
};

TransitionTable transition_probs(const ValueSolution& solution, NodeId d);

/// Random walk from o under the table. Returns nullopt when the walk uses more
/// than max_steps arcs.
std::optional<std::vector<ArcId>> try_sample_path(const TurnGraph& graph, const TransitionTable& table,
                                                  NodeId o, Rng& rng, Index max_steps);

/// Resamples trapped walks up to `retries` times, then throws NumericalError.
/// max_steps <= 0 selects the graph default.
std::vector<ArcId> sample_path(const TurnGraph& graph, const TransitionTable& table, NodeId o,
                               Rng& rng, Index max_steps = 0, int retries = 10);

/// ln P(r | o, d) = sum of utilities along r - w(o; d).
double path_loglik(const ValueSolution& solution, NodeId o, NodeId d, std::span<const ArcId> route);

/// Gradient of the summed route utility (the deterministic part of ln P(r)).
ParamGradient grad_route_utility(const ValueSolution& solution, NodeId o,
                                 std::span<const ArcId> route);

/// Gradient of w(o; d) given the adjoint y of o.
ParamGradient grad_origin_value(const ValueSolution& solution, NodeId d,
                                const Eigen::VectorXd& adjoint_o, NodeId o);

/// Gradient of ln P(r | o, d) with respect to (b, T).
ParamGradient grad_path_loglik(const ValueSolution& solution, NodeId o, NodeId d,
                               std::span<const ArcId> route);

/// Gradients of w(o; d) for many OD pairs, sharing one adjoint solve per
/// origin. Result order follows `pairs`.
std::vector<ParamGradient> grad_origin_values(const ValueSolution& solution,
                                              std::span<const std::pair<NodeId, NodeId>> pairs,
                                              int threads = 1);

/// sum_k c_k grad w(o_k; d_k) with one transposed solve for all terms:
/// G = (I - M)^-T R, R(origin(o), d) = c / z^d_o, flow_e = exp(v_e) G(s,:) . z(t,:).
struct ValueTerm {
  NodeId o = 0;
  NodeId d = 0;
  double coef = 0.0;
};
ParamGradient weighted_origin_value_gradient(const ValueSolution& solution, std::span<const ValueTerm> terms);

/// Sum of travel times along a route.
double route_time(const Eigen::VectorXd& travel_time, std::span<const ArcId> route);

struct EnumeratedRoute {
  std::vector<ArcId> arcs;
  double log_prob = 0.0;
};

/// All o -> d routes with their model log-probabilities, when the part of the
/// turn graph between o and d is acyclic and has at most `limit` routes.
std::optional<std::vector<EnumeratedRoute>> enumerate_routes(const ValueSolution& solution, NodeId o,
                                                            NodeId d, Index limit = 10000);

}  // namespace rlmix

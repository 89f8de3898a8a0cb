#pragma once

#include "rlmix/network.hpp"

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <span>
#include <vector>

namespace rlmix {

/// One projected arc: a move from a state onto an original arc.
struct Transition {
  Index source = 0;  // state id
  ArcId target = 0;  // original arc entered; its state id is the same number
  bool left_turn = false;
  bool u_turn = false;
  bool intersection = false;
};

/// Turn-expanded state graph.
///
/// States [0, A) are the original arcs, [A, A + N) are per-node trip-start
/// states and A + N is the shared absorbing state. A transition (a, a') exists
/// iff head(a) == tail(a'); a start state of node o moves onto every arc
/// leaving o. Transitions are stored grouped by source state.
class TurnGraph {
 public:
  /// Left turns use the signed turn angle, so every node that can be the
  /// middle of a non-u-turn move needs coordinates.
  explicit TurnGraph(Network network, double left_min_deg = 30.0, double left_max_deg = 150.0);

  const Network& network() const { return network_; }
  Index num_arcs() const { return network_.num_arcs(); }
  Index num_nodes() const { return network_.num_nodes(); }
  Index num_states() const { return num_arcs() + num_nodes() + 1; }
  Index num_transitions() const { return static_cast<Index>(transitions_.size()); }

  Index origin_state(NodeId o) const { return num_arcs() + o; }
  Index absorbing_state() const { return num_arcs() + num_nodes(); }
  bool is_arc_state(Index s) const { return s >= 0 && s < num_arcs(); }

  const Transition& transition(Index e) const { return transitions_[static_cast<std::size_t>(e)]; }
  std::span<const Transition> transitions() const { return transitions_; }

  /// Transition ids leaving state s (contiguous).
  Index begin(Index s) const { return ptr_[static_cast<std::size_t>(s)]; }
  Index end(Index s) const { return ptr_[static_cast<std::size_t>(s) + 1]; }

  std::optional<Index> find_transition(Index source, ArcId target) const;

  /// Transition ids of a route starting at `origin`; throws when a hop is
  /// not a move of the graph.
  std::vector<Index> route_transitions(NodeId origin, std::span<const ArcId> route) const;

  /// Consecutive arc pairs (a, a') with head(a) == tail(a'), u-turns included.
  std::vector<std::pair<ArcId, ArcId>> consecutive_arc_pairs() const;

  /// States that can reach the absorbing state through `destination`.
  std::vector<bool> reaches(NodeId destination) const;

  /// Default walk cap: 50 x network diameter in arcs.
  Index default_max_steps() const { return max_steps_; }

 private:
  Network network_;
  std::vector<Transition> transitions_;
  std::vector<Index> ptr_;
  // Reverse index: transitions entering each arc state.
  std::vector<Index> in_ptr_, in_idx_;
  Index max_steps_ = 0;
};

/// Per-transition feature channels (rows = transitions, columns = Feature).
/// The two travel-time channels split the entered arc's time by class.
struct FeatureSet {
  Eigen::Matrix<double, Eigen::Dynamic, kNumFeatures> channels;
};

FeatureSet build_features(const TurnGraph& graph, const Eigen::VectorXd& travel_time);

/// Equivalent to TurnGraph(network); kept as a free function for symmetry
/// with the other network operations.
inline TurnGraph project_turns(const Network& network) { return TurnGraph(network); }

/// Feature channel that carries the travel time of `arc`.
inline Feature time_channel(const Network& network, ArcId arc) {
  return network.arc(arc).cls == ArcClass::residential ? kTravelTimeResidential
                                                        : kTravelTimeNonResidential;
}

}  // namespace rlmix

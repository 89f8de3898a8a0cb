#include "rlmix/turn_graph.hpp"

#include <cmath>
#include <deque>
#include <numbers>
#include <string>

namespace rlmix {

TurnGraph::TurnGraph(Network network, double left_min_deg, double left_max_deg)
    : network_(std::move(network)) {
  const Index arcs = network_.num_arcs();
  ptr_.assign(static_cast<std::size_t>(num_states()) + 1, 0);
  for (ArcId a = 0; a < arcs; ++a) {
    const Arc& in = network_.arc(a);
    const NodeId j = in.head;
    for (ArcId b : network_.out_arcs(j)) {
      const Arc& out = network_.arc(b);
      Transition t;
      t.source = a;
      t.target = b;
      t.u_turn = out.head == in.tail;
      t.intersection = network_.node(j).kind == NodeKind::intersection_control;
      if (!t.u_turn) {
        const auto& pi = network_.node(in.tail).position;
        const auto& pj = network_.node(j).position;
        const auto& pk = network_.node(out.head).position;
        if (!pi || !pj || !pk)
          throw InvalidInput("node coordinates missing for turn " + std::to_string(in.tail) +
                             "->" + std::to_string(j) + "->" + std::to_string(out.head));
        const double ux = pj->x - pi->x, uy = pj->y - pi->y;
        const double vx = pk->x - pj->x, vy = pk->y - pj->y;
        const double angle = std::atan2(ux * vy - uy * vx, ux * vx + uy * vy) * 180.0 /
                             std::numbers::pi;
        t.left_turn = angle > left_min_deg && angle < left_max_deg;
      }
      transitions_.push_back(t);
    }
    ptr_[static_cast<std::size_t>(a) + 1] = static_cast<Index>(transitions_.size());
  }
  for (NodeId o = 0; o < network_.num_nodes(); ++o) {
    for (ArcId b : network_.out_arcs(o)) transitions_.push_back(Transition{origin_state(o), b});
    ptr_[static_cast<std::size_t>(origin_state(o)) + 1] = static_cast<Index>(transitions_.size());
  }
  ptr_.back() = static_cast<Index>(transitions_.size());

  in_ptr_.assign(static_cast<std::size_t>(arcs) + 1, 0);
  for (const auto& t : transitions_) ++in_ptr_[static_cast<std::size_t>(t.target) + 1];
  for (std::size_t i = 1; i < in_ptr_.size(); ++i) in_ptr_[i] += in_ptr_[i - 1];
  in_idx_.assign(transitions_.size(), 0);
  std::vector<Index> fill(in_ptr_.begin(), in_ptr_.end() - 1);
  for (std::size_t e = 0; e < transitions_.size(); ++e)
    in_idx_[static_cast<std::size_t>(fill[static_cast<std::size_t>(transitions_[e].target)]++)] =
        static_cast<Index>(e);

  max_steps_ = 50 * std::max<Index>(1, network_.diameter_in_arcs());
}

std::optional<Index> TurnGraph::find_transition(Index source, ArcId target) const {
  if (source < 0 || source >= num_states()) return std::nullopt;
  for (Index e = begin(source); e < end(source); ++e)
    if (transitions_[static_cast<std::size_t>(e)].target == target) return e;
  return std::nullopt;
}

std::vector<Index> TurnGraph::route_transitions(NodeId origin, std::span<const ArcId> route) const {
  if (origin < 0 || origin >= num_nodes()) throw InvalidInput("unknown origin node");
  if (route.empty()) throw InvalidInput("empty route");
  std::vector<Index> out;
  out.reserve(route.size());
  Index state = origin_state(origin);
  for (ArcId a : route) {
    if (a < 0 || a >= num_arcs()) throw InvalidInput("route uses nonexistent arc");
    const auto e = find_transition(state, a);
    if (!e)
      throw InvalidInput("route is not a walk: arc " + std::to_string(a) +
                         " does not continue from the previous position");
    out.push_back(*e);
    state = a;
  }
  return out;
}

std::vector<std::pair<ArcId, ArcId>> TurnGraph::consecutive_arc_pairs() const {
  std::vector<std::pair<ArcId, ArcId>> out;
  for (ArcId a = 0; a < num_arcs(); ++a)
    for (Index e = begin(a); e < end(a); ++e) out.emplace_back(a, transition(e).target);
  return out;
}

std::vector<bool> TurnGraph::reaches(NodeId destination) const {
  std::vector<bool> mark(static_cast<std::size_t>(num_states()), false);
  std::deque<Index> queue;
  mark[static_cast<std::size_t>(absorbing_state())] = true;
  for (ArcId a : network_.in_arcs(destination)) {
    mark[static_cast<std::size_t>(a)] = true;
    queue.push_back(a);
  }
  while (!queue.empty()) {
    const Index s = queue.front();
    queue.pop_front();
    // predecessors of arc state s
    for (Index k = in_ptr_[static_cast<std::size_t>(s)]; k < in_ptr_[static_cast<std::size_t>(s) + 1]; ++k) {
      const Index p = transitions_[static_cast<std::size_t>(in_idx_[static_cast<std::size_t>(k)])].source;
      if (!mark[static_cast<std::size_t>(p)]) {
        mark[static_cast<std::size_t>(p)] = true;
        if (is_arc_state(p)) queue.push_back(p);
      }
    }
  }
  return mark;
}

FeatureSet build_features(const TurnGraph& graph, const Eigen::VectorXd& travel_time) {
  if (travel_time.size() != graph.num_arcs())
    throw InvalidInput("travel time vector does not match the arc count");
  if (!travel_time.allFinite() || !(travel_time.array() > 0.0).all())
    throw InvalidInput("travel times must be positive and finite");
  FeatureSet f;
  f.channels.setZero(graph.num_transitions(), kNumFeatures);
  const Network& net = graph.network();
  for (Index e = 0; e < graph.num_transitions(); ++e) {
    const Transition& t = graph.transition(e);
    f.channels(e, time_channel(net, t.target)) = travel_time[t.target];
    f.channels(e, kIntersection) = t.intersection ? 1.0 : 0.0;
    f.channels(e, kLeftTurn) = t.left_turn ? 1.0 : 0.0;
    f.channels(e, kUTurn) = t.u_turn ? 1.0 : 0.0;
  }
  return f;
}

}  // namespace rlmix

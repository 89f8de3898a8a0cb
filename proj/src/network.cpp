#include "rlmix/network.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <queue>
#include <set>
#include <string>
#include <utility>

namespace rlmix {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void build_compressed(Index num_nodes, const std::vector<Arc>& arcs, bool by_tail,
                      std::vector<Index>& ptr, std::vector<Index>& idx) {
  ptr.assign(static_cast<std::size_t>(num_nodes) + 1, 0);
  for (const Arc& a : arcs) ++ptr[static_cast<std::size_t>(by_tail ? a.tail : a.head) + 1];
  for (std::size_t i = 1; i < ptr.size(); ++i) ptr[i] += ptr[i - 1];
  idx.assign(arcs.size(), 0);
  std::vector<Index> fill(ptr.begin(), ptr.end() - 1);
  for (std::size_t a = 0; a < arcs.size(); ++a) {
    const auto key = static_cast<std::size_t>(by_tail ? arcs[a].tail : arcs[a].head);
    idx[static_cast<std::size_t>(fill[key]++)] = static_cast<Index>(a);
  }
}

void check_times(const Network& network, const Eigen::VectorXd& t) {
  if (t.size() != network.num_arcs())
    throw InvalidInput("travel time vector has " + std::to_string(t.size()) +
                       " entries, network has " + std::to_string(network.num_arcs()) + " arcs");
  if (!(t.array() > 0.0).all() || !t.allFinite())
    throw InvalidInput("travel times must be positive and finite");
}

}  // namespace

Network build_network(std::vector<Node> nodes, std::vector<Arc> arcs, NetworkOptions opts) {
  if (arcs.empty()) throw InvalidInput("graph has no arcs");
  const auto n = static_cast<Index>(nodes.size());
  std::set<std::pair<NodeId, NodeId>> seen;
  bool parallel = false;
  for (std::size_t i = 0; i < arcs.size(); ++i) {
    const Arc& a = arcs[i];
    const std::string where = "arc " + std::to_string(i) + ": ";
    if (a.tail < 0 || a.tail >= n || a.head < 0 || a.head >= n)
      throw InvalidInput(where + "dangling node index");
    if (a.tail == a.head) throw InvalidInput(where + "self loop");
    if (!(a.length > 0.0) || !std::isfinite(a.length))
      throw InvalidInput(where + "nonpositive length");
    if (!(a.speed_min > 0.0) || !(a.speed_max > 0.0) || !std::isfinite(a.speed_max))
      throw InvalidInput(where + "speeds must be positive");
    if (a.speed_min > a.speed_max) throw InvalidInput(where + "speed_min exceeds speed_max");
    if (!seen.emplace(a.tail, a.head).second) {
      if (!opts.allow_parallel_arcs)
        throw InvalidInput(where + "duplicate arc (" + std::to_string(a.tail) + "," +
                           std::to_string(a.head) + ")");
      parallel = true;
    }
  }
  Network net;
  net.nodes_ = std::move(nodes);
  net.arcs_ = std::move(arcs);
  net.parallel_ = parallel;
  build_compressed(n, net.arcs_, true, net.out_ptr_, net.out_arcs_);
  build_compressed(n, net.arcs_, false, net.in_ptr_, net.in_arcs_);
  return net;
}

std::span<const ArcId> Network::out_arcs(NodeId n) const {
  const auto b = static_cast<std::size_t>(out_ptr_[static_cast<std::size_t>(n)]);
  const auto e = static_cast<std::size_t>(out_ptr_[static_cast<std::size_t>(n) + 1]);
  return std::span<const ArcId>(out_arcs_).subspan(b, e - b);
}

std::span<const ArcId> Network::in_arcs(NodeId n) const {
  const auto b = static_cast<std::size_t>(in_ptr_[static_cast<std::size_t>(n)]);
  const auto e = static_cast<std::size_t>(in_ptr_[static_cast<std::size_t>(n) + 1]);
  return std::span<const ArcId>(in_arcs_).subspan(b, e - b);
}

std::optional<ArcId> Network::find_arc(NodeId tail, NodeId head) const {
  if (tail < 0 || tail >= num_nodes()) return std::nullopt;
  for (ArcId a : out_arcs(tail))
    if (arc(a).head == head) return a;
  return std::nullopt;
}

bool Network::has_coordinates() const {
  return std::all_of(nodes_.begin(), nodes_.end(),
                     [](const Node& n) { return n.position.has_value(); });
}

Eigen::VectorXd Network::lengths() const {
  Eigen::VectorXd l(num_arcs());
  for (Index a = 0; a < num_arcs(); ++a) l[a] = arc(a).length;
  return l;
}

Index Network::diameter_in_arcs() const {
  Index diameter = 0;
  std::vector<Index> dist(static_cast<std::size_t>(num_nodes()));
  std::deque<NodeId> queue;
  for (NodeId s = 0; s < num_nodes(); ++s) {
    std::fill(dist.begin(), dist.end(), -1);
    dist[static_cast<std::size_t>(s)] = 0;
    queue.assign(1, s);
    while (!queue.empty()) {
      const NodeId u = queue.front();
      queue.pop_front();
      for (ArcId a : out_arcs(u)) {
        const NodeId v = arc(a).head;
        if (dist[static_cast<std::size_t>(v)] < 0) {
          dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
          diameter = std::max(diameter, dist[static_cast<std::size_t>(v)]);
          queue.push_back(v);
        }
      }
    }
  }
  return diameter;
}

std::vector<ArcId> Network::arcs_of_node_path(std::span<const NodeId> nodes) const {
  if (nodes.size() < 2) throw InvalidInput("a path needs at least two nodes");
  std::vector<ArcId> out;
  out.reserve(nodes.size() - 1);
  for (std::size_t i = 0; i + 1 < nodes.size(); ++i) {
    const NodeId u = nodes[i], v = nodes[i + 1];
    if (u < 0 || u >= num_nodes() || v < 0 || v >= num_nodes())
      throw InvalidInput("path references unknown node");
    std::optional<ArcId> found;
    for (ArcId a : out_arcs(u)) {
      if (arc(a).head != v) continue;
      if (found)
        throw InvalidInput("path hop " + std::to_string(u) + "->" + std::to_string(v) +
                           " is ambiguous between parallel arcs");
      found = a;
    }
    if (!found)
      throw InvalidInput("path uses nonexistent arc " + std::to_string(u) + "->" +
                         std::to_string(v));
    out.push_back(*found);
  }
  return out;
}

std::vector<NodeId> Network::node_path_of_arcs(std::span<const ArcId> arcs) const {
  std::vector<NodeId> out;
  if (arcs.empty()) return out;
  out.push_back(arc(arcs.front()).tail);
  for (ArcId a : arcs) out.push_back(arc(a).head);
  return out;
}

TravelTimeBounds travel_time_bounds(const Network& network) {
  TravelTimeBounds b{Eigen::VectorXd(network.num_arcs()), Eigen::VectorXd(network.num_arcs())};
  for (Index a = 0; a < network.num_arcs(); ++a) {
    const Arc& arc = network.arc(a);
    b.lower[a] = arc.length / arc.speed_max / 60.0;
    b.upper[a] = arc.length / arc.speed_min / 60.0;
  }
  return b;
}

TravelTimeBounds travel_time_bounds(const Network& network, double city_speed_max,
                                    double floor_speed) {
  if (!(floor_speed > 0.0)) throw InvalidInput("floor_speed must be positive");
  if (!(city_speed_max > 0.0)) throw InvalidInput("city_speed_max must be positive");
  TravelTimeBounds b{Eigen::VectorXd(network.num_arcs()), Eigen::VectorXd(network.num_arcs())};
  for (Index a = 0; a < network.num_arcs(); ++a) {
    const Arc& arc = network.arc(a);
    const double fast = std::min(arc.speed_max, city_speed_max);
    const double slow = std::min(floor_speed, fast);
    b.lower[a] = arc.length / fast / 60.0;
    b.upper[a] = arc.length / slow / 60.0;
  }
  return b;
}

Eigen::VectorXd free_flow_times(const Network& network) { return travel_time_bounds(network).lower; }

Eigen::VectorXd times_to(const Network& network, const Eigen::VectorXd& travel_time,
                         NodeId destination) {
  check_times(network, travel_time);
  Eigen::VectorXd dist = Eigen::VectorXd::Constant(network.num_nodes(), kInf);
  using Item = std::pair<double, NodeId>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  dist[destination] = 0.0;
  heap.emplace(0.0, destination);
  while (!heap.empty()) {
    const auto [du, u] = heap.top();
    heap.pop();
    if (du > dist[u]) continue;
    for (ArcId a : network.in_arcs(u)) {
      const NodeId v = network.arc(a).tail;
      const double cand = du + travel_time[a];
      if (cand < dist[v]) {
        dist[v] = cand;
        heap.emplace(cand, v);
      }
    }
  }
  return dist;
}

ShortestPath shortest_path(const Network& network, const Eigen::VectorXd& travel_time,
                           NodeId origin, NodeId destination) {
  if (origin < 0 || origin >= network.num_nodes() || destination < 0 ||
      destination >= network.num_nodes())
    throw InvalidInput("unknown origin or destination");
  if (origin == destination) throw InvalidInput("origin equals destination");
  const Eigen::VectorXd dist = times_to(network, travel_time, destination);
  if (!std::isfinite(dist[origin]))
    throw InvalidInput("destination " + std::to_string(destination) + " unreachable from " +
                       std::to_string(origin));
  // Walk the tight subgraph greedily by smallest next node.
  ShortestPath sp;
  sp.nodes.push_back(origin);
  NodeId u = origin;
  while (u != destination) {
    std::optional<ArcId> best;
    for (ArcId a : network.out_arcs(u)) {
      const NodeId v = network.arc(a).head;
      const double slack = travel_time[a] + dist[v] - dist[u];
      if (!(std::abs(slack) <= 1e-12 * std::max(1.0, dist[u]))) continue;
      if (!best || v < network.arc(*best).head) best = a;
    }
    if (!best) throw NumericalError("shortest path reconstruction failed");
    sp.arcs.push_back(*best);
    sp.time += travel_time[*best];
    u = network.arc(*best).head;
    sp.nodes.push_back(u);
  }
  return sp;
}

SyntheticGrid synthetic_grid(const GridSpec& spec) {
  if (spec.rows < 2 || spec.cols < 2) throw InvalidInput("grid needs at least 2 rows and 2 cols");
  if (!(spec.spacing > 0.0)) throw InvalidInput("grid spacing must be positive");
  std::vector<Node> nodes;
  nodes.reserve(static_cast<std::size_t>(spec.rows * spec.cols));
  for (Index r = 0; r < spec.rows; ++r)
    for (Index c = 0; c < spec.cols; ++c)
      nodes.push_back(Node{Point{static_cast<double>(c) * spec.spacing,
                                 static_cast<double>(r) * spec.spacing},
                           NodeKind::plain});
  std::vector<Arc> arcs;
  auto id = [&](Index r, Index c) { return r * spec.cols + c; };
  for (Index r = 0; r < spec.rows; ++r) {
    for (Index c = 0; c < spec.cols; ++c) {
      // east, north, west, south
      const Index dr[4] = {0, 1, 0, -1};
      const Index dc[4] = {1, 0, -1, 0};
      for (int k = 0; k < 4; ++k) {
        const Index r2 = r + dr[k], c2 = c + dc[k];
        if (r2 < 0 || r2 >= spec.rows || c2 < 0 || c2 >= spec.cols) continue;
        arcs.push_back(Arc{id(r, c), id(r2, c2), spec.spacing, spec.speed_min, spec.speed_max,
                           ArcClass::non_residential});
      }
    }
  }
  SyntheticGrid g{build_network(std::move(nodes), std::move(arcs)), {}};
  const TravelTimeBounds box = travel_time_bounds(g.network);
  g.true_times.resize(g.network.num_arcs());
  for (Index a = 0; a < g.network.num_arcs(); ++a) {
    const Arc& arc = g.network.arc(a);
    const double y = g.network.node(arc.head).position->y;
    const double bump = 3.0 * (y - 3300.0) * (y - 3300.0) / (3300.0 * 3300.0);
    double minutes = 0.0;
    if (spec.profile == GridProfile::speed) {
      const double speed = std::clamp(spec.speed_max - bump, spec.speed_min, spec.speed_max);
      minutes = arc.length / speed / 60.0;
    } else {
      const double seconds = arc.length / spec.speed_max - bump;
      minutes = seconds / 60.0;
    }
    g.true_times[a] = std::clamp(minutes, box.lower[a], box.upper[a]);
  }
  return g;
}

std::string to_string(GridProfile profile) {
  return profile == GridProfile::speed ? "speed" : "literal_seconds";
}

std::string to_string(ArcClass cls) {
  return cls == ArcClass::residential ? "residential" : "non_residential";
}

std::string to_string(NodeKind kind) {
  return kind == NodeKind::intersection_control ? "control" : "plain";
}

}  // namespace rlmix

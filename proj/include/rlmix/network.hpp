#pragma once

#include "rlmix/common.hpp"

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rlmix {

enum class ArcClass : std::uint8_t { non_residential, residential };
enum class NodeKind : std::uint8_t { plain, intersection_control };

/// Planar coordinates in meters.
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct Node {
  std::optional<Point> position;
  NodeKind kind = NodeKind::plain;
  friend bool operator==(const Node&, const Node&) = default;
};

struct Arc {
  NodeId tail = 0;
  NodeId head = 0;
  double length = 0.0;     // meters
  double speed_min = 0.0;  // m/s
  double speed_max = 0.0;  // m/s
  ArcClass cls = ArcClass::non_residential;
  friend bool operator==(const Arc&, const Arc&) = default;
};

struct NetworkOptions {
  // Parallel arcs make node sequences ambiguous, so they are opt-in.
  bool allow_parallel_arcs = false;
};

/// Directed road graph. Outgoing arcs of every node are stored contiguously
/// (one compressed column per tail node); arc ids follow insertion order.
class Network {
 public:
  Network() = default;

  Index num_nodes() const { return static_cast<Index>(nodes_.size()); }
  Index num_arcs() const { return static_cast<Index>(arcs_.size()); }

  const Node& node(NodeId n) const { return nodes_[static_cast<std::size_t>(n)]; }
  const Arc& arc(ArcId a) const { return arcs_[static_cast<std::size_t>(a)]; }
  std::span<const Node> nodes() const { return nodes_; }
  std::span<const Arc> arcs() const { return arcs_; }

  std::span<const ArcId> out_arcs(NodeId n) const;
  std::span<const ArcId> in_arcs(NodeId n) const;

  /// First arc (lowest id) from tail to head, if any.
  std::optional<ArcId> find_arc(NodeId tail, NodeId head) const;
  bool has_parallel_arcs() const { return parallel_; }
  bool has_coordinates() const;

  Eigen::VectorXd lengths() const;

  /// Longest shortest path measured in arcs over all reachable node pairs.
  Index diameter_in_arcs() const;

  /// Converts a node sequence into arc ids. Throws when a hop has no arc or
  /// is ambiguous because of parallel arcs.
  std::vector<ArcId> arcs_of_node_path(std::span<const NodeId> nodes) const;
  std::vector<NodeId> node_path_of_arcs(std::span<const ArcId> arcs) const;

  friend bool operator==(const Network& a, const Network& b) {
    return a.nodes_ == b.nodes_ && a.arcs_ == b.arcs_;
  }

 private:
  friend Network build_network(std::vector<Node>, std::vector<Arc>, NetworkOptions);

  std::vector<Node> nodes_;
  std::vector<Arc> arcs_;
  std::vector<Index> out_ptr_, out_arcs_, in_ptr_, in_arcs_;
  bool parallel_ = false;
};

/// Validates and indexes a network. Throws InvalidInput on an empty arc list,
/// dangling node ids, self loops, nonpositive lengths or speeds, inverted
/// speed bounds, and duplicate (tail, head) pairs unless parallel arcs are
/// allowed.
Network build_network(std::vector<Node> nodes, std::vector<Arc> arcs, NetworkOptions opts = {});

struct SimplifyOptions {
  double bypass_max_length = 100.0;  // meters
  double split_above_length = 200.0;
  double control_radius = 100.0;
};

/// Removes pass-through nodes, thins clustered intersection controls, splits
/// long arcs and keeps the largest strongly connected component, repeating
/// until nothing changes.
Network simplify_network(const Network& network, const SimplifyOptions& opts = {});

/// Per-arc box on travel time, minutes.
struct TravelTimeBounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};

/// Bounds from each arc's own speed limits.
TravelTimeBounds travel_time_bounds(const Network& network);

/// Bounds from the per-arc speed limit capped at `city_speed_max` and a
/// common `floor_speed`, both m/s. A floor above an arc's cap collapses the
/// box onto the free-flow time.
TravelTimeBounds travel_time_bounds(const Network& network, double city_speed_max,
                                    double floor_speed);

/// Free-flow travel time L / speed_max in minutes.
Eigen::VectorXd free_flow_times(const Network& network);

struct ShortestPath {
  std::vector<NodeId> nodes;
  std::vector<ArcId> arcs;
  double time = 0.0;
};

/// Dijkstra on arc weights `travel_time`. Among equal-time paths the
/// lexicographically smallest node sequence wins (lowest arc id between
/// parallel arcs).
ShortestPath shortest_path(const Network& network, const Eigen::VectorXd& travel_time,
                           NodeId origin, NodeId destination);

/// Shortest time from every node to `destination`; +inf when unreachable.
Eigen::VectorXd times_to(const Network& network, const Eigen::VectorXd& travel_time,
                         NodeId destination);

/// How the synthetic grid's position-dependent profile is read.
enum class GridProfile {
  // Speed (m/s) = 10 - 3 (y - 3300)^2 / 3300^2, clamped to the legal range.
  speed,
  // Travel time (s) = 60 - 3 (y - 3300)^2 / 3300^2, clamped to the box.
  literal_seconds,
};

struct GridSpec {
  Index rows = 10;
  Index cols = 10;
  double spacing = 600.0;  // meters
  double speed_min = 5.5;
  double speed_max = 10.0;
  GridProfile profile = GridProfile::speed;
};

struct SyntheticGrid {
  Network network;
  Eigen::VectorXd true_times;  // minutes
};

/// Bidirectional 4-neighbour lattice; node id = row * cols + col, located at
/// (col * spacing, row * spacing).
SyntheticGrid synthetic_grid(const GridSpec& spec = {});

std::string to_string(GridProfile profile);
std::string to_string(ArcClass cls);
std::string to_string(NodeKind kind);

}  // namespace rlmix

#pragma once

#include "rlmix/estimator.hpp"

#include <random>

namespace fx {

using namespace rlmix;

inline Node at(double x, double y, NodeKind kind = NodeKind::plain) { return Node{Point{x, y}, kind}; }

inline Arc arc(NodeId tail, NodeId head, double length = 1000.0, ArcClass cls = ArcClass::non_residential) {
  return Arc{tail, head, length, 5.0, 20.0, cls};
}

// (tt, tt, intersection, left, u-turn)
inline Weights weights(double tt, double left = 0.0, double intersection = 0.0, double uturn = -5.0) {
  Weights w;
  w << tt, tt, intersection, left, uturn;
  return w;
}

// o = 0, d = 1, two parallel arcs.
inline Network two_arc() {
  return build_network({at(0, 0), at(1000, 0)}, {arc(0, 1), arc(0, 1)}, {.allow_parallel_arcs = true});
}

// 0 -> 1 -> 2 on a line.
inline Network chain() {
  return build_network({at(0, 0), at(1000, 0), at(2000, 0)}, {arc(0, 1), arc(1, 2)});
}

// 0 -> {1 above, 2 below} -> 3. Route via 2 makes a left turn at 2.
inline Network diamond() {
  return build_network({at(0, 0), at(1000, 1000), at(1000, -1000), at(2000, 0)},
                       {arc(0, 1), arc(1, 3), arc(0, 2), arc(2, 3)});
}

// n x n lattice with only east and north arcs, so every route is monotone.
inline Network dag_grid(Index n = 3, double spacing = 500.0) {
  std::vector<Node> nodes;
  std::vector<Arc> arcs;
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < n; ++c) nodes.push_back(at(static_cast<double>(c) * spacing, static_cast<double>(r) * spacing));
  for (Index r = 0; r < n; ++r)
    for (Index c = 0; c < n; ++c) {
      const NodeId id = r * n + c;
      if (c + 1 < n) arcs.push_back(arc(id, id + 1, spacing));
      if (r + 1 < n) arcs.push_back(arc(id, id + n, spacing));
    }
  return build_network(std::move(nodes), std::move(arcs));
}

inline Eigen::VectorXd constant_times(const Network& net, double t) {
  return Eigen::VectorXd::Constant(net.num_arcs(), t);
}

inline Eigen::VectorXd random_times(const Network& net, std::mt19937_64& rng, double lo = 0.3, double hi = 1.5) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::VectorXd t(net.num_arcs());
  for (Index a = 0; a < t.size(); ++a) t[a] = u(rng);
  return t;
}

// Relative error with an absolute floor for tiny references.
inline double rel_err(double got, double want, double floor = 1e-8) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

}  // namespace fx

#include "rlmix/route_choice.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace rlmix {

Eigen::VectorXd compute_utilities(const FeatureSet& features, const Weights& b) {
  if (!b.allFinite()) throw InvalidInput("choice weights must be finite");
  return features.channels * b;
}

ValueSolver::ValueSolver(const TurnGraph& graph) : graph_(&graph) {
  const Index n = graph.num_states() - 1;  // the absorbing state lives in the right-hand side
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n + graph.num_transitions()));
  for (Index s = 0; s < n; ++s) trip.emplace_back(static_cast<int>(s), static_cast<int>(s), 1.0);
  for (const Transition& t : graph.transitions())
    trip.emplace_back(static_cast<int>(t.source), static_cast<int>(t.target), -1.0);
  pattern_.resize(n, n);
  pattern_.setFromTriplets(trip.begin(), trip.end());
  pattern_.makeCompressed();
  slot_.resize(static_cast<std::size_t>(graph.num_transitions()));
  for (Index e = 0; e < graph.num_transitions(); ++e) {
    const Transition& t = graph.transition(e);
    slot_[static_cast<std::size_t>(e)] = &pattern_.coeffRef(t.source, t.target) - pattern_.valuePtr();
  }
}

ValueSolution ValueSolver::solve(const Weights& b, const Eigen::VectorXd& travel_time,
                                 std::span<const NodeId> destinations) {
  const TurnGraph& g = *graph_;
  for (NodeId d : destinations)
    if (d < 0 || d >= g.num_nodes()) throw InvalidInput("destination out of range");

  auto eval = std::make_shared<detail::Evaluation>();
  eval->graph = graph_;
  eval->b = b;
  eval->T = travel_time;
  eval->features = build_features(g, travel_time);
  eval->utilities = compute_utilities(eval->features, b);
  eval->exp_utilities = eval->utilities.array().exp();

  Eigen::SparseMatrix<double> a = pattern_;
  double* values = a.valuePtr();
  for (std::size_t e = 0; e < slot_.size(); ++e)
    values[slot_[e]] = -eval->exp_utilities[static_cast<Index>(e)];
  eval->lu.analyzePattern(a);
  eval->lu.factorize(a);
  ++factorizations_;
  if (eval->lu.info() != Eigen::Success)
    throw NumericalError("value function diverges; utilities too close to zero");

  ValueSolution sol;
  sol.eval_ = eval;
  sol.destinations_.assign(destinations.begin(), destinations.end());
  sol.column_.assign(static_cast<std::size_t>(g.num_nodes()), -1);
  for (std::size_t k = 0; k < sol.destinations_.size(); ++k)
    sol.column_[static_cast<std::size_t>(sol.destinations_[k])] = static_cast<Index>(k);

  const Index n = g.num_states() - 1;
  const auto cols = static_cast<Index>(destinations.size());
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, cols);
  for (Index k = 0; k < cols; ++k)
    for (ArcId arc : g.network().in_arcs(sol.destinations_[static_cast<std::size_t>(k)])) rhs(arc, k) = 1.0;
  Eigen::MatrixXd z = cols > 0 ? Eigen::MatrixXd(eval->lu.solve(rhs)) : Eigen::MatrixXd(n, 0);
  if (!z.allFinite()) throw NumericalError("value function diverges; utilities too close to zero");

  sol.z_.resize(n + 1, cols);
  sol.z_.topRows(n) = z;
  sol.z_.row(n).setOnes();
  for (Index k = 0; k < cols; ++k) {
    for (Index s = 0; s < n; ++s) {
      double& v = sol.z_(s, k);
      if (v < 0.0) {
        v = -v;
        ++sol.diag_.negative;
      }
      if (v < kValueFloor) {
        v = kValueFloor;
        ++sol.diag_.clamped;
      }
    }
  }
  return sol;
}

ValueSolution solve_values(const TurnGraph& graph, const Weights& b,
                           const Eigen::VectorXd& travel_time, std::span<const NodeId> destinations) {
  ValueSolver solver(graph);
  return solver.solve(b, travel_time, destinations);
}

bool ValueSolution::has_destination(NodeId d) const {
  return d >= 0 && d < static_cast<Index>(column_.size()) && column_[static_cast<std::size_t>(d)] >= 0;
}

Eigen::Ref<const Eigen::VectorXd> ValueSolution::z(NodeId d) const {
  if (!has_destination(d))
    throw InvalidInput("destination " + std::to_string(d) + " was not solved");
  return z_.col(column_[static_cast<std::size_t>(d)]);
}

double ValueSolution::value(Index state, NodeId d) const { return std::log(z(d)[state]); }

Eigen::VectorXd ValueSolution::adjoint(NodeId o) const {
  const Index n = graph().num_states() - 1;
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  e[graph().origin_state(o)] = 1.0;
  // transpose() is only non-const by signature; the view does not mutate.
  return const_cast<detail::Lu&>(eval_->lu).transpose().solve(e);
}

Eigen::MatrixXd ValueSolution::adjoint_solve(const Eigen::MatrixXd& rhs) const {
  return const_cast<detail::Lu&>(eval_->lu).transpose().solve(rhs);
}

double TransitionTable::row_sum(const TurnGraph& graph, Index state) const {
  double s = graph.is_arc_state(state) ? absorb[state] : 0.0;
  for (Index e = graph.begin(state); e < graph.end(state); ++e) s += prob[static_cast<std::size_t>(e)];
  return s;
}

TransitionTable transition_probs(const ValueSolution& solution, NodeId d) {
  const TurnGraph& g = solution.graph();
  const auto z = solution.z(d);
  TransitionTable t;
  t.destination = d;
  t.prob.assign(static_cast<std::size_t>(g.num_transitions()), 0.0);
  t.absorb = Eigen::VectorXd::Zero(g.num_arcs());
  t.defined = g.reaches(d);
  const auto& ev = solution.exp_utilities();
  for (Index s = 0; s + 1 < g.num_states(); ++s) {
    if (!t.defined[static_cast<std::size_t>(s)]) continue;
    const double zs = z[s];
    for (Index e = g.begin(s); e < g.end(s); ++e) {
      const ArcId tgt = g.transition(e).target;
      if (t.defined[static_cast<std::size_t>(tgt)]) t.prob[static_cast<std::size_t>(e)] = ev[e] * z[tgt] / zs;
    }
    if (g.is_arc_state(s) && g.network().arc(s).head == d) t.absorb[s] = 1.0 / zs;
  }
  return t;
}

std::optional<std::vector<ArcId>> try_sample_path(const TurnGraph& graph, const TransitionTable& table,
                                                  NodeId o, Rng& rng, Index max_steps) {
  if (o < 0 || o >= graph.num_nodes()) throw InvalidInput("origin out of range");
  Index state = graph.origin_state(o);
  if (!table.defined[static_cast<std::size_t>(state)])
    throw InvalidInput("destination " + std::to_string(table.destination) +
                       " is unreachable from " + std::to_string(o));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<ArcId> path;
  while (true) {
    double u = unif(rng);
    if (graph.is_arc_state(state)) {
      u -= table.absorb[state];
      if (u < 0.0) return path;
    }
    Index chosen = -1, last = -1;
    for (Index e = graph.begin(state); e < graph.end(state); ++e) {
      const double p = table.prob[static_cast<std::size_t>(e)];
      if (p <= 0.0) continue;
      last = e;
      u -= p;
      if (u < 0.0) {
        chosen = e;
        break;
      }
    }
    if (chosen < 0) {
      // Rounding left u just above the row total.
      if (last < 0) return path;
      chosen = last;
    }
    if (static_cast<Index>(path.size()) >= max_steps) return std::nullopt;
    state = graph.transition(chosen).target;
    path.push_back(state);
  }
}

std::vector<ArcId> sample_path(const TurnGraph& graph, const TransitionTable& table, NodeId o, Rng& rng,
                               Index max_steps, int retries) {
  if (max_steps <= 0) max_steps = graph.default_max_steps();
  for (int attempt = 0; attempt <= retries; ++attempt)
    if (auto p = try_sample_path(graph, table, o, rng, max_steps)) return std::move(*p);
  throw NumericalError("trapped walk: no path from " + std::to_string(o) + " to " +
                       std::to_string(table.destination) + " within " + std::to_string(max_steps) +
                       " steps");
}

namespace {

void check_route_end(const TurnGraph& g, NodeId d, std::span<const ArcId> route) {
  if (route.empty() || g.network().arc(route.back()).head != d)
    throw InvalidInput("route does not end at destination " + std::to_string(d));
}

}  // namespace

double path_loglik(const ValueSolution& solution, NodeId o, NodeId d, std::span<const ArcId> route) {
  const TurnGraph& g = solution.graph();
  const auto edges = g.route_transitions(o, route);
  check_route_end(g, d, route);
  double v = 0.0;
  for (Index e : edges) v += solution.utilities()[e];
  return v - solution.origin_value(o, d);
}

ParamGradient grad_route_utility(const ValueSolution& solution, NodeId o, std::span<const ArcId> route) {
  const TurnGraph& g = solution.graph();
  const auto edges = g.route_transitions(o, route);
  ParamGradient grad(g.num_arcs());
  for (Index e : edges) {
    grad.b += solution.features().channels.row(e).transpose();
    const ArcId a = g.transition(e).target;
    grad.T[a] += solution.weights()[time_channel(g.network(), a)];
  }
  return grad;
}

ParamGradient grad_origin_value(const ValueSolution& solution, NodeId d, const Eigen::VectorXd& y, NodeId o) {
  // dz_o/dx = y^T (dM/dx) z, and dM_st/dx = exp(v_e) dv_e/dx, so
  // d ln z_o / dx = sum_e flow_e dv_e/dx with flow_e = y_s exp(v_e) z_t / z_o.
  const TurnGraph& g = solution.graph();
  const auto z = solution.z(d);
  const double zo = z[g.origin_state(o)];
  const auto& ev = solution.exp_utilities();
  const auto& F = solution.features().channels;
  const Weights& b = solution.weights();
  ParamGradient grad(g.num_arcs());
  for (Index e = 0; e < g.num_transitions(); ++e) {
    const Transition& t = g.transition(e);
    const double ys = y[t.source];
    if (ys == 0.0) continue;
    const double flow = ys * ev[e] * z[t.target] / zo;
    if (flow == 0.0) continue;
    grad.b += flow * F.row(e).transpose();
    grad.T[t.target] += flow * b[time_channel(g.network(), t.target)];
  }
  return grad;
}

ParamGradient grad_path_loglik(const ValueSolution& solution, NodeId o, NodeId d,
                               std::span<const ArcId> route) {
  check_route_end(solution.graph(), d, route);
  ParamGradient grad = grad_route_utility(solution, o, route);
  grad.axpy(-1.0, grad_origin_value(solution, d, solution.adjoint(o), o));
  return grad;
}

std::vector<ParamGradient> grad_origin_values(const ValueSolution& solution,
                                              std::span<const std::pair<NodeId, NodeId>> pairs,
                                              int threads) {
  std::map<NodeId, std::vector<std::size_t>> by_origin;
  for (std::size_t i = 0; i < pairs.size(); ++i) by_origin[pairs[i].first].push_back(i);
  std::vector<std::pair<NodeId, std::vector<std::size_t>>> groups(by_origin.begin(), by_origin.end());
  std::vector<ParamGradient> out(pairs.size());
  parallel_for(static_cast<Index>(groups.size()), threads, [&](Index k) {
    const auto& [o, members] = groups[static_cast<std::size_t>(k)];
    const Eigen::VectorXd y = solution.adjoint(o);
    for (std::size_t i : members) out[i] = grad_origin_value(solution, pairs[i].second, y, o);
  });
  return out;
}

ParamGradient weighted_origin_value_gradient(const ValueSolution& solution, std::span<const ValueTerm> terms) {
  const TurnGraph& g = solution.graph();
  ParamGradient grad(g.num_arcs());
  if (terms.empty()) return grad;
  const Index n = g.num_states() - 1;
  const Eigen::MatrixXd& z = solution.z_matrix();
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, z.cols());
  for (const ValueTerm& term : terms) {
    const Index k = solution.column(term.d);
    if (k < 0) throw InvalidInput("destination " + std::to_string(term.d) + " was not solved");
    const Index s = g.origin_state(term.o);
    rhs(s, k) += term.coef / z(s, k);
  }
  // Rows as contiguous columns for the per-transition dot products.
  const Eigen::MatrixXd gt = solution.adjoint_solve(rhs).transpose();
  const Eigen::MatrixXd zt = z.transpose();
  const auto& ev = solution.exp_utilities();
  const auto& F = solution.features().channels;
  const Weights& b = solution.weights();
  for (Index e = 0; e < g.num_transitions(); ++e) {
    const Transition& t = g.transition(e);
    const double flow = ev[e] * gt.col(t.source).dot(zt.col(t.target));
    if (flow == 0.0) continue;
    grad.b += flow * F.row(e).transpose();
    grad.T[t.target] += flow * b[time_channel(g.network(), t.target)];
  }
  return grad;
}

double route_time(const Eigen::VectorXd& travel_time, std::span<const ArcId> route) {
  double t = 0.0;
  for (ArcId a : route) t += travel_time[a];
  return t;
}

std::optional<std::vector<EnumeratedRoute>> enumerate_routes(const ValueSolution& solution, NodeId o,
                                                            NodeId d, Index limit) {
  const TurnGraph& g = solution.graph();
  const std::vector<bool> to_d = g.reaches(d);
  const Index start = g.origin_state(o);
  if (!to_d[static_cast<std::size_t>(start)]) return std::vector<EnumeratedRoute>{};

  // Relevant states: reachable from o and able to reach d. Reject cycles.
  const auto n = static_cast<std::size_t>(g.num_states());
  std::vector<int> color(n, 0);  // 0 new, 1 on stack, 2 done
  std::vector<double> count(n, 0.0);  // routes from a state to d
  bool cyclic = false;
  std::function<void(Index)> visit = [&](Index s) {
    color[static_cast<std::size_t>(s)] = 1;
    double c = (g.is_arc_state(s) && g.network().arc(s).head == d) ? 1.0 : 0.0;
    for (Index e = g.begin(s); e < g.end(s) && !cyclic; ++e) {
      const ArcId t = g.transition(e).target;
      if (!to_d[static_cast<std::size_t>(t)]) continue;
      if (color[static_cast<std::size_t>(t)] == 1) {
        cyclic = true;
        return;
      }
      if (color[static_cast<std::size_t>(t)] == 0) visit(t);
      c += count[static_cast<std::size_t>(t)];
    }
    count[static_cast<std::size_t>(s)] = c;
    color[static_cast<std::size_t>(s)] = 2;
  };
  visit(start);
  if (cyclic || count[static_cast<std::size_t>(start)] > static_cast<double>(limit)) return std::nullopt;

  std::vector<EnumeratedRoute> routes;
  std::vector<ArcId> stack;
  const double w0 = solution.origin_value(o, d);
  std::function<void(Index, double)> walk = [&](Index s, double v) {
    if (g.is_arc_state(s) && g.network().arc(s).head == d) routes.push_back({stack, v - w0});
    for (Index e = g.begin(s); e < g.end(s); ++e) {
      const ArcId t = g.transition(e).target;
      if (!to_d[static_cast<std::size_t>(t)]) continue;
      stack.push_back(t);
      walk(t, v + solution.utilities()[e]);
      stack.pop_back();
    }
  };
  walk(start, 0.0);
  return routes;
}

}  // namespace rlmix

#include "rlmix/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace rlmix {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

Granularity Observation::granularity() const {
  const bool dest = destination().has_value();
  if (dest && has_path() && t) return Granularity::full;
  if (dest && t) return Granularity::no_path;
  if (dest && has_path()) return Granularity::no_time;
  if (t) return Granularity::no_destination;
  return Granularity::od_only;
}

Observation Observation::without_path() const {
  Observation o = *this;
  o.d = destination();
  o.path.clear();
  return o;
}

Observation Observation::without_time() const {
  Observation o = *this;
  o.t.reset();
  return o;
}

void validate(const Observation& obs, const Network& network) {
  auto node_ok = [&](NodeId n) { return n >= 0 && n < network.num_nodes(); };
  if (!node_ok(obs.o)) throw InvalidInput("origin " + std::to_string(obs.o) + " is not a node");
  if (obs.d && !node_ok(*obs.d)) throw InvalidInput("destination " + std::to_string(*obs.d) + " is not a node");
  if (!obs.d && !obs.t && !obs.has_path()) throw InvalidInput("record needs a destination or a time");
  if (obs.t && !(*obs.t > 0.0 && std::isfinite(*obs.t))) throw InvalidInput("travel time must be positive");
  if (!(obs.weight > 0.0) || !std::isfinite(obs.weight)) throw InvalidInput("weight must be positive");
  if (obs.has_path()) {
    if (obs.path.size() < 2) throw InvalidInput("path needs at least two nodes");
    if (obs.path.front() != obs.o) throw InvalidInput("path does not start at the origin");
    if (obs.d && obs.path.back() != *obs.d) throw InvalidInput("path does not end at the destination");
    for (NodeId n : obs.path)
      if (!node_ok(n)) throw InvalidInput("path visits unknown node " + std::to_string(n));
    network.arcs_of_node_path(obs.path);
  }
  if (const auto d = obs.destination(); d && *d == obs.o && !obs.has_path())
    throw InvalidInput("origin equals destination");
}

ODDistributions::ODDistributions(std::span<const Observation> observations) {
  for (const Observation& obs : observations) {
    total_ += obs.weight;
    origin_[obs.o] += obs.weight;
    if (auto d = obs.destination()) dest_[obs.o][*d] += obs.weight;
  }
}

double ODDistributions::log_p_origin(NodeId o) const {
  auto it = origin_.find(o);
  if (it == origin_.end() || total_ == 0.0) return kNegInf;
  return std::log(it->second / total_);
}

double ODDistributions::log_p_destination(NodeId o, NodeId d) const {
  auto it = dest_.find(o);
  if (it == dest_.end()) return kNegInf;
  double sum = 0.0;
  for (const auto& [_, w] : it->second) sum += w;
  auto jt = it->second.find(d);
  if (jt == it->second.end()) return kNegInf;
  return std::log(jt->second / sum);
}

std::vector<std::pair<NodeId, double>> ODDistributions::destinations_of(NodeId o) const {
  std::vector<std::pair<NodeId, double>> out;
  auto it = dest_.find(o);
  if (it == dest_.end()) return out;
  double sum = 0.0;
  for (const auto& [_, w] : it->second) sum += w;
  for (const auto& [d, w] : it->second) out.emplace_back(d, w / sum);
  return out;
}

ModelState::ModelState(ValueSolution values) : values_(std::move(values)) {
  for (NodeId d : values_.destinations()) tables_.emplace(d, transition_probs(values_, d));
}

const TransitionTable& ModelState::table(NodeId d) const {
  auto it = tables_.find(d);
  if (it == tables_.end()) throw InvalidInput("destination " + std::to_string(d) + " was not solved");
  return it->second;
}

ModelState evaluate_model(ValueSolver& solver, const Weights& b, const Eigen::VectorXd& travel_time,
                          std::span<const Observation> observations, const ODDistributions& od) {
  std::set<NodeId> dests;
  for (const Observation& obs : observations) {
    if (auto d = obs.destination()) dests.insert(*d);
    else
      for (const auto& [d, _] : od.destinations_of(obs.o)) dests.insert(d);
  }
  const std::vector<NodeId> list(dests.begin(), dests.end());
  return ModelState(solver.solve(b, travel_time, list));
}

namespace {

// One term of ln sum_k exp(log_w_k): a route and the weight of its term.
struct Draw {
  NodeId d = 0;
  std::vector<ArcId> route;
  double log_w = 0.0;
  double dtheta = 0.0;  // d ln f / d t_hat, zero when the record has no time
};

double od_terms(const Observation& obs, const MixtureContext& ctx, bool with_destination) {
  if (!ctx.od) return 0.0;
  double v = ctx.od->log_p_origin(obs.o);
  if (with_destination) v += ctx.od->log_p_destination(obs.o, *obs.destination());
  return v;
}

std::vector<ArcId> observed_route(const Observation& obs, const MixtureContext& ctx) {
  return ctx.state->graph().network().arcs_of_node_path(obs.path);
}

// Adds scale * (grad ln f + grad of the summed route utility).
void add_route_terms(ParamGradient& g, double scale, const ValueSolution& values, NodeId o,
                     std::span<const ArcId> route, double dtheta) {
  const TurnGraph& graph = values.graph();
  Index state = graph.origin_state(o);
  for (ArcId a : route) {
    const auto e = graph.find_transition(state, a);
    if (!e) throw InvalidInput("route is not a walk of the network");
    g.b += scale * values.features().channels.row(*e).transpose();
    g.T[a] += scale * (dtheta + values.weights()[time_channel(graph.network(), a)]);
    state = a;
  }
}

// Samples K routes to d; trapped walks are dropped. Throws if all are dropped.
std::vector<std::vector<ArcId>> draw_routes(NodeId o, NodeId d, const MixtureContext& ctx, Index K, Rng& rng) {
  const TurnGraph& g = ctx.state->graph();
  const TransitionTable& table = ctx.state->table(d);
  const Index max_steps = ctx.sampling.max_steps > 0 ? ctx.sampling.max_steps : g.default_max_steps();
  std::vector<std::vector<ArcId>> out;
  out.reserve(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k) {
    for (int attempt = 0; attempt <= ctx.sampling.retries; ++attempt) {
      if (auto r = try_sample_path(g, table, o, rng, max_steps)) {
        out.push_back(std::move(*r));
        break;
      }
    }
  }
  if (out.empty())
    throw NumericalError("every sampled walk from " + std::to_string(o) + " to " + std::to_string(d) +
                         " was trapped");
  return out;
}

// Draws for ln E_r[f(t; t_hat)] towards d, each log_w shifted by `log_prior`.
void expectation_draws(std::vector<Draw>& draws, NodeId o, NodeId d, double t, double log_prior,
                       const MixtureContext& ctx, Rng& rng) {
  const ValueSolution& values = ctx.state->values();
  const Eigen::VectorXd& T = ctx.state->travel_times();
  if (ctx.sampling.exact_when_enumerable) {
    if (auto routes = enumerate_routes(values, o, d, ctx.sampling.enumeration_limit)) {
      if (routes->empty()) throw InvalidInput("destination unreachable from origin");
      for (auto& r : *routes) {
        const double th = route_time(T, r.arcs);
        draws.push_back({d, std::move(r.arcs), log_prior + r.log_prob + ctx.density->logpdf(t, th),
                         ctx.density->dlogpdf_dtheta(t, th)});
      }
      return;
    }
  }
  auto routes = draw_routes(o, d, ctx, ctx.sampling.samples, rng);
  const double lk = std::log(static_cast<double>(routes.size()));
  for (auto& r : routes) {
    const double th = route_time(T, r);
    draws.push_back({d, std::move(r), log_prior + ctx.density->logpdf(t, th) - lk,
                     ctx.density->dlogpdf_dtheta(t, th)});
  }
}

std::vector<Draw> collect_draws(const Observation& obs, const MixtureContext& ctx, Rng& rng,
                                const OfflineSamples* offline) {
  std::vector<Draw> draws;
  const ValueSolution& values = ctx.state->values();
  const Eigen::VectorXd& T = ctx.state->travel_times();
  switch (obs.granularity()) {
    case Granularity::full: {
      const NodeId d = *obs.destination();
      auto route = observed_route(obs, ctx);
      const double th = route_time(T, route);
      const double lp = path_loglik(values, obs.o, d, route);
      draws.push_back({d, std::move(route), lp + ctx.density->logpdf(*obs.t, th),
                       ctx.density->dlogpdf_dtheta(*obs.t, th)});
      break;
    }
    case Granularity::no_time: {
      const NodeId d = *obs.destination();
      auto route = observed_route(obs, ctx);
      const double lp = path_loglik(values, obs.o, d, route);
      draws.push_back({d, std::move(route), lp, 0.0});
      break;
    }
    case Granularity::no_path: {
      const NodeId d = *obs.destination();
      if (offline) {
        if (offline->routes.empty()) throw InvalidInput("offline estimator needs proposal samples");
        const double lk = std::log(static_cast<double>(offline->routes.size()));
        for (std::size_t k = 0; k < offline->routes.size(); ++k) {
          const auto& r = offline->routes[k];
          if (!std::isfinite(offline->log_q[k])) throw InvalidInput("proposal sample has zero probability");
          const double th = route_time(T, r);
          const double lp = path_loglik(values, obs.o, d, r);
          draws.push_back({d, r, lp - offline->log_q[k] + ctx.density->logpdf(*obs.t, th) - lk,
                           ctx.density->dlogpdf_dtheta(*obs.t, th)});
        }
      } else {
        expectation_draws(draws, obs.o, d, *obs.t, 0.0, ctx, rng);
      }
      break;
    }
    case Granularity::no_destination: {
      if (!ctx.od || ctx.od->destinations_of(obs.o).empty())
        throw InvalidInput("a record without destination needs destination frequencies for its origin");
      for (const auto& [d, p] : ctx.od->destinations_of(obs.o))
        expectation_draws(draws, obs.o, d, *obs.t, std::log(p), ctx, rng);
      break;
    }
    case Granularity::od_only:
      break;
  }
  return draws;
}

double draws_loglik(const std::vector<Draw>& draws) {
  if (draws.empty()) return 0.0;
  Eigen::VectorXd lw(static_cast<Index>(draws.size()));
  for (std::size_t k = 0; k < draws.size(); ++k) lw[static_cast<Index>(k)] = draws[k].log_w;
  return logsumexp(lw);
}

double obs_loglik(const Observation& obs, const MixtureContext& ctx, Rng& rng) {
  const double core = draws_loglik(collect_draws(obs, ctx, rng, nullptr));
  return core + od_terms(obs, ctx, obs.granularity() != Granularity::no_destination);
}

void require(const Observation& obs, Granularity g, const char* what) {
  if (obs.granularity() != g) throw InvalidInput(std::string(what) + " does not match the record's fields");
}

}  // namespace

double loglik_full(const Observation& obs, const MixtureContext& ctx) {
  require(obs, Granularity::full, "full likelihood");
  Rng unused(0);
  return obs_loglik(obs, ctx, unused);
}

double loglik_no_time(const Observation& obs, const MixtureContext& ctx) {
  Observation o = obs.without_time();
  require(o, Granularity::no_time, "path likelihood");
  Rng unused(0);
  return obs_loglik(o, ctx, unused);
}

double loglik_no_path(const Observation& obs, const MixtureContext& ctx, Rng& rng) {
  Observation o = obs.without_path();
  require(o, Granularity::no_path, "path-free likelihood");
  return obs_loglik(o, ctx, rng);
}

double loglik_no_destination(const Observation& obs, const MixtureContext& ctx, Rng& rng) {
  require(obs, Granularity::no_destination, "destination-free likelihood");
  return obs_loglik(obs, ctx, rng);
}

double observation_loglik(const Observation& obs, const MixtureContext& ctx, Rng& rng) {
  return obs.weight * obs_loglik(obs, ctx, rng);
}

Eigen::VectorXd dest_posterior(NodeId o, double t, std::span<const NodeId> candidates,
                               const MixtureContext& ctx, Rng& rng) {
  if (candidates.empty()) throw InvalidInput("no candidate destinations");
  const bool known = ctx.od && !ctx.od->destinations_of(o).empty();
  const TurnGraph& g = ctx.state->graph();
  Eigen::VectorXd logp(static_cast<Index>(candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const NodeId d = candidates[i];
    const double prior = known ? ctx.od->log_p_destination(o, d) : 0.0;
    if (d == o || !std::isfinite(prior) || !g.reaches(d)[static_cast<std::size_t>(g.origin_state(o))]) {
      logp[static_cast<Index>(i)] = kNegInf;
      continue;
    }
    std::vector<Draw> draws;
    expectation_draws(draws, o, d, t, prior, ctx, rng);
    logp[static_cast<Index>(i)] = draws_loglik(draws);
  }
  const double z = logsumexp(logp);
  if (!std::isfinite(z)) throw InvalidInput("no reachable candidate destination");
  return (logp.array() - z).exp();
}

double mixed_loglik(std::span<const Observation> observations, const MixtureContext& ctx,
                    std::uint64_t seed, int threads) {
  constexpr Index kChunk = 64;
  const auto n = static_cast<Index>(observations.size());
  const Index chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(static_cast<std::size_t>(chunks), 0.0);
  parallel_for(chunks, threads, [&](Index c) {
    double s = 0.0;
    for (Index i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
      try {
        s += observation_loglik(observations[static_cast<std::size_t>(i)], ctx, rng);
      } catch (const InvalidInput& e) {
        throw InvalidInput("observation " + std::to_string(i) + ": " + e.what());
      }
    }
    partial[static_cast<std::size_t>(c)] = s;
  });
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

OriginValueGradients::OriginValueGradients(const ValueSolution& values,
                                           std::span<const std::pair<NodeId, NodeId>> pairs, int threads) {
  std::set<std::pair<NodeId, NodeId>> unique(pairs.begin(), pairs.end());
  const std::vector<std::pair<NodeId, NodeId>> list(unique.begin(), unique.end());
  auto grads = grad_origin_values(values, list, threads);
  for (std::size_t i = 0; i < list.size(); ++i) cache_.emplace(list[i], std::move(grads[i]));
}

const ParamGradient& OriginValueGradients::get(const ValueSolution& values, NodeId o, NodeId d) const {
  auto it = cache_.find({o, d});
  if (it != cache_.end()) return it->second;
  return cache_.emplace(std::make_pair(o, d), grad_origin_value(values, d, values.adjoint(o), o)).first->second;
}

ObservationGradient observation_gradient(const Observation& obs, const MixtureContext& ctx, Rng& rng,
                                         const OriginValueGradients* wgrad, const OfflineSamples* offline) {
  const ValueSolution& values = ctx.state->values();
  ObservationGradient out;
  out.grad = ParamGradient(values.graph().num_arcs());
  const std::vector<Draw> draws = collect_draws(obs, ctx, rng, offline);
  if (draws.empty()) {
    out.loglik = obs.weight * od_terms(obs, ctx, true);
    return out;
  }
  const double lse = draws_loglik(draws);
  std::map<NodeId, double> dest_mass;
  for (const Draw& dr : draws) {
    const double w = std::exp(dr.log_w - lse);
    if (w == 0.0) continue;
    add_route_terms(out.grad, w, values, obs.o, dr.route, dr.dtheta);
    dest_mass[dr.d] += w;
  }
  out.loglik = obs.weight * (lse + od_terms(obs, ctx, obs.granularity() != Granularity::no_destination));
  out.grad *= obs.weight;
  for (const auto& [d, m] : dest_mass) {
    if (wgrad) out.grad.axpy(-m * obs.weight, wgrad->get(values, obs.o, d));
    else out.value_terms.push_back({obs.o, d, m * obs.weight});
  }
  return out;
}

ParamGradient grad_online(const Observation& obs, const MixtureContext& ctx, Rng& rng) {
  Observation o = obs.without_path();
  require(o, Granularity::no_path, "online estimator");
  o.weight = 1.0;
  OriginValueGradients cache;
  return observation_gradient(o, ctx, rng, &cache).grad;
}

ParamGradient grad_offline(const Observation& obs, const MixtureContext& ctx, const OfflineSamples& samples) {
  Observation o = obs.without_path();
  require(o, Granularity::no_path, "offline estimator");
  o.weight = 1.0;
  OriginValueGradients cache;
  Rng unused(0);
  return observation_gradient(o, ctx, unused, &cache, &samples).grad;
}

OfflineSamples draw_offline_samples(const Observation& obs, const MixtureContext& ctx,
                                    const RouteProposal& proposal, Index K, Rng& rng) {
  if (proposal.routes.size() != proposal.probs.size() || proposal.routes.empty())
    throw InvalidInput("proposal needs one probability per route");
  const NodeId d = *obs.without_path().destination();
  if (auto routes = enumerate_routes(ctx.state->values(), obs.o, d, ctx.sampling.enumeration_limit)) {
    for (const auto& r : *routes) {
      bool covered = false;
      for (std::size_t i = 0; i < proposal.routes.size(); ++i)
        if (proposal.routes[i] == r.arcs && proposal.probs[i] > 0.0) covered = true;
      if (!covered && r.log_prob > kNegInf)
        throw InvalidInput("proposal does not cover a route the model can choose");
    }
  }
  std::discrete_distribution<std::size_t> pick(proposal.probs.begin(), proposal.probs.end());
  OfflineSamples s;
  for (Index k = 0; k < K; ++k) {
    const std::size_t i = pick(rng);
    s.routes.push_back(proposal.routes[i]);
    s.log_q.push_back(std::log(proposal.probs[i]));
  }
  return s;
}

Eigen::VectorXd flatten(const ParamGradient& g) {
  Eigen::VectorXd v(kNumFeatures + g.T.size());
  v << g.b, g.T;
  return v;
}

namespace {

// Mean and standard error of scale_k * f_k * (h_k - grad w) over draws.
GradientStats sample_stats(const Observation& obs, const MixtureContext& ctx,
                           const std::vector<std::vector<ArcId>>& routes, const std::vector<double>& log_scale) {
  const ValueSolution& values = ctx.state->values();
  const NodeId d = *obs.destination();
  const ParamGradient gw = grad_origin_value(values, d, values.adjoint(obs.o), obs.o);
  const Eigen::VectorXd gw_flat = flatten(gw);
  const Index dim = gw_flat.size();
  // Many draws repeat the same route; cache the per-route estimate.
  std::map<std::pair<std::vector<ArcId>, double>, Eigen::VectorXd> memo;
  std::vector<const Eigen::VectorXd*> per_sample;
  per_sample.reserve(routes.size());
  for (std::size_t k = 0; k < routes.size(); ++k) {
    auto key = std::make_pair(routes[k], log_scale[k]);
    auto it = memo.find(key);
    if (it == memo.end()) {
      const double th = route_time(ctx.state->travel_times(), routes[k]);
      ParamGradient h(values.graph().num_arcs());
      add_route_terms(h, 1.0, values, obs.o, routes[k], ctx.density->dlogpdf_dtheta(*obs.t, th));
      const double f = std::exp(log_scale[k] + ctx.density->logpdf(*obs.t, th));
      it = memo.emplace(std::move(key), f * (flatten(h) - gw_flat)).first;
    }
    per_sample.push_back(&it->second);
  }
  // Two passes, so identical samples give an exactly zero spread.
  const auto n = static_cast<double>(routes.size());
  GradientStats s;
  s.samples = static_cast<Index>(routes.size());
  s.mean = Eigen::VectorXd::Zero(dim);
  for (const Eigen::VectorXd* g : per_sample) s.mean += *g;
  s.mean /= n;
  Eigen::VectorXd ss = Eigen::VectorXd::Zero(dim);
  for (const Eigen::VectorXd* g : per_sample) ss += (*g - s.mean).cwiseAbs2();
  s.std_error = (ss / std::max(1.0, n - 1.0) / n).cwiseSqrt();
  return s;
}

}  // namespace

GradientStats grad_online_stats(const Observation& obs, const MixtureContext& ctx, Index K, Rng& rng) {
  const Observation o = obs.without_path();
  require(o, Granularity::no_path, "online estimator");
  auto routes = draw_routes(o.o, *o.d, ctx, K, rng);
  return sample_stats(o, ctx, routes, std::vector<double>(routes.size(), 0.0));
}

GradientStats grad_offline_stats(const Observation& obs, const MixtureContext& ctx,
                                 const OfflineSamples& samples) {
  const Observation o = obs.without_path();
  require(o, Granularity::no_path, "offline estimator");
  std::vector<double> scale(samples.routes.size());
  for (std::size_t k = 0; k < scale.size(); ++k) {
    if (!std::isfinite(samples.log_q[k])) throw InvalidInput("proposal sample has zero probability");
    scale[k] = path_loglik(ctx.state->values(), o.o, *o.d, samples.routes[k]) - samples.log_q[k];
  }
  return sample_stats(o, ctx, samples.routes, scale);
}

std::optional<std::pair<Eigen::VectorXd, double>> exact_expected_gradient(const Observation& obs,
                                                                          const MixtureContext& ctx) {
  const Observation o = obs.without_path();
  require(o, Granularity::no_path, "expected gradient");
  const ValueSolution& values = ctx.state->values();
  auto routes = enumerate_routes(values, o.o, *o.d, ctx.sampling.enumeration_limit);
  if (!routes) return std::nullopt;
  const Eigen::VectorXd gw = flatten(grad_origin_value(values, *o.d, values.adjoint(o.o), o.o));
  Eigen::VectorXd g = Eigen::VectorXd::Zero(gw.size());
  double ef = 0.0;
  for (const auto& r : *routes) {
    const double th = route_time(ctx.state->travel_times(), r.arcs);
    ParamGradient h(values.graph().num_arcs());
    add_route_terms(h, 1.0, values, o.o, r.arcs, ctx.density->dlogpdf_dtheta(*o.t, th));
    const double pf = std::exp(r.log_prob + ctx.density->logpdf(*o.t, th));
    g += pf * (flatten(h) - gw);
    ef += pf;
  }
  return std::make_pair(g, ef);
}

}  // namespace rlmix

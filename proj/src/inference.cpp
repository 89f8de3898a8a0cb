#include "rlmix/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>

namespace rlmix {

RouteTimeDistribution route_time_distribution(const ModelState& state, NodeId o, NodeId d,
                                              const PredictOptions& opts, Rng& rng) {
  if (o == d) throw InvalidInput("origin equals destination");
  const TurnGraph& g = state.graph();
  const TransitionTable& table = state.table(d);
  if (!table.defined[static_cast<std::size_t>(g.origin_state(o))])
    throw InvalidInput("destination " + std::to_string(d) + " is unreachable from " + std::to_string(o));
  RouteTimeDistribution dist;
  if (opts.exact_when_enumerable) {
    if (auto routes = enumerate_routes(state.values(), o, d, opts.enumeration_limit)) {
      dist.exact = true;
      for (const auto& r : *routes) {
        dist.times.push_back(route_time(state.travel_times(), r.arcs));
        dist.weights.push_back(std::exp(r.log_prob));
      }
      // Normalize away rounding in the value functions.
      double s = 0.0;
      for (double w : dist.weights) s += w;
      for (double& w : dist.weights) w /= s;
      return dist;
    }
  }
  if (opts.samples < 1) throw InvalidInput("need at least one sample");
  const Index max_steps = opts.max_steps > 0 ? opts.max_steps : g.default_max_steps();
  for (Index k = 0; k < opts.samples; ++k)
    dist.times.push_back(route_time(state.travel_times(), sample_path(g, table, o, rng, max_steps)));
  dist.weights.assign(dist.times.size(), 1.0 / static_cast<double>(dist.times.size()));
  return dist;
}

double expected_path_time(const RouteTimeDistribution& dist) {
  double m = 0.0;
  for (std::size_t k = 0; k < dist.times.size(); ++k) m += dist.weights[k] * dist.times[k];
  return m;
}

double predict_geomean(const RouteTimeDistribution& dist, const ObservationDensity& density) {
  double m = 0.0;
  for (std::size_t k = 0; k < dist.times.size(); ++k) m += dist.weights[k] * std::log(dist.times[k]);
  return std::exp(m + density.log_mean_shift());
}

double predict_mean(const RouteTimeDistribution& dist, const ObservationDensity& density) {
  return density.mean_multiplier() * expected_path_time(dist);
}

double predict_mode(const RouteTimeDistribution& dist, const ObservationDensity& density,
                    const PredictOptions& opts) {
  if (dist.times.empty()) throw InvalidInput("empty route time distribution");
  // With unimodal components the mixture mode lies between the smallest and
  // largest component mode.
  std::vector<double> modes;
  for (double t : dist.times) modes.push_back(t * density.mode_multiplier());
  std::sort(modes.begin(), modes.end());
  const double median = modes[modes.size() / 2];
  const double spacing_min = opts.knot_fraction * median;
  const double lo = modes.front(), hi = modes.back();

  auto log_density = [&](double x) {
    Eigen::VectorXd terms(static_cast<Index>(dist.times.size()));
    for (std::size_t k = 0; k < dist.times.size(); ++k)
      terms[static_cast<Index>(k)] = std::log(dist.weights[k]) + density.logpdf(x, dist.times[k]);
    return logsumexp(terms);
  };

  std::vector<double> knots;
  const Index count = std::clamp<Index>(static_cast<Index>((hi - lo) / spacing_min) + 1, 1, opts.max_knots);
  for (Index i = 0; i < count; ++i)
    knots.push_back(count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1));
  // Component modes are natural candidates; thin them to the knot spacing.
  for (double m : modes)
    if (static_cast<Index>(knots.size()) < 2 * opts.max_knots) knots.push_back(m);
  std::sort(knots.begin(), knots.end());
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());

  std::size_t best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < knots.size(); ++i) {
    const double v = log_density(knots[i]);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  const double a = best > 0 ? knots[best - 1] : knots[best] - spacing_min;
  const double b = best + 1 < knots.size() ? knots[best + 1] : knots[best] + spacing_min;
  const double x = golden_section_minimize([&](double y) { return -log_density(y); },
                                           std::max(a, 0.5 * knots[best]), b, 1e-10 * median);
  return log_density(x) >= best_val ? x : knots[best];
}

Prediction predict(const ModelState& state, const ObservationDensity& density, NodeId o, NodeId d,
                   const PredictOptions& opts, Rng& rng) {
  const RouteTimeDistribution dist = route_time_distribution(state, o, d, opts, rng);
  Prediction p;
  p.o = o;
  p.d = d;
  p.mean = predict_mean(dist, density);
  p.geomean = predict_geomean(dist, density);
  p.mode = predict_mode(dist, density, opts);
  p.samples = static_cast<Index>(dist.times.size());
  p.exact = dist.exact;
  return p;
}

double rmsle(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size()) throw InvalidInput("rmsle inputs differ in length");
  if (predicted.empty()) throw InvalidInput("rmsle of nothing");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!(predicted[i] > 0.0) || !(observed[i] > 0.0)) throw InvalidInput("rmsle needs positive values");
    const double r = std::log(predicted[i]) - std::log(observed[i]);
    s += r * r;
  }
  return std::sqrt(s / static_cast<double>(predicted.size()));
}

double rmsle(const Eigen::VectorXd& predicted, const Eigen::VectorXd& observed) {
  return rmsle(std::span<const double>(predicted.data(), static_cast<std::size_t>(predicted.size())),
               std::span<const double>(observed.data(), static_cast<std::size_t>(observed.size())));
}

EvaluationReport evaluate(std::span<const Observation> observations, const ModelState& state,
                          const ObservationDensity& density, const PredictOptions& opts,
                          std::uint64_t seed, int threads) {
  std::map<std::pair<NodeId, NodeId>, Prediction> preds;
  for (const Observation& obs : observations)
    if (obs.t && obs.destination()) preds.emplace(std::make_pair(obs.o, *obs.destination()), Prediction{});
  std::vector<std::pair<NodeId, NodeId>> keys;
  for (const auto& [k, _] : preds) keys.push_back(k);
  std::vector<Prediction> out(keys.size());
  parallel_for(static_cast<Index>(keys.size()), threads, [&](Index i) {
    const auto [o, d] = keys[static_cast<std::size_t>(i)];
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(o), static_cast<std::uint64_t>(d));
    out[static_cast<std::size_t>(i)] = predict(state, density, o, d, opts, rng);
  });
  for (std::size_t i = 0; i < keys.size(); ++i) preds[keys[i]] = out[i];

  EvaluationReport rep;
  std::vector<double> obs_t, g, m, md;
  for (const Observation& obs : observations) {
    if (!obs.t || !obs.destination()) continue;
    EvaluationRecord r;
    r.o = obs.o;
    r.d = *obs.destination();
    r.observed = *obs.t;
    r.prediction = preds.at({r.o, r.d});
    const double e = std::log(r.prediction.geomean) - std::log(r.observed);
    r.sq_log_error = e * e;
    rep.records.push_back(r);
    obs_t.push_back(r.observed);
    g.push_back(r.prediction.geomean);
    m.push_back(r.prediction.mean);
    md.push_back(r.prediction.mode);
  }
  if (rep.records.empty()) throw InvalidInput("no timed records with a destination to evaluate");
  rep.rmsle_geomean = rmsle(g, obs_t);
  rep.rmsle_mean = rmsle(m, obs_t);
  rep.rmsle_mode = rmsle(md, obs_t);
  return rep;
}

}  // namespace rlmix

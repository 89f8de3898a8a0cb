#include "rlmix/estimator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <numeric>
#include <string>

namespace rlmix {

RegularizationTerms regularization(const Eigen::VectorXd& travel_time, const Eigen::VectorXd& lengths,
                                   std::span<const std::pair<ArcId, ArcId>> pairs) {
  RegularizationTerms r;
  r.gradient = Eigen::VectorXd::Zero(travel_time.size());
  for (const auto& [a, c] : pairs) {
    const double denom = lengths[a] + lengths[c];
    const double diff = std::log(travel_time[a] / lengths[a]) - std::log(travel_time[c] / lengths[c]);
    r.value += diff * diff / denom;
    r.gradient[a] += 2.0 * diff / (denom * travel_time[a]);
    r.gradient[c] -= 2.0 * diff / (denom * travel_time[c]);
  }
  return r;
}

Eigen::VectorXd project_T(const Eigen::VectorXd& travel_time, const TravelTimeBounds& bounds) {
  if (travel_time.size() != bounds.lower.size() || travel_time.size() != bounds.upper.size())
    throw InvalidInput("travel time vector does not match the bounds");
  return travel_time.cwiseMax(bounds.lower).cwiseMin(bounds.upper);
}

std::string to_string(EstimatorKind kind) { return kind == EstimatorKind::online ? "online" : "offline"; }

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

OfflineSamples draw_proposal(const Observation& obs, const ModelState& state, Index K, Index max_steps, Rng& rng) {
  const NodeId d = *obs.destination();
  OfflineSamples s;
  for (Index k = 0; k < K; ++k) {
    auto r = sample_path(state.graph(), state.table(d), obs.o, rng, max_steps);
    s.log_q.push_back(path_loglik(state.values(), obs.o, d, r));
    s.routes.push_back(std::move(r));
  }
  return s;
}

}  // namespace

FitResult fit(const ObservationSet& data, const TurnGraph& graph, const TravelTimeBounds& bounds,
              const EstimatorConfig& config, const Eigen::VectorXd* reference_times) {
  const auto t_start = Clock::now();
  if (data.empty()) throw InvalidInput("no observations to fit");
  if (!(config.eta > 0.0)) throw InvalidInput("eta must be positive");
  if (!(config.lambda >= 0.0)) throw InvalidInput("lambda must be nonnegative");
  if (config.stop_window < 1) throw InvalidInput("stop_window must be at least 1");
  if (config.samples < 1) throw InvalidInput("samples must be at least 1");
  const Network& net = graph.network();
  const Index A = net.num_arcs();
  if (bounds.lower.size() != A || bounds.upper.size() != A) throw InvalidInput("bounds do not match the network");
  for (std::size_t i = 0; i < data.size(); ++i) {
    try {
      validate(data.observations[i], net);
    } catch (const InvalidInput& e) {
      throw InvalidInput("observation " + std::to_string(i) + ": " + e.what());
    }
  }

  const auto N = static_cast<Index>(data.size());
  const Index B = (config.batch_size <= 0 || config.batch_size >= N) ? N : config.batch_size;
  const ODDistributions od = data.od_distributions();
  const SmsleDensity density(config.gamma);
  const auto arc_pairs = graph.consecutive_arc_pairs();
  const Eigen::VectorXd lengths = net.lengths();
  const Index max_steps = graph.default_max_steps();

  Weights b = config.b0.b;
  Eigen::VectorXd T = project_T(config.T0 ? *config.T0 : Eigen::VectorXd(bounds.lower / 0.9), bounds);

  const Index dim = kNumFeatures + A;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dim), v = Eigen::VectorXd::Zero(dim);

  ValueSolver solver(graph);
  FitResult result;
  result.b = b;
  result.T = T;
  std::vector<Index> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = make_rng(config.seed, 3);
  Index cursor = N;  // forces a shuffle on the first batch when batching

  std::vector<OfflineSamples> proposals(config.estimator == EstimatorKind::offline ? data.size() : 0);
  std::vector<Index> proposal_age(proposals.size(), -1);

  std::deque<double> window;
  std::vector<double> smoothed_hist;
  double best_smoothed = -std::numeric_limits<double>::infinity();

  for (Index it = 1; it <= config.max_iters; ++it) {
    std::vector<Index> batch_idx;
    if (B == N) {
      batch_idx = order;
    } else {
      if (cursor + B > N) {
        for (Index i = N - 1; i > 0; --i) {
          const auto j = static_cast<Index>(shuffle_rng() % static_cast<std::uint64_t>(i + 1));
          std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }
        cursor = 0;
      }
      batch_idx.assign(order.begin() + cursor, order.begin() + cursor + B);
      cursor += B;
    }
    std::vector<const Observation*> batch;
    std::vector<Observation> batch_copy;
    batch_copy.reserve(batch_idx.size());
    for (Index i : batch_idx) batch_copy.push_back(data.observations[static_cast<std::size_t>(i)]);
    for (const auto& o : batch_copy) batch.push_back(&o);

    ModelState state = evaluate_model(solver, b, T, batch_copy, od);
    result.diagnostics.clamped_values += state.values().diagnostics().clamped;
    result.diagnostics.negative_values += state.values().diagnostics().negative;

    MixtureContext ctx;
    ctx.state = &state;
    ctx.density = &density;
    ctx.od = &od;
    ctx.sampling.samples = config.samples;
    ctx.sampling.max_steps = max_steps;
    ctx.sampling.exact_when_enumerable = config.exact_when_enumerable;

    if (config.estimator == EstimatorKind::offline) {
      for (Index i : batch_idx) {
        const Observation& obs = data.observations[static_cast<std::size_t>(i)];
        auto& age = proposal_age[static_cast<std::size_t>(i)];
        if (obs.granularity() != Granularity::no_path) continue;
        if (age < 0 || it - age >= config.offline_refresh) {
          Rng rng = make_rng(config.seed, 4, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(i));
          proposals[static_cast<std::size_t>(i)] = draw_proposal(obs, state, config.samples, max_steps, rng);
          age = it;
        }
      }
    }

    constexpr Index kChunk = 32;
    const Index chunks = (B + kChunk - 1) / kChunk;
    std::vector<ObservationGradient> partial(static_cast<std::size_t>(chunks));
    std::vector<Index> trapped(static_cast<std::size_t>(chunks), 0);
    parallel_for(chunks, config.threads, [&](Index c) {
      ObservationGradient acc;
      acc.grad = ParamGradient(A);
      for (Index k = c * kChunk; k < std::min(B, (c + 1) * kChunk); ++k) {
        const Index i = batch_idx[static_cast<std::size_t>(k)];
        const Observation& obs = *batch[static_cast<std::size_t>(k)];
        Rng rng = make_rng(config.seed, 5, static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(i));
        const OfflineSamples* off = proposals.empty() || proposal_age[static_cast<std::size_t>(i)] < 0
                                        ? nullptr
                                        : &proposals[static_cast<std::size_t>(i)];
        try {
          ObservationGradient g = observation_gradient(obs, ctx, rng, nullptr, off);
          acc.loglik += g.loglik;
          acc.grad += g.grad;
          acc.value_terms.insert(acc.value_terms.end(), g.value_terms.begin(), g.value_terms.end());
        } catch (const NumericalError&) {
          ++trapped[static_cast<std::size_t>(c)];
        }
      }
      partial[static_cast<std::size_t>(c)] = std::move(acc);
    });
    ObservationGradient total;
    total.grad = ParamGradient(A);
    for (Index c = 0; c < chunks; ++c) {
      total.loglik += partial[static_cast<std::size_t>(c)].loglik;
      total.grad += partial[static_cast<std::size_t>(c)].grad;
      const auto& vt = partial[static_cast<std::size_t>(c)].value_terms;
      total.value_terms.insert(total.value_terms.end(), vt.begin(), vt.end());
      result.diagnostics.trapped_walks += trapped[static_cast<std::size_t>(c)];
    }
    total.grad.axpy(-1.0, weighted_origin_value_gradient(state.values(), total.value_terms));
    const double scale = static_cast<double>(N) / static_cast<double>(B);
    total.loglik *= scale;
    total.grad *= scale;
    if (config.lambda > 0.0) {
      const RegularizationTerms reg = regularization(T, lengths, arc_pairs);
      total.loglik -= config.lambda * reg.value;
      total.grad.T -= config.lambda * reg.gradient;
    }
    if (!std::isfinite(total.loglik) || !total.grad.b.allFinite() || !total.grad.T.allFinite())
      throw NumericalError("objective is not finite at iteration " + std::to_string(it));

    // Record the objective of the current iterate before stepping.
    window.push_back(total.loglik);
    if (static_cast<Index>(window.size()) > config.stop_window) window.pop_front();
    const double smoothed = std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
    smoothed_hist.push_back(smoothed);
    TraceRow row;
    row.iteration = it;
    row.objective = total.loglik;
    row.smoothed = smoothed;
    if (reference_times) row.reference_rmsle = rmsle(T, *reference_times);
    if (smoothed > best_smoothed) {
      best_smoothed = smoothed;
      result.b = b;
      result.T = T;
      result.diagnostics.best_iteration = it;
    }
    result.diagnostics.iterations = it;

    const Index W = config.stop_window;
    if (it >= 2 * W) {
      const double gain = smoothed - smoothed_hist[static_cast<std::size_t>(it - 1 - W)];
      if (gain < config.stop_delta) {
        row.seconds = seconds_since(t_start);
        result.trace.push_back(row);
        result.diagnostics.stopped_early = true;
        break;
      }
    }

    // Projected ascent step: fixed weights do not move, and time components
    // pushing out of an active box face are dropped.
    Weights gb = config.b0.mask(total.grad.b);
    Eigen::VectorXd gT = total.grad.T;
    for (Index a = 0; a < A; ++a) {
      if ((T[a] <= bounds.lower[a] && gT[a] < 0.0) || (T[a] >= bounds.upper[a] && gT[a] > 0.0)) gT[a] = 0.0;
    }
    Eigen::VectorXd g(dim);
    g << gb, gT;
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseAbs2();
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(it));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(it));
    const Eigen::VectorXd step =
        config.eta * (m / c1).array() / ((v / c2).cwiseSqrt().array() + config.epsilon);
    b += step.head<kNumFeatures>();
    T = project_T(T + step.tail(A), bounds);

    row.seconds = seconds_since(t_start);
    result.trace.push_back(row);
  }
  result.diagnostics.factorizations = solver.factorizations();
  result.seconds = seconds_since(t_start);
  return result;
}

ObservationGradient deterministic_objective(std::span<const Observation> data, const TurnGraph& graph,
                                            const Weights& b, const Eigen::VectorXd& travel_time) {
  std::vector<Observation> paths;
  for (const Observation& obs : data) {
    if (!obs.has_path()) throw InvalidInput("deterministic objective needs observed paths");
    paths.push_back(obs.without_time());
  }
  ValueSolver solver(graph);
  const ODDistributions od(paths);
  const ModelState state = evaluate_model(solver, b, travel_time, paths, od);
  const SmsleDensity density;
  MixtureContext ctx;
  ctx.state = &state;
  ctx.density = &density;
  ObservationGradient total;
  total.grad = ParamGradient(graph.num_arcs());
  Rng unused(0);
  for (const Observation& obs : paths) {
    const auto g = observation_gradient(obs, ctx, unused, nullptr);
    total.loglik += g.loglik;
    total.grad += g.grad;
    total.value_terms.insert(total.value_terms.end(), g.value_terms.begin(), g.value_terms.end());
  }
  total.grad.axpy(-1.0, weighted_origin_value_gradient(state.values(), total.value_terms));
  total.value_terms.clear();
  return total;
}

double two_arc_choice_probability(double x) { return 1.0 / (1.0 + std::exp(x - 1.0)); }

double two_arc_expected_msle(double x, double p, double observed) {
  const double l1 = std::log(observed) - std::log(x);
  const double l2 = std::log(observed);
  return p * l1 * l1 + (1.0 - p) * l2 * l2;
}

AlternatingTrace naive_alternating_fit(AlternatingVariant variant, Index iters, double observed) {
  AlternatingTrace tr;
  double x = 1.0;
  auto record = [&](double xv) {
    const double p = two_arc_choice_probability(xv);
    tr.x.push_back(xv);
    tr.p.push_back(p);
    tr.loss.push_back(two_arc_expected_msle(xv, p, observed));
  };
  record(x);
  for (Index k = 0; k < iters; ++k) {
    const double p = two_arc_choice_probability(x);
    if (variant == AlternatingVariant::expected_time) {
      // Match the expected time x p + (1 - p) to the observation with p held.
      x = (observed - (1.0 - p)) / p;
    } else {
      // Minimize the expected loss in x with p held; work in ln x.
      const double u = golden_section_minimize(
          [&](double lx) { return two_arc_expected_msle(std::exp(lx), p, observed); }, -10.0, 10.0, 1e-12);
      x = std::exp(u);
    }
    if (!std::isfinite(x)) {
      tr.diverged = true;
      break;
    }
    record(x);
  }
  return tr;
}

std::pair<double, double> two_arc_joint_minimum(double observed) {
  auto loss = [&](double lx) {
    const double x = std::exp(lx);
    return two_arc_expected_msle(x, two_arc_choice_probability(x), observed);
  };
  // Coarse scan in ln x, then refine around the best point.
  double best = 0.0, best_val = loss(0.0);
  for (int i = -400; i <= 400; ++i) {
    const double lx = 0.01 * i;
    if (const double val = loss(lx); val < best_val) {
      best_val = val;
      best = lx;
    }
  }
  const double lx = golden_section_minimize(loss, best - 0.01, best + 0.01, 1e-12);
  return {std::exp(lx), loss(lx)};
}

SearchResult random_search(const SearchRanges& ranges, Index budget, const ObservationSet& train,
                           const ObservationSet& validation, const TurnGraph& graph,
                           const TravelTimeBounds& bounds, const EstimatorConfig& base, bool include_default) {
  if (budget < 1) throw InvalidInput("budget must be at least 1");
  Rng rng = make_rng(base.seed, 7);
  auto log_uniform = [&](const std::array<double, 2>& r) {
    std::uniform_real_distribution<double> u(std::log(r[0]), std::log(r[1]));
    return std::exp(u(rng));
  };
  SearchResult res;
  for (Index k = 0; k < budget; ++k) {
    EstimatorConfig cfg = base;
    if (!(include_default && k == 0)) {
      cfg.eta = log_uniform(ranges.eta);
      cfg.gamma = log_uniform(ranges.gamma);
      cfg.lambda = log_uniform(ranges.lambda);
    }
    SearchEntry entry;
    entry.config = cfg;
    try {
      const FitResult fr = fit(train, graph, bounds, cfg);
      ValueSolver solver(graph);
      const ODDistributions od = validation.od_distributions();
      const ModelState state = evaluate_model(solver, fr.b, fr.T, validation.observations, od);
      PredictOptions popts;
      popts.samples = cfg.samples;
      const EvaluationReport rep =
          evaluate(validation.observations, state, SmsleDensity(cfg.gamma), popts, base.seed, base.threads);
      entry.validation_rmsle = rep.rmsle_geomean;
    } catch (const std::exception& e) {
      entry.status = std::string("failed: ") + e.what();
    }
    if (entry.status == "ok" && entry.validation_rmsle < res.best_rmsle) {
      res.best_rmsle = entry.validation_rmsle;
      res.best = cfg;
    }
    res.leaderboard.push_back(std::move(entry));
  }
  if (!std::isfinite(res.best_rmsle)) throw NumericalError("every search run failed");
  return res;
}

}  // namespace rlmix

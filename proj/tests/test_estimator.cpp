#include "fixtures.hpp"

#include <doctest.h>

#include <algorithm>

using namespace rlmix;

namespace {

struct Small {
  SyntheticGrid grid;
  std::unique_ptr<TurnGraph> graph;
  ObservationSet data;
};

Small small_problem(Index draws, std::uint64_t seed) {
  GridSpec gs;
  gs.rows = gs.cols = 4;
  Small s{synthetic_grid(gs), nullptr, {}};
  s.graph = std::make_unique<TurnGraph>(s.grid.network);
  SimulationSpec spec;
  spec.od_draws = draws;
  spec.trips_per_od = 2;
  spec.seed = seed;
  s.data = simulate_trips(*s.graph, s.grid.true_times, spec);
  return s;
}

}  // namespace

TEST_SUITE("estimator") {
  TEST_CASE("regularization values") {
    const Network net = build_network({fx::at(0, 0), fx::at(100, 0), fx::at(200, 0)},
                                      {fx::arc(0, 1, 100.0), fx::arc(1, 2, 100.0)});
    const std::vector<std::pair<ArcId, ArcId>> pairs{{0, 1}};
    Eigen::VectorXd t(2);
    t << 100.0, 100.0 * std::exp(1.0);
    CHECK(regularization(t, net.lengths(), pairs).value == doctest::Approx(0.005));
    t << 3.0, 3.0;
    CHECK(regularization(t, net.lengths(), pairs).value == 0.0);
  }

  TEST_CASE("regularization gradient matches central differences") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
      const Network net = synthetic_grid({.rows = 3, .cols = 3}).network;
      const TurnGraph g(net);
      const auto pairs = g.consecutive_arc_pairs();
      const Eigen::VectorXd T = fx::random_times(net, rng);
      const auto r = regularization(T, net.lengths(), pairs);
      for (Index a = 0; a < T.size(); ++a) {
        const double h = 1e-5 * T[a];
        Eigen::VectorXd up = T, dn = T;
        up[a] += h;
        dn[a] -= h;
        const double fd = (regularization(up, net.lengths(), pairs).value -
                           regularization(dn, net.lengths(), pairs).value) / (2 * h);
        CHECK(std::abs(fd - r.gradient[a]) <= 1e-6 * std::max(std::abs(r.gradient[a]), 1e-9));
      }
    }
  }

  TEST_CASE("projection") {
    TravelTimeBounds box{Eigen::Vector3d(1.0, 1.0, 1.0), Eigen::Vector3d(2.0, 2.0, 2.0)};
    const Eigen::Vector3d inside(1.5, 1.0, 2.0);
    CHECK(project_T(inside, box) == inside);
    const Eigen::Vector3d out(0.5, 1.5, 3.0);
    const Eigen::VectorXd p = project_T(out, box);
    CHECK(p == Eigen::Vector3d(1.0, 1.5, 2.0));
    CHECK(project_T(p, box) == p);
    CHECK_THROWS_AS(project_T(Eigen::Vector2d(1, 1), box), InvalidInput);
  }

  TEST_CASE("two-arc alternating fits") {
    const auto t = naive_alternating_fit(AlternatingVariant::expected_time, 10);
    CHECK(t.x[0] == 1.0);
    CHECK(t.x[1] == doctest::Approx(3.0));
    CHECK(t.x[2] == doctest::Approx(2.0 + std::exp(2.0)).epsilon(1e-12));
    CHECK(t.x[2] == doctest::Approx(9.3891).epsilon(1e-4));
    for (std::size_t i = 1; i < t.x.size(); ++i) CHECK(t.x[i] > t.x[i - 1]);
    CHECK(*std::max_element(t.x.begin(), t.x.end()) > 100.0);

    const auto l = naive_alternating_fit(AlternatingVariant::expected_loss, 20);
    CHECK(l.x.back() == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(l.loss.back() == doctest::Approx(0.3512).epsilon(1e-3));
    const auto [x, loss] = two_arc_joint_minimum();
    CHECK(loss < l.loss.back());
    CHECK(loss == doctest::Approx(0.32).epsilon(0.03));
    CHECK(two_arc_expected_msle(x, two_arc_choice_probability(x)) == doctest::Approx(loss));
  }

  TEST_CASE("fit rejects empty data") {
    const Small s = small_problem(5, 1);
    CHECK_THROWS_AS(fit(ObservationSet{}, *s.graph, travel_time_bounds(s.grid.network), EstimatorConfig{}), InvalidInput);
  }

  TEST_CASE("path-only objective is the recursive logit likelihood") {
    const Small s = small_problem(40, 2);
    std::vector<Observation> paths;
    for (const Observation& o : s.data.observations) paths.push_back(o.without_time());
    const Weights b = ChoiceParams{}.b;
    const Eigen::VectorXd T = s.grid.true_times;
    const ObservationGradient got = deterministic_objective(paths, *s.graph, b, T);
    std::vector<NodeId> dests;
    for (const auto& o : paths) dests.push_back(*o.destination());
    std::sort(dests.begin(), dests.end());
    dests.erase(std::unique(dests.begin(), dests.end()), dests.end());
    const auto sol = solve_values(*s.graph, b, T, dests);
    double ll = 0.0;
    ParamGradient grad(s.graph->num_arcs());
    for (const auto& o : paths) {
      const auto route = s.grid.network.arcs_of_node_path(o.path);
      ll += path_loglik(sol, o.o, *o.destination(), route);
      grad += grad_path_loglik(sol, o.o, *o.destination(), route);
    }
    CHECK(got.loglik == doctest::Approx(ll).epsilon(1e-12));
    CHECK((got.grad.b - grad.b).norm() < 1e-9 * grad.b.norm());
    CHECK((got.grad.T - grad.T).norm() < 1e-9 * grad.T.norm());

    // The first traced objective of fit adds only the OD constants.
    ObservationSet set;
    set.observations = paths;
    EstimatorConfig cfg;
    cfg.max_iters = 1;
    cfg.T0 = T;
    const FitResult r = fit(set, *s.graph, travel_time_bounds(s.grid.network), cfg);
    const ODDistributions od(paths);
    double constants = 0.0;
    for (const auto& o : paths) constants += od.log_p_origin(o.o) + od.log_p_destination(o.o, *o.destination());
    CHECK(r.trace.front().objective == doctest::Approx(ll + constants).epsilon(1e-12));
  }

  TEST_CASE("fit respects the box, returns its best iterate and is reproducible") {
    const Small s = small_problem(60, 3);
    const ObservationSet mixed = [&] {
      ObservationSet m = s.data;
      for (std::size_t i = 0; i < m.observations.size(); i += 2) m.observations[i] = m.observations[i].without_path();
      return m;
    }();
    const auto box = travel_time_bounds(s.grid.network);
    EstimatorConfig cfg;
    cfg.max_iters = 40;
    cfg.samples = 20;
    cfg.batch_size = 50;
    cfg.eta = 0.05;
    const FitResult a = fit(mixed, *s.graph, box, cfg, &s.grid.true_times);
    CHECK((a.T.array() >= box.lower.array()).all());
    CHECK((a.T.array() <= box.upper.array()).all());
    double best = -std::numeric_limits<double>::infinity();
    Index best_it = -1;
    for (const TraceRow& row : a.trace)
      if (row.smoothed > best) best = row.smoothed, best_it = row.iteration;
    CHECK(a.diagnostics.best_iteration == best_it);
    CHECK(a.trace.back().objective > a.trace.front().objective);
    CHECK_FALSE(std::isnan(a.trace.front().reference_rmsle));
    cfg.threads = 3;
    const FitResult b = fit(mixed, *s.graph, box, cfg, &s.grid.true_times);
    CHECK(a.T == b.T);
    CHECK(a.b == b.b);
    cfg.estimator = EstimatorKind::offline;
    const FitResult c = fit(mixed, *s.graph, box, cfg);
    CHECK(c.trace.back().objective > c.trace.front().objective);
  }

  TEST_CASE("fixed box holds travel times in place") {
    const Small s = small_problem(30, 4);
    const Eigen::VectorXd fixed = free_flow_times(s.grid.network) * 0.9;
    EstimatorConfig cfg;
    cfg.max_iters = 10;
    cfg.T0 = fixed;
    const FitResult r = fit(s.data, *s.graph, TravelTimeBounds{fixed, fixed}, cfg);
    CHECK(r.T == fixed);
    CHECK(r.b != cfg.b0.b);
    CHECK(r.b[kUTurn] == cfg.b0.b[kUTurn]);
  }

  TEST_CASE("random search") {
    const Small s = small_problem(30, 5);
    const SplitSets sets = split(s.data, {0.6, 0.4, 0.0}, 1);
    EstimatorConfig base;
    base.max_iters = 5;
    const auto box = travel_time_bounds(s.grid.network);
    const SearchResult one = random_search({}, 1, sets.train, sets.validation, *s.graph, box, base);
    REQUIRE(one.leaderboard.size() == 1);
    CHECK(one.best.eta == one.leaderboard[0].config.eta);
    const SearchResult again = random_search({}, 1, sets.train, sets.validation, *s.graph, box, base);
    CHECK(again.best.eta == one.best.eta);
    CHECK(again.best_rmsle == one.best_rmsle);
    const SearchResult with_default = random_search({}, 3, sets.train, sets.validation, *s.graph, box, base, true);
    CHECK(with_default.leaderboard[0].config.eta == base.eta);
    for (const auto& e : with_default.leaderboard) CHECK(with_default.best_rmsle <= e.validation_rmsle);
  }
}

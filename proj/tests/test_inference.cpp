#include "fixtures.hpp"

#include <doctest.h>

#include <algorithm>

using namespace rlmix;

namespace {

RouteTimeDistribution dist(std::vector<double> times, std::vector<double> weights) {
  RouteTimeDistribution d;
  d.times = std::move(times);
  d.weights = std::move(weights);
  d.exact = true;
  return d;
}

ModelState two_arc_state(const TurnGraph& g, double x) {
  Eigen::VectorXd t(2);
  t << x, 1.0;
  ValueSolver solver(g);
  return ModelState(solver.solve(fx::weights(-1.0), t, std::vector<NodeId>{1}));
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("geometric mean prediction") {
    const SmsleDensity dens(1.0);
    CHECK(predict_geomean(dist({3.0}, {1.0}), dens) == doctest::Approx(3.0));
    CHECK(predict_geomean(dist({1.0, 4.0}, {0.5, 0.5}), dens) == doctest::Approx(2.0));
  }

  TEST_CASE("expected time on the two-arc instance") {
    const TurnGraph g(fx::two_arc());
    Rng rng(1);
    const PredictOptions opts;
    const ModelState s1 = two_arc_state(g, 1.0);
    CHECK(expected_path_time(route_time_distribution(s1, 0, 1, opts, rng)) == doctest::Approx(1.0));
    const ModelState s2 = two_arc_state(g, 2.0);
    const auto d2 = route_time_distribution(s2, 0, 1, opts, rng);
    CHECK(d2.exact);
    const double p = two_arc_choice_probability(2.0);
    CHECK(expected_path_time(d2) == doctest::Approx(2.0 * p + (1.0 - p)).epsilon(1e-12));
    CHECK(expected_path_time(d2) == doctest::Approx(1.2689).epsilon(1e-4));
    const SmsleDensity dens(2.0);
    CHECK(predict_mean(d2, dens) == doctest::Approx(dens.mean_multiplier() * (2.0 * p + 1.0 - p)).epsilon(1e-12));
  }

  TEST_CASE("mode prediction") {
    const SmsleDensity dens(1.5);
    const PredictOptions opts;
    const double mode = predict_mode(dist({2.0}, {1.0}), dens, opts);
    CHECK(mode == doctest::Approx(2.0 * std::exp(-1.0 / (2 * 1.5))).epsilon(1e-6));
    // Well separated components: the narrower (earlier) one is taller.
    const double two = predict_mode(dist({1.0, 50.0}, {0.5, 0.5}), dens, opts);
    CHECK(two == doctest::Approx(1.0 * dens.mode_multiplier()).epsilon(1e-6));
  }

  TEST_CASE("geometric mean minimizes the empirical squared log error") {
    std::mt19937_64 rng(2);
    std::gamma_distribution<double> gd(2.0, 1.5);
    for (int trial = 0; trial < 5; ++trial) {
      std::vector<double> times(30), w(30, 1.0 / 30.0);
      for (double& t : times) t = gd(rng) + 0.05;
      const double g = predict_geomean(dist(times, w), SmsleDensity(1.0));
      auto msle = [&](double p) {
        double s = 0.0;
        for (double t : times) s += std::pow(std::log(p) - std::log(t), 2);
        return s;
      };
      for (double p = 0.05; p < 20.0; p *= 1.01) CHECK(msle(g) <= msle(p) + 1e-12);
    }
  }

  TEST_CASE("rmsle") {
    const std::vector<double> a{1.0, 2.0, 3.0};
    CHECK(rmsle(a, a) == 0.0);
    const std::vector<double> e{std::exp(1.0), 2.0 * std::exp(1.0), 3.0 * std::exp(1.0)};
    CHECK(rmsle(e, a) == doctest::Approx(1.0));
    CHECK(rmsle(std::vector<double>{1.0, 2.0}, std::vector<double>{2.0, 1.0}) == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(rmsle(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), InvalidInput);
    CHECK_THROWS_AS(rmsle(std::vector<double>{0.0}, std::vector<double>{1.0}), InvalidInput);
  }

  TEST_CASE("sampled distribution agrees with enumeration") {
    const Network net = fx::dag_grid(3);
    const TurnGraph g(net);
    std::mt19937_64 gen(5);
    const Eigen::VectorXd T = fx::random_times(net, gen);
    ValueSolver solver(g);
    const ModelState state(solver.solve(fx::weights(-1.0, -0.5), T, std::vector<NodeId>{8}));
    Rng rng(9);
    PredictOptions exact;
    const auto de = route_time_distribution(state, 0, 8, exact, rng);
    REQUIRE(de.exact);
    PredictOptions mc;
    mc.exact_when_enumerable = false;
    mc.samples = 100000;
    const auto dm = route_time_distribution(state, 0, 8, mc, rng);
    CHECK_FALSE(dm.exact);
    double m = 0, m2 = 0;
    for (std::size_t k = 0; k < dm.times.size(); ++k) {
      m += dm.weights[k] * std::log(dm.times[k]);
      m2 += dm.weights[k] * std::pow(std::log(dm.times[k]), 2);
    }
    const double se = std::sqrt((m2 - m * m) / 100000.0);
    double me = 0;
    for (std::size_t k = 0; k < de.times.size(); ++k) me += de.weights[k] * std::log(de.times[k]);
    CHECK(std::abs(m - me) < 3 * se);
  }

  TEST_CASE("evaluation does not depend on record order") {
    const auto grid = synthetic_grid();
    const TurnGraph g(grid.network);
    SimulationSpec spec;
    spec.od_draws = 40;
    spec.trips_per_od = 1;
    ObservationSet set = simulate_trips(g, grid.true_times, spec);
    ValueSolver solver(g);
    const ModelState state = evaluate_model(solver, spec.b_true, grid.true_times, set.observations, set.od_distributions());
    const SmsleDensity dens;
    PredictOptions opts;
    opts.samples = 30;
    const auto a = evaluate(set.observations, state, dens, opts, 3);
    std::reverse(set.observations.begin(), set.observations.end());
    const auto b = evaluate(set.observations, state, dens, opts, 3, 2);
    CHECK(a.rmsle_geomean == doctest::Approx(b.rmsle_geomean).epsilon(1e-14));
    CHECK(a.rmsle_mode == doctest::Approx(b.rmsle_mode).epsilon(1e-14));
    CHECK(a.records.size() == 40);
  }
}

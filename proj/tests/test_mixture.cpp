#include "fixtures.hpp"

#include <doctest.h>

#include <numbers>

using namespace rlmix;

namespace {

// Owns everything a MixtureContext points at.
struct Setup {
  std::unique_ptr<TurnGraph> graph;
  std::unique_ptr<ModelState> state;
  SmsleDensity density;
  ODDistributions od;
  MixtureContext ctx;

  Setup(Network net, const Weights& b, const Eigen::VectorXd& T, std::vector<Observation> seen, double gamma = 1.0)
      : graph(std::make_unique<TurnGraph>(std::move(net))), density(gamma), od(seen) {
    ValueSolver solver(*graph);
    state = std::make_unique<ModelState>(evaluate_model(solver, b, T, seen, od));
    ctx.state = state.get();
    ctx.density = &density;
    ctx.od = &od;
  }
};

Observation rec(NodeId o, std::optional<NodeId> d, std::optional<double> t, std::vector<NodeId> path = {}) {
  Observation obs;
  obs.o = o;
  obs.d = d;
  obs.t = t;
  obs.path = std::move(path);
  return obs;
}

// Diamond with route times 2 (upper) and 4 (lower), left turns free.
Eigen::VectorXd diamond_times() {
  Eigen::VectorXd t(4);
  t << 1.0, 1.0, 2.0, 2.0;
  return t;
}

}  // namespace

TEST_SUITE("mixture") {
  TEST_CASE("full likelihood") {
    SUBCASE("symmetric diamond at the mode point") {
      const Observation obs = rec(0, 3, 2.0, {0, 1, 3});
      Setup s(fx::diamond(), fx::weights(-1.0), fx::constant_times(fx::diamond(), 1.0), {obs, rec(0, 1, 1.0)},
              std::numbers::pi);
      const double od = s.od.log_p_origin(0) + s.od.log_p_destination(0, 3);
      CHECK(od == doctest::Approx(std::log(0.5)));
      CHECK(loglik_full(obs, s.ctx) == doctest::Approx(od + std::log(0.25)).epsilon(1e-12));
      CHECK(s.density.logpdf(2.0, 2.0) == doctest::Approx(std::log(0.5)));
    }
    SUBCASE("single-path chain") {
      const Observation obs = rec(0, 2, 1.5, {0, 1, 2});
      Setup s(fx::chain(), fx::weights(-1.0), fx::constant_times(fx::chain(), 0.75), {obs});
      CHECK(loglik_full(obs, s.ctx) == doctest::Approx(s.density.logpdf(1.5, 1.5)).epsilon(1e-12));
      CHECK_THROWS_AS(loglik_full(rec(0, 2, -1.0, {0, 1, 2}), s.ctx), InvalidInput);
      CHECK_THROWS_AS(validate(rec(0, 2, 0.0), s.graph->network()), InvalidInput);
    }
  }

  TEST_CASE("path-only likelihood") {
    Setup s(fx::diamond(), fx::weights(-1.0), fx::constant_times(fx::diamond(), 1.0), {rec(0, 3, std::nullopt, {0, 2, 3})});
    CHECK(loglik_no_time(rec(0, 3, std::nullopt, {0, 2, 3}), s.ctx) == doctest::Approx(std::log(0.5)));
    Setup c(fx::chain(), fx::weights(-1.0), fx::constant_times(fx::chain(), 1.0), {rec(0, 2, std::nullopt, {0, 1, 2})});
    CHECK(loglik_no_time(rec(0, 2, std::nullopt, {0, 1, 2}), c.ctx) == doctest::Approx(0.0).scale(1.0));
  }

  TEST_CASE("path-only likelihood is the time marginal of the full likelihood") {
    Setup s(fx::diamond(), fx::weights(-0.8), diamond_times(), {rec(0, 3, 2.0)});
    s.ctx.od = nullptr;
    for (auto path : {std::vector<NodeId>{0, 1, 3}, std::vector<NodeId>{0, 2, 3}}) {
      const Observation obs = rec(0, 3, 1.0, path);
      const auto q = integrate(
          [&](double t) {
            Observation o = obs;
            o.t = t;
            return std::exp(loglik_full(o, s.ctx));
          },
          0.0, std::numeric_limits<double>::infinity(), 1.0);
      CHECK(std::abs(q.value - std::exp(loglik_no_time(obs, s.ctx))) < 1e-6);
    }
  }

  TEST_CASE("path-free likelihood") {
    SUBCASE("single path has no Monte Carlo error") {
      const Observation obs = rec(0, 2, 1.7, {0, 1, 2});
      Setup s(fx::chain(), fx::weights(-1.0), fx::constant_times(fx::chain(), 1.0), {obs});
      Rng rng(1);
      CHECK(loglik_no_path(obs, s.ctx, rng) == doctest::Approx(loglik_full(obs, s.ctx)).epsilon(1e-14));
    }
    SUBCASE("sampled estimate converges to the enumerated one") {
      const Observation obs = rec(0, 3, 3.0);
      Setup s(fx::diamond(), fx::weights(-0.5), diamond_times(), {obs});
      s.ctx.od = nullptr;
      s.ctx.sampling.exact_when_enumerable = true;
      Rng rng(5);
      const double exact = std::exp(loglik_no_path(obs, s.ctx, rng));
      const double p_upper = 1.0 / (1.0 + std::exp(-0.5 * 2.0));
      const double f2 = std::exp(s.density.logpdf(3.0, 2.0)), f4 = std::exp(s.density.logpdf(3.0, 4.0));
      CHECK(exact == doctest::Approx(p_upper * f2 + (1 - p_upper) * f4).epsilon(1e-12));
      s.ctx.sampling.exact_when_enumerable = false;
      s.ctx.sampling.samples = 10000;
      const double mc = std::exp(loglik_no_path(obs, s.ctx, rng));
      const double se = std::sqrt(p_upper * (1 - p_upper)) * std::abs(f2 - f4) / 100.0;
      CHECK(std::abs(mc - exact) < 3 * se);
    }
  }

  TEST_CASE("destination posterior") {
    // Star: 0 -> 1 takes 1 minute, 0 -> 2 takes 3, 0 -> 3 mirrors 0 -> 1.
    const Network star = build_network({fx::at(0, 0), fx::at(1000, 0), fx::at(0, 1000), fx::at(-1000, 0)},
                                       {fx::arc(0, 1), fx::arc(0, 2), fx::arc(0, 3)});
    Eigen::VectorXd t(3);
    t << 1.0, 3.0, 1.0;
    std::vector<Observation> seen{rec(0, 1, 1.0), rec(0, 2, 3.0), rec(0, 3, 1.0)};
    Setup s(star, fx::weights(-1.0), t, seen, 100.0);
    Rng rng(1);
    const std::vector<NodeId> one{2};
    CHECK(dest_posterior(0, 1.0, one, s.ctx, rng)[0] == doctest::Approx(1.0));
    const std::vector<NodeId> two{1, 2};
    const Eigen::VectorXd p = dest_posterior(0, 1.0, two, s.ctx, rng);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p[0] > 1.0 - 1e-12);
    const std::vector<NodeId> mirror{1, 3};
    const Eigen::VectorXd m = dest_posterior(0, 2.0, mirror, s.ctx, rng);
    CHECK(m[0] == doctest::Approx(0.5));
    CHECK(std::abs(m.sum() - 1.0) < 1e-12);
  }

  TEST_CASE("destination-free likelihood marginalizes over seen destinations") {
    const Network star = build_network({fx::at(0, 0), fx::at(1000, 0), fx::at(0, 1000)}, {fx::arc(0, 1), fx::arc(0, 2)});
    Eigen::VectorXd t(2);
    t << 1.0, 3.0;
    std::vector<Observation> seen{rec(0, 1, 1.0), rec(0, 2, 3.0), rec(0, 2, 3.0)};
    Setup s(star, fx::weights(-1.0), t, seen);
    s.ctx.od = &s.od;
    Rng rng(1);
    const double want = std::log(1.0 / 3.0 * std::exp(s.density.logpdf(2.0, 1.0)) +
                                 2.0 / 3.0 * std::exp(s.density.logpdf(2.0, 3.0)));
    CHECK(loglik_no_destination(rec(0, std::nullopt, 2.0), s.ctx, rng) ==
          doctest::Approx(want + s.od.log_p_origin(0)).epsilon(1e-12));
  }

  TEST_CASE("mixed likelihood is additive") {
    const Observation full = rec(0, 3, 2.0, {0, 1, 3});
    const Observation free = rec(0, 3, 2.5);
    Setup s(fx::diamond(), fx::weights(-1.0), diamond_times(), {full, free});
    s.ctx.sampling.exact_when_enumerable = true;
    Rng rng(0);
    const std::vector<Observation> both{full, free};
    CHECK(mixed_loglik(both, s.ctx, 1) ==
          doctest::Approx(loglik_full(full, s.ctx) + loglik_no_path(free, s.ctx, rng)).epsilon(1e-12));
    CHECK(mixed_loglik(std::vector<Observation>{}, s.ctx, 1) == 0.0);
    Observation heavy = full;
    heavy.weight = 3.0;
    CHECK(observation_loglik(heavy, s.ctx, rng) == doctest::Approx(3.0 * loglik_full(full, s.ctx)));
  }

  TEST_CASE("mixed likelihood does not depend on the thread count") {
    const auto grid = synthetic_grid();
    const TurnGraph g(grid.network);
    SimulationSpec spec;
    spec.od_draws = 60;
    spec.trips_per_od = 2;
    const ObservationSet set = strip_paths(simulate_trips(g, grid.true_times, spec));
    Setup s(grid.network, spec.b_true, grid.true_times, set.observations);
    s.ctx.sampling.samples = 20;
    CHECK(mixed_loglik(set.observations, s.ctx, 9, 1) == mixed_loglik(set.observations, s.ctx, 9, 4));
  }

  TEST_CASE("observation gradients match finite differences when exact") {
    const Network net = fx::dag_grid(3);
    std::mt19937_64 gen(8);
    const Eigen::VectorXd T = fx::random_times(net, gen);
    Weights b;
    b << -1.2, -1.2, -0.3, -0.7, -5.0;
    const std::vector<Observation> records{rec(0, 8, 2.5, {0, 1, 4, 7, 8}), rec(0, 8, std::nullopt, {0, 3, 4, 5, 8}),
                                           rec(0, 8, 2.2), rec(1, 7, 1.9), rec(0, std::nullopt, 2.0)};
    std::vector<Observation> seen(records.begin(), records.end() - 1);
    seen.push_back(rec(0, 5, 1.0));
    for (const Observation& obs : records) {
      auto value = [&](const Weights& bb, const Eigen::VectorXd& tt) {
        Setup s(net, bb, tt, seen);
        s.ctx.sampling.exact_when_enumerable = true;
        Rng rng(0);
        return observation_loglik(obs, s.ctx, rng);
      };
      Setup s(net, b, T, seen);
      s.ctx.sampling.exact_when_enumerable = true;
      Rng rng(0);
      const OriginValueGradients cache;
      const ObservationGradient cached = observation_gradient(obs, s.ctx, rng, &cache);
      ObservationGradient deferred = observation_gradient(obs, s.ctx, rng, nullptr);
      deferred.grad.axpy(-1.0, weighted_origin_value_gradient(s.state->values(), deferred.value_terms));
      CHECK(cached.loglik == doctest::Approx(value(b, T)).epsilon(1e-12));
      CHECK((cached.grad.T - deferred.grad.T).norm() < 1e-10 * (1.0 + cached.grad.T.norm()));
      CHECK((cached.grad.b - deferred.grad.b).norm() < 1e-10 * (1.0 + cached.grad.b.norm()));
      for (int k = 0; k < kNumFeatures; ++k) {
        Weights up = b, dn = b;
        up[k] += 1e-5;
        dn[k] -= 1e-5;
        const double fd = (value(up, T) - value(dn, T)) / 2e-5;
        CHECK(std::abs(fd - cached.grad.b[k]) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
      for (Index a = 0; a < T.size(); ++a) {
        Eigen::VectorXd up = T, dn = T;
        const double h = 1e-6 * T[a];
        up[a] += h;
        dn[a] -= h;
        const double fd = (value(b, up) - value(b, dn)) / (2 * h);
        CHECK(std::abs(fd - cached.grad.T[a]) <= 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }

  TEST_CASE("single-path gradient estimate has no variance") {
    const Observation obs = rec(0, 2, 1.7);
    Setup s(fx::chain(), fx::weights(-1.0), fx::constant_times(fx::chain(), 1.0), {obs});
    Rng rng(3);
    const GradientStats st = grad_online_stats(obs, s.ctx, 50, rng);
    CHECK(st.std_error.isZero(1e-15));
    const auto exact = exact_expected_gradient(obs, s.ctx);
    REQUIRE(exact);
    CHECK((st.mean - exact->first).norm() < 1e-12);
    // grad ln f alone: d/dT_a of ln f(t; T_0 + T_1)
    const ParamGradient g = grad_online(obs, s.ctx, rng);
    CHECK(g.T[0] == doctest::Approx(s.density.dlogpdf_dtheta(1.7, 2.0)));
    CHECK(g.b.isZero(1e-12));
  }

  TEST_CASE("symmetric instance has zero weight gradient") {
    const Observation obs = rec(0, 3, 2.0);
    Setup s(fx::diamond(), fx::weights(-1.0), fx::constant_times(fx::diamond(), 1.0), {obs});
    const auto exact = exact_expected_gradient(obs, s.ctx);
    REQUIRE(exact);
    CHECK(weight_block(exact->first).norm() < 1e-12);
    Rng rng(4);
    const GradientStats st = grad_online_stats(obs, s.ctx, 20000, rng);
    for (int k = 0; k < kNumFeatures; ++k)
      CHECK(std::abs(st.mean[k]) <= 3.0 * st.std_error[k] + 1e-12);
  }

  TEST_CASE("offline proposals") {
    const Observation obs = rec(0, 1, 1.5);
    Eigen::VectorXd t(2);
    t << 1.0, 2.0;
    Setup s(fx::two_arc(), fx::weights(-1.0), t, {obs});
    Rng rng(6);
    RouteProposal missing{{{0}}, {1.0}};
    CHECK_THROWS_AS(draw_offline_samples(obs, s.ctx, missing, 10, rng), InvalidInput);
    RouteProposal uniform{{{0}, {1}}, {0.5, 0.5}};
    const OfflineSamples samples = draw_offline_samples(obs, s.ctx, uniform, 20000, rng);
    CHECK(samples.routes.size() == 20000);
    const GradientStats st = grad_offline_stats(obs, s.ctx, samples);
    const auto exact = exact_expected_gradient(obs, s.ctx);
    REQUIRE(exact);
    for (Index k = 0; k < st.mean.size(); ++k)
      CHECK(std::abs(st.mean[k] - exact->first[k]) <= 3.0 * st.std_error[k] + 1e-12);
  }
}

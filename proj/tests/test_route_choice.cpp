#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

using namespace rlmix;

namespace {

// All o -> d arc sequences of an acyclic network by depth-first search.
void all_routes(const Network& net, NodeId at, NodeId d, std::vector<ArcId>& cur,
                std::vector<std::vector<ArcId>>& out) {
  if (at == d) {
    out.push_back(cur);
    return;
  }
  for (ArcId a : net.out_arcs(at)) {
    cur.push_back(a);
    all_routes(net, net.arc(a).head, d, cur, out);
    cur.pop_back();
  }
}

double route_utility(const ValueSolution& sol, NodeId o, const std::vector<ArcId>& r) {
  double v = 0.0;
  for (Index e : sol.graph().route_transitions(o, r)) v += sol.utilities()[e];
  return v;
}

Weights random_weights(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, -0.5);
  Weights b;
  b << u(rng), u(rng), u(rng) / 3.0, u(rng), -5.0;
  return b;
}

}  // namespace

TEST_SUITE("route_choice") {
  TEST_CASE("closed-form value functions") {
    SUBCASE("single arc") {
      const Network net = build_network({fx::at(0, 0), fx::at(1000, 0)}, {fx::arc(0, 1)});
      const TurnGraph g(net);
      const auto sol = solve_values(g, fx::weights(-1.0), fx::constant_times(net, 1.0), std::vector<NodeId>{1});
      CHECK(sol.z(1)[g.origin_state(0)] == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
      CHECK(sol.origin_value(0, 1) == doctest::Approx(-1.0).epsilon(1e-14));
    }
    SUBCASE("two parallel arcs") {
      const TurnGraph g(fx::two_arc());
      const auto sol = solve_values(g, fx::weights(-1.0), fx::constant_times(g.network(), 1.0), std::vector<NodeId>{1});
      CHECK(sol.origin_value(0, 1) == doctest::Approx(std::log(2.0) - 1.0).epsilon(1e-14));
    }
    SUBCASE("chain") {
      const TurnGraph g(fx::chain());
      const auto sol = solve_values(g, fx::weights(-1.0), fx::constant_times(g.network(), 1.0), std::vector<NodeId>{2});
      CHECK(sol.origin_value(0, 2) == doctest::Approx(-2.0).epsilon(1e-14));
    }
  }

  TEST_CASE("transition probabilities") {
    SUBCASE("binary logit") {
      const TurnGraph g(fx::two_arc());
      Eigen::VectorXd t(2);
      t << 1.0, 2.0;
      const auto sol = solve_values(g, fx::weights(-1.0), t, std::vector<NodeId>{1});
      const auto table = transition_probs(sol, 1);
      const Index e0 = *g.find_transition(g.origin_state(0), 0);
      CHECK(table.prob[static_cast<std::size_t>(e0)] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
    }
    SUBCASE("symmetric diamond") {
      const TurnGraph g(fx::diamond());
      const auto sol = solve_values(g, fx::weights(-1.0), fx::constant_times(g.network(), 1.0), std::vector<NodeId>{3});
      const auto table = transition_probs(sol, 3);
      const Index s = g.origin_state(0);
      for (Index e = g.begin(s); e < g.end(s); ++e) CHECK(table.prob[static_cast<std::size_t>(e)] == doctest::Approx(0.5));
      CHECK(path_loglik(sol, 0, 3, g.network().arcs_of_node_path(std::vector<NodeId>{0, 1, 3})) ==
            doctest::Approx(std::log(0.5)).epsilon(1e-12));
    }
    SUBCASE("rows are stochastic on a cyclic grid") {
      GridSpec gs;
      gs.rows = gs.cols = 3;
      const auto grid = synthetic_grid(gs);
      const TurnGraph g(grid.network);
      Weights b;
      b << -2.0, -2.0, 0.0, 0.0, -5.0;
      std::vector<NodeId> dests(9);
      for (NodeId d = 0; d < 9; ++d) dests[static_cast<std::size_t>(d)] = d;
      const auto sol = solve_values(g, b, grid.true_times, dests);
      for (NodeId d : dests) {
        const auto table = transition_probs(sol, d);
        for (Index s = 0; s + 1 < g.num_states(); ++s) {
          if (!table.defined[static_cast<std::size_t>(s)]) continue;
          CHECK(std::abs(table.row_sum(g, s) - 1.0) < 1e-12);
        }
      }
    }
  }

  TEST_CASE("logsum fixed point holds at every state") {
    const auto grid = synthetic_grid();
    const TurnGraph g(grid.network);
    const std::vector<NodeId> dests{0, 37, 99};
    const auto sol = solve_values(g, SimulationSpec::default_synthetic_weights(), grid.true_times, dests);
    for (NodeId d : dests) {
      double worst = 0.0;
      for (Index s = 0; s + 1 < g.num_states(); ++s) {
        double sum = g.is_arc_state(s) && g.network().arc(s).head == d ? 1.0 : 0.0;
        for (Index e = g.begin(s); e < g.end(s); ++e)
          sum += std::exp(sol.utilities()[e] + sol.value(g.transition(e).target, d));
        worst = std::max(worst, std::abs(sol.value(s, d) - std::log(sum)));
      }
      CHECK(worst < 1e-9);
    }
  }

  TEST_CASE("path probabilities equal brute-force MNL over enumerated paths") {
    const Network net = fx::dag_grid(3);
    const TurnGraph g(net);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 5; ++trial) {
      const Weights b = random_weights(rng);
      const Eigen::VectorXd T = fx::random_times(net, rng);
      const auto sol = solve_values(g, b, T, std::vector<NodeId>{8, 5});
      for (NodeId d : {NodeId{8}, NodeId{5}}) {
        std::vector<std::vector<ArcId>> routes;
        std::vector<ArcId> cur;
        all_routes(net, 0, d, cur, routes);
        Eigen::VectorXd v(static_cast<Index>(routes.size()));
        for (std::size_t k = 0; k < routes.size(); ++k) v[static_cast<Index>(k)] = route_utility(sol, 0, routes[k]);
        const double lse = logsumexp(v);
        double total = 0.0;
        for (std::size_t k = 0; k < routes.size(); ++k) {
          const double p = std::exp(path_loglik(sol, 0, d, routes[k]));
          CHECK(std::abs(p - std::exp(v[static_cast<Index>(k)] - lse)) < 1e-9);
          total += p;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
        const auto listed = enumerate_routes(sol, 0, d);
        REQUIRE(listed);
        CHECK(listed->size() == routes.size());
      }
    }
  }

  TEST_CASE("enumeration declines cyclic subgraphs") {
    const auto grid = synthetic_grid();
    const TurnGraph g(grid.network);
    const auto sol = solve_values(g, SimulationSpec::default_synthetic_weights(), grid.true_times, std::vector<NodeId>{99});
    CHECK_FALSE(enumerate_routes(sol, 0, 99));
  }

  TEST_CASE("one factorization serves every destination") {
    const auto grid = synthetic_grid();
    const TurnGraph g(grid.network);
    ValueSolver solver(g);
    std::vector<NodeId> dests(100);
    for (NodeId d = 0; d < 100; ++d) dests[static_cast<std::size_t>(d)] = d;
    solver.solve(SimulationSpec::default_synthetic_weights(), grid.true_times, dests);
    CHECK(solver.factorizations() == 1);
  }

  TEST_CASE("singular systems are reported") {
    const Network net = build_network({fx::at(0, 0), fx::at(1000, 0)}, {fx::arc(0, 1), fx::arc(1, 0)});
    const TurnGraph g(net);
    CHECK_THROWS_WITH_AS(solve_values(g, fx::weights(0.0, 0.0, 0.0, 0.0), fx::constant_times(net, 1.0),
                                      std::vector<NodeId>{1}),
                         "value function diverges; utilities too close to zero", NumericalError);
  }

  TEST_CASE("sampling") {
    SUBCASE("chain always returns the chain") {
      const TurnGraph g(fx::chain());
      const auto sol = solve_values(g, fx::weights(-1.0), fx::constant_times(g.network(), 1.0), std::vector<NodeId>{2});
      const auto table = transition_probs(sol, 2);
      Rng rng(1);
      for (int i = 0; i < 100; ++i) CHECK(sample_path(g, table, 0, rng) == std::vector<ArcId>{0, 1});
      CHECK_THROWS_AS(sample_path(g, table, 0, rng, 1, 3), NumericalError);
      CHECK_FALSE(try_sample_path(g, table, 0, rng, 1));
    }
    SUBCASE("diamond frequencies") {
      const TurnGraph g(fx::diamond());
      const auto sol = solve_values(g, fx::weights(-1.0), fx::constant_times(g.network(), 1.0), std::vector<NodeId>{3});
      const auto table = transition_probs(sol, 3);
      Rng rng(2);
      int upper = 0;
      const int n = 100000;
      for (int i = 0; i < n; ++i) upper += sample_path(g, table, 0, rng).front() == 0;
      CHECK(std::abs(upper / static_cast<double>(n) - 0.5) < 0.005);
    }
  }

  TEST_CASE("gradient special cases") {
    const TurnGraph chain(fx::chain());
    const auto sc = solve_values(chain, fx::weights(-1.3), fx::constant_times(chain.network(), 0.7), std::vector<NodeId>{2});
    const auto gc = grad_path_loglik(sc, 0, 2, std::vector<ArcId>{0, 1});
    CHECK(gc.b.norm() < 1e-12);
    CHECK(gc.T.norm() < 1e-12);

    const TurnGraph two(fx::two_arc());
    const auto st = solve_values(two, fx::weights(-1.0), fx::constant_times(two.network(), 1.0), std::vector<NodeId>{1});
    CHECK(grad_path_loglik(st, 0, 1, std::vector<ArcId>{0}).b.norm() < 1e-12);
  }

  TEST_CASE("path log-likelihood gradient matches central differences") {
    std::mt19937_64 rng(11);
    GridSpec gs;
    gs.rows = gs.cols = 3;
    const Network cyclic = synthetic_grid(gs).network;
    for (int trial = 0; trial < 20; ++trial) {
      const Network net = trial % 2 ? cyclic : fx::dag_grid(3);
      const TurnGraph g(net);
      const Weights b = random_weights(rng);
      const Eigen::VectorXd T = fx::random_times(net, rng);
      const NodeId o = 0, d = 8;
      const auto sol = solve_values(g, b, T, std::vector<NodeId>{d});
      Rng walk(static_cast<std::uint64_t>(trial));
      const auto route = sample_path(g, transition_probs(sol, d), o, walk);
      const auto grad = grad_path_loglik(sol, o, d, route);

      auto f = [&](const Weights& bb, const Eigen::VectorXd& tt) {
        return path_loglik(solve_values(g, bb, tt, std::vector<NodeId>{d}), o, d, route);
      };
      auto check = [](double fd, double an) {
        CHECK(std::abs(fd - an) <= 1e-4 * std::max(std::abs(an), 1e-3));
      };
      for (int k = 0; k < kNumFeatures; ++k) {
        const double h = 1e-5;
        Weights up = b, dn = b;
        up[k] += h;
        dn[k] -= h;
        check((f(up, T) - f(dn, T)) / (2 * h), grad.b[k]);
      }
      for (Index a = 0; a < T.size(); ++a) {
        const double h = 1e-6 * T[a];
        Eigen::VectorXd up = T, dn = T;
        up[a] += h;
        dn[a] -= h;
        check((f(b, up) - f(b, dn)) / (2 * h), grad.T[a]);
      }
    }
  }

  TEST_CASE("batched value gradient equals the per-pair sum") {
    const auto grid = synthetic_grid();
    const TurnGraph g(grid.network);
    const std::vector<NodeId> dests{5, 44, 90};
    const auto sol = solve_values(g, SimulationSpec::default_synthetic_weights(), grid.true_times, dests);
    const std::vector<ValueTerm> terms{{0, 5, 2.0}, {0, 44, -0.5}, {13, 90, 1.25}, {77, 5, 3.0}, {0, 5, 1.0}};
    std::vector<std::pair<NodeId, NodeId>> pairs;
    for (const auto& t : terms) pairs.emplace_back(t.o, t.d);
    const auto each = grad_origin_values(sol, pairs);
    ParamGradient want(g.num_arcs());
    for (std::size_t k = 0; k < terms.size(); ++k) want.axpy(terms[k].coef, each[k]);
    const ParamGradient got = weighted_origin_value_gradient(sol, terms);
    CHECK((got.b - want.b).norm() <= 1e-10 * want.b.norm());
    CHECK((got.T - want.T).norm() <= 1e-10 * want.T.norm());
    CHECK(weighted_origin_value_gradient(sol, std::vector<ValueTerm>{}).T.isZero());
  }
}

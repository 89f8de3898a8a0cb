#include "fixtures.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <doctest.h>

#include <numbers>

using namespace rlmix;

namespace {
double oracle(const std::function<double(double)>& f) {
  boost::math::quadrature::exp_sinh<double> q;
  return q.integrate(f, 0.0, std::numeric_limits<double>::infinity());
}
}  // namespace

TEST_SUITE("density") {
  TEST_CASE("closed forms") {
    CHECK(partition_smsle(std::numbers::pi) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(partition_smsle(1.0) == doctest::Approx(1.772454).epsilon(1e-6));
    CHECK(smsle_logpdf(1.0, 1.0, std::numbers::pi) == doctest::Approx(0.0));
    CHECK(smsle_logpdf(1.0, 1.0, 1.0) == doctest::Approx(-0.572365).epsilon(1e-6));
    CHECK_THROWS_AS(partition_smsle(0.0), InvalidInput);
    CHECK_THROWS_AS(smsle_logpdf(-1.0, 1.0, 1.0), InvalidInput);
    CHECK_THROWS_AS(smsle_logpdf(1.0, 0.0, 1.0), InvalidInput);
  }

  TEST_CASE("partition matches quadrature of the defining integral for every theta") {
    for (double gamma : {0.5, 1.0, std::numbers::pi, 4.0}) {
      for (double theta : {0.3, 1.0, 7.5}) {
        const double z = oracle([&](double x) { return std::exp(-smsle_loss(x, theta, gamma)); });
        CHECK(std::abs(z - partition_smsle(gamma)) < 1e-6);
        const double mass = oracle([&](double x) { return std::exp(smsle_logpdf(x, theta, gamma)); });
        CHECK(std::abs(mass - 1.0) < 1e-6);
      }
    }
  }

  TEST_CASE("scalar type is generic") {
    const long double l = smsle_logpdf<long double>(2.0L, 1.5L, 1.0L);
    const float f = smsle_logpdf<float>(2.0f, 1.5f, 1.0f);
    const double d = smsle_logpdf(2.0, 1.5, 1.0);
    CHECK(static_cast<double>(l) == doctest::Approx(d).epsilon(1e-14));
    CHECK(static_cast<double>(f) == doctest::Approx(d).epsilon(1e-6));
  }

  TEST_CASE("density helpers") {
    const SmsleDensity dens(1.7);
    const double t = 2.3, theta = 1.9, h = 1e-6;
    CHECK(dens.dlogpdf_dtheta(t, theta) ==
          doctest::Approx((dens.logpdf(t, theta + h) - dens.logpdf(t, theta - h)) / (2 * h)).epsilon(1e-7));
    const double mean = oracle([&](double x) { return x * std::exp(dens.logpdf(x, theta)); });
    CHECK(mean / theta == doctest::Approx(dens.mean_multiplier()).epsilon(1e-8));
    const double mode = golden_section_minimize([&](double x) { return -dens.logpdf(x, theta); }, 0.1, 10.0);
    CHECK(mode / theta == doctest::Approx(dens.mode_multiplier()).epsilon(1e-7));
    const double log_mean = oracle([&](double x) { return std::log(x) * std::exp(dens.logpdf(x, theta)); });
    CHECK(log_mean - std::log(theta) == doctest::Approx(dens.log_mean_shift()).scale(1.0).epsilon(1e-8));
  }

  TEST_CASE("losses to densities") {
    SUBCASE("squared error gives a normal with variance one half") {
      const LossDensity n = loss_to_logpdf(mse_loss, Domain::real_line, 3.0);
      for (double x : {1.0, 3.0, 4.2})
        CHECK(n.logpdf(x) == doctest::Approx(-(x - 3.0) * (x - 3.0) - 0.5 * std::log(std::numbers::pi)).epsilon(1e-9));
    }
    SUBCASE("linex gives a Gumbel-type density") {
      const LossDensity g = loss_to_logpdf([](double x, double th) { return linex_loss(x, th); }, Domain::real_line, 0.5);
      CHECK(g.log_partition == doctest::Approx(1.0).epsilon(1e-9));
      const auto mass = integrate([&](double x) { return g.pdf(x); }, -std::numeric_limits<double>::infinity(),
                                  std::numeric_limits<double>::infinity(), 0.5);
      CHECK(mass.value == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("msle has a theta-dependent partition, smsle does not") {
      const std::vector<double> thetas{0.5, 2.0};
      CHECK_FALSE(partition_is_constant(msle_loss, Domain::positive_half_line, thetas));
      CHECK(partition_is_constant([](double x, double th) { return smsle_loss(x, th, 1.0); },
                                  Domain::positive_half_line, thetas));
      const LossDensity m = loss_to_logpdf(msle_loss, Domain::positive_half_line, 2.0);
      CHECK(std::exp(m.log_partition) == doctest::Approx(2.0 * std::sqrt(std::numbers::pi) * std::exp(0.25)).epsilon(1e-8));
    }
    SUBCASE("divergent partition is reported") {
      CHECK_THROWS_AS(loss_to_logpdf([](double, double) { return 0.0; }, Domain::real_line, 0.0), NumericalError);
    }
  }

  TEST_CASE("smsle and msle share their optimum") {
    std::mt19937_64 rng(3);
    std::lognormal_distribution<double> ln(0.4, 0.6);
    std::vector<double> sample(200);
    for (double& x : sample) x = ln(rng);
    double best_s = 0, best_m = 0, vs = 1e300, vm = 1e300;
    for (double theta = 0.2; theta < 5.0; theta += 0.001) {
      double s = 0, m = 0;
      for (double x : sample) {
        s += smsle_loss(x, theta, 1.3);
        m += msle_loss(x, theta);
      }
      if (s < vs) vs = s, best_s = theta;
      if (m < vm) vm = m, best_m = theta;
    }
    CHECK(best_s == best_m);
  }
}

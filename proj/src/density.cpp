#include "rlmix/density.hpp"

#include <limits>

namespace rlmix {

SmsleDensity::SmsleDensity(double gamma) : gamma_(gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw InvalidInput("gamma must be positive");
}

namespace {

QuadratureResult partition(const Loss& loss, Domain domain, double theta) {
  auto f = [&](double x) {
    const double l = loss(x, theta);
    return std::isnan(l) ? 0.0 : std::exp(-l);
  };
  const double inf = std::numeric_limits<double>::infinity();
  QuadratureOptions opts;
  opts.abs_tol = 1e-14;
  opts.rel_tol = 1e-12;
  return domain == Domain::real_line ? integrate(f, -inf, inf, theta, opts)
                                     : integrate(f, 0.0, inf, 0.0, opts);
}

}  // namespace

double LossDensity::logpdf(double x) const {
  if (domain == Domain::positive_half_line && !(x > 0.0))
    return -std::numeric_limits<double>::infinity();
  return -loss(x, theta) - log_partition;
}

LossDensity loss_to_logpdf(const Loss& loss, Domain domain, double theta) {
  const QuadratureResult z = partition(loss, domain, theta);
  if (!z.converged || !std::isfinite(z.value) || !(z.value > 0.0))
    throw NumericalError("partition integral diverges");
  return LossDensity{loss, domain, theta, std::log(z.value), z.error};
}

bool partition_is_constant(const Loss& loss, Domain domain, std::span<const double> thetas,
                           double rel_tol) {
  double first = 0.0;
  bool have = false;
  for (double theta : thetas) {
    const double z = std::exp(loss_to_logpdf(loss, domain, theta).log_partition);
    if (!have) {
      first = z;
      have = true;
    } else if (std::abs(z - first) > rel_tol * std::abs(first)) {
      return false;
    }
  }
  return true;
}

}  // namespace rlmix

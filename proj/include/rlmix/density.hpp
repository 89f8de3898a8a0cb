#pragma once

#include "rlmix/common.hpp"
#include "rlmix/numerics.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>

namespace rlmix {

/// Normalizer of exp(-gamma ln^2(x/theta) - ln x) over (0, inf). Does not
/// depend on theta.
template <typename Scalar>
Scalar partition_smsle(const Scalar& gamma) {
  using std::sqrt;
  if (!(gamma > Scalar(0))) throw InvalidInput("gamma must be positive");
  return sqrt(Scalar(std::numbers::pi) / gamma);
}

/// Log density of the small-time-biased MSLE loss, i.e. a log-normal with
/// median theta and sigma^2 = 1 / (2 gamma).
template <typename Scalar>
Scalar smsle_logpdf(const Scalar& t, const Scalar& theta, const Scalar& gamma) {
  using std::log;
  if (!(t > Scalar(0)) || !(theta > Scalar(0)))
    throw InvalidInput("smsle density needs positive time and prediction");
  const Scalar r = log(t / theta);
  return -gamma * r * r - log(t) - log(partition_smsle(gamma));
}

/// Density of an observed time given the predicted path time theta.
class ObservationDensity {
 public:
  virtual ~ObservationDensity() = default;
  virtual double logpdf(double t, double theta) const = 0;
  /// d logpdf / d theta
  virtual double dlogpdf_dtheta(double t, double theta) const = 0;
  /// E[t] / theta
  virtual double mean_multiplier() const = 0;
  /// E[ln t] - ln theta
  virtual double log_mean_shift() const = 0;
  /// argmax_t f(t; theta) / theta
  virtual double mode_multiplier() const = 0;
  virtual std::unique_ptr<ObservationDensity> clone() const = 0;
};

class SmsleDensity final : public ObservationDensity {
 public:
  explicit SmsleDensity(double gamma = 1.0);
  double gamma() const { return gamma_; }
  double sigma() const { return 1.0 / std::sqrt(2.0 * gamma_); }

  double logpdf(double t, double theta) const override {
    return smsle_logpdf(t, theta, gamma_);
  }
  double dlogpdf_dtheta(double t, double theta) const override {
    return 2.0 * gamma_ * std::log(t / theta) / theta;
  }
  double mean_multiplier() const override { return std::exp(0.25 / gamma_); }
  double log_mean_shift() const override { return 0.0; }
  double mode_multiplier() const override { return std::exp(-0.5 / gamma_); }
  std::unique_ptr<ObservationDensity> clone() const override {
    return std::make_unique<SmsleDensity>(*this);
  }

 private:
  double gamma_;
};

enum class Domain { real_line, positive_half_line };

using Loss = std::function<double(double x, double theta)>;

/// exp(-L(x, theta)) / Z_L(theta) on a domain, with Z_L found by quadrature.
struct LossDensity {
  Loss loss;
  Domain domain = Domain::real_line;
  double theta = 0.0;
  double log_partition = 0.0;
  double partition_error = 0.0;

  double logpdf(double x) const;
  double pdf(double x) const { return std::exp(logpdf(x)); }
};

/// Throws NumericalError when the partition integral does not converge to a
/// finite positive value.
LossDensity loss_to_logpdf(const Loss& loss, Domain domain, double theta);

/// True when Z_L agrees at every theta within rel_tol.
bool partition_is_constant(const Loss& loss, Domain domain, std::span<const double> thetas,
                           double rel_tol = 1e-6);

// Common losses, useful as loss_to_logpdf inputs.
inline double mse_loss(double x, double theta) { return (x - theta) * (x - theta); }
inline double msle_loss(double x, double theta) {
  const double r = std::log(x) - std::log(theta);
  return r * r;
}
inline double smsle_loss(double x, double theta, double gamma) {
  return gamma * msle_loss(x, theta) + std::log(x);
}
/// LINEX with shape a: exp(a (x - theta)) - a (x - theta) - 1.
inline double linex_loss(double x, double theta, double a = 1.0) {
  const double u = a * (x - theta);
  return std::exp(u) - u - 1.0;
}

}  // namespace rlmix

#pragma once

#include "rlmix/common.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>

namespace rlmix {

using Rng = std::mt19937_64;

/// ln(sum(exp(x))) without overflow. Returns -inf for an empty range.
template <typename Derived>
double logsumexp(const Eigen::DenseBase<Derived>& x) {
  if (x.size() == 0) return -std::numeric_limits<double>::infinity();
  const double m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

inline double logsumexp(std::span<const double> x) {
  return logsumexp(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Index>(x.size())));
}

/// Derive an independent 64-bit seed from a master seed and a stream path.
/// SplitMix64 finalizer applied over each component.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                          std::uint64_t c = 0);

inline Rng make_rng(std::uint64_t master, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
  return Rng(derive_seed(master, a, b, c));
}

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  bool converged = false;
};

struct QuadratureOptions {
  double abs_tol = 1e-13;
  double rel_tol = 1e-11;
  int max_intervals = 4000;
};

/// Adaptive Gauss-Kronrod (7/15) quadrature of f over [a, b]. Either bound may
/// be infinite; infinite ranges are mapped onto finite ones, split at
/// `center` when both ends are unbounded.
QuadratureResult integrate(const std::function<double(double)>& f, double a, double b,
                           double center = 0.0, const QuadratureOptions& opts = {});

/// Minimizes a unimodal function on [lo, hi] by golden-section search.
double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                               double tol = 1e-10);

/// Default worker count: $RLMIX_THREADS when set, else hardware concurrency.
int default_thread_count();

/// Runs fn(chunk_index) for chunk_index in [0, num_chunks) on up to `threads`
/// workers. Chunk boundaries are chosen by the caller, so reductions done in
/// chunk order are independent of the worker count.
void parallel_for(Index num_chunks, int threads, const std::function<void(Index)>& fn);

}  // namespace rlmix

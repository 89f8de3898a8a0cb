#include "rlmix/numerics.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <queue>
#include <string>
#include <thread>
#include <vector>

namespace rlmix {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
constexpr std::array<double, 8> kXgk = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.000000000000000000000000000000000};
constexpr std::array<double, 8> kWgk = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr std::array<double, 4> kWg = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
  double a, b, value, error;
  bool operator<(const Segment& o) const { return error < o.error; }
};

Segment gk15(const std::function<double(double)>& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  const double fc = f(c);
  double kronrod = fc * kWgk[7];
  double gauss = fc * kWg[3];
  for (int j = 0; j < 7; ++j) {
    const double dx = h * kXgk[j];
    const double f1 = f(c - dx);
    const double f2 = f(c + dx);
    kronrod += kWgk[j] * (f1 + f2);
    if (j % 2 == 1) gauss += kWg[j / 2] * (f1 + f2);
  }
  Segment s{a, b, kronrod * h, std::abs((kronrod - gauss) * h)};
  if (!std::isfinite(s.value)) s.error = std::numeric_limits<double>::infinity();
  return s;
}

QuadratureResult integrate_finite(const std::function<double(double)>& f, double a, double b,
                                  const QuadratureOptions& opts) {
  std::priority_queue<Segment> heap;
  heap.push(gk15(f, a, b));
  double total = heap.top().value;
  double err = heap.top().error;
  int count = 1;
  while (err > std::max(opts.abs_tol, opts.rel_tol * std::abs(total)) &&
         count < opts.max_intervals) {
    const Segment worst = heap.top();
    heap.pop();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      heap.push(worst);
      break;
    }
    const Segment left = gk15(f, worst.a, mid);
    const Segment right = gk15(f, mid, worst.b);
    heap.push(left);
    heap.push(right);
    ++count;
    total += left.value + right.value - worst.value;
    err += left.error + right.error - worst.error;
    if (count % 64 == 0) {
      // Resum periodically so cancellation in the running totals cannot drift.
      total = 0.0;
      err = 0.0;
      auto copy = heap;
      while (!copy.empty()) {
        total += copy.top().value;
        err += copy.top().error;
        copy.pop();
      }
    }
  }
  QuadratureResult r;
  r.value = total;
  r.error = err;
  r.converged = std::isfinite(total) && err <= std::max(opts.abs_tol, opts.rel_tol * std::abs(total));
  return r;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = splitmix64(h ^ (c + 0x85157af5ULL));
  return h;
}

QuadratureResult integrate(const std::function<double(double)>& f, double a, double b,
                           double center, const QuadratureOptions& opts) {
  if (a == b) return {0.0, 0.0, true};
  if (a > b) {
    auto r = integrate(f, b, a, center, opts);
    r.value = -r.value;
    return r;
  }
  const bool lo_inf = std::isinf(a);
  const bool hi_inf = std::isinf(b);
  if (!lo_inf && !hi_inf) return integrate_finite(f, a, b, opts);
  if (lo_inf && hi_inf) {
    auto left = integrate(f, a, center, center, opts);
    auto right = integrate(f, center, b, center, opts);
    return {left.value + right.value, left.error + right.error, left.converged && right.converged};
  }
  // Semi-infinite: x = a + u / (1 - u) on [0, 1), or the mirror for (-inf, b].
  if (hi_inf) {
    auto g = [&](double u) {
      if (u >= 1.0) return 0.0;
      const double s = 1.0 - u;
      const double val = f(a + u / s);
      return val == 0.0 ? 0.0 : val / (s * s);
    };
    return integrate_finite(g, 0.0, 1.0, opts);
  }
  auto g = [&](double u) {
    if (u >= 1.0) return 0.0;
    const double s = 1.0 - u;
    const double val = f(b - u / s);
    return val == 0.0 ? 0.0 : val / (s * s);
  };
  return integrate_finite(g, 0.0, 1.0, opts);
}

double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                               double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (std::abs(b - a) > tol * std::max(1.0, std::abs(a) + std::abs(b))) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

int default_thread_count() {
  if (const char* env = std::getenv("RLMIX_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(Index num_chunks, int threads, const std::function<void(Index)>& fn) {
  if (num_chunks <= 0) return;
  const int workers = static_cast<int>(std::min<Index>(std::max(threads, 1), num_chunks));
  if (workers == 1) {
    for (Index i = 0; i < num_chunks; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (Index i = next++; i < num_chunks; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace rlmix

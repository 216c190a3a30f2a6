#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <initializer_list>
#include <limits>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace hierlab {

inline constexpr int kMaxDim = 8;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Error hierarchy. Every failure the library can report is one of these.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PreconditionError : Error { using Error::Error; };
struct SingularPoint : Error { using Error::Error; };
struct EvaluationError : Error { using Error::Error; };
struct NonIntegrable : Error { using Error::Error; };
struct DegenerateQuadrature : Error { using Error::Error; };
struct MoveNotAcceptable : Error { using Error::Error; };
struct NonTermination : Error { using Error::Error; };
struct BudgetExceeded : Error { using Error::Error; };
struct SymmetryRequired : Error { using Error::Error; };
struct DivergenceDetected : Error { using Error::Error; };
struct ParameterRegime : Error { using Error::Error; };

// Small fixed-capacity vector in R^d.
struct Vec {
  int d = 0;
  std::array<double, kMaxDim> c{};

  Vec() = default;
  explicit Vec(int dim) : d(dim) {
    if (dim < 1 || dim > kMaxDim) throw PreconditionError("dimension out of range");
  }
  Vec(std::initializer_list<double> xs) : d(static_cast<int>(xs.size())) {
    if (d < 1 || d > kMaxDim) throw PreconditionError("dimension out of range");
    std::copy(xs.begin(), xs.end(), c.begin());
  }
  static Vec unit(int dim, int axis) {
    Vec e(dim);
    e[axis] = 1.0;
    return e;
  }

  double& operator[](int i) { return c[i]; }
  double operator[](int i) const { return c[i]; }

  Vec& operator+=(const Vec& o) { for (int i = 0; i < d; ++i) c[i] += o.c[i]; return *this; }
  Vec& operator-=(const Vec& o) { for (int i = 0; i < d; ++i) c[i] -= o.c[i]; return *this; }
  Vec& operator*=(double s) { for (int i = 0; i < d; ++i) c[i] *= s; return *this; }
  friend Vec operator+(Vec a, const Vec& b) { return a += b; }
  friend Vec operator-(Vec a, const Vec& b) { return a -= b; }
  friend Vec operator*(Vec a, double s) { return a *= s; }
  friend Vec operator*(double s, Vec a) { return a *= s; }
  friend Vec operator-(Vec a) { return a *= -1.0; }
  bool operator==(const Vec& o) const {
    if (d != o.d) return false;
    for (int i = 0; i < d; ++i) if (c[i] != o.c[i]) return false;
    return true;
  }
};

inline double dot(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (int i = 0; i < a.d; ++i) s += a[i] * b[i];
  return s;
}
inline double norm2(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(norm2(a)); }
inline bool finite(const Vec& a) {
  for (int i = 0; i < a.d; ++i) if (!std::isfinite(a[i])) return false;
  return true;
}

// Area of the unit sphere S^{n} in R^{n+1}.
inline double sphere_area(int n) {
  const double m = 0.5 * (n + 1);
  return 2.0 * std::pow(kPi, m) / std::tgamma(m);
}

// ---- random numbers ------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Substream keyed by (seed, stream...). Results never depend on which thread
// draws from the stream.
inline std::uint64_t substream_key(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(seed) ^ a) + 0x632be59bd9b4e019ULL * (b + 1));
}

// SplitMix64 as a counter-based engine: the state is a key derived from
// (seed, stream, sub) plus a counter, so opening a substream costs nothing.
class SplitMixEngine {
 public:
  using result_type = std::uint64_t;
  explicit SplitMixEngine(std::uint64_t key) : state_(key) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t sub = 0)
      : eng_(substream_key(seed, stream, sub)) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  double normal() { return normal_(eng_); }
  double gamma(double shape) { return std::gamma_distribution<double>(shape, 1.0)(eng_); }
  int index(int n) { return static_cast<int>(uniform() * n) % n; }
  Vec normal_vec(int d) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = normal();
    return v;
  }
  Vec unit_vec(int d) {
    for (;;) {
      Vec v = normal_vec(d);
      const double n = norm(v);
      if (n > 1e-300) return v * (1.0 / n);
    }
  }

 private:
  SplitMixEngine eng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// ---- threads -------------------------------------------------------------

inline int default_threads() {
  if (const char* env = std::getenv("HIERLAB_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

inline int& thread_setting() {
  static int n = default_threads();
  return n;
}
inline void set_threads(int n) { thread_setting() = std::max(1, n); }
inline int threads() { return thread_setting(); }

// Runs fn(i) for i in [0, n) on a strided split across threads. Callers
// store per-index results and reduce in index order, so the outcome does not
// depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads()), n);
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(nt);
  for (std::size_t w = 0; w < nt; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += nt) fn(i);
      } catch (...) {
        errs[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs) if (e) std::rethrow_exception(e);
}

// ---- statistics ----------------------------------------------------------

struct Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

// Welford accumulator.
class Accumulator {
 public:
  void add(double x) {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stderr_mean() const { return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }
  Estimate estimate() const { return {mean_, stderr_mean()}; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// Mean and standard error of a sample held in index order.
inline Estimate summarize(const std::vector<double>& xs) {
  Accumulator acc;
  for (double x : xs) acc.add(x);
  return acc.estimate();
}

// Floats in reports: 17 significant digits, locale independent.
inline std::string fmt17(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace hierlab

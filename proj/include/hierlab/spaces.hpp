#pragma once

#include <cstring>
#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include "hierlab/core.hpp"

namespace hierlab {

inline constexpr int kMaxParticles = 12;

struct WeightParams {
  int d = 3;
  double p = 2.0;
  double q = 5.0;
  double alpha = 1.0;
  double beta = 1.0;
  double mu = 0.0;
  double T = 1.0;

  void validate() const {
    if (d < 2 || d > kMaxDim) throw PreconditionError("dimension out of range");
    if (!(p > 1.0)) throw PreconditionError("p must exceed 1");
    if (!(alpha > 0.0) || !(beta > 0.0)) throw PreconditionError("alpha and beta must be positive");
    if (!(T > 0.0)) throw PreconditionError("time horizon must be positive");
  }
  // Pairing with a cross section of exponent gamma.
  void check_q(double gamma) const {
    if (!(q > std::max(d - 1 + gamma, static_cast<double>(d - 1))))
      throw PreconditionError("q must exceed max(d-1+gamma, d-1)");
  }
};

// k particles in R^d: positions X and velocities V.
struct PhaseState {
  int k = 0;
  int d = 0;
  std::array<Vec, kMaxParticles> x{};
  std::array<Vec, kMaxParticles> v{};

  PhaseState() = default;
  PhaseState(int particles, int dim) : k(particles), d(dim) {
    if (particles < 0 || particles > kMaxParticles) throw PreconditionError("particle count out of range");
    for (int i = 0; i < particles; ++i) {
      x[i] = Vec(dim);
      v[i] = Vec(dim);
    }
  }
  static PhaseState single(const Vec& xi, const Vec& vi) {
    PhaseState s(1, xi.d);
    s.x[0] = xi;
    s.v[0] = vi;
    return s;
  }
  void push(const Vec& xi, const Vec& vi) {
    if (k >= kMaxParticles) throw BudgetExceeded("too many particles");
    x[k] = xi;
    v[k] = vi;
    ++k;
  }
  void swap_slots(int a, int b) {
    std::swap(x[a], x[b]);
    std::swap(v[a], v[b]);
  }
  // Free flight of every particle by time s.
  void drift(double s) {
    if (s == 0.0) return;
    for (int i = 0; i < k; ++i)
      for (int c = 0; c < d; ++c) x[i][c] -= s * v[i][c];
  }
  bool finite_entries() const {
    for (int i = 0; i < k; ++i) if (!finite(x[i]) || !finite(v[i])) return false;
    return true;
  }
};

inline double bracket(const Vec& y) { return std::sqrt(1.0 + norm2(y)); }

inline double weight_eval(const PhaseState& s, const WeightParams& w) {
  double acc = 1.0;
  for (int i = 0; i < s.k; ++i) {
    acc *= std::pow(1.0 + w.alpha * w.alpha * norm2(s.x[i]), 0.5 * w.p);
    acc *= std::pow(1.0 + w.beta * w.beta * norm2(s.v[i]), 0.5 * w.q);
  }
  return acc;
}

// Pointwise envelope amp * <<alpha X>>^{-p} <<beta V>>^{-q}.
struct Envelope {
  double amp = 1.0;
  WeightParams params;
};

using EvalFn = std::function<double(double, const PhaseState&)>;

// Immutable pure map (t, X_k, V_k) -> real. Cheap to copy.
class DensityEvaluator {
 public:
  DensityEvaluator() : DensityEvaluator(zero(1)) {}
  DensityEvaluator(int k, EvalFn fn, bool symmetric = false, std::optional<Envelope> env = std::nullopt)
      : fn_(std::make_shared<const EvalFn>(std::move(fn))), k_(k), symmetric_(symmetric), env_(env) {
    if (k < 1 || k > kMaxParticles) throw PreconditionError("particle count out of range");
  }
  static DensityEvaluator zero(int k) {
    return DensityEvaluator(k, [](double, const PhaseState&) { return 0.0; }, true, Envelope{0.0, {}});
  }

  double operator()(double t, const PhaseState& s) const { return (*fn_)(t, s); }
  double operator()(double t, const Vec& x, const Vec& v) const { return (*fn_)(t, PhaseState::single(x, v)); }

  int k() const { return k_; }
  bool symmetric() const { return symmetric_; }
  const std::optional<Envelope>& envelope() const { return env_; }

  DensityEvaluator with_symmetry(bool flag) const {
    DensityEvaluator e = *this;
    e.symmetric_ = flag;
    return e;
  }
  // Attach an envelope after spot-checking it at random points; a violated
  // envelope is a construction error.
  DensityEvaluator with_envelope(const Envelope& env, std::uint64_t seed = 1, int probes = 256) const {
    Rng rng(seed, 0x656e76);
    for (int i = 0; i < probes; ++i) {
      PhaseState s(k_, env.params.d);
      for (int j = 0; j < k_; ++j) {
        s.x[j] = rng.normal_vec(env.params.d) * (2.0 / env.params.alpha);
        s.v[j] = rng.normal_vec(env.params.d) * (2.0 / env.params.beta);
      }
      const double t = rng.uniform(0.0, env.params.T);
      const double lhs = std::abs((*this)(t, s)) * weight_eval(s, env.params);
      if (lhs > env.amp * (1.0 + 1e-9)) throw PreconditionError("envelope violated at a sampled point");
    }
    DensityEvaluator e = *this;
    e.env_ = env;
    return e;
  }

 private:
  std::shared_ptr<const EvalFn> fn_;
  int k_ = 1;
  bool symmetric_ = false;
  std::optional<Envelope> env_;
};

// [T^s f](t, X, V) = f(t, X - sV, V).
inline DensityEvaluator transport(const DensityEvaluator& f, double s) {
  return DensityEvaluator(
      f.k(),
      [f, s](double t, const PhaseState& st) {
        PhaseState moved = st;
        moved.drift(s);
        return f(t, moved);
      },
      f.symmetric());
}

// h(z_1) ... h(z_k).
inline DensityEvaluator tensor_power(const DensityEvaluator& h, int k) {
  if (k < 1) throw PreconditionError("tensor power needs k >= 1");
  if (h.k() != 1) throw PreconditionError("tensor power takes a one-particle density");
  if (k == 1) return h.with_symmetry(true);
  std::optional<Envelope> env;
  if (h.envelope()) env = Envelope{std::pow(h.envelope()->amp, k), h.envelope()->params};
  return DensityEvaluator(
      k,
      [h](double t, const PhaseState& st) {
        double acc = 1.0;
        for (int i = 0; i < st.k && acc != 0.0; ++i) acc *= h(t, st.x[i], st.v[i]);
        return acc;
      },
      true, env);
}

// ---- memoization ---------------------------------------------------------

// Bounded LRU cache keyed on the exact bits of (t, X, V). Values are
// deterministic, so concurrent last-write-wins inserts are harmless.
class EvalCache {
 public:
  explicit EvalCache(std::size_t capacity) : cap_(std::max<std::size_t>(1, capacity)) {}

  static std::vector<double> key(double t, const PhaseState& s) {
    std::vector<double> k;
    k.reserve(1 + 2 * s.k * s.d);
    // Exact bits: a rounded key would let evaluation order leak into results.
    auto q = [](double a) { return a == 0.0 ? 0.0 : a; };
    k.push_back(q(t));
    for (int i = 0; i < s.k; ++i)
      for (int c = 0; c < s.d; ++c) {
        k.push_back(q(s.x[i][c]));
        k.push_back(q(s.v[i][c]));
      }
    return k;
  }

  std::optional<double> get(const std::vector<double>& k) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(k);
    if (it == map_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second.second);
    ++hits_;
    return it->second.first;
  }

  void put(const std::vector<double>& k, double value) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = map_.find(k);
    if (it != map_.end()) {
      it->second.first = value;
      order_.splice(order_.begin(), order_, it->second.second);
      return;
    }
    order_.push_front(k);
    map_.emplace(k, std::make_pair(value, order_.begin()));
    if (map_.size() > cap_) {
      map_.erase(order_.back());
      order_.pop_back();
    }
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return map_.size();
  }
  std::size_t hits() const {
    std::lock_guard<std::mutex> lock(mu_);
    return hits_;
  }

 private:
  struct Hash {
    std::size_t operator()(const std::vector<double>& v) const {
      std::uint64_t h = 0x84222325cbf29ce4ULL;
      for (double a : v) {
        std::uint64_t bits;
        std::memcpy(&bits, &a, sizeof bits);
        h = splitmix64(h ^ bits);
      }
      return static_cast<std::size_t>(h);
    }
  };
  std::size_t cap_;
  mutable std::mutex mu_;
  std::list<std::vector<double>> order_;
  std::unordered_map<std::vector<double>, std::pair<double, std::list<std::vector<double>>::iterator>, Hash> map_;
  std::size_t hits_ = 0;
};

inline DensityEvaluator memoize(const DensityEvaluator& f, std::size_t capacity = std::size_t{1} << 20) {
  auto cache = std::make_shared<EvalCache>(capacity);
  return DensityEvaluator(
      f.k(),
      [f, cache](double t, const PhaseState& s) {
        const auto k = EvalCache::key(t, s);
        if (auto hit = cache->get(k)) return *hit;
        const double v = f(t, s);
        cache->put(k, v);
        return v;
      },
      f.symmetric(), f.envelope());
}

// ---- sample clouds -------------------------------------------------------

struct CloudSpec {
  enum class Kind { low_discrepancy, pseudo_random };
  Kind kind = Kind::low_discrepancy;
  std::uint64_t seed = 1;
  int count = 1 << 15;
  double radius_x = 10.0;  // largest |coordinate| reached in position
  double radius_v = 10.0;  // and in velocity
  double scale_x = 1.0;    // half the points fall within +-scale per coordinate
  double scale_v = 1.0;
};

struct SampleCloud {
  int k = 1;
  int d = 3;
  CloudSpec spec;
  std::vector<PhaseState> points;
};

namespace detail {

inline const std::vector<int>& primes() {
  static const std::vector<int> ps = [] {
    std::vector<int> out;
    for (int n = 2; out.size() < 2 * kMaxParticles * kMaxDim; ++n) {
      bool prime = true;
      for (int p : out) {
        if (p * p > n) break;
        if (n % p == 0) { prime = false; break; }
      }
      if (prime) out.push_back(n);
    }
    return out;
  }();
  return ps;
}

inline double radical_inverse(std::uint64_t i, int base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (i > 0) {
    r += f * static_cast<double>(i % static_cast<std::uint64_t>(base));
    i /= static_cast<std::uint64_t>(base);
    f *= inv;
  }
  return r;
}

// (0,1) -> (-radius, radius), median |y| = scale.
inline double stretch(double u, double scale, double radius) {
  const double z = 2.0 * u - 1.0;
  const double c = std::atan(radius / scale) / std::atan(1.0);
  const double y = scale * std::tan(c * z * kPi / 4.0);
  return std::clamp(y, -radius, radius);
}

}  // namespace detail

// Reproducible from (kind, seed, count). Low-discrepancy clouds use a
// Halton sequence with a seeded Cranley-Patterson shift. The origin is
// always the first point.
inline SampleCloud make_cloud(int k, int d, const CloudSpec& spec) {
  if (spec.count < 1) throw PreconditionError("cloud must be nonempty");
  SampleCloud cloud{k, d, spec, {}};
  const int dims = 2 * k * d;
  Rng rng(spec.seed, 0x636c6f7564);
  std::vector<double> shift(dims);
  for (double& s : shift) s = rng.uniform();
  cloud.points.reserve(spec.count);
  cloud.points.emplace_back(k, d);
  for (int n = 1; n < spec.count; ++n) {
    PhaseState s(k, d);
    for (int j = 0; j < dims; ++j) {
      double u;
      if (spec.kind == CloudSpec::Kind::low_discrepancy) {
        u = detail::radical_inverse(static_cast<std::uint64_t>(n), detail::primes()[j]) + shift[j];
        u -= std::floor(u);
      } else {
        u = rng.uniform();
      }
      u = std::clamp(u, 1e-12, 1.0 - 1e-12);
      const int particle = j / (2 * d);
      const int slot = j % (2 * d);
      if (slot < d)
        s.x[particle][slot] = detail::stretch(u, spec.scale_x, spec.radius_x);
      else
        s.v[particle][slot - d] = detail::stretch(u, spec.scale_v, spec.radius_v);
    }
    cloud.points.push_back(s);
  }
  return cloud;
}

// Cloud spec whose radii cut the envelope tail below 1e-10 of its peak.
inline CloudSpec cloud_for_envelope(const WeightParams& w, int count = 1 << 15, std::uint64_t seed = 1) {
  CloudSpec c;
  c.count = count;
  c.seed = seed;
  c.scale_x = 1.0 / w.alpha;
  c.scale_v = 1.0 / w.beta;
  c.radius_x = std::pow(1e10, 1.0 / w.p) / w.alpha;
  c.radius_v = std::max(1.0, std::pow(1e10, 1.0 / std::max(w.q, 1.0))) / w.beta;
  return c;
}

// k-particle cloud matched to a one-particle cloud: every diagonal tuple
// (z, ..., z) plus `extra` tuples drawn at random from the one-particle points.
inline SampleCloud tensorize_cloud(const SampleCloud& one, int k, int extra = 0) {
  if (one.k != 1) throw PreconditionError("tensorize_cloud takes a one-particle cloud");
  SampleCloud out{k, one.d, one.spec, {}};
  out.points.reserve(one.points.size() + static_cast<std::size_t>(extra));
  for (const auto& p : one.points) {
    PhaseState s(k, one.d);
    for (int i = 0; i < k; ++i) { s.x[i] = p.x[0]; s.v[i] = p.v[0]; }
    out.points.push_back(s);
  }
  Rng rng(one.spec.seed, 0x74656e73, static_cast<std::uint64_t>(k));
  const int n = static_cast<int>(one.points.size());
  for (int e = 0; e < extra; ++e) {
    PhaseState s(k, one.d);
    for (int i = 0; i < k; ++i) {
      const auto& p = one.points[rng.index(n)];
      s.x[i] = p.x[0];
      s.v[i] = p.v[0];
    }
    out.points.push_back(s);
  }
  return out;
}

// ---- sup norm estimation -------------------------------------------------

struct NormEstimate {
  double value = 0.0;
  PhaseState arg;
};

// Lower estimate of sup weight*|f| over R^{2dk} at time t: best cloud point
// followed by `refine` rounds of coordinate pattern search.
inline NormEstimate sup_norm_estimate(const DensityEvaluator& f, const WeightParams& w, const SampleCloud& cloud,
                                      int refine = 20, double t = 0.0) {
  if (cloud.points.empty()) throw PreconditionError("cloud must be nonempty");
  auto score = [&](const PhaseState& s) {
    const double fv = f(t, s);
    if (std::isnan(fv)) {
      std::string where = "f returned NaN at";
      for (int i = 0; i < s.k; ++i) {
        for (int c = 0; c < s.d; ++c) where += " " + fmt17(s.x[i][c]);
        for (int c = 0; c < s.d; ++c) where += " " + fmt17(s.v[i][c]);
      }
      throw EvaluationError(where);
    }
    return weight_eval(s, w) * std::abs(fv);
  };
  std::vector<double> vals(cloud.points.size());
  parallel_for(cloud.points.size(), [&](std::size_t i) { vals[i] = score(cloud.points[i]); });
  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (vals[i] > vals[best]) best = i;
  NormEstimate out{vals[best], cloud.points[best]};
  if (out.value == 0.0) return out;

  double step_x = 0.25 / w.alpha, step_v = 0.25 / w.beta;
  PhaseState cur = out.arg;
  double cur_val = out.value;
  for (int round = 0; round < refine; ++round) {
    for (int i = 0; i < cur.k; ++i)
      for (int slot = 0; slot < 2 * cur.d; ++slot) {
        const bool pos = slot < cur.d;
        const int c = pos ? slot : slot - cur.d;
        const double h = pos ? step_x : step_v;
        for (double dir : {1.0, -1.0}) {
          for (int moves = 0; moves < 64; ++moves) {
            PhaseState trial = cur;
            (pos ? trial.x[i][c] : trial.v[i][c]) += dir * h;
            const double tv = score(trial);
            if (!(tv > cur_val)) break;
            cur = trial;
            cur_val = tv;
          }
        }
      }
    step_x *= 0.5;
    step_v *= 0.5;
  }
  out.value = cur_val;
  out.arg = cur;
  return out;
}

struct HierarchyNormResult {
  double value = 0.0;
  int k_arg = 0;
  std::vector<double> per_k;  // e^{mu k} * ||f^(k)||
};

// max_k e^{mu k} ||f^(k)|| over the supplied marginals (k = 1..F.size()).
inline HierarchyNormResult hierarchy_norm(const std::vector<DensityEvaluator>& F, const WeightParams& w,
                                          const std::function<SampleCloud(int)>& cloud_for_k, int refine = 20,
                                          double t = 0.0) {
  if (F.empty()) throw PreconditionError("hierarchy norm needs at least one marginal");
  HierarchyNormResult r;
  for (std::size_t i = 0; i < F.size(); ++i) {
    const int k = static_cast<int>(i) + 1;
    if (F[i].k() != k) throw PreconditionError("marginal k mismatch");
    const double v = std::exp(w.mu * k) * sup_norm_estimate(F[i], w, cloud_for_k(k), refine, t).value;
    r.per_k.push_back(v);
    if (r.k_arg == 0 || v > r.value) {
      r.value = v;
      r.k_arg = k;
    }
  }
  return r;
}

}  // namespace hierlab

#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "hierlab/collision_ops.hpp"
#include "hierlab/core.hpp"
#include "hierlab/spaces.hpp"

namespace hierlab {

using BigInt = boost::multiprecision::cpp_int;

// mu[l-1] holds the value mu(k+l), l = 1..n.
struct CollisionMap {
  int k = 1;
  int n = 1;
  std::vector<int> mu;

  CollisionMap() = default;
  CollisionMap(int kk, std::vector<int> values) : k(kk), n(static_cast<int>(values.size())), mu(std::move(values)) {
    validate();
  }
  int at(int j) const { return mu[static_cast<std::size_t>(j - k - 1)]; }
  int& at(int j) { return mu[static_cast<std::size_t>(j - k - 1)]; }
  void validate() const {
    if (k < 1 || n < 1 || static_cast<int>(mu.size()) != n) throw PreconditionError("bad collision map shape");
    for (int j = k + 1; j <= k + n; ++j)
      if (at(j) < 1 || at(j) >= j) throw PreconditionError("collision map needs 1 <= mu(j) < j");
  }
  bool operator==(const CollisionMap& o) const { return k == o.k && mu == o.mu; }
  bool operator<(const CollisionMap& o) const { return std::tie(k, mu) < std::tie(o.k, o.mu); }
};

// sigma[i] holds sigma(k+1+i), a permutation of {k+1..k+n}.
struct TimeOrder {
  std::vector<int> sigma;

  static TimeOrder identity(int k, int n) {
    TimeOrder t;
    for (int i = 0; i < n; ++i) t.sigma.push_back(k + 1 + i);
    return t;
  }
  bool operator==(const TimeOrder& o) const { return sigma == o.sigma; }
  bool operator<(const TimeOrder& o) const { return sigma < o.sigma; }
};

struct GameState {
  CollisionMap map;
  TimeOrder order;

  GameState() = default;
  GameState(CollisionMap m, TimeOrder o) : map(std::move(m)), order(std::move(o)) { validate(); }
  explicit GameState(CollisionMap m) : map(std::move(m)), order(TimeOrder::identity(map.k, map.n)) {}

  void validate() const {
    map.validate();
    if (static_cast<int>(order.sigma.size()) != map.n) throw PreconditionError("time order has wrong length");
    std::vector<int> s = order.sigma;
    std::sort(s.begin(), s.end());
    for (int i = 0; i < map.n; ++i)
      if (s[static_cast<std::size_t>(i)] != map.k + 1 + i) throw PreconditionError("time order is not a permutation");
  }
  bool operator==(const GameState& o) const { return map == o.map && order == o.order; }
};

inline BigInt count_maps(int k, int n) {
  if (k < 1 || n < 1) throw PreconditionError("k and n must be positive");
  BigInt c = 1;
  for (int l = 1; l <= n; ++l) c *= (k + l - 1);
  return c;
}

inline bool move_acceptable(const GameState& s, int j) {
  const int k = s.map.k, n = s.map.n;
  return j >= k + 1 && j <= k + n - 1 && s.map.at(j + 1) < s.map.at(j);
}

inline GameState acceptable_move(const GameState& s, int j) {
  if (!move_acceptable(s, j)) throw MoveNotAcceptable("no acceptable move at j = " + std::to_string(j));
  auto tau = [j](int i) { return i == j ? j + 1 : (i == j + 1 ? j : i); };
  GameState out = s;
  for (int i = s.map.k + 1; i <= s.map.k + s.map.n; ++i) out.map.at(i) = tau(s.map.at(tau(i)));
  for (auto& x : out.order.sigma) x = tau(x);
  return out;
}

inline bool is_echelon(const CollisionMap& m) {
  for (int l = 1; l < m.n; ++l)
    if (m.mu[static_cast<std::size_t>(l)] < m.mu[static_cast<std::size_t>(l - 1)]) return false;
  return true;
}

struct MoveTrace {
  GameState initial;
  GameState final_state;
  std::vector<int> moves;

  GameState replay() const {
    GameState s = initial;
    for (int j : moves) s = acceptable_move(s, j);
    return s;
  }
};

enum class Policy { leftmost, rightmost, random };

inline MoveTrace reduce_to_echelon(const GameState& s, Policy policy = Policy::leftmost, std::uint64_t seed = 0) {
  s.validate();
  MoveTrace tr;
  tr.initial = s;
  GameState cur = s;
  const int k = s.map.k, n = s.map.n;
  const int guard = (k + n) * (k + n);
  Rng rng(seed, 0x7265);
  std::vector<int> open;
  for (;;) {
    open.clear();
    for (int j = k + 1; j <= k + n - 1; ++j)
      if (move_acceptable(cur, j)) open.push_back(j);
    if (open.empty()) break;
    if (static_cast<int>(tr.moves.size()) >= guard) throw NonTermination("reduction exceeded (k+n)^2 moves");
    int j = open.front();
    if (policy == Policy::rightmost) j = open.back();
    if (policy == Policy::random) j = open[static_cast<std::size_t>(rng.index(static_cast<int>(open.size())))];
    cur = acceptable_move(cur, j);
    tr.moves.push_back(j);
  }
  tr.final_state = cur;
  return tr;
}

// Calls fn on every map of M_n in lexicographic order.
template <class Fn>
void for_each_map(int k, int n, Fn fn) {
  std::vector<int> mu(static_cast<std::size_t>(n), 1);
  for (;;) {
    fn(CollisionMap(k, mu));
    int l = n - 1;
    while (l >= 0 && mu[static_cast<std::size_t>(l)] == k + l) {
      mu[static_cast<std::size_t>(l)] = 1;
      --l;
    }
    if (l < 0) return;
    ++mu[static_cast<std::size_t>(l)];
  }
}

inline std::vector<CollisionMap> enumerate_echelon_maps(int k, int n) {
  if (k < 1 || n < 1) throw PreconditionError("k and n must be positive");
  if (k + n > 24) throw BudgetExceeded("enumeration needs k + n <= 24");
  std::vector<CollisionMap> out;
  std::vector<int> mu(static_cast<std::size_t>(n), 1);
  // Nondecreasing sequences with mu[l] <= k + l.
  for (;;) {
    out.emplace_back(k, mu);
    int l = n - 1;
    while (l >= 0 && mu[static_cast<std::size_t>(l)] == k + l) --l;
    if (l < 0) break;
    const int v = ++mu[static_cast<std::size_t>(l)];
    for (int r = l + 1; r < n; ++r) mu[static_cast<std::size_t>(r)] = v;
  }
  return out;
}

struct EchelonClass {
  CollisionMap echelon;
  std::vector<GameState> members;  // identity time order on input
  std::vector<TimeOrder> final_orders;
  std::vector<int> trace_lengths;
};

struct Enumeration {
  int k = 1, n = 1;
  BigInt maps = 0;
  std::vector<CollisionMap> echelon;
  BigInt bound = 0;
  std::vector<EchelonClass> classes;
  bool partition_ok = false;
};

// Full partition of M_n by the leftmost-policy reduction target.
inline Enumeration enumerate_echelon(int k, int n, std::size_t max_maps = 2000000) {
  Enumeration e;
  e.k = k;
  e.n = n;
  e.maps = count_maps(k, n);
  e.echelon = enumerate_echelon_maps(k, n);
  e.bound = BigInt(1) << (k + n);
  if (e.maps > max_maps) throw BudgetExceeded("class partition needs count_maps <= " + std::to_string(max_maps));
  std::map<std::vector<int>, std::size_t> index;
  for (std::size_t i = 0; i < e.echelon.size(); ++i) {
    index[e.echelon[i].mu] = i;
    e.classes.push_back({e.echelon[i], {}, {}, {}});
  }
  std::size_t seen = 0;
  bool ok = true;
  for_each_map(k, n, [&](const CollisionMap& m) {
    const auto tr = reduce_to_echelon(GameState(m), Policy::leftmost);
    const auto it = index.find(tr.final_state.map.mu);
    if (it == index.end()) {
      ok = false;
      return;
    }
    auto& c = e.classes[it->second];
    c.members.push_back(tr.initial);
    c.final_orders.push_back(tr.final_state.order);
    c.trace_lengths.push_back(static_cast<int>(tr.moves.size()));
    ++seen;
  });
  std::size_t total = 0;
  for (const auto& c : e.classes) total += c.members.size();
  e.partition_ok = ok && total == seen && BigInt(seen) == e.maps;
  return e;
}

// Plain-text board: top row lists the time in each column, a circle marks
// mu(column).
inline std::string render_board(const GameState& s) {
  const int k = s.map.k, n = s.map.n;
  std::vector<int> in_column(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) in_column[static_cast<std::size_t>(s.order.sigma[static_cast<std::size_t>(i)] - k - 1)] = k + 1 + i;
  std::ostringstream os;
  auto cell = [&](const std::string& x) {
    os << x;
    for (std::size_t p = x.size(); p < 10; ++p) os << ' ';
  };
  for (int c = 0; c < n; ++c) cell("t" + std::to_string(in_column[static_cast<std::size_t>(c)]));
  os << '\n';
  for (int r = 1; r <= k + n - 1; ++r) {
    for (int col = k + 1; col <= k + n; ++col) {
      if (r >= col) {
        cell("0");
      } else {
        const std::string name = "C" + std::to_string(r) + "," + std::to_string(col);
        cell(s.map.at(col) == r ? "(" + name + ")" : name);
      }
    }
    os << "row " << r << '\n';
  }
  return os.str();
}

// ---- time domains ------------------------------------------------------------

struct TimeDomain {
  int k = 1;
  int n = 1;
  double horizon = 1.0;
  std::vector<TimeOrder> cells;

  // times[i] holds t_{k+1+i}. Closed simplices, so ties count as inside.
  bool contains(const std::vector<double>& times) const {
    for (const auto& c : cells) {
      double prev = horizon;
      bool in = true;
      for (int i = 0; i < n && in; ++i) {
        const double ti = times[static_cast<std::size_t>(c.sigma[static_cast<std::size_t>(i)] - k - 1)];
        in = ti <= prev && ti >= 0.0;
        prev = ti;
      }
      if (in) return true;
    }
    return false;
  }
};

struct VolumeReport {
  double estimate = 0.0;
  double stderr_ = 0.0;
  double expected = 0.0;
  bool distinct = true;
  bool ok = false;
};

inline TimeDomain time_domain(const CollisionMap& echelon, const std::vector<GameState>& members, double t) {
  if (!is_echelon(echelon)) throw PreconditionError("time domain needs an echelon map");
  TimeDomain D;
  D.k = echelon.k;
  D.n = echelon.n;
  D.horizon = t;
  for (const auto& m : members) {
    const auto tr = reduce_to_echelon(m, Policy::leftmost);
    if (!(tr.final_state.map == echelon)) throw PreconditionError("member does not reduce to the echelon map");
    D.cells.push_back(tr.final_state.order);
  }
  return D;
}

inline VolumeReport time_domain_volume(const TimeDomain& D, std::size_t samples, std::uint64_t seed) {
  VolumeReport r;
  std::vector<TimeOrder> sorted = D.cells;
  std::sort(sorted.begin(), sorted.end());
  r.distinct = std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
  double simplex = std::pow(D.horizon, D.n);
  for (int i = 2; i <= D.n; ++i) simplex /= i;
  r.expected = static_cast<double>(D.cells.size()) * simplex;
  const double box = std::pow(D.horizon, D.n);
  std::vector<double> hits(samples);
  parallel_for(samples, [&](std::size_t i) {
    Rng rng(seed, 0x746d, i);
    std::vector<double> ts(static_cast<std::size_t>(D.n));
    for (auto& x : ts) x = rng.uniform(0.0, D.horizon);
    hits[i] = D.contains(ts) ? 1.0 : 0.0;
  });
  const Estimate e = summarize(hits);
  r.estimate = e.value * box;
  r.stderr_ = e.stderr_ * box;
  r.ok = std::abs(r.estimate - r.expected) <= 3.0 * r.stderr_ + 1e-12 * box;
  return r;
}

// ---- operator identities ---------------------------------------------------------

struct ProbeResult {
  double lhs = 0.0;
  double rhs = 0.0;
  double diff = 0.0;
  double stderr_ = 0.0;
  double z = 0.0;
  bool pass3 = false;
  bool pass5 = false;
};

struct IdentityReport {
  std::vector<ProbeResult> probes;
  double max_abs_dev = 0.0;
  double max_z = 0.0;
  bool pass3 = true;
  bool pass5 = true;
};

namespace detail {

// Exact identities leave only rounding in the paired difference.
inline ProbeResult judge(const PairedValue& pv, bool mc) {
  ProbeResult r;
  r.lhs = pv.lhs.value;
  r.rhs = pv.rhs.value;
  r.diff = pv.diff.value;
  r.stderr_ = pv.diff.stderr_;
  const double scale = std::abs(r.lhs) + std::abs(r.rhs) + pv.lhs.stderr_ + pv.rhs.stderr_;
  const double eps = (mc ? 1e-12 : 1e-6) * scale;
  r.z = r.stderr_ > 0.0 ? std::abs(r.diff) / r.stderr_ : (std::abs(r.diff) <= eps ? 0.0 : kInfinity);
  r.pass3 = std::abs(r.diff) <= 3.0 * r.stderr_ + eps;
  r.pass5 = std::abs(r.diff) <= 5.0 * r.stderr_ + eps;
  return r;
}

inline void fold(IdentityReport& rep, const ProbeResult& p) {
  rep.probes.push_back(p);
  rep.max_abs_dev = std::max(rep.max_abs_dev, std::abs(p.diff));
  rep.max_z = std::max(rep.max_z, p.z);
  rep.pass3 = rep.pass3 && p.pass3;
  rep.pass5 = rep.pass5 && p.pass5;
}

}  // namespace detail

// S_{j,j+1} C_{(j,j+1)(target), l} f  against  C_{target, l} S_{j,j+1} f at
// (l-1)-particle points.
inline IdentityReport check_sc_commutation(int ell, int j, int target, const DensityEvaluator& f,
                                           const std::vector<PhaseState>& points, const CrossSectionModel& m,
                                           const QuadSpec& quad) {
  if (!(ell > j + 1 && j >= 1)) throw PreconditionError("need l > j + 1 >= 2");
  if (target < 1 || target >= ell) throw PreconditionError("target must satisfy 1 <= target < l");
  if (f.k() != ell) throw PreconditionError("f must have l particle slots");
  const int swapped = target == j ? j + 1 : (target == j + 1 ? j : target);
  Chain lc{{swapped}, {0.0, 0.0}, 0.0, j};
  Chain rc{{target}, {0.0, 0.0}, 0.0, 0};
  const DensityEvaluator sf = swap_operator(f, j);
  IdentityReport rep;
  for (const auto& p : points) {
    if (p.k != ell - 1) throw PreconditionError("probe points need l - 1 particles");
    detail::fold(rep, detail::judge(chain_pair(lc, f, rc, sf, m, p, quad), quad.kind == QuadSpec::Kind::mc));
  }
  return rep;
}

// LHS = T^{a-b} C_{alpha,j} T^{b-c} C_{beta,j+1} T^{c-d} f
// RHS = T^{a-c} C_{beta,j} T^{c-b} C_{alpha,j+1} T^{b-d} S_{j,j+1} f
// With `relabel` the right side takes the layer draws in swapped order, under
// which the two integrands agree sample by sample.
inline IdentityReport check_three_ts(int j, double a, double b, double c, double d_time, int alpha_idx, int beta_idx,
                                     const DensityEvaluator& f, const std::vector<PhaseState>& points,
                                     const CrossSectionModel& m, const QuadSpec& quad, bool relabel = false) {
  if (!(beta_idx >= 1 && beta_idx < alpha_idx && alpha_idx < j)) throw PreconditionError("need beta < alpha < j");
  if (a < 0 || b < 0 || c < 0 || d_time < 0) throw PreconditionError("times must be nonnegative");
  if (f.k() != j + 1) throw PreconditionError("f must have j + 1 particle slots");
  Chain lc{{alpha_idx, beta_idx}, {a - b, b - c, c - d_time}, 0.0, 0};
  Chain rc{{beta_idx, alpha_idx}, {a - c, c - b, b - d_time}, 0.0, 0};
  const DensityEvaluator sf = swap_operator(f, j);
  IdentityReport rep;
  for (const auto& p : points) {
    if (p.k != j - 1) throw PreconditionError("probe points need j - 1 particles");
    detail::fold(rep, detail::judge(chain_pair(lc, f, rc, sf, m, p, quad, relabel), true));
  }
  return rep;
}

// Chain of J_{n,k}(t; mu): shifts -t_{k+1}, t_{k+l-1} - t_{k+l}, then f(t_{k+n}).
inline Chain duhamel_chain(const CollisionMap& mu, const std::vector<double>& times) {
  if (static_cast<int>(times.size()) != mu.n) throw PreconditionError("need one time per column");
  Chain c;
  c.targets = mu.mu;
  c.shifts.push_back(-times[0]);
  for (int l = 1; l < mu.n; ++l) c.shifts.push_back(times[static_cast<std::size_t>(l - 1)] - times[static_cast<std::size_t>(l)]);
  c.shifts.push_back(0.0);
  c.f_time = times.back();
  return c;
}

enum class DuhamelMode { flattened, nested };

inline std::vector<QuadValue> evaluate_duhamel(const CollisionMap& mu, const std::vector<double>& times,
                                               const DensityEvaluator& f, const CrossSectionModel& m,
                                               const QuadSpec& quad, const std::vector<PhaseState>& points,
                                               DuhamelMode mode = DuhamelMode::flattened,
                                               std::vector<std::size_t> per_layer = {}) {
  if (mu.n > 3) throw BudgetExceeded("Duhamel terms are limited to n <= 3");
  if (f.k() != mu.k + mu.n) throw PreconditionError("f must have k + n particle slots");
  const Chain c = duhamel_chain(mu, times);
  std::vector<QuadValue> out;
  for (const auto& p : points) {
    if (p.k != mu.k) throw PreconditionError("probe points need k particles");
    if (mode == DuhamelMode::flattened) {
      out.push_back(chain_flat(c, f, m, p, quad));
    } else {
      if (per_layer.empty()) per_layer.assign(static_cast<std::size_t>(mu.n), 64);
      out.push_back(chain_nested(c, f, m, p, quad, per_layer));
    }
  }
  return out;
}

// Times with t_{sigma(k+i)} = s_i for a decreasing sequence s.
inline std::vector<double> order_times(const GameState& s, const std::vector<double>& decreasing) {
  std::vector<double> t(static_cast<std::size_t>(s.map.n));
  for (int i = 0; i < s.map.n; ++i)
    t[static_cast<std::size_t>(s.order.sigma[static_cast<std::size_t>(i)] - s.map.k - 1)] = decreasing[static_cast<std::size_t>(i)];
  return t;
}

// I(mu, sigma) against I(mu', sigma') over the time simplex and the collision
// variables, both sides on the same simplex point and layer draws.
inline IdentityReport check_invariance(const GameState& s1, const GameState& s2, const DensityEvaluator& f, double t,
                                       const CrossSectionModel& m, const QuadSpec& quad,
                                       const std::vector<PhaseState>& points) {
  if (!f.symmetric()) throw SymmetryRequired("invariance needs a symmetric f");
  s1.validate();
  s2.validate();
  const int k = s1.map.k, n = s1.map.n;
  if (n > 2) throw BudgetExceeded("invariance checks are limited to n <= 2");
  if (quad.kind != QuadSpec::Kind::mc) throw PreconditionError("invariance uses Monte Carlo");
  bool linked = s1 == s2;
  for (int j = k + 1; j <= k + n - 1 && !linked; ++j)
    if (move_acceptable(s1, j) && acceptable_move(s1, j) == s2) linked = true;
  if (!linked) throw PreconditionError("second state is not one acceptable move from the first");
  double vol = std::pow(t, n);
  for (int i = 2; i <= n; ++i) vol /= i;
  IdentityReport rep;
  for (const auto& p : points) {
    if (p.k != k) throw PreconditionError("probe points need k particles");
    const auto pv = detail::paired_reduce(quad.samples, true, [&](std::size_t i, bool& singular) {
      Rng rng(quad.seed, 0x73696d, i);
      std::vector<double> s(static_cast<std::size_t>(n));
      for (auto& x : s) x = rng.uniform(0.0, t);
      std::sort(s.begin(), s.end(), std::greater<>());
      const auto draws = layer_draws(m.d, quad, static_cast<std::size_t>(n), i);
      bool a1 = false, a2 = false;
      const double x = chain_integrand(duhamel_chain(s1.map, order_times(s1, s)), f, m, p, draws, a1);
      const double y = chain_integrand(duhamel_chain(s2.map, order_times(s2, s)), f, m, p, draws, a2);
      singular = a1 || a2;
      return std::pair<double, double>{vol * x, vol * y};
    });
    detail::fold(rep, detail::judge(pv, true));
  }
  return rep;
}

}  // namespace hierlab

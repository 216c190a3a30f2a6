#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "hierlab/core.hpp"
#include "hierlab/kinematics.hpp"
#include "hierlab/quadrature.hpp"
#include "hierlab/spaces.hpp"

namespace hierlab {

struct QuadSpec {
  enum class Kind { mc, product };
  Kind kind = Kind::mc;
  std::size_t samples = 1 << 16;
  std::uint64_t seed = 1;
  double proposal_scale = 1.0;  // std of the Gaussian proposal for new velocities
  int radial_nodes = 16;
  double R_v = 8.0;
  int sphere_theta = 16;
  int sphere_phi = 32;

  static QuadSpec mc(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    QuadSpec q;
    q.samples = n;
    q.seed = seed;
    q.proposal_scale = scale;
    return q;
  }
  static QuadSpec product(int radial = 16, double Rv = 8.0, int theta = 16, int phi = 32) {
    QuadSpec q;
    q.kind = Kind::product;
    q.radial_nodes = radial;
    q.R_v = Rv;
    q.sphere_theta = theta;
    q.sphere_phi = phi;
    return q;
  }
};

// One node of the (new velocity, scattering direction) integral: the
// integrand is multiplied by `weight`.
struct Draw {
  Vec w;
  Vec sigma;
  double weight = 0.0;
};

// Indexable source of draws. MC draws come from counter-based substreams,
// so draw(i) does not depend on which other draws were taken.
class DrawSource {
 public:
  DrawSource(int d, const QuadSpec& q, std::uint64_t layer = 0) : d_(d), q_(q), layer_(layer) {
    if (q.kind == QuadSpec::Kind::product) {
      if (d != 3) throw PreconditionError("product quadrature is available for d = 3 only");
      radial_ = [&] {
        switch (q.radial_nodes) {
          case 8: return gauss_legendre<8>(0.0, q.R_v);
          case 16: return gauss_legendre<16>(0.0, q.R_v);
          case 32: return gauss_legendre<32>(0.0, q.R_v);
          default: throw PreconditionError("radial nodes must be 8, 16 or 32");
        }
      }();
      polar_ = [&] {
        switch (q.sphere_theta) {
          case 8: return gauss_legendre<8>(-1.0, 1.0);
          case 16: return gauss_legendre<16>(-1.0, 1.0);
          case 32: return gauss_legendre<32>(-1.0, 1.0);
          default: throw PreconditionError("sphere order must be 8, 16 or 32");
        }
      }();
      sphere_n_ = polar_.size() * static_cast<std::size_t>(q.sphere_phi);
      size_ = radial_.size() * sphere_n_ * sphere_n_;
    } else {
      if (q.samples < 1) throw PreconditionError("need at least one sample");
      size_ = q.samples;
      log_norm_ = -0.5 * d * std::log(2.0 * kPi * q.proposal_scale * q.proposal_scale);
      area_ = sphere_area(d - 1);
    }
  }

  std::size_t size() const { return size_; }
  bool is_mc() const { return q_.kind == QuadSpec::Kind::mc; }

  Draw draw(std::size_t i) const { return draw(i, 0); }
  // `path` separates independent families of draws (nested layers).
  Draw draw(std::size_t i, std::uint64_t path) const {
    Draw dr;
    if (is_mc()) {
      Rng rng(q_.seed, substream_key(layer_, path), i);
      const double s = q_.proposal_scale;
      dr.w = rng.normal_vec(d_) * s;
      dr.sigma = rng.unit_vec(d_);
      const double log_pdf = log_norm_ - 0.5 * norm2(dr.w) / (s * s);
      dr.weight = area_ * std::exp(-log_pdf);
      return dr;
    }
    const std::size_t ir = i / (sphere_n_ * sphere_n_);
    const std::size_t rest = i % (sphere_n_ * sphere_n_);
    double ww = 0.0, ws = 0.0;
    const Vec dir = sphere_node(rest / sphere_n_, ww);
    dr.sigma = sphere_node(rest % sphere_n_, ws);
    const double r = radial_[ir].first;
    dr.w = dir * r;
    dr.weight = radial_[ir].second * r * r * ww * ws;
    return dr;
  }

 private:
  Vec sphere_node(std::size_t idx, double& weight) const {
    const std::size_t it = idx / static_cast<std::size_t>(q_.sphere_phi);
    const std::size_t ip = idx % static_cast<std::size_t>(q_.sphere_phi);
    const double z = polar_[it].first;
    const double phi = 2.0 * kPi * (static_cast<double>(ip) + 0.5) / q_.sphere_phi;
    const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
    weight = polar_[it].second * 2.0 * kPi / q_.sphere_phi;
    return Vec{s * std::cos(phi), s * std::sin(phi), z};
  }

  int d_;
  QuadSpec q_;
  std::uint64_t layer_;
  std::vector<std::pair<double, double>> radial_, polar_;
  std::size_t sphere_n_ = 0;
  std::size_t size_ = 0;
  double log_norm_ = 0.0;
  double area_ = 0.0;
};

struct QuadValue {
  double value = 0.0;
  double stderr_ = 0.0;  // zero for product rules
  std::size_t dropped = 0;
  std::size_t samples = 0;
};

namespace detail {

// Reduce per-draw contributions in fixed-size blocks so that the result is
// bit-identical for any thread count.
template <class Term>
QuadValue reduce_indexed(std::size_t n, bool mc, Term term) {
  const std::size_t block = 2048;
  const std::size_t nb = (n + block - 1) / block;
  std::vector<double> s1(nb), s2(nb);
  std::vector<std::size_t> drops(nb);
  parallel_for(nb, [&](std::size_t b) {
    double a = 0.0, a2 = 0.0;
    std::size_t dr = 0;
    for (std::size_t i = b * block; i < std::min(n, (b + 1) * block); ++i) {
      bool singular = false;
      const double x = term(i, singular);
      if (singular) { ++dr; continue; }
      a += x;
      a2 += x * x;
    }
    s1[b] = a;
    s2[b] = a2;
    drops[b] = dr;
  });
  double a = 0.0, a2 = 0.0;
  std::size_t dropped = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    a += s1[b];
    a2 += s2[b];
    dropped += drops[b];
  }
  if (static_cast<double>(dropped) > 1e-3 * static_cast<double>(n))
    throw DegenerateQuadrature("too many singular samples dropped");
  QuadValue out;
  out.samples = n;
  out.dropped = dropped;
  if (mc) {
    // Dropped draws contribute zero; the mean is over all draws.
    const double nn = static_cast<double>(n);
    out.value = a / nn;
    const double var = std::max(0.0, a2 / nn - out.value * out.value) * nn / std::max(1.0, nn - 1.0);
    out.stderr_ = std::sqrt(var / nn);
  } else {
    out.value = a;
  }
  return out;
}

template <class Term>
QuadValue reduce_draws(const DrawSource& src, Term term) {
  return reduce_indexed(src.size(), src.is_mc(),
                        [&](std::size_t i, bool& singular) { return term(src.draw(i), singular); });
}

}  // namespace detail

enum class CollisionSign { gain, loss, net };

// Gain/loss term of C_{j,k+1} at a k-particle state S; j is 1-based.
inline QuadValue collision_term(const DensityEvaluator& f, int j, int k, CollisionSign sign, const PhaseState& S,
                                double t, const CrossSectionModel& m, const QuadSpec& quad) {
  if (j < 1 || j > k) throw PreconditionError("collision index out of range");
  if (f.k() != k + 1 || S.k != k) throw PreconditionError("particle count mismatch");
  const DrawSource src(m.d, quad);
  const int jj = j - 1;
  return detail::reduce_draws(src, [&](const Draw& dr, bool& singular) {
    const KernelValue B = try_cross_section(m, dr.sigma, dr.w - S.v[jj]);
    if (B.singular) { singular = true; return 0.0; }
    if (B.value == 0.0) return 0.0;
    double g = 0.0, l = 0.0;
    if (sign != CollisionSign::loss) {
      PhaseState s = S;
      const auto out = post_collision_raw(S.v[jj], dr.w, dr.sigma);
      s.v[jj] = out.v_star;
      s.push(S.x[jj], out.v1_star);
      g = f(t, s);
    }
    if (sign != CollisionSign::gain) {
      PhaseState s = S;
      s.push(S.x[jj], dr.w);
      l = f(t, s);
    }
    return B.value * dr.weight * (g - l);
  });
}

// C^{k+1} f = sum_j C_{j,k+1} f, one shared draw per sample across j.
inline QuadValue full_collision(const DensityEvaluator& f, int k, const PhaseState& S, double t,
                                const CrossSectionModel& m, const QuadSpec& quad) {
  if (f.k() != k + 1 || S.k != k) throw PreconditionError("particle count mismatch");
  const DrawSource src(m.d, quad);
  return detail::reduce_draws(src, [&](const Draw& dr, bool& singular) {
    double acc = 0.0;
    for (int jj = 0; jj < k; ++jj) {
      const KernelValue B = try_cross_section(m, dr.sigma, dr.w - S.v[jj]);
      if (B.singular) { singular = true; return 0.0; }
      if (B.value == 0.0) continue;
      PhaseState sg = S;
      const auto out = post_collision_raw(S.v[jj], dr.w, dr.sigma);
      sg.v[jj] = out.v_star;
      sg.push(S.x[jj], out.v1_star);
      PhaseState sl = S;
      sl.push(S.x[jj], dr.w);
      acc += B.value * (f(t, sg) - f(t, sl));
    }
    return acc * dr.weight;
  });
}

// Q(g, h)(t, x, v) = ∫∫ B (g(v*) h(v1*) - g(v) h(v1)) dsigma dv1.
inline QuadValue q_bilinear(const DensityEvaluator& g, const DensityEvaluator& h, const Vec& x, const Vec& v,
                            double t, const CrossSectionModel& m, const QuadSpec& quad) {
  if (g.k() != 1 || h.k() != 1) throw PreconditionError("Q takes one-particle densities");
  const DrawSource src(m.d, quad);
  const double gv = g(t, x, v);
  return detail::reduce_draws(src, [&](const Draw& dr, bool& singular) {
    const KernelValue B = try_cross_section(m, dr.sigma, dr.w - v);
    if (B.singular) { singular = true; return 0.0; }
    if (B.value == 0.0) return 0.0;
    const auto out = post_collision_raw(v, dr.w, dr.sigma);
    const double gain = g(t, x, out.v_star) * h(t, x, out.v1_star);
    const double loss = gv * h(t, x, dr.w);
    return B.value * dr.weight * (gain - loss);
  });
}

enum class Moment { mass, momentum, energy };

// ∫ Q(f, f)(x, v) phi(v) dv by joint Monte Carlo over (v, v1, sigma);
// `component` selects the velocity component for momentum.
inline QuadValue weak_form_moment(const DensityEvaluator& f, Moment phi, int component, const Vec& x, double t,
                                  const CrossSectionModel& m, const QuadSpec& quad) {
  if (quad.kind != QuadSpec::Kind::mc) throw PreconditionError("weak form moments use Monte Carlo");
  if (m.gamma < 0.0) throw PreconditionError("moment identities need gamma >= 0");
  const DrawSource src(m.d, quad, 0x776b);
  const int d = m.d;
  const double s = quad.proposal_scale;
  const double log_norm = -0.5 * d * std::log(2.0 * kPi * s * s);
  return detail::reduce_indexed(src.size(), true, [&](std::size_t i, bool& singular) {
    const Draw dr = src.draw(i);
    // Outer velocity from a sibling substream, independent of (w, sigma).
    Rng rng(quad.seed, substream_key(0x776b, 1), i);
    const Vec v = rng.normal_vec(d) * s;
    const double pv = std::exp(log_norm - 0.5 * norm2(v) / (s * s));
    const KernelValue B = try_cross_section(m, dr.sigma, dr.w - v);
    if (B.singular) { singular = true; return 0.0; }
    const auto out = post_collision_raw(v, dr.w, dr.sigma);
    const double gain = f(t, x, out.v_star) * f(t, x, out.v1_star);
    const double loss = f(t, x, v) * f(t, x, dr.w);
    double ph = 1.0;
    if (phi == Moment::momentum) ph = v[component];
    if (phi == Moment::energy) ph = norm2(v);
    return B.value * dr.weight * (gain - loss) * ph / pv;
  });
}

// ---- layered operator chains ------------------------------------------------

// The expression T^{s_0} C_{c_1,k+1} T^{s_1} C_{c_2,k+2} ... C_{c_n,k+n} T^{s_n} f(tf),
// evaluated at a k-particle state. Targets are 1-based.
struct Chain {
  std::vector<int> targets;
  std::vector<double> shifts;  // n + 1 entries
  double f_time = 0.0;
  int swap_input = 0;  // if > 0, the input state has slots swap_input, swap_input+1 exchanged
};

namespace detail {

inline double chain_branch(const Chain& c, const DensityEvaluator& f, const CrossSectionModel& m,
                           const std::vector<Draw>& draws, std::size_t layer, PhaseState state, bool& singular) {
  state.drift(c.shifts[layer]);
  if (layer == c.targets.size()) return f(c.f_time, state);
  const int tj = c.targets[layer] - 1;
  const Draw& dr = draws[layer];
  const KernelValue B = try_cross_section(m, dr.sigma, dr.w - state.v[tj]);
  if (B.singular) { singular = true; return 0.0; }
  if (B.value == 0.0) return 0.0;
  PhaseState gain = state;
  const auto out = post_collision_raw(state.v[tj], dr.w, dr.sigma);
  gain.v[tj] = out.v_star;
  gain.push(state.x[tj], out.v1_star);
  PhaseState loss = state;
  loss.push(state.x[tj], dr.w);
  const double g = chain_branch(c, f, m, draws, layer + 1, gain, singular);
  const double l = chain_branch(c, f, m, draws, layer + 1, loss, singular);
  return B.value * dr.weight * (g - l);
}

}  // namespace detail

// Integrand of the chain for one joint draw (one draw per layer).
inline double chain_integrand(const Chain& c, const DensityEvaluator& f, const CrossSectionModel& m,
                              const PhaseState& S, const std::vector<Draw>& draws, bool& singular) {
  if (c.shifts.size() != c.targets.size() + 1) throw PreconditionError("chain needs n + 1 shifts");
  if (f.k() != S.k + static_cast<int>(c.targets.size())) throw PreconditionError("chain particle count mismatch");
  PhaseState s = S;
  if (c.swap_input > 0) s.swap_slots(c.swap_input - 1, c.swap_input);
  singular = false;
  return detail::chain_branch(c, f, m, draws, 0, s, singular);
}

// Draws for every layer of one joint sample i. Layer l reads substream l + 1.
inline std::vector<Draw> layer_draws(int d, const QuadSpec& quad, std::size_t layers, std::size_t i) {
  std::vector<Draw> out;
  out.reserve(layers);
  for (std::size_t l = 0; l < layers; ++l) out.push_back(DrawSource(d, quad, l + 1).draw(i));
  return out;
}

// Mean of two integrands and of their difference over the same samples.
struct PairedValue {
  QuadValue lhs, rhs, diff;
};

namespace detail {

template <class Term>
PairedValue paired_reduce(std::size_t n, bool mc, Term term) {
  const std::size_t block = 1024;
  const std::size_t nb = (n + block - 1) / block;
  struct Sums {
    double a = 0, a2 = 0, b = 0, b2 = 0, c = 0, c2 = 0;
    std::size_t dropped = 0;
  };
  std::vector<Sums> sums(nb);
  parallel_for(nb, [&](std::size_t blk) {
    Sums s;
    for (std::size_t i = blk * block; i < std::min(n, (blk + 1) * block); ++i) {
      bool singular = false;
      const auto [x, y] = term(i, singular);
      if (singular) { ++s.dropped; continue; }
      s.a += x; s.a2 += x * x;
      s.b += y; s.b2 += y * y;
      s.c += x - y; s.c2 += (x - y) * (x - y);
    }
    sums[blk] = s;
  });
  Sums t;
  for (const auto& s : sums) {
    t.a += s.a; t.a2 += s.a2; t.b += s.b; t.b2 += s.b2; t.c += s.c; t.c2 += s.c2;
    t.dropped += s.dropped;
  }
  if (static_cast<double>(t.dropped) > 1e-3 * static_cast<double>(n))
    throw DegenerateQuadrature("too many singular samples dropped");
  const double nn = static_cast<double>(n);
  auto make = [&](double s1, double s2) {
    QuadValue q;
    q.samples = n;
    q.dropped = t.dropped;
    if (!mc) {
      q.value = s1;
      return q;
    }
    q.value = s1 / nn;
    const double var = std::max(0.0, s2 / nn - q.value * q.value) * nn / std::max(1.0, nn - 1.0);
    q.stderr_ = std::sqrt(var / nn);
    return q;
  };
  return {make(t.a, t.a2), make(t.b, t.b2), make(t.c, t.c2)};
}

}  // namespace detail

// Flattened estimator of a chain: one joint draw per sample across all layers.
inline QuadValue chain_flat(const Chain& c, const DensityEvaluator& f, const CrossSectionModel& m,
                            const PhaseState& S, const QuadSpec& quad) {
  const std::size_t L = c.targets.size();
  if (L > 1 && quad.kind != QuadSpec::Kind::mc) throw PreconditionError("product rules are for single layers");
  if (L == 0) {
    PhaseState s = S;
    if (c.swap_input > 0) s.swap_slots(c.swap_input - 1, c.swap_input);
    s.drift(c.shifts.at(0));
    QuadValue q;
    q.value = f(c.f_time, s);
    q.samples = 1;
    return q;
  }
  const std::size_t n = L == 1 ? DrawSource(m.d, quad, 1).size() : quad.samples;
  return detail::reduce_indexed(n, quad.kind == QuadSpec::Kind::mc, [&](std::size_t i, bool& singular) {
    return chain_integrand(c, f, m, S, layer_draws(m.d, quad, L, i), singular);
  });
}

namespace detail {

inline double chain_nested_rec(const Chain& c, const DensityEvaluator& f, const CrossSectionModel& m,
                               const QuadSpec& quad, const std::vector<std::size_t>& per_layer, std::size_t layer,
                               const PhaseState& state, std::uint64_t path, bool& singular) {
  PhaseState s = state;
  s.drift(c.shifts[layer]);
  if (layer == c.targets.size()) return f(c.f_time, s);
  const int tj = c.targets[layer] - 1;
  const DrawSource src(m.d, quad, layer + 1);
  double acc = 0.0;
  const std::size_t N = per_layer[layer];
  for (std::size_t i = 0; i < N; ++i) {
    const Draw dr = src.draw(i, path);
    const KernelValue B = try_cross_section(m, dr.sigma, dr.w - s.v[tj]);
    if (B.singular) { singular = true; continue; }
    if (B.value == 0.0) continue;
    PhaseState gain = s;
    const auto out = post_collision_raw(s.v[tj], dr.w, dr.sigma);
    gain.v[tj] = out.v_star;
    gain.push(s.x[tj], out.v1_star);
    PhaseState loss = s;
    loss.push(s.x[tj], dr.w);
    const std::uint64_t child = substream_key(path, i + 1);
    const double g = chain_nested_rec(c, f, m, quad, per_layer, layer + 1, gain, child, singular);
    const double l = chain_nested_rec(c, f, m, quad, per_layer, layer + 1, loss, child, singular);
    acc += B.value * dr.weight * (g - l);
  }
  return acc / static_cast<double>(N);
}

}  // namespace detail

// Nested estimator: per_layer[l] fresh draws at layer l for every outer
// draw. The outer layer supplies the samples behind the standard error.
inline QuadValue chain_nested(const Chain& c, const DensityEvaluator& f, const CrossSectionModel& m,
                              const PhaseState& S, const QuadSpec& quad, std::vector<std::size_t> per_layer) {
  const std::size_t L = c.targets.size();
  if (L == 0) return chain_flat(c, f, m, S, quad);
  if (quad.kind != QuadSpec::Kind::mc) throw PreconditionError("nested chains use Monte Carlo");
  if (per_layer.size() != L) throw PreconditionError("need one sample count per layer");
  if (f.k() != S.k + static_cast<int>(L)) throw PreconditionError("chain particle count mismatch");
  PhaseState s0 = S;
  if (c.swap_input > 0) s0.swap_slots(c.swap_input - 1, c.swap_input);
  s0.drift(c.shifts[0]);
  const int tj = c.targets[0] - 1;
  const DrawSource src(m.d, quad, 1);
  const std::uint64_t root = substream_key(quad.seed, 0x6e65);
  return detail::reduce_indexed(per_layer[0], true, [&](std::size_t i, bool& singular) {
    const Draw dr = src.draw(i, root);
    const KernelValue B = try_cross_section(m, dr.sigma, dr.w - s0.v[tj]);
    if (B.singular) { singular = true; return 0.0; }
    if (B.value == 0.0) return 0.0;
    PhaseState gain = s0;
    const auto out = post_collision_raw(s0.v[tj], dr.w, dr.sigma);
    gain.v[tj] = out.v_star;
    gain.push(s0.x[tj], out.v1_star);
    PhaseState loss = s0;
    loss.push(s0.x[tj], dr.w);
    const std::uint64_t child = substream_key(root, i + 1);
    bool inner = false;
    const double g = detail::chain_nested_rec(c, f, m, quad, per_layer, 1, gain, child, inner);
    const double l = detail::chain_nested_rec(c, f, m, quad, per_layer, 1, loss, child, inner);
    if (inner) { singular = true; return 0.0; }
    return B.value * dr.weight * (g - l);
  });
}

// Two chains on common random numbers. With `reverse_rhs` the right side
// reads the layer draws in reverse order.
inline PairedValue chain_pair(const Chain& lc, const DensityEvaluator& lf, const Chain& rc,
                              const DensityEvaluator& rf, const CrossSectionModel& m, const PhaseState& S,
                              const QuadSpec& quad, bool reverse_rhs = false) {
  const std::size_t L = lc.targets.size();
  if (rc.targets.size() != L) throw PreconditionError("paired chains need equal depth");
  if (L > 1 && quad.kind != QuadSpec::Kind::mc) throw PreconditionError("product rules are for single layers");
  const std::size_t n = L == 1 ? DrawSource(m.d, quad, 1).size() : quad.samples;
  return detail::paired_reduce(n, quad.kind == QuadSpec::Kind::mc, [&](std::size_t i, bool& singular) {
    auto draws = layer_draws(m.d, quad, L, i);
    bool s1 = false, s2 = false;
    const double a = chain_integrand(lc, lf, m, S, draws, s1);
    if (reverse_rhs) std::reverse(draws.begin(), draws.end());
    const double b = chain_integrand(rc, rf, m, S, draws, s2);
    singular = s1 || s2;
    return std::pair<double, double>{a, b};
  });
}

// [S_{j,j+1} f](Z) = f(Z with slots j, j+1 exchanged); j is 1-based.
inline DensityEvaluator swap_operator(const DensityEvaluator& f, int j) {
  if (j < 1 || j + 1 > f.k()) throw PreconditionError("swap index out of range");
  return DensityEvaluator(
      f.k(),
      [f, j](double t, const PhaseState& s) {
        PhaseState w = s;
        w.swap_slots(j - 1, j);
        return f(t, w);
      },
      f.symmetric());
}

}  // namespace hierlab

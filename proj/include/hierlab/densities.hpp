#pragma once

#include <vector>

#include "hierlab/core.hpp"
#include "hierlab/estimates.hpp"
#include "hierlab/spaces.hpp"

// Small parametric families of test densities.
namespace hierlab::densities {

// sup_r <beta r>^q e^{-r^2}, attained at r^2 = q/2 - 1/beta^2 when positive.
inline double gaussian_weight_sup(double beta, double q) {
  const double u = 0.5 * q - 1.0 / (beta * beta);
  if (u <= 0.0) return 1.0;
  return std::exp(0.5 * q * std::log1p(beta * beta * u) - u);
}

// h(x, v) = mass * (alpha^d / I_p) <alpha x>^{-p} * pi^{-d/2} e^{-|v|^2}.
// A probability density when mass = 1 (needs p > d).
struct PolyGaussian {
  int d = 3;
  double p = 4.0;
  double alpha = 1.0;
  double mass = 1.0;

  double amplitude() const {
    return mass * std::pow(alpha, d) / bracket_integral(d, p) * std::pow(kPi, -0.5 * d);
  }
  double operator()(const Vec& x, const Vec& v) const {
    return amplitude() * std::pow(bracket(alpha * x), -p) * std::exp(-norm2(v));
  }
  // Exact ||h||_{p', q, alpha', beta} when the weight uses the same p and alpha.
  double norm(double beta, double q) const { return amplitude() * gaussian_weight_sup(beta, q); }

  DensityEvaluator evaluator() const {
    const PolyGaussian self = *this;
    return DensityEvaluator(1, [self](double, const PhaseState& s) { return self(s.x[0], s.v[0]); }, true);
  }
};

// Normalized Gaussian in x and v: N(cx, sx^2 I) (x) N(cv, sv^2 I).
struct Gaussian {
  Vec cx;
  Vec cv;
  double sx = 1.0;
  double sv = 1.0;
  double mass = 1.0;

  double operator()(const Vec& x, const Vec& v) const {
    const int d = cx.d;
    const double nx = std::pow(2.0 * kPi * sx * sx, -0.5 * d);
    const double nv = std::pow(2.0 * kPi * sv * sv, -0.5 * d);
    return mass * nx * nv * std::exp(-0.5 * norm2(x - cx) / (sx * sx) - 0.5 * norm2(v - cv) / (sv * sv));
  }
  DensityEvaluator evaluator() const {
    const Gaussian self = *this;
    return DensityEvaluator(1, [self](double, const PhaseState& s) { return self(s.x[0], s.v[0]); }, true);
  }
};

// Radial table in |v| (linear interpolation, zero beyond the last node)
// times <alpha x>^{-p}.
struct RadialTable {
  std::vector<double> r;
  std::vector<double> values;
  double p = 4.0;
  double alpha = 1.0;

  double speed_part(double s) const {
    if (s >= r.back()) return 0.0;
    const auto it = std::upper_bound(r.begin(), r.end(), s);
    const std::size_t hi = static_cast<std::size_t>(it - r.begin());
    if (hi == 0) return values.front();
    const std::size_t lo = hi - 1;
    const double w = (s - r[lo]) / (r[hi] - r[lo]);
    return (1.0 - w) * values[lo] + w * values[hi];
  }
  double operator()(const Vec& x, const Vec& v) const {
    return std::pow(bracket(alpha * x), -p) * speed_part(norm(v));
  }
  DensityEvaluator evaluator() const {
    if (r.size() != values.size() || r.size() < 2) throw PreconditionError("table needs matching nodes");
    const RadialTable self = *this;
    return DensityEvaluator(1, [self](double, const PhaseState& s) { return self(s.x[0], s.v[0]); }, true);
  }
};

// prod_i exp(-a_i |x_i - c_i|^2) (exp(-b_i |v_i - e_i|^2) + w2 exp(-b2 |v_i - e_i|^2))
// with per-slot parameters; symmetric only when all slots agree. The second
// temperature keeps f away from the collision invariants.
struct ProductGaussian {
  struct Slot {
    Vec c;
    Vec e;
    double a = 0.25;
    double b = 1.0;
    double b2 = 0.5;
    double w2 = 1.0;
    bool operator==(const Slot& o) const {
      return c == o.c && e == o.e && a == o.a && b == o.b && b2 == o.b2 && w2 == o.w2;
    }
  };
  std::vector<Slot> slots;
  double amp = 1.0;

  static ProductGaussian symmetric(int k, int d, double a = 0.25, double b = 1.0) {
    ProductGaussian g;
    for (int i = 0; i < k; ++i) g.slots.push_back({Vec(d), Vec(d), a, b});
    return g;
  }
  // Distinct centers and widths per slot, seeded.
  static ProductGaussian scrambled(int k, int d, std::uint64_t seed) {
    ProductGaussian g;
    Rng rng(seed, 0x706764);
    for (int i = 0; i < k; ++i) {
      Slot s{rng.normal_vec(d) * 0.5, rng.normal_vec(d) * 0.3, rng.uniform(0.15, 0.4), rng.uniform(0.7, 1.3),
             rng.uniform(0.45, 0.6), rng.uniform(0.5, 1.5)};
      g.slots.push_back(s);
    }
    return g;
  }
  DensityEvaluator evaluator() const {
    const ProductGaussian self = *this;
    bool sym = true;
    for (const auto& s : slots) sym = sym && s == slots[0];
    return DensityEvaluator(
        static_cast<int>(slots.size()),
        [self](double, const PhaseState& st) {
          double acc = self.amp;
          for (int i = 0; i < st.k; ++i) {
            const auto& sl = self.slots[static_cast<std::size_t>(i)];
            const double u = norm2(st.v[i] - sl.e);
            acc *= std::exp(-sl.a * norm2(st.x[i] - sl.c)) * (std::exp(-sl.b * u) + sl.w2 * std::exp(-sl.b2 * u));
          }
          return acc;
        },
        sym);
  }
};

// f(t) = T^t g for a time-independent g: the free-flow term of a Dyson series.
inline DensityEvaluator free_flow(const DensityEvaluator& g) {
  return DensityEvaluator(
      g.k(),
      [g](double t, const PhaseState& s) {
        PhaseState moved = s;
        moved.drift(t);
        return g(0.0, moved);
      },
      g.symmetric());
}

}  // namespace hierlab::densities

#pragma once

#include <string>
#include <vector>

#include "hierlab/core.hpp"
#include "hierlab/kinematics.hpp"
#include "hierlab/quadrature.hpp"
#include "hierlab/spaces.hpp"

namespace hierlab {

// ∫_{R^d} <x>^{-l} dx for l > d.
inline double bracket_integral(int d, double ell) {
  if (!(ell > d)) throw PreconditionError("bracket integral needs l > d");
  return std::pow(kPi, 0.5 * d) * std::tgamma(0.5 * (ell - d)) / std::tgamma(0.5 * ell);
}

inline double constant_C(const WeightParams& w, double b_sup, double Uq) {
  if (!(Uq > 0.0)) throw PreconditionError("Uq must be positive");
  const double beta_factor = std::max(std::pow(w.beta, w.q), std::pow(w.beta, -2.0 * w.q));
  return 8.0 * w.p / (w.alpha * (w.p - 1.0)) * Uq * beta_factor * b_sup;
}

inline double constant_C(const WeightParams& w, const CrossSectionModel& m, double Uq) {
  return constant_C(w, m.b_sup(), Uq);
}

// ---- position weight lemma ------------------------------------------------

struct LemmaCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  double error = 0.0;  // quadrature error estimate of lhs
  bool ok = false;
};

inline LemmaCheck verify_position_lemma(const Vec& x, const Vec& xi, const Vec& eta, double p, double t,
                                        double abs_tol = 1e-10) {
  const double nxi = norm(xi), neta = norm(eta);
  if (!(nxi > 0.0) || !(neta > 0.0)) throw PreconditionError("xi and eta must be nonzero");
  if (std::abs(dot(xi, eta)) > 1e-10 * nxi * neta) throw PreconditionError("xi and eta must be orthogonal");
  if (!(p > 1.0)) throw PreconditionError("p must exceed 1");
  if (!(t >= 0.0)) throw PreconditionError("t must be nonnegative");
  LemmaCheck r;
  r.rhs = 4.0 * p / (p - 1.0) * std::pow(bracket(x), -p) / std::min(nxi, neta);
  if (t > 0.0) {
    auto f = [&](double s) {
      return std::pow((1.0 + norm2(x + s * xi)) * (1.0 + norm2(x + s * eta)), -0.5 * p);
    };
    // Cut at the closest approaches and at one width on either side.
    std::vector<double> cuts{0.0, t};
    for (const Vec* dir : {&xi, &eta}) {
      const double n2 = norm2(*dir);
      const double s0 = -dot(x, *dir) / n2;
      const double width = std::sqrt((1.0 + norm2(x) - dot(x, *dir) * dot(x, *dir) / n2) / n2);
      for (double c : {s0 - width, s0, s0 + width, s0 + 10 * width})
        if (c > 0.0 && c < t) cuts.push_back(c);
    }
    const auto q = adaptive_gk_pieces(f, cuts, abs_tol);
    r.lhs = q.value;
    r.error = q.error;
  }
  r.ok = r.lhs <= r.rhs;
  return r;
}

// ---- convolution bounds ----------------------------------------------------

enum class ConvolutionMode { Lq, Ltilde };

struct ConvolutionCheck {
  double lhs = 0.0;
  double bound = 0.0;
  double error = 0.0;
  bool ok = false;
  std::string regime;                  // which bound applies
  std::vector<double> factors;         // constituents of the constant
  double constant = 0.0;
};

namespace detail {

// ∫_{R^d} |y-v|^{e} <y>^{-q} dy in polar coordinates about v, e > -d.
inline QuadResult centered_radial_integral(int d, const Vec& v, double e, double q, double rel_tol) {
  const double vn = norm(v);
  const double omega = sphere_area(d - 2);
  auto angular = [&](double r) {
    if (vn == 0.0) return sphere_area(d - 1) * std::pow(1.0 + r * r, -0.5 * q);
    auto g = [&](double th) {
      const double rho2 = vn * vn + r * r + 2.0 * vn * r * std::cos(th);
      return std::pow(1.0 + std::max(rho2, 0.0), -0.5 * q) * std::pow(std::sin(th), d - 2);
    };
    return omega * adaptive_gk(g, 0.0, kPi, 0.0, 1e-11, 400).value;
  };
  const double power = e + d - 1;
  // Log form: exp_sinh probes abscissas where r^power alone overflows.
  auto radial = [&](double r) {
    if (r <= 0.0) return 0.0;
    const double ang = angular(r);
    return ang == 0.0 ? 0.0 : std::exp(power * std::log(r) + std::log(ang));
  };
  const double a = std::max(1.0, vn);
  QuadResult inner = tanh_sinh_integral(radial, 0.0, a, rel_tol * 0.1);
  QuadResult mid = adaptive_gk(radial, a, 2.0 * a + 1.0, 0.0, rel_tol * 0.1);
  QuadResult tail = half_line_integral(radial, 2.0 * a + 1.0, rel_tol * 0.1);
  return {inner.value + mid.value + tail.value, inner.error + mid.error + tail.error,
          inner.intervals + mid.intervals + tail.intervals};
}

}  // namespace detail

inline ConvolutionCheck verify_convolution_bounds(const CrossSectionModel& m, const WeightParams& w, const Vec& v,
                                                  ConvolutionMode mode, double rel_tol = 1e-6) {
  const int d = m.d;
  const double q = w.q, g = m.gamma;
  if (v.d != d) throw PreconditionError("dimension mismatch");
  if (d < 3) throw PreconditionError("estimates need d >= 3");
  const double om = sphere_area(d - 1);
  const double vn = norm(v);
  ConvolutionCheck r;
  if (mode == ConvolutionMode::Lq) {
    if (!(q > d + g - 1)) throw PreconditionError("Lq mode needs q > d + gamma - 1");
    const auto lhs = detail::centered_radial_integral(d, v, g - 1.0, q, rel_tol);
    r.lhs = lhs.value;
    r.error = lhs.error;
    const double piece1 = om * (1.0 / d + 1.0 / (q - d - g + 1.0));
    const double piece2 = om * (1.0 / (d + g - 1.0) + 1.0 / (q + 1.0 - d - g));
    r.factors = {piece1, piece2};
    r.constant = piece1 + piece2;
    r.bound = r.constant;
    r.regime = "Lq";
  } else {
    if (!(q > d - 1)) throw PreconditionError("Ltilde mode needs q > d - 1");
    const auto lhs = detail::centered_radial_integral(d, v, 1.0 - d, q, rel_tol);
    r.lhs = lhs.value;
    r.error = lhs.error;
    if (q > d) {
      const double near = std::pow(2.0, d - 1) * om * q / (d * (q - d));
      const double local = std::pow(2.0 / 3.0, q - 1.0) * om;
      r.factors = {near, local};
      r.constant = std::max(near, local);
      r.bound = vn == 0.0 ? std::numeric_limits<double>::infinity()
                          : r.constant * (std::pow(vn, 1.0 - d) + vn * std::pow(bracket(v), -q));
      r.regime = "q>d";
    } else {
      const double qs = 0.5 * (q - d + 1.0);
      const double polar = std::sqrt(kPi) * std::tgamma(0.5 * (d - qs)) / std::tgamma(0.5 * (d - qs + 1.0));
      const double line = std::sqrt(kPi) * std::tgamma(0.5 * (q - qs)) / std::tgamma(0.5 * (q - qs + 1.0));
      r.factors = {sphere_area(d - 2), polar, line, qs};
      r.constant = sphere_area(d - 2) * polar * line;
      r.bound = r.constant * std::pow(vn, 1.0 - qs);
      r.regime = "d-1<q<=d";
    }
  }
  r.ok = r.lhs <= r.bound;
  return r;
}

// ---- sphere singular integral --------------------------------------------

struct SphereIntegral {
  double value = 0.0;
  double bound = 0.0;
  double error = 0.0;
};

// ∫_{S^{d-1}} (1 - (n.sigma)^2)^{-1/2} dsigma in polar angle about n, where
// the substitution z = cos(theta) removes the endpoint singularity.
inline SphereIntegral sphere_singular_integral(const Vec& n_hat, int d) {
  if (d < 3) throw PreconditionError("sphere integral needs d >= 3");
  if (n_hat.d != d || !(norm(n_hat) > 0.0)) throw PreconditionError("axis must be a nonzero vector in R^d");
  auto g = [&](double th) {
    const double s = std::sin(th);
    return std::pow(s, d - 2) / std::max(s, 1e-300);
  };
  const auto q = d == 3 ? QuadResult{kPi, 0.0, 1} : tanh_sinh_integral(g, 0.0, kPi, 1e-13);
  SphereIntegral out;
  out.value = sphere_area(d - 2) * q.value;
  out.error = sphere_area(d - 2) * q.error;
  out.bound = sphere_area(d - 2) * kPi;
  return out;
}

// ---- U_q ------------------------------------------------------------------

struct MCSpec {
  std::size_t samples = 1 << 16;
  std::uint64_t seed = 1;
  int doublings = 3;
};

struct UqPoint {
  Vec v;
  std::vector<Estimate> sequence;  // N, 2N, 4N, ... samples
  std::vector<double> ratios;      // consecutive estimate ratios
  bool diverging = false;
};

struct UqResult {
  double Uq_est = 0.0;
  Vec worst_v;
  double stderr_ = 0.0;
  std::vector<UqPoint> points;
};

namespace detail {

inline double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

// Beta-prime density with shape (a+1, s) at r.
inline double beta_prime_pdf(double r, double a, double s) {
  if (r <= 0.0) return 0.0;
  return std::exp(a * std::log(r) - (a + 1.0 + s) * std::log1p(r) - log_beta(a + 1.0, s));
}

// One importance-sampled value of the U_q integrand at v.
struct UqSampler {
  int d;
  double gamma, q;
  double a1, s1, a2, s2;
  double area_d1, area_d2;

  UqSampler(int dim, double g, double qq) : d(dim), gamma(g), q(qq) {
    a1 = d + g - 2.0;
    s1 = q - d - g + 1.0;
    a2 = d - 1.0;
    s2 = std::clamp(q - d, 0.25, s1);
    area_d1 = sphere_area(d - 1);
    area_d2 = sphere_area(d - 2);
  }

  double radial_density(double r, double a, double s) const {
    return beta_prime_pdf(r, a, s) / (area_d1 * std::pow(r, d - 1));
  }

  double draw(const Vec& v, Rng& rng) const {
    // u from a mixture: centred at 0 in u (relative-speed singularity) or
    // centred at 0 in v1 (where the weight ratio is largest).
    Vec u;
    if (rng.uniform() < 0.5) {
      const double r = rng.gamma(a1 + 1.0) / rng.gamma(s1);
      u = rng.unit_vec(d) * r;
    } else {
      const double r = rng.gamma(a2 + 1.0) / rng.gamma(s2);
      u = rng.unit_vec(d) * r - v;
    }
    const double un = norm(u);
    const Vec v1 = v + u;
    const double pdf = 0.5 * radial_density(un, a1, s1) + 0.5 * radial_density(norm(v1), a2, s2);
    if (!(un > 0.0) || !(pdf > 0.0)) return 0.0;
    const Vec uh = u * (1.0 / un);
    // sigma with polar angle about u-hat uniform on [0, pi].
    const double th = rng.uniform(0.0, kPi);
    Vec w = rng.normal_vec(d);
    w -= dot(w, uh) * uh;
    const double wn = norm(w);
    if (!(wn > 0.0)) return 0.0;
    w *= 1.0 / wn;
    const Vec sigma = std::cos(th) * uh + std::sin(th) * w;
    const auto out = post_collision_raw(v, v1, sigma);
    const double ratio = std::pow((1.0 + norm2(v)) / ((1.0 + norm2(out.v_star)) * (1.0 + norm2(out.v1_star))), 0.5 * q);
    const double angular = kPi * area_d2 * std::pow(std::sin(th), d - 3);
    return std::pow(un, gamma - 1.0) * ratio * angular / pdf;
  }
};

}  // namespace detail

// Monte Carlo estimate of sup_v of the U_q integral over a grid of v.
inline UqResult estimate_Uq(const CrossSectionModel& m, const WeightParams& w, const std::vector<Vec>& v_grid,
                            const MCSpec& mc) {
  if (m.d < 3) throw PreconditionError("estimates need d >= 3");
  w.check_q(m.gamma);
  if (v_grid.empty()) throw PreconditionError("v grid must be nonempty");
  const detail::UqSampler sampler(m.d, m.gamma, w.q);
  UqResult res;
  res.points.resize(v_grid.size());
  // Fixed-size blocks make the sum independent of the thread count.
  const std::size_t block = 4096;
  const std::size_t total = mc.samples << mc.doublings;
  const std::size_t nblocks = (total + block - 1) / block;
  for (std::size_t iv = 0; iv < v_grid.size(); ++iv) {
    const Vec& v = v_grid[iv];
    std::vector<double> sums(nblocks), sq(nblocks);
    parallel_for(nblocks, [&](std::size_t b) {
      Rng rng(mc.seed, iv, b);
      const std::size_t lo = b * block, hi = std::min(total, lo + block);
      double s = 0.0, s2 = 0.0;
      for (std::size_t i = lo; i < hi; ++i) {
        const double x = sampler.draw(v, rng);
        s += x;
        s2 += x * x;
      }
      sums[b] = s;
      sq[b] = s2;
    });
    UqPoint pt;
    pt.v = v;
    double s = 0.0, s2 = 0.0;
    std::size_t used = 0, next = mc.samples;
    for (std::size_t b = 0; b < nblocks; ++b) {
      s += sums[b];
      s2 += sq[b];
      used = std::min(total, (b + 1) * block);
      if (used >= next || b + 1 == nblocks) {
        const double n = static_cast<double>(used);
        const double mean = s / n;
        const double var = std::max(0.0, s2 / n - mean * mean) * n / std::max(1.0, n - 1.0);
        pt.sequence.push_back({mean, std::sqrt(var / n)});
        next *= 2;
      }
    }
    for (std::size_t i = 1; i < pt.sequence.size(); ++i) {
      const double r = pt.sequence[i].value / pt.sequence[i - 1].value;
      pt.ratios.push_back(r);
      if (!(r <= 1.5)) pt.diverging = true;
    }
    res.points[iv] = pt;
  }
  for (const auto& pt : res.points) {
    if (pt.diverging) throw NonIntegrable("U_q estimate grows under sample doubling");
    const auto& last = pt.sequence.back();
    if (last.value > res.Uq_est || res.worst_v.d == 0) {
      res.Uq_est = last.value;
      res.stderr_ = last.stderr_;
      res.worst_v = pt.v;
    }
  }
  return res;
}

// Grid along the first axis, |v| in {0, 1, 2, 4, 8}.
inline std::vector<Vec> default_uq_grid(int d) {
  std::vector<Vec> g;
  for (double r : {0.0, 1.0, 2.0, 4.0, 8.0}) g.push_back(Vec::unit(d, 0) * r);
  return g;
}

struct ConstantsReport {
  double omega = 0.0;  // area of S^{d-1}
  double I_ell = 0.0;
  double Uq_est = 0.0;
  double Uq_stderr = 0.0;
  double Lq_bound = 0.0;
  double Ltilde_bound = 0.0;
  double C_master = 0.0;
};

inline ConstantsReport constants_report(const CrossSectionModel& m, const WeightParams& w, double ell,
                                        const MCSpec& mc) {
  ConstantsReport r;
  r.omega = sphere_area(m.d - 1);
  r.I_ell = bracket_integral(m.d, ell);
  const auto uq = estimate_Uq(m, w, default_uq_grid(m.d), mc);
  r.Uq_est = uq.Uq_est;
  r.Uq_stderr = uq.stderr_;
  const Vec zero(m.d);
  r.Lq_bound = verify_convolution_bounds(m, w, zero, ConvolutionMode::Lq).constant;
  r.Ltilde_bound = verify_convolution_bounds(m, w, Vec::unit(m.d, 0), ConvolutionMode::Ltilde).constant;
  r.C_master = constant_C(w, m, r.Uq_est);
  return r;
}

}  // namespace hierlab

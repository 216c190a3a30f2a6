#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "hierlab/collision_ops.hpp"
#include "hierlab/core.hpp"
#include "hierlab/estimates.hpp"
#include "hierlab/kinematics.hpp"
#include "hierlab/quadrature.hpp"
#include "hierlab/spaces.hpp"

namespace hierlab {

inline constexpr int kMaxDepth = 8;

struct SolverSpec {
  int depth = 4;
  double M = 0.0;       // smallness bound; checked against C when C > 0
  double C = 0.0;
  int replicas = 64;    // independent random trees per evaluation
  std::uint64_t seed = 1;
  double proposal_scale = 1.0;
  QuadSpec quad = QuadSpec::mc(1 << 12, 1);

  void validate() const {
    if (depth < 1 || depth > kMaxDepth) throw PreconditionError("depth must be in [1, 8]");
    if (replicas < 1) throw PreconditionError("need at least one replica");
    if (C > 0.0 && !(M < 1.0 / (8.0 * C))) throw ParameterRegime("M must satisfy M < 1/(8C)");
  }
};

namespace detail {

// Eight Gauss-Legendre nodes on [0, 1] with weights summing to 1.
inline const std::vector<std::pair<double, double>>& unit_time_rule() {
  static const auto rule = gauss_legendre<8>(0.0, 1.0);
  return rule;
}

inline double gaussian_pdf(const Vec& v, double s) {
  return std::exp(-0.5 * v.d * std::log(2.0 * kPi * s * s) - 0.5 * norm2(v) / (s * s));
}

}  // namespace detail

using Increments = std::array<double, kMaxDepth + 2>;

// Random-tree estimator of the Picard iterates
//   g^0(t) = T^t f0,  g^{m+1}(t) = T^t f0 + int_0^t T^{t-s} Q(g^m, g^m)(s) ds.
// A tree returns the increments g^m - g^{m-1} (m = 0..depth) at one point. Each
// node picks one Gauss time node, one (v1, sigma) draw and recurses into the
// four velocities the bilinear form needs. Replica r always reads the same
// substreams, so the averaged evaluator is a smooth deterministic function.
class PicardSolution {
 public:
  PicardSolution(DensityEvaluator f0, CrossSectionModel m, SolverSpec spec)
      : f0_(std::move(f0)), m_(std::move(m)), spec_(spec) {
    if (f0_.k() != 1) throw PreconditionError("Boltzmann data is a one-particle density");
    spec_.validate();
  }

  int depth() const { return spec_.depth; }
  const SolverSpec& spec() const { return spec_; }
  const DensityEvaluator& initial() const { return f0_; }
  const CrossSectionModel& model() const { return m_; }

  Increments tree(int depth, double t, const Vec& x, const Vec& v, std::uint64_t key) const {
    Increments inc{};
    PhaseState s0 = PhaseState::single(x, v);
    s0.drift(t);
    inc[0] = f0_(0.0, s0);
    if (depth == 0 || t == 0.0 || m_.b_sup() == 0.0) return inc;
    Rng rng(key);
    const auto& rule = detail::unit_time_rule();
    double u = rng.uniform();
    std::size_t l = 0;
    while (l + 1 < rule.size() && u >= rule[l].second) {
      u -= rule[l].second;
      ++l;
    }
    const double s = t * rule[l].first;
    const double sc = spec_.proposal_scale;
    const Vec v1 = rng.normal_vec(m_.d) * sc;
    const Vec sigma = rng.unit_vec(m_.d);
    const KernelValue B = try_cross_section(m_, sigma, v1 - v);
    if (B.singular || B.value == 0.0) return inc;
    const double W = t * B.value * sphere_area(m_.d - 1) / detail::gaussian_pdf(v1, sc);
    const Vec y = x - (t - s) * v;
    const auto out = post_collision_raw(v, v1, sigma);
    const Increments A = tree(depth - 1, s, y, out.v_star, substream_key(key, 1));
    const Increments Bv = tree(depth - 1, s, y, out.v1_star, substream_key(key, 2));
    const Increments C = tree(depth - 1, s, y, v, substream_key(key, 3));
    const Increments D = tree(depth - 1, s, y, v1, substream_key(key, 4));
    double a_prev = 0.0, b_cur = 0.0, c_prev = 0.0, d_cur = 0.0;
    for (int j = 0; j < depth; ++j) {
      b_cur += Bv[j];
      d_cur += D[j];
      const double gain = A[j] * b_cur + a_prev * Bv[j];
      const double loss = C[j] * d_cur + c_prev * D[j];
      inc[j + 1] = W * (gain - loss);
      a_prev += A[j];
      c_prev += C[j];
    }
    return inc;
  }

  // Replica means and standard errors of the increments at (t, x, v).
  std::vector<Estimate> increments(double t, const Vec& x, const Vec& v, int depth = -1) const {
    if (depth < 0) depth = spec_.depth;
    std::vector<Accumulator> acc(static_cast<std::size_t>(depth + 1));
    for (int r = 0; r < spec_.replicas; ++r) {
      const auto inc = tree(depth, t, x, v, substream_key(spec_.seed, 0x7472, static_cast<std::uint64_t>(r)));
      for (int m = 0; m <= depth; ++m) acc[static_cast<std::size_t>(m)].add(inc[m]);
    }
    std::vector<Estimate> out;
    for (const auto& a : acc) out.push_back(a.estimate());
    return out;
  }

  double value(double t, const Vec& x, const Vec& v) const {
    double acc = 0.0;
    for (const auto& e : increments(t, x, v)) acc += e.value;
    return acc;
  }

  // Time-indexed evaluator of the depth-th iterate.
  DensityEvaluator evaluator(bool memo = true) const {
    auto self = std::make_shared<const PicardSolution>(*this);
    DensityEvaluator e(1, [self](double t, const PhaseState& s) { return self->value(t, s.x[0], s.v[0]); }, true);
    return memo ? memoize(e) : e;
  }

 private:
  DensityEvaluator f0_;
  CrossSectionModel m_;
  SolverSpec spec_;
};

struct PicardReport {
  std::vector<double> deltas;     // delta_m, m = 1..depth+1: sampled weighted sup of |g^m - g^{m-1}|
  std::vector<double> delta_se;   // standard error at the maximizing point
  std::vector<double> ratios;     // delta_{m+1} / delta_m
  std::vector<double> residuals;  // residual of the depth-m iterate, m = 0..depth (equals delta_{m+1})
  double f0_norm = 0.0;
  double solution_norm = 0.0;     // sampled sup of weight * |T^{-t} g^depth(t)|
  double min_value = 0.0;         // smallest sampled value of the iterate
  double min_value_se = 0.0;
  bool smallness_ok = true;
  std::vector<std::string> warnings;
};

struct SamplePlan {
  std::vector<PhaseState> points;  // one-particle probe points (x, v) of T^{-t} g
  std::vector<double> times;
};

// Samples the increments along the plan. A depth+1 tree gives every residual
// of the depth-m iterates in one pass.
inline PicardReport picard_report(const PicardSolution& sol, const WeightParams& w, const SamplePlan& plan,
                                  double f0_norm) {
  const int D = sol.depth();
  PicardReport rep;
  rep.f0_norm = f0_norm;
  if (sol.spec().M > 0.0 && f0_norm > 0.5 * sol.spec().M) {
    rep.smallness_ok = false;
    rep.warnings.push_back("SmallnessViolated: ||f0|| > M/2");
  }
  const std::size_t P = plan.points.size() * plan.times.size();
  std::vector<std::vector<Estimate>> incs(P);
  parallel_for(P, [&](std::size_t i) {
    const auto& p = plan.points[i % plan.points.size()];
    const double t = plan.times[i / plan.points.size()];
    // T^{-t} g(t) at (x, v) is g(t, x + t v, v).
    incs[i] = sol.increments(t, p.x[0] + t * p.v[0], p.v[0], D + 1);
  });
  rep.deltas.assign(static_cast<std::size_t>(D + 1), 0.0);
  rep.delta_se.assign(static_cast<std::size_t>(D + 1), 0.0);
  rep.min_value = kInfinity;
  for (std::size_t i = 0; i < P; ++i) {
    const auto& p = plan.points[i % plan.points.size()];
    const double wt = weight_eval(p, w);
    double val = 0.0, var = 0.0;
    for (int m = 0; m <= D + 1; ++m) {
      const auto& e = incs[i][static_cast<std::size_t>(m)];
      if (m >= 1) {
        const double dm = wt * std::abs(e.value);
        if (dm > rep.deltas[static_cast<std::size_t>(m - 1)]) {
          rep.deltas[static_cast<std::size_t>(m - 1)] = dm;
          rep.delta_se[static_cast<std::size_t>(m - 1)] = wt * e.stderr_;
        }
      }
      if (m <= D) {
        val += e.value;
        var += e.stderr_ * e.stderr_;
      }
    }
    rep.solution_norm = std::max(rep.solution_norm, wt * std::abs(val));
    if (val < rep.min_value) {
      rep.min_value = val;
      rep.min_value_se = std::sqrt(var);
    }
  }
  rep.residuals = rep.deltas;
  // Increments are products, not differences, so there is no cancellation
  // floor; stop only when a difference vanishes outright.
  int growth = 0;
  for (std::size_t m = 1; m < rep.deltas.size(); ++m) {
    if (!(rep.deltas[m - 1] > 0.0)) break;
    const double r = rep.deltas[m] / rep.deltas[m - 1];
    rep.ratios.push_back(r);
    growth = r > 1.0 ? growth + 1 : 0;
    if (growth >= 2) throw DivergenceDetected("Picard differences grew for two consecutive iterations");
  }
  return rep;
}

// Convenience: build the solution and its report.
struct PicardRun {
  PicardSolution solution;
  PicardReport report;
};

inline PicardRun picard_solve_be(const DensityEvaluator& f0, const WeightParams& w, const CrossSectionModel& m,
                                 const SolverSpec& spec, const SamplePlan& plan, double f0_norm) {
  PicardSolution sol(f0, m, spec);
  auto rep = picard_report(sol, w, plan, f0_norm);
  return {std::move(sol), std::move(rep)};
}

struct ResidualResult {
  double value = 0.0;   // sampled weighted sup
  double stderr_ = 0.0; // at the maximizing point
};

// Mild-form residual |T^{-t} f(t) - f0 - int_0^t T^{-s} Q(f, f)(s) ds| for any
// time-indexed one-particle evaluator; time integral by the 8-node Gauss rule,
// Q by `quad`.
inline ResidualResult be_residual(const DensityEvaluator& f, const DensityEvaluator& f0, double t,
                                  const std::vector<PhaseState>& points, const WeightParams& w,
                                  const CrossSectionModel& m, const QuadSpec& quad) {
  ResidualResult res;
  for (const auto& p : points) {
    const Vec& x = p.x[0];
    const Vec& v = p.v[0];
    double integral = 0.0, var = 0.0;
    for (const auto& [xi, wi] : detail::unit_time_rule()) {
      const double s = t * xi;
      const auto q = q_bilinear(f, f, x + s * v, v, s, m, quad);
      integral += t * wi * q.value;
      var += (t * wi * q.stderr_) * (t * wi * q.stderr_);
    }
    const double r = f(t, x + t * v, v) - f0(0.0, x, v) - integral;
    const double wt = weight_eval(p, w);
    if (wt * std::abs(r) >= res.value) {
      res.value = wt * std::abs(r);
      res.stderr_ = wt * std::sqrt(var);
    }
  }
  return res;
}

// ---- conservation ----------------------------------------------------------

enum class Conserved { mass, momentum, energy };

// Multivariate Student-t in x (scale 1/alpha) times a Gaussian in v.
struct PhaseProposal {
  int d = 3;
  double nu = 3.0;
  double x_scale = 1.0;
  double v_scale = 1.0;

  void draw(Rng& rng, Vec& x, Vec& v, double& pdf) const {
    const double chi = 2.0 * rng.gamma(0.5 * nu);
    const double f = std::sqrt(nu / chi) * x_scale;
    x = rng.normal_vec(d) * f;
    v = rng.normal_vec(d) * v_scale;
    pdf = x_pdf(x) * detail::gaussian_pdf(v, v_scale);
  }
  double x_pdf(const Vec& x) const {
    const double lc = std::lgamma(0.5 * (nu + d)) - std::lgamma(0.5 * nu) - 0.5 * d * std::log(nu * kPi) -
                      d * std::log(x_scale);
    return std::exp(lc - 0.5 * (nu + d) * std::log1p(norm2(x) / (nu * x_scale * x_scale)));
  }
};

struct ConservationResult {
  std::vector<double> init;    // one entry for mass and energy, d for momentum
  std::vector<double> init_stderr;
  std::vector<double> now;
  std::vector<double> defect;
  std::vector<double> stderr_;
  bool ok = true;              // |defect| <= 3 stderr in every component
};

// Moments of the depth-D iterate integrated over all of phase space. The
// defect int int (g^D(t) - T^t f0) phi is estimated directly from the sum of
// increments m >= 1, one fresh tree per sample.
inline ConservationResult conservation_moments(const PicardSolution& sol, double t, Conserved which,
                                               const WeightParams& w, std::size_t samples, std::uint64_t seed) {
  const CrossSectionModel& m = sol.model();
  if (m.gamma < 0.0) throw PreconditionError("conservation laws need gamma >= 0");
  const int d = m.d;
  const double need = which == Conserved::mass ? d + m.gamma : (which == Conserved::momentum ? d + m.gamma + 1 : d + m.gamma + 2);
  if (!(w.q > need)) throw PreconditionError("q below the conservation threshold");
  if (!(w.p > d)) throw PreconditionError("conservation laws need p > d");
  // Cauchy tails in x: f0 ~ <x>^{-p} with p > d keeps f^2/pdf integrable.
  const PhaseProposal prop{d, 1.0, 1.0 / w.alpha, 1.0};
  const int comps = which == Conserved::momentum ? d : 1;
  std::vector<std::vector<double>> init(static_cast<std::size_t>(comps), std::vector<double>(samples));
  auto defect = init;
  parallel_for(samples, [&](std::size_t i) {
    Rng rng(seed, 0x636f6e73, i);
    Vec y(d), v(d);
    double pdf = 0.0;
    prop.draw(rng, y, v, pdf);
    const auto inc = sol.tree(sol.depth(), t, y + t * v, v, substream_key(seed, 0x74726565, i));
    double sum = 0.0;
    for (int k = 1; k <= sol.depth(); ++k) sum += inc[k];
    const double f0v = sol.initial()(0.0, y, v);
    for (int c = 0; c < comps; ++c) {
      double phi = 1.0;
      if (which == Conserved::momentum) phi = v[c];
      if (which == Conserved::energy) phi = norm2(v);
      init[static_cast<std::size_t>(c)][i] = f0v * phi / pdf;
      defect[static_cast<std::size_t>(c)][i] = sum * phi / pdf;
    }
  });
  ConservationResult r;
  for (int c = 0; c < comps; ++c) {
    const auto a = summarize(init[static_cast<std::size_t>(c)]);
    const auto b = summarize(defect[static_cast<std::size_t>(c)]);
    r.init.push_back(a.value);
    r.init_stderr.push_back(a.stderr_);
    r.defect.push_back(b.value);
    r.now.push_back(a.value + b.value);
    r.stderr_.push_back(b.stderr_);
    r.ok = r.ok && std::abs(b.value) <= 3.0 * b.stderr_;
  }
  return r;
}

// ---- mixtures and the hierarchy ---------------------------------------------

struct Atom {
  double weight = 1.0;
  DensityEvaluator h0;
};

struct AtomCheck {
  double norm = 0.0;
  double min_value = 0.0;
  double mass = 0.0;
  double mass_se = 0.0;
};

class MixingMeasure {
 public:
  // Validated measure: weights sum to one, atoms nonnegative, normalized and
  // inside the ball ||h0|| <= e^{-mu'} (all sampled).
  static MixingMeasure make(std::vector<Atom> atoms, const WeightParams& w_mu_prime, const SampleCloud& cloud,
                            std::size_t mass_samples = 1 << 16, std::uint64_t seed = 1) {
    MixingMeasure pi = unchecked(std::move(atoms));
    double total = 0.0;
    for (const auto& a : pi.atoms_) {
      if (!(a.weight > 0.0)) throw PreconditionError("atom weights must be positive");
      if (a.h0.k() != 1) throw PreconditionError("atoms are one-particle densities");
      total += a.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) throw PreconditionError("atom weights must sum to 1");
    const double ball = std::exp(-w_mu_prime.mu);
    for (const auto& a : pi.atoms_) {
      AtomCheck c;
      c.norm = sup_norm_estimate(a.h0, w_mu_prime, cloud, 4).value;
      c.min_value = kInfinity;
      for (const auto& p : cloud.points) c.min_value = std::min(c.min_value, a.h0(0.0, p));
      const PhaseProposal prop{w_mu_prime.d, 1.0, 1.0 / w_mu_prime.alpha, 1.0};
      std::vector<double> xs(mass_samples);
      parallel_for(mass_samples, [&](std::size_t i) {
        Rng rng(seed, 0x6d617373, i);
        Vec x(prop.d), v(prop.d);
        double pdf = 0.0;
        prop.draw(rng, x, v, pdf);
        xs[i] = a.h0(0.0, x, v) / pdf;
      });
      const auto e = summarize(xs);
      c.mass = e.value;
      c.mass_se = e.stderr_;
      if (c.min_value < -1e-14) throw PreconditionError("atom takes negative values");
      if (std::abs(c.mass - 1.0) > 3.0 * c.mass_se + 1e-3) throw PreconditionError("atom is not a probability density");
      if (c.norm > ball * (1.0 + 1e-9)) throw PreconditionError("atom norm exceeds e^{-mu'}");
      pi.checks_.push_back(c);
    }
    return pi;
  }
  // No checks; for negative controls.
  static MixingMeasure unchecked(std::vector<Atom> atoms) {
    if (atoms.empty()) throw PreconditionError("mixing measure needs at least one atom");
    MixingMeasure pi;
    pi.atoms_ = std::move(atoms);
    return pi;
  }

  const std::vector<Atom>& atoms() const { return atoms_; }
  const std::vector<AtomCheck>& checks() const { return checks_; }

 private:
  std::vector<Atom> atoms_;
  std::vector<AtomCheck> checks_;
};

// sum_i w_i h_i^{(x)k} for any list of (weight, one-particle evaluator).
inline DensityEvaluator mixture_of_tensors(const std::vector<std::pair<double, DensityEvaluator>>& parts, int k) {
  if (k < 1) throw PreconditionError("k must be positive");
  std::vector<std::pair<double, DensityEvaluator>> tp;
  for (const auto& [w, h] : parts) tp.emplace_back(w, tensor_power(h, k));
  return DensityEvaluator(
      k,
      [tp](double t, const PhaseState& s) {
        double acc = 0.0;
        for (const auto& [w, g] : tp) acc += w * g(t, s);
        return acc;
      },
      true);
}

inline DensityEvaluator mixture_marginal(const MixingMeasure& pi, int k) {
  std::vector<std::pair<double, DensityEvaluator>> parts;
  for (const auto& a : pi.atoms()) parts.emplace_back(a.weight, a.h0);
  return mixture_of_tensors(parts, k);
}

struct HierarchyReport {
  double mu = 0.0;
  double mu_prime = 0.0;
  double C = 0.0;
  double transported_norm = 0.0;  // sampled |||T^{-.} F(.)|||, target <= 1
  int k_arg = 0;
  double data_norm = 0.0;         // ||F0||_{mu'} = sup_k e^{mu' k} ||f0^(k)||
  bool tensorized = false;
  std::vector<PicardReport> atoms;
  struct NormSample {
    double t;
    int k;
    double value;  // e^{mu k} ||T^{-t} f^(k)(t)||, sampled
  };
  std::vector<NormSample> series;
};

class HierarchySolution {
 public:
  HierarchySolution(const MixingMeasure& pi, std::vector<PicardSolution> sols) {
    for (std::size_t i = 0; i < sols.size(); ++i) {
      weights_.push_back(pi.atoms()[i].weight);
      h_.push_back(sols[i].evaluator(true));
      h0_.push_back(pi.atoms()[i].h0);
    }
    sols_ = std::move(sols);
  }
  // f^(k)(t) = sum_i w_i h_i(t)^{(x)k}
  DensityEvaluator marginal(int k) const { return mixture_of_tensors(parts(h_), k); }
  DensityEvaluator initial_marginal(int k) const { return mixture_of_tensors(parts(h0_), k); }
  const std::vector<PicardSolution>& atoms() const { return sols_; }
  const std::vector<DensityEvaluator>& atom_evaluators() const { return h_; }

 private:
  std::vector<std::pair<double, DensityEvaluator>> parts(const std::vector<DensityEvaluator>& hs) const {
    std::vector<std::pair<double, DensityEvaluator>> out;
    for (std::size_t i = 0; i < hs.size(); ++i) out.emplace_back(weights_[i], hs[i]);
    return out;
  }
  std::vector<double> weights_;
  std::vector<DensityEvaluator> h_, h0_;
  std::vector<PicardSolution> sols_;
};

struct HierarchyRun {
  HierarchySolution solution;
  HierarchyReport report;
};

// Builds F from Picard solutions of each atom with M = e^{-mu}; mu' = mu + ln 2
// unless `unsafe_mu_prime` supplies another value.
inline HierarchyRun solve_hierarchy(const MixingMeasure& pi, const WeightParams& w_mu, const CrossSectionModel& m,
                                    SolverSpec spec, double C, const SamplePlan& plan, int K_max = 4,
                                    const SampleCloud* norm_cloud = nullptr, double unsafe_mu_prime = kInfinity) {
  if (!(C > 0.0)) throw PreconditionError("C must be positive");
  if (!(std::exp(w_mu.mu) > 8.0 * C)) throw ParameterRegime("need e^mu > 8 C");
  HierarchyReport rep;
  rep.mu = w_mu.mu;
  rep.mu_prime = std::isfinite(unsafe_mu_prime) ? unsafe_mu_prime : w_mu.mu + std::log(2.0);
  rep.C = C;
  WeightParams wp = w_mu;
  wp.mu = rep.mu_prime;
  const double ball = std::exp(-rep.mu_prime);
  spec.M = std::exp(-w_mu.mu);
  spec.C = C;
  std::vector<PicardSolution> sols;
  double data_norm_1 = 0.0;
  for (std::size_t i = 0; i < pi.atoms().size(); ++i) {
    const auto& a = pi.atoms()[i];
    double nrm = 0.0;
    if (i < pi.checks().size()) {
      nrm = pi.checks()[i].norm;
    } else if (norm_cloud) {
      nrm = sup_norm_estimate(a.h0, wp, *norm_cloud, 4).value;
    }
    if (nrm > ball * (1.0 + 1e-9)) throw ParameterRegime("atom norm exceeds e^{-mu'}");
    data_norm_1 = std::max(data_norm_1, nrm);
    SolverSpec si = spec;
    si.seed = substream_key(spec.seed, 0x61746f6d, i);
    sols.emplace_back(a.h0, m, si);
    rep.atoms.push_back(picard_report(sols.back(), w_mu, plan, nrm));
  }
  HierarchySolution hs(pi, std::move(sols));
  rep.tensorized = pi.atoms().size() == 1;
  // ||F0||_{mu'} for tensorized data: sup_k (e^{mu'} ||h0||)^k.
  const double base = std::exp(rep.mu_prime) * data_norm_1;
  rep.data_norm = base <= 1.0 ? base : std::pow(base, K_max);
  // Transported hierarchy norm on the plan's time grid; the k-particle cloud
  // is the diagonal of the plan's one-particle points, where the tensor
  // marginals attain their sampled sup.
  SampleCloud one{1, w_mu.d, {}, plan.points};
  for (double t : plan.times) {
    std::vector<DensityEvaluator> Ft;
    for (int k = 1; k <= K_max; ++k) Ft.push_back(transport(hs.marginal(k), -t));
    const auto hn = hierarchy_norm(Ft, w_mu, [&](int k) { return tensorize_cloud(one, k); }, 0, t);
    for (int k = 1; k <= K_max; ++k) rep.series.push_back({t, k, hn.per_k[static_cast<std::size_t>(k - 1)]});
    if (hn.value > rep.transported_norm) {
      rep.transported_norm = hn.value;
      rep.k_arg = hn.k_arg;
    }
  }
  return {std::move(hs), std::move(rep)};
}

// |T^{-t} f^(k)(t) - f0^(k) - int_0^t T^{-s} C^{k+1} f^(k+1)(s) ds| at k-particle
// points, weighted sup.
inline ResidualResult hierarchy_residual(const DensityEvaluator& fk, const DensityEvaluator& fk1,
                                         const DensityEvaluator& f0k, int k, double t,
                                         const std::vector<PhaseState>& points, const WeightParams& w,
                                         const CrossSectionModel& m, const QuadSpec& quad) {
  if (fk.k() != k || fk1.k() != k + 1 || f0k.k() != k) throw PreconditionError("marginal k mismatch");
  ResidualResult res;
  for (const auto& p : points) {
    if (p.k != k) throw PreconditionError("probe points need k particles");
    double integral = 0.0, var = 0.0;
    for (const auto& [xi, wi] : detail::unit_time_rule()) {
      const double s = t * xi;
      PhaseState ps = p;
      ps.drift(-s);
      const auto c = full_collision(fk1, k, ps, s, m, quad);
      integral += t * wi * c.value;
      var += (t * wi * c.stderr_) * (t * wi * c.stderr_);
    }
    PhaseState pt = p;
    pt.drift(-t);
    const double r = fk(t, pt) - f0k(0.0, p) - integral;
    const double wt = weight_eval(p, w);
    if (wt * std::abs(r) >= res.value) {
      res.value = wt * std::abs(r);
      res.stderr_ = wt * std::sqrt(var);
    }
  }
  return res;
}

// ---- admissibility -----------------------------------------------------------

struct AdmissibilityReport {
  bool nonnegative = true;
  bool normalized = true;
  bool consistent = true;
  bool symmetric = true;
  std::vector<double> mass;      // per k
  std::vector<double> mass_se;
  double worst_consistency_z = 0.0;
  double min_value = 0.0;
  std::vector<std::string> failures;
  bool ok() const { return nonnegative && normalized && consistent && symmetric; }
};

// Checks of nonnegativity, unit mass, marginal consistency and symmetry for
// G = (g^(1), ..., g^(K)). Integrals by Monte Carlo against a heavy-tailed
// proposal in x (Cauchy, scale 1/alpha) and a Gaussian in v.
inline AdmissibilityReport admissibility_check(const std::vector<DensityEvaluator>& G, int K, const WeightParams& w,
                                               std::size_t samples = 1 << 15, std::uint64_t seed = 1,
                                               int probes = 16) {
  if (K < 2 || static_cast<int>(G.size()) < K) throw PreconditionError("need K >= 2 marginals");
  const int d = w.d;
  const PhaseProposal prop{d, 1.0, 1.0 / w.alpha, 1.0};
  AdmissibilityReport r;
  r.min_value = kInfinity;
  auto draw_state = [&](Rng& rng, int k, PhaseState& s) {
    double pdf = 1.0;
    s = PhaseState(k, d);
    for (int i = 0; i < k; ++i) {
      double pi = 0.0;
      prop.draw(rng, s.x[i], s.v[i], pi);
      pdf *= pi;
    }
    return pdf;
  };
  for (int k = 1; k <= K; ++k) {
    const auto& g = G[static_cast<std::size_t>(k - 1)];
    if (g.k() != k) throw PreconditionError("marginal k mismatch");
    std::vector<double> xs(samples), mins(samples);
    parallel_for(samples, [&](std::size_t i) {
      Rng rng(seed, 0x61646d, substream_key(static_cast<std::uint64_t>(k), i));
      PhaseState s(k, d);
      const double pdf = draw_state(rng, k, s);
      const double gv = g(0.0, s);
      mins[i] = gv;
      xs[i] = gv / pdf;
    });
    const auto e = summarize(xs);
    r.mass.push_back(e.value);
    r.mass_se.push_back(e.stderr_);
    r.min_value = std::min(r.min_value, *std::min_element(mins.begin(), mins.end()));
    if (std::abs(e.value - 1.0) > 3.0 * e.stderr_ + 1e-9) {
      r.normalized = false;
      r.failures.push_back("normalization fails at k = " + std::to_string(k));
    }
  }
  if (r.min_value < -1e-14) {
    r.nonnegative = false;
    r.failures.push_back("negative values found");
  }
  for (int k = 1; k < K; ++k) {
    const auto& g = G[static_cast<std::size_t>(k - 1)];
    const auto& g1 = G[static_cast<std::size_t>(k)];
    for (int pidx = 0; pidx < probes; ++pidx) {
      Rng prng(seed, 0x70726f62, substream_key(static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pidx)));
      PhaseState Z(k, d);
      for (int i = 0; i < k; ++i) {
        Z.x[i] = prng.normal_vec(d) * (1.0 / w.alpha);
        Z.v[i] = prng.normal_vec(d);
      }
      std::vector<double> xs(samples);
      parallel_for(samples, [&](std::size_t i) {
        Rng rng(seed, 0x6d617267, substream_key(substream_key(k, pidx), i));
        Vec x(d), v(d);
        double pdf = 0.0;
        prop.draw(rng, x, v, pdf);
        PhaseState s = Z;
        s.push(x, v);
        xs[i] = g1(0.0, s) / pdf;
      });
      const auto e = summarize(xs);
      const double target = g(0.0, Z);
      const double z = e.stderr_ > 0.0 ? std::abs(e.value - target) / e.stderr_
                                       : (std::abs(e.value - target) <= 1e-12 * std::abs(target) ? 0.0 : kInfinity);
      r.worst_consistency_z = std::max(r.worst_consistency_z, z);
      if (z > 3.0 && std::abs(e.value - target) > 1e-12 * std::abs(target)) r.consistent = false;
    }
    if (!r.consistent) r.failures.push_back("marginal consistency fails at k = " + std::to_string(k));
  }
  for (int k = 2; k <= K && r.symmetric; ++k) {
    const auto& g = G[static_cast<std::size_t>(k - 1)];
    for (int pidx = 0; pidx < probes && r.symmetric; ++pidx) {
      Rng prng(seed, 0x73796d, substream_key(static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(pidx)));
      PhaseState Z(k, d);
      for (int i = 0; i < k; ++i) {
        Z.x[i] = prng.normal_vec(d) * (1.0 / w.alpha);
        Z.v[i] = prng.normal_vec(d);
      }
      const double base = g(0.0, Z);
      for (int j = 0; j + 1 < k; ++j) {
        PhaseState s = Z;
        s.swap_slots(j, j + 1);
        if (std::abs(g(0.0, s) - base) > 1e-12 * std::abs(base)) r.symmetric = false;
      }
    }
    if (!r.symmetric) r.failures.push_back("symmetry fails at k = " + std::to_string(k));
  }
  return r;
}

// ---- Chebyshev support diagnostic ------------------------------------------------

struct PhaseBall {
  Vec cx;
  Vec cv;
  double radius = 0.5;

  double volume() const {
    const int n = 2 * cx.d;
    return std::pow(kPi, 0.5 * n) / std::tgamma(0.5 * n + 1.0) * std::pow(radius, n);
  }
  bool contains(const Vec& x, const Vec& v) const { return norm2(x - cx) + norm2(v - cv) <= radius * radius; }
  void sample(Rng& rng, Vec& x, Vec& v) const {
    const int d = cx.d;
    Vec zx = rng.normal_vec(d), zv = rng.normal_vec(d);
    const double n = std::sqrt(norm2(zx) + norm2(zv));
    const double r = radius * std::pow(rng.uniform(), 1.0 / (2 * d));
    x = cx + zx * (r / n);
    v = cv + zv * (r / n);
  }
};

enum class SupportVerdict { conforming, violating };

struct ChebyshevReport {
  std::vector<double> r;       // r_k, k = 1..k_max
  std::vector<double> r_se;
  double ball_mass_M = 0.0;    // int_B M
  double ball_mass_M_se = 0.0;
  double ratio_fit = 0.0;      // geometric growth rate fitted on the upper half of k
  double ratio_se = 0.0;
  double G_norm = 0.0;         // envelope the r_k are compared against
  SupportVerdict verdict = SupportVerdict::conforming;
};

// M(x, v) = e^{-mu'} <alpha x>^{-p} <beta v>^{-q}.
inline double reference_density(const WeightParams& wp, const Vec& x, const Vec& v) {
  return std::exp(-wp.mu) * std::pow(bracket(wp.alpha * x), -wp.p) * std::pow(bracket(wp.beta * v), -wp.q);
}

// r_k = int_{B^k} g^(k) / (int_B M)^k from one set of uniform points in B^{k_max};
// the first k coordinates of each point serve every k.
inline ChebyshevReport chebyshev_support_diagnostic(const std::vector<DensityEvaluator>& G, const PhaseBall& B,
                                                    const WeightParams& wp, double G_norm, std::size_t samples,
                                                    std::uint64_t seed) {
  const int kmax = static_cast<int>(G.size());
  if (kmax < 2) throw PreconditionError("need at least two marginals");
  const int d = wp.d;
  const double vol = B.volume();
  ChebyshevReport rep;
  rep.G_norm = G_norm;
  {
    std::vector<double> ms(samples);
    parallel_for(samples, [&](std::size_t i) {
      Rng rng(seed, 0x4d62616c, i);
      Vec x(d), v(d);
      B.sample(rng, x, v);
      ms[i] = vol * reference_density(wp, x, v);
    });
    const auto e = summarize(ms);
    rep.ball_mass_M = e.value;
    rep.ball_mass_M_se = e.stderr_;
  }
  std::vector<std::vector<double>> vals(static_cast<std::size_t>(kmax), std::vector<double>(samples));
  parallel_for(samples, [&](std::size_t i) {
    Rng rng(seed, 0x47626c6c, i);
    PhaseState s(kmax, d);
    for (int j = 0; j < kmax; ++j) B.sample(rng, s.x[j], s.v[j]);
    for (int k = 1; k <= kmax; ++k) {
      PhaseState sk(k, d);
      for (int j = 0; j < k; ++j) {
        sk.x[j] = s.x[j];
        sk.v[j] = s.v[j];
      }
      vals[static_cast<std::size_t>(k - 1)][i] = std::pow(vol / rep.ball_mass_M, k) * G[static_cast<std::size_t>(k - 1)](0.0, sk);
    }
  });
  for (int k = 1; k <= kmax; ++k) {
    const auto e = summarize(vals[static_cast<std::size_t>(k - 1)]);
    rep.r.push_back(e.value);
    rep.r_se.push_back(e.stderr_);
  }
  // Weighted least squares of log r_k on k over the upper half.
  const int k0 = std::max(1, kmax / 2);
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int k = k0; k <= kmax; ++k) {
    const double r = rep.r[static_cast<std::size_t>(k - 1)];
    if (!(r > 0.0)) continue;
    const double rel = rep.r_se[static_cast<std::size_t>(k - 1)] / r;
    // Uncertainty of int_B M enters r_k as a factor (1 + e)^k.
    const double relM = k * rep.ball_mass_M_se / rep.ball_mass_M;
    const double var = std::max(rel * rel + relM * relM, 1e-30);
    const double wk = 1.0 / var;
    sw += wk; sx += wk * k; sy += wk * std::log(r); sxx += wk * k * k; sxy += wk * k * std::log(r);
  }
  const double den = sw * sxx - sx * sx;
  double slope = 0.0, slope_var = 0.0;
  if (den > 0.0) {
    slope = (sw * sxy - sx * sy) / den;
    slope_var = sw / den;
  }
  rep.ratio_fit = std::exp(slope);
  rep.ratio_se = rep.ratio_fit * std::sqrt(slope_var);
  bool bounded = true;
  for (int k = 1; k <= kmax; ++k) {
    const double r = rep.r[static_cast<std::size_t>(k - 1)];
    // The estimate of int_B M is shared by every r_k; its error enters as (1 + e)^k.
    const double se = std::hypot(rep.r_se[static_cast<std::size_t>(k - 1)], r * k * rep.ball_mass_M_se / rep.ball_mass_M);
    if (r > G_norm + 3.0 * se) bounded = false;
  }
  const bool growing = rep.ratio_fit > 1.0 + 3.0 * rep.ratio_se;
  rep.verdict = (growing || !bounded) ? SupportVerdict::violating : SupportVerdict::conforming;
  return rep;
}

// ---- uniqueness decay ----------------------------------------------------------

// 2 (2 e^{-mu})^k (4 C e^{-mu})^n ||F||, with e^mu passed directly so that
// e^mu = 4C gives a per-n factor of exactly 1.
inline double uniqueness_decay_bound(int k, int n, double exp_mu, double C, double norm_F) {
  if (k < 0 || n < 0) throw PreconditionError("k and n must be nonnegative");
  if (!(exp_mu > 0.0) || !(C > 0.0)) throw PreconditionError("e^mu and C must be positive");
  double out = 2.0 * norm_F;
  const double a = 2.0 / exp_mu, b = 4.0 * C / exp_mu;
  for (int i = 0; i < k; ++i) out *= a;
  for (int i = 0; i < n; ++i) out *= b;
  return out;
}

inline std::vector<double> decay_sequence(int k, int n_max, double exp_mu, double C, double norm_F) {
  std::vector<double> out;
  for (int n = 0; n <= n_max; ++n) out.push_back(uniqueness_decay_bound(k, n, exp_mu, C, norm_F));
  return out;
}

using Rational = boost::multiprecision::cpp_rational;

// Same bound in exact rationals, with e^mu given as the ratio e^mu / C.
inline Rational uniqueness_decay_bound_exact(int k, int n, const Rational& ratio, const Rational& C,
                                             const Rational& norm_F) {
  if (k < 0 || n < 0) throw PreconditionError("k and n must be nonnegative");
  if (ratio <= 0 || C <= 0) throw PreconditionError("e^mu and C must be positive");
  const Rational exp_mu = ratio * C;
  Rational out = 2 * norm_F;
  for (int i = 0; i < k; ++i) out *= Rational(2) / exp_mu;
  for (int i = 0; i < n; ++i) out *= Rational(4) / ratio;
  return out;
}

struct DecayReport {
  std::vector<Rational> bounds;  // n = 0..n_max
  bool strictly_decreasing = true;
  bool constant = true;
  int first_below = -1;          // first n with bound < threshold, -1 if none
};

inline DecayReport decay_report_exact(int k, int n_max, const Rational& ratio, const Rational& C,
                                      const Rational& norm_F, const Rational& threshold) {
  DecayReport r;
  for (int n = 0; n <= n_max; ++n) {
    r.bounds.push_back(uniqueness_decay_bound_exact(k, n, ratio, C, norm_F));
    if (n > 0) {
      r.strictly_decreasing = r.strictly_decreasing && r.bounds[n] < r.bounds[n - 1];
      r.constant = r.constant && r.bounds[n] == r.bounds[n - 1];
    }
    if (r.first_below < 0 && r.bounds.back() < threshold) r.first_below = n;
  }
  return r;
}

}  // namespace hierlab

#pragma once

#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "hierlab/core.hpp"

namespace hierlab {

class ScatterDirection {
 public:
  explicit ScatterDirection(const Vec& s) : sigma_(s) {
    const double n = norm(s);
    if (!(n > 0.0) || !std::isfinite(n)) throw PreconditionError("scatter direction must be nonzero");
    if (std::abs(n - 1.0) > 1e-12) sigma_ *= 1.0 / n;
  }
  const Vec& vec() const { return sigma_; }
  int dim() const { return sigma_.d; }

 private:
  Vec sigma_;
};

// Angular factor b on [-1, 1]. Always stored in symmetrized form.
class AngularKernel {
 public:
  enum class Kind { constant, polynomial, table };

  static AngularKernel constant(double value) {
    if (!(value >= 0.0) || !std::isfinite(value)) throw PreconditionError("b must be finite and nonnegative");
    AngularKernel b;
    b.kind_ = Kind::constant;
    b.coef_ = {value};
    b.sup_ = value;
    return b;
  }

  // b(z) = sum_i coef[i] z^i. Odd powers are removed by symmetrization.
  static AngularKernel polynomial(std::vector<double> coef) {
    if (coef.empty()) throw PreconditionError("empty coefficient list");
    AngularKernel b;
    b.kind_ = Kind::polynomial;
    double odd = 0.0;
    for (std::size_t i = 1; i < coef.size(); i += 2) {
      odd = std::max(odd, std::abs(coef[i]));
      coef[i] = 0.0;
    }
    if (odd > 1e-12) b.warnings_.push_back("polynomial b not even; symmetrized");
    b.coef_ = std::move(coef);
    b.finish_scan();
    return b;
  }

  // Linear interpolation through (z_i, b_i), z strictly increasing and
  // covering [-1, 1].
  static AngularKernel table(std::vector<double> z, std::vector<double> values) {
    if (z.size() != values.size() || z.size() < 2) throw PreconditionError("table needs matching nodes and values");
    for (std::size_t i = 1; i < z.size(); ++i)
      if (!(z[i] > z[i - 1])) throw PreconditionError("table nodes must increase");
    if (z.front() > -1.0 || z.back() < 1.0) throw PreconditionError("table must cover [-1, 1]");
    AngularKernel b;
    b.kind_ = Kind::table;
    b.nodes_ = std::move(z);
    b.coef_ = std::move(values);
    double asym = 0.0;
    for (double zi : b.nodes_)
      if (std::abs(zi) <= 1.0) asym = std::max(asym, std::abs(b.raw(zi) - b.raw(-zi)));
    if (asym > 1e-12) b.warnings_.push_back("table b not even; symmetrized");
    b.finish_scan();
    return b;
  }

  double operator()(double z) const {
    switch (kind_) {
      case Kind::constant: return coef_[0];
      case Kind::polynomial: return raw(z);
      case Kind::table: return 0.5 * (raw(z) + raw(-z));
    }
    return 0.0;
  }

  double sup() const { return sup_; }
  Kind kind() const { return kind_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  AngularKernel() = default;

  double raw(double z) const {
    if (kind_ == Kind::polynomial) {
      double acc = 0.0;
      for (std::size_t i = coef_.size(); i-- > 0;) acc = acc * z + coef_[i];
      return acc;
    }
    z = std::clamp(z, nodes_.front(), nodes_.back());
    const auto it = std::upper_bound(nodes_.begin(), nodes_.end(), z);
    std::size_t hi = static_cast<std::size_t>(it - nodes_.begin());
    if (hi >= nodes_.size()) hi = nodes_.size() - 1;
    const std::size_t lo = hi - 1;
    const double w = (z - nodes_[lo]) / (nodes_[hi] - nodes_[lo]);
    return (1.0 - w) * coef_[lo] + w * coef_[hi];
  }

  // Nonnegativity and sup on a dense grid plus the table nodes.
  void finish_scan() {
    std::vector<double> zs;
    const int n = 20001;
    for (int i = 0; i < n; ++i) zs.push_back(-1.0 + 2.0 * i / (n - 1));
    for (double zi : nodes_) if (std::abs(zi) <= 1.0) zs.push_back(zi);
    sup_ = 0.0;
    for (double z : zs) {
      const double v = (*this)(z);
      if (!std::isfinite(v)) throw PreconditionError("b must be finite");
      if (v < -1e-15) throw PreconditionError("b must be nonnegative on [-1, 1]");
      sup_ = std::max(sup_, std::abs(v));
    }
  }

  Kind kind_ = Kind::constant;
  std::vector<double> coef_;
  std::vector<double> nodes_;
  double sup_ = 0.0;
  std::vector<std::string> warnings_;
};

struct CrossSectionModel {
  int d = 3;
  double gamma = 1.0;
  AngularKernel b = AngularKernel::constant(0.5);
  double u_floor = 1e-14;

  CrossSectionModel() = default;
  CrossSectionModel(int dim, double g, AngularKernel kernel, double floor = 1e-14)
      : d(dim), gamma(g), b(std::move(kernel)), u_floor(floor) {
    validate();
  }
  void validate() const {
    if (d < 2 || d > kMaxDim) throw PreconditionError("dimension out of range");
    if (!(gamma > 1.0 - d && gamma <= 1.0)) throw PreconditionError("gamma must lie in (1-d, 1]");
  }
  double b_sup() const { return b.sup(); }
};

// Value of B with a flag instead of an exception, for quadrature loops.
struct KernelValue {
  double value = 0.0;
  bool singular = false;
};

inline KernelValue try_cross_section(const CrossSectionModel& m, const Vec& sigma, const Vec& u) {
  const double un = norm(u);
  if (un == 0.0 || un < m.u_floor) {
    if (m.gamma > 0.0) return {0.0, false};
    if (m.gamma == 0.0) {
      // Direction of u undefined; use b(0).
      if (un == 0.0) return {m.b(0.0), false};
    } else {
      return {std::numeric_limits<double>::infinity(), true};
    }
  }
  const double cosang = std::clamp(dot(u, sigma) / un, -1.0, 1.0);
  const double radial = m.gamma == 0.0 ? 1.0 : (m.gamma == 1.0 ? un : std::pow(un, m.gamma));
  return {radial * m.b(cosang), false};
}

inline double cross_section(const CrossSectionModel& m, const ScatterDirection& sigma, const Vec& u) {
  const KernelValue k = try_cross_section(m, sigma.vec(), u);
  if (k.singular) throw SingularPoint("cross section singular at |u| below floor");
  return k.value;
}

struct CollisionOutcome {
  Vec v_star;
  Vec v1_star;
};

inline CollisionOutcome post_collision_raw(const Vec& v, const Vec& v1, const Vec& sigma) {
  const Vec mid = 0.5 * (v + v1);
  const double half = 0.5 * norm(v1 - v);
  return {mid + half * sigma, mid - half * sigma};
}

inline CollisionOutcome post_collision(const Vec& v, const Vec& v1, const ScatterDirection& sigma) {
  if (!finite(v) || !finite(v1)) throw PreconditionError("velocities must be finite");
  return post_collision_raw(v, v1, sigma.vec());
}

struct CollisionGeometry {
  double d_star = 0.0;
  double d1_star = 0.0;
  double ortho_defect = 0.0;
  double carleman_lhs = 0.0;
  double carleman_rhs = 0.0;
};

inline CollisionGeometry collision_geometry(const Vec& v, const Vec& v1, const ScatterDirection& sigma) {
  const Vec u = v1 - v;
  const double un2 = norm2(u);
  if (un2 == 0.0) return {};
  const auto out = post_collision(v, v1, sigma);
  const Vec a = v - out.v_star;
  const Vec b = v - out.v1_star;
  CollisionGeometry g;
  g.d_star = norm(a);
  g.d1_star = norm(b);
  g.ortho_defect = dot(a, b);
  g.carleman_lhs = g.d_star * g.d1_star;
  const double c = dot(u, sigma.vec()) / std::sqrt(un2);
  g.carleman_rhs = 0.5 * un2 * std::sqrt(std::max(0.0, 1.0 - c * c));
  return g;
}

}  // namespace hierlab

#pragma once

#include <queue>
#include <utility>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "hierlab/core.hpp"

namespace hierlab {

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  int intervals = 0;
};

// Gauss-Legendre nodes and weights mapped to [a, b].
template <unsigned N>
std::vector<std::pair<double, double>> gauss_legendre(double a, double b) {
  using G = boost::math::quadrature::gauss<double, N>;
  const auto& x = G::abscissa();
  const auto& w = G::weights();
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  std::vector<std::pair<double, double>> out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] == 0.0) {
      out.emplace_back(mid, half * w[i]);
    } else {
      out.emplace_back(mid - half * x[i], half * w[i]);
      out.emplace_back(mid + half * x[i], half * w[i]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace detail {

struct Panel {
  double a, b, value, error;
  bool operator<(const Panel& o) const { return error < o.error; }
};

template <class F>
Panel gk15(F& f, double a, double b) {
  using K = boost::math::quadrature::gauss_kronrod<double, 15>;
  using G = boost::math::quadrature::gauss<double, 7>;
  const auto& xk = K::abscissa();
  const auto& wk = K::weights();
  const auto& wg = G::weights();
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  const double f0 = f(mid);
  double kr = f0 * wk[0];
  double ga = f0 * wg[0];
  for (std::size_t i = 1; i < xk.size(); ++i) {
    const double fs = f(mid - half * xk[i]) + f(mid + half * xk[i]);
    kr += fs * wk[i];
    if (i % 2 == 0) ga += fs * wg[i / 2];
  }
  return {a, b, half * kr, std::abs(half * (kr - ga))};
}

}  // namespace detail

// Globally adaptive Gauss-Kronrod 7/15 with bisection of the worst panel.
// Stops when the summed error estimate is below max(abs_tol, rel_tol*|I|).
template <class F>
QuadResult adaptive_gk(F f, double a, double b, double abs_tol, double rel_tol = 0.0, int max_panels = 4000) {
  if (a == b) return {};
  std::priority_queue<detail::Panel> heap;
  heap.push(detail::gk15(f, a, b));
  double total = heap.top().value, err = heap.top().error;
  int panels = 1;
  while (err > std::max(abs_tol, rel_tol * std::abs(total)) && panels < max_panels) {
    const detail::Panel worst = heap.top();
    heap.pop();
    const double m = 0.5 * (worst.a + worst.b);
    if (!(m > worst.a && m < worst.b)) {
      heap.push(worst);
      break;
    }
    const auto left = detail::gk15(f, worst.a, m);
    const auto right = detail::gk15(f, m, worst.b);
    total += left.value + right.value - worst.value;
    err += left.error + right.error - worst.error;
    heap.push(left);
    heap.push(right);
    ++panels;
  }
  // Re-sum to shed accumulated cancellation in the running totals.
  double sum = 0.0, esum = 0.0;
  while (!heap.empty()) {
    sum += heap.top().value;
    esum += heap.top().error;
    heap.pop();
  }
  return {sum, esum, panels};
}

// Adaptive integral over a sequence of breakpoints, splitting the tolerance.
template <class F>
QuadResult adaptive_gk_pieces(F f, std::vector<double> cuts, double abs_tol, double rel_tol = 0.0) {
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  QuadResult out;
  const double share = abs_tol / std::max<std::size_t>(1, cuts.size() - 1);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const auto r = adaptive_gk(f, cuts[i], cuts[i + 1], share, rel_tol);
    out.value += r.value;
    out.error += r.error;
    out.intervals += r.intervals;
  }
  return out;
}

// Double-exponential rules for endpoint singularities and half lines.
template <class F>
QuadResult tanh_sinh_integral(F f, double a, double b, double rel_tol) {
  boost::math::quadrature::tanh_sinh<double> rule;
  QuadResult r;
  double l1 = 0.0;
  std::size_t levels = 0;
  r.value = rule.integrate(f, a, b, rel_tol, &r.error, &l1, &levels);
  r.intervals = static_cast<int>(levels);
  return r;
}

template <class F>
QuadResult half_line_integral(F f, double a, double rel_tol) {
  boost::math::quadrature::exp_sinh<double> rule;
  QuadResult r;
  double l1 = 0.0;
  std::size_t levels = 0;
  r.value = rule.integrate([&](double s) { return f(a + s); }, 0.0, std::numeric_limits<double>::infinity(),
                           rel_tol, &r.error, &l1, &levels);
  r.intervals = static_cast<int>(levels);
  return r;
}

}  // namespace hierlab

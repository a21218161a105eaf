#pragma once

// Independent reference computations for the unit and acceptance tests.
// Nothing here calls into the library's probability code.

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

namespace oracle {

/// Composite Simpson rule with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

inline double normal_pdf(double x, double mu, double var) {
  return std::exp(-(x - mu) * (x - mu) / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
}

/// KL(a || b) for two densities on [lo, hi] by quadrature.
inline double kl_quadrature(const std::function<double(double)>& a, const std::function<double(double)>& b,
                            double lo, double hi, int n = 40000) {
  return simpson(
      [&](double x) {
        const double pa = a(x);
        return pa > 0.0 ? pa * (std::log(pa) - std::log(b(x))) : 0.0;
      },
      lo, hi, n);
}

struct MeanSe {
  double mean;
  double se;
};

inline MeanSe mean_se(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s2 = 0.0;
  for (double x : v) s2 += (x - m) * (x - m);
  s2 /= static_cast<double>(v.size() - 1);
  return {m, std::sqrt(s2 / static_cast<double>(v.size()))};
}

}  // namespace oracle

#include "diva/harness/stats.hpp"

#include <cmath>
#include <cstddef>
#include <limits>

#include "diva/error.hpp"

namespace diva::harness {

namespace {

double beta_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-16, kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw NumericError("incomplete beta: shape parameters must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw NumericError("incomplete beta: x outside [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw NumericError("t distribution: degrees of freedom must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + t * t));
  return t > 0.0 ? 1.0 - tail : tail;
}

TTestResult paired_ttest(std::span<const double> ours, std::span<const double> baseline, double alpha) {
  if (ours.size() != baseline.size()) throw InputError("t-test: samples must be paired (equal lengths)");
  const std::size_t n = ours.size();
  if (n < 2) throw InputError("t-test: at least two pairs are required");
  TTestResult r;
  r.n = n;
  double mean = 0.0;
  bool all_equal = true;
  const double first = ours[0] - baseline[0];
  for (std::size_t i = 0; i < n; ++i) {
    const double d = ours[i] - baseline[i];
    all_equal = all_equal && d == first;
    mean += d;
  }
  mean /= static_cast<double>(n);
  r.mean_difference = mean;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = ours[i] - baseline[i] - mean;
    ss += e * e;
  }
  if (all_equal || ss == 0.0) {
    r.degenerate = true;
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (first > 0.0) {
      r.t = inf;
      r.p = 0.0;
    } else if (first < 0.0) {
      r.t = -inf;
      r.p = 1.0;
    } else {
      r.t = 0.0;
      r.p = 0.5;
    }
  } else {
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const double dof = static_cast<double>(n - 1);
    const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, dof / (dof + r.t * r.t));
    r.p = r.t > 0.0 ? tail : 1.0 - tail;
  }
  r.significant = r.p < alpha;
  return r;
}

}  // namespace diva::harness

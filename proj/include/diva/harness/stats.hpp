#pragma once

#include <span>

namespace diva::harness {

// Regularized incomplete beta I_x(a, b) by the modified Lentz continued
// fraction, using the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) when
// x > (a+1)/(a+b+2) so the fraction converges quickly.
double incomplete_beta(double a, double b, double x);

// Student t distribution function with `dof` degrees of freedom.
double student_t_cdf(double t, double dof);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // one-tailed, H1: mean(ours - baseline) > 0
  bool significant = false;
  bool degenerate = false;  // all differences identical
  double mean_difference = 0.0;
  std::size_t n = 0;
};

// One-tailed paired t-test, pairing by position (seed).
TTestResult paired_ttest(std::span<const double> ours, std::span<const double> baseline, double alpha = 0.05);

}  // namespace diva::harness

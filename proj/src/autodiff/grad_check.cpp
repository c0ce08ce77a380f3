#include "diva/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "diva/autodiff/tape.hpp"
#include "diva/error.hpp"

namespace diva::ad {

namespace {

double probe(const std::function<Var()>& f, const std::string& where) {
  NoGradScope no_grad;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function returned " + std::to_string(v) + " at " + where);
  return v;
}

void score(GradCheckReport& report, double a, double n, std::size_t element) {
  report.analytic.push_back(a);
  report.numeric.push_back(n);
  const double err = std::abs(a - n) / std::max({1.0, std::abs(a), std::abs(n)});
  if (report.probes == 0 || err > report.max_rel_err) {
    report.max_rel_err = err;
    report.worst_element = element;
  }
  ++report.probes;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var(const Var&)>& f, const Tensor& x, double step, double tol) {
  Var leaf = Var::leaf(x);
  std::vector<Var> leaves{leaf};
  return grad_check_leaves([&] { return f(leaf); }, leaves, step, tol);
}

GradCheckReport grad_check_leaves(const std::function<Var()>& f, std::span<Var> leaves, double step, double tol,
                                  std::size_t max_per_leaf) {
  GradCheckReport report;
  std::vector<bool> saved_flags;
  for (Var& leaf : leaves) {
    saved_flags.push_back(leaf.requires_grad());
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  {
    Tape tape;
    Tape::Scope scope(tape);
    Var root = f();
    if (!std::isfinite(root.item())) throw NumericError("grad_check: function is non-finite at the base point");
    tape.backward(root);
  }
  std::size_t global = 0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var& leaf = leaves[li];
    const Tensor analytic = leaf.grad();
    const std::size_t n = leaf.numel();
    const std::size_t stride = (max_per_leaf == 0 || n <= max_per_leaf) ? 1 : n / max_per_leaf;
    for (std::size_t e = 0; e < n; e += stride) {
      double& slot = leaf.mutable_value()[e];
      const double orig = slot;
      slot = orig + step;
      const double up = probe(f, "leaf " + std::to_string(li) + " element " + std::to_string(e) + " +step");
      slot = orig - step;
      const double down = probe(f, "leaf " + std::to_string(li) + " element " + std::to_string(e) + " -step");
      slot = orig;
      score(report, analytic[e], (up - down) / (2.0 * step), global + e);
    }
    global += n;
  }
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    leaves[li].zero_grad();
    leaves[li].set_requires_grad(saved_flags[li]);
  }
  report.passed = report.max_rel_err <= tol;
  return report;
}

}  // namespace diva::ad

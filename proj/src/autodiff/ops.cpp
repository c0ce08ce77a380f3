#include "diva/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "diva/error.hpp"

namespace diva::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> guard_hits{0};

ConstMap view(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
ConstMap view(const std::vector<double>& g, std::size_t rows, std::size_t cols) {
  return ConstMap(g.data(), rows, cols);
}
MutMap mut_view(std::vector<double>& g, std::size_t rows, std::size_t cols) { return MutMap(g.data(), rows, cols); }

bool recording(std::initializer_list<const Var*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Var* v : inputs) {
    if (v->requires_grad()) return true;
  }
  return false;
}

Var record(OpKind kind, Tensor value, bool on, std::vector<std::shared_ptr<Cell>> inputs) {
  Var out(std::move(value), on);
  if (on) Tape::active()->record(Node{kind, std::move(inputs), out.cell(), {}});
  return out;
}

// Attaches the backward rule to the node just recorded for `out`.
void set_backward(const Var& out, std::function<void()> fn) {
  if (!out.requires_grad()) return;
  Tape::active()->last().backward = std::move(fn);
}

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const Shape& b) {
  throw ConfigError(std::string(op_name(kind)) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

bool is_row_broadcast(const Tensor& a, const Tensor& b) {
  return b.rows() == 1 && a.rows() > 1 && b.cols() == a.cols() && b.numel() == a.cols();
}

void check_axis(OpKind kind, int axis) {
  if (axis != 0 && axis != 1) throw ConfigError(std::string(op_name(kind)) + ": axis must be 0 or 1");
}

}  // namespace

std::uint64_t normalize_guard_hits() { return guard_hits.load(); }

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error(OpKind::matmul, av.shape(), bv.shape());
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  MutMap(out.data(), out.rows(), out.cols()).noalias() = view(av) * view(bv);
  const bool on = recording({&a, &b});
  Var y = record(OpKind::matmul, std::move(out), on, {a.cell(), b.cell()});
  set_backward(y, [ac = a.cell(), bc = b.cell(), yc = y.cell()] {
    const std::size_t n = ac->value.rows(), k = ac->value.cols(), m = bc->value.cols();
    ConstMap g = view(yc->grad, n, m);
    if (ac->requires_grad) mut_view(ac->ensure_grad(), n, k).noalias() += g * view(bc->value).transpose();
    if (bc->requires_grad) mut_view(bc->ensure_grad(), k, m).noalias() += view(ac->value).transpose() * g;
  });
  return y;
}

Var matmul_nt(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols()) shape_error(OpKind::matmul_nt, av.shape(), bv.shape());
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  MutMap(out.data(), out.rows(), out.cols()).noalias() = view(av) * view(bv).transpose();
  const bool on = recording({&a, &b});
  Var y = record(OpKind::matmul_nt, std::move(out), on, {a.cell(), b.cell()});
  set_backward(y, [ac = a.cell(), bc = b.cell(), yc = y.cell()] {
    const std::size_t n = ac->value.rows(), k = ac->value.cols(), m = bc->value.rows();
    ConstMap g = view(yc->grad, n, m);
    if (ac->requires_grad) mut_view(ac->ensure_grad(), n, k).noalias() += g * view(bc->value);
    if (bc->requires_grad) mut_view(bc->ensure_grad(), m, k).noalias() += g.transpose() * view(ac->value);
  });
  return y;
}

Var transpose(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  Var y = record(OpKind::transpose, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), r, c] {
    auto& ga = ac->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += yc->grad[j * r + i];
  });
  return y;
}

Var add(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = is_row_broadcast(av, bv);
  if (!bcast && av.numel() != bv.numel()) shape_error(OpKind::add, av.shape(), bv.shape());
  if (!bcast && av.shape() != bv.shape() && !(av.rows() == bv.rows() && av.cols() == bv.cols())) {
    shape_error(OpKind::add, av.shape(), bv.shape());
  }
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bcast ? bv[i % cols] : bv[i];
  Var y = record(OpKind::add, std::move(out), recording({&a, &b}), {a.cell(), b.cell()});
  set_backward(y, [ac = a.cell(), bc = b.cell(), yc = y.cell(), bcast, cols] {
    const auto& g = yc->grad;
    if (ac->requires_grad) {
      auto& ga = ac->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (bc->requires_grad) {
      auto& gb = bc->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? i % cols : i] += g[i];
    }
  });
  return y;
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool bcast = is_row_broadcast(av, bv);
  if (!bcast && !(av.rows() == bv.rows() && av.cols() == bv.cols())) shape_error(OpKind::mul, av.shape(), bv.shape());
  Tensor out = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bcast ? bv[i % cols] : bv[i];
  Var y = record(OpKind::mul, std::move(out), recording({&a, &b}), {a.cell(), b.cell()});
  set_backward(y, [ac = a.cell(), bc = b.cell(), yc = y.cell(), bcast, cols] {
    const auto& g = yc->grad;
    const Tensor& av = ac->value;
    const Tensor& bv = bc->value;
    if (ac->requires_grad) {
      auto& ga = ac->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (bcast ? bv[i % cols] : bv[i]);
    }
    if (bc->requires_grad) {
      auto& gb = bc->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? i % cols : i] += g[i] * av[i];
    }
  });
  return y;
}

Var scale(const Var& a, double factor) {
  Tensor out = a.value();
  for (double& v : out.values()) v *= factor;
  Var y = record(OpKind::scale, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), factor] {
    auto& ga = ac->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * yc->grad[i];
  });
  return y;
}

Var exp(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = std::exp(v);
  Var y = record(OpKind::exp, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell()] {
    auto& ga = ac->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += yc->grad[i] * yc->value[i];
  });
  return y;
}

Var log(const Var& a, double floor) {
  const Tensor& av = a.value();
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    double v = av[i];
    if (floor > 0.0) {
      v = std::max(v, floor);
    } else if (!(v > 0.0)) {
      throw NumericError("log: non-positive input " + std::to_string(v) + " at element " + std::to_string(i));
    }
    out[i] = std::log(v);
  }
  Var y = record(OpKind::log, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), floor] {
    auto& ga = ac->ensure_grad();
    const Tensor& av = ac->value;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (floor > 0.0 && av[i] < floor) continue;
      ga[i] += yc->grad[i] / av[i];
    }
  });
  return y;
}

Var relu(const Var& a) {
  Tensor out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  Var y = record(OpKind::relu, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell()] {
    auto& ga = ac->ensure_grad();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (ac->value[i] > 0.0) ga[i] += yc->grad[i];
    }
  });
  return y;
}

Var softmax_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::matrix(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, av.at(i, j));
    if (!std::isfinite(mx)) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(i));
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (out.at(i, j) = std::exp(av.at(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
  }
  Var y = record(OpKind::softmax_rows, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), r, c] {
    auto& ga = ac->ensure_grad();
    const auto& g = yc->grad;
    const Tensor& p = yc->value;
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
    }
  });
  return y;
}

Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gamma.numel() != c || beta.numel() != c) shape_error(OpKind::layernorm, xv.shape(), gamma.shape());
  Tensor out = Tensor::matrix(r, c);
  std::vector<double> xhat(r * c);
  std::vector<double> inv_std(r);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < r; ++i) {
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += xv.at(i, j);
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (xv.at(i, j) - mu) * (xv.at(i, j) - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      const double h = (xv.at(i, j) - mu) * inv_std[i];
      xhat[i * c + j] = h;
      out.at(i, j) = h * gv[j] + bv[j];
    }
  }
  Var y = record(OpKind::layernorm, std::move(out), recording({&x, &gamma, &beta}),
                 {x.cell(), gamma.cell(), beta.cell()});
  set_backward(y, [xc = x.cell(), gc = gamma.cell(), bc = beta.cell(), yc = y.cell(), xhat = std::move(xhat),
                   inv_std = std::move(inv_std), r, c] {
    const auto& g = yc->grad;
    if (gc->requires_grad) {
      auto& gg = gc->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gg[j] += g[i * c + j] * xhat[i * c + j];
    }
    if (bc->requires_grad) {
      auto& gb = bc->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
    if (xc->requires_grad) {
      auto& gx = xc->ensure_grad();
      const Tensor& gv = gc->value;
      const double inv_c = 1.0 / static_cast<double>(c);
      for (std::size_t i = 0; i < r; ++i) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double d = g[i * c + j] * gv[j];
          m1 += d;
          m2 += d * xhat[i * c + j];
        }
        m1 *= inv_c;
        m2 *= inv_c;
        for (std::size_t j = 0; j < c; ++j) {
          const double d = g[i * c + j] * gv[j];
          gx[i * c + j] += inv_std[i] * (d - m1 - xhat[i * c + j] * m2);
        }
      }
    }
  });
  return y;
}

Var concat(std::span<const Var> parts, int axis) {
  check_axis(OpKind::concat, axis);
  if (parts.empty()) throw ConfigError("concat: no inputs");
  std::size_t rows = 0, cols = 0;
  bool on = false;
  std::vector<std::shared_ptr<Cell>> cells;
  for (const Var& p : parts) {
    if (axis == 0) {
      if (cols != 0 && p.cols() != cols) shape_error(OpKind::concat, parts[0].shape(), p.shape());
      cols = p.cols();
      rows += p.rows();
    } else {
      if (rows != 0 && p.rows() != rows) shape_error(OpKind::concat, parts[0].shape(), p.shape());
      rows = p.rows();
      cols += p.cols();
    }
    on = on || p.requires_grad();
    cells.push_back(p.cell());
  }
  on = on && Tape::active() != nullptr;
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < pv.rows(); ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) {
        if (axis == 0) out.at(offset + i, j) = pv.at(i, j);
        else out.at(i, offset + j) = pv.at(i, j);
      }
    offset += axis == 0 ? pv.rows() : pv.cols();
  }
  Var y = record(OpKind::concat, std::move(out), on, cells);
  set_backward(y, [cells, yc = y.cell(), axis, cols] {
    std::size_t off = 0;
    for (const auto& cell : cells) {
      const std::size_t pr = cell->value.rows(), pc = cell->value.cols();
      if (cell->requires_grad) {
        auto& g = cell->ensure_grad();
        for (std::size_t i = 0; i < pr; ++i)
          for (std::size_t j = 0; j < pc; ++j)
            g[i * pc + j] += axis == 0 ? yc->grad[(off + i) * cols + j] : yc->grad[i * cols + off + j];
      }
      off += axis == 0 ? pr : pc;
    }
  });
  return y;
}

Var slice(const Var& a, std::size_t begin, std::size_t end, int axis) {
  check_axis(OpKind::slice, axis);
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  const std::size_t limit = axis == 0 ? r : c;
  if (begin >= end || end > limit) {
    throw ConfigError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                      shape_str(av.shape()));
  }
  const std::size_t orows = axis == 0 ? end - begin : r;
  const std::size_t ocols = axis == 0 ? c : end - begin;
  Tensor out = Tensor::matrix(orows, ocols);
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j)
      out.at(i, j) = axis == 0 ? av.at(begin + i, j) : av.at(i, begin + j);
  Var y = record(OpKind::slice, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), begin, axis, orows, ocols, c] {
    auto& ga = ac->ensure_grad();
    for (std::size_t i = 0; i < orows; ++i)
      for (std::size_t j = 0; j < ocols; ++j) {
        const std::size_t src = axis == 0 ? (begin + i) * c + j : i * c + begin + j;
        ga[src] += yc->grad[i * ocols + j];
      }
  });
  return y;
}

Var gather_rows(const Var& a, std::span<const std::size_t> indices) {
  const Tensor& av = a.value();
  const std::size_t c = av.cols();
  if (indices.empty()) throw ConfigError("gather_rows: empty index list");
  Tensor out = Tensor::matrix(indices.size(), c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.rows()) {
      throw ConfigError("gather_rows: index " + std::to_string(indices[i]) + " outside " + shape_str(av.shape()));
    }
    std::copy_n(av.data() + indices[i] * c, c, out.data() + i * c);
  }
  Var y = record(OpKind::gather_rows, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), idx = std::vector<std::size_t>(indices.begin(), indices.end()), c] {
    auto& ga = ac->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) ga[idx[i] * c + j] += yc->grad[i * c + j];
  });
  return y;
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  Var y = record(OpKind::sum, Tensor::scalar(s), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell()] {
    auto& ga = ac->ensure_grad();
    for (double& g : ga) g += yc->grad[0];
  });
  return y;
}

Var mean(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const double n = static_cast<double>(a.numel());
  Var y = record(OpKind::mean, Tensor::scalar(s / n), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), n] {
    auto& ga = ac->ensure_grad();
    for (double& g : ga) g += yc->grad[0] / n;
  });
  return y;
}

Var l2_normalize_rows(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = av;
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av.at(i, j) * av.at(i, j);
    norms[i] = std::sqrt(s);
    if (norms[i] < kNormalizeFloor) {
      guard_hits.fetch_add(1, std::memory_order_relaxed);
      continue;
    }
    for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= norms[i];
  }
  Var y = record(OpKind::l2_normalize_rows, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), norms = std::move(norms), r, c] {
    auto& ga = ac->ensure_grad();
    const auto& g = yc->grad;
    const Tensor& yv = yc->value;
    for (std::size_t i = 0; i < r; ++i) {
      if (norms[i] < kNormalizeFloor) {
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[i * c + j];
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * yv[i * c + j];
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += (g[i * c + j] - yv[i * c + j] * dot) / norms[i];
    }
  });
  return y;
}

Var row_norms(const Var& a) {
  const Tensor& av = a.value();
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out = Tensor::matrix(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += av.at(i, j) * av.at(i, j);
    out[i] = std::sqrt(s);
  }
  Var y = record(OpKind::row_norms, std::move(out), recording({&a}), {a.cell()});
  set_backward(y, [ac = a.cell(), yc = y.cell(), r, c] {
    auto& ga = ac->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const double n = yc->value[i];
      if (n == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += yc->grad[i] * ac->value[i * c + j] / n;
    }
  });
  return y;
}

Var cosine_sim_matrix(const Var& a, const Var& b) {
  if (a.cols() != b.cols()) shape_error(OpKind::cosine_sim_matrix, a.shape(), b.shape());
  const Var an = l2_normalize_rows(a);
  const Var bn = a.same_as(b) ? an : l2_normalize_rows(b);
  return matmul_nt(an, bn);
}

Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> targets) {
  const Tensor& z = logits.value();
  const std::size_t r = z.rows(), c = z.cols();
  if (targets.size() != r) {
    throw ConfigError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " + std::to_string(r) +
                      " rows");
  }
  Tensor out = Tensor::matrix(r, 1);
  std::vector<double> probs(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) throw ConfigError("cross_entropy_rows: target " + std::to_string(targets[i]) + " >= " +
                                           std::to_string(c));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, z.at(i, j));
    if (!std::isfinite(mx)) throw NumericError("cross_entropy_rows: non-finite logit in row " + std::to_string(i));
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += (probs[i * c + j] = std::exp(z.at(i, j) - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    out[i] = mx + std::log(s) - z.at(i, targets[i]);
  }
  Var y = record(OpKind::cross_entropy_rows, std::move(out), recording({&logits}), {logits.cell()});
  set_backward(y, [zc = logits.cell(), yc = y.cell(), probs = std::move(probs),
                   tg = std::vector<std::size_t>(targets.begin(), targets.end()), r, c] {
    auto& gz = zc->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const double g = yc->grad[i];
      for (std::size_t j = 0; j < c; ++j) gz[i * c + j] += g * (probs[i * c + j] - (j == tg[i] ? 1.0 : 0.0));
    }
  });
  return y;
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t seq_len, std::size_t n_heads,
              std::span<const std::size_t> lengths) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  const std::size_t total = qv.rows(), d = qv.cols();
  if (kv.rows() != total || vv.rows() != total || kv.cols() != d || vv.cols() != d) {
    shape_error(OpKind::attention, qv.shape(), kv.shape());
  }
  if (seq_len == 0 || total % seq_len != 0) {
    throw ConfigError("attention: " + std::to_string(total) + " rows do not pack sequences of length " +
                      std::to_string(seq_len));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                      " heads");
  }
  const std::size_t n_seq = total / seq_len;
  if (!lengths.empty() && lengths.size() != n_seq) {
    throw ConfigError("attention: " + std::to_string(lengths.size()) + " lengths for " + std::to_string(n_seq) +
                      " sequences");
  }
  std::vector<std::size_t> lens(n_seq, seq_len);
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    if (lengths[s] == 0 || lengths[s] > seq_len) throw ConfigError("attention: bad sequence length");
    lens[s] = lengths[s];
  }
  const std::size_t dh = d / n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t T = seq_len;
  // probs laid out [seq][head][query][key]
  std::vector<double> probs(n_seq * n_heads * T * T, 0.0);
  Tensor out = Tensor::matrix(total, d);
  std::vector<double> row(T);
  for (std::size_t s = 0; s < n_seq; ++s) {
    const std::size_t base = s * T;
    const std::size_t L = lens[s];
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t off = h * dh;
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = qv.data() + (base + i) * d + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          const double* kj = kv.data() + (base + j) * d + off;
          double dot = 0.0;
          for (std::size_t t = 0; t < dh; ++t) dot += qi[t] * kj[t];
          row[j] = dot * inv_sqrt;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) z += (row[j] = std::exp(row[j] - mx));
        double* p = probs.data() + ((s * n_heads + h) * T + i) * T;
        double* oi = out.data() + (base + i) * d + off;
        for (std::size_t j = 0; j < L; ++j) {
          p[j] = row[j] / z;
          const double* vj = vv.data() + (base + j) * d + off;
          for (std::size_t t = 0; t < dh; ++t) oi[t] += p[j] * vj[t];
        }
      }
    }
  }
  Var y = record(OpKind::attention, std::move(out), recording({&q, &k, &v}), {q.cell(), k.cell(), v.cell()});
  set_backward(y, [qc = q.cell(), kc = k.cell(), vc = v.cell(), yc = y.cell(), probs = std::move(probs),
                   lens = std::move(lens), n_seq, n_heads, T, d, dh, inv_sqrt] {
    const Tensor& qv = qc->value;
    const Tensor& kv = kc->value;
    const Tensor& vv = vc->value;
    const auto& g = yc->grad;
    std::vector<double>* gq = qc->requires_grad ? &qc->ensure_grad() : nullptr;
    std::vector<double>* gk = kc->requires_grad ? &kc->ensure_grad() : nullptr;
    std::vector<double>* gv = vc->requires_grad ? &vc->ensure_grad() : nullptr;
    std::vector<double> dp(T);
    for (std::size_t s = 0; s < n_seq; ++s) {
      const std::size_t base = s * T;
      const std::size_t L = lens[s];
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < T; ++i) {
          const double* p = probs.data() + ((s * n_heads + h) * T + i) * T;
          const double* gi = g.data() + (base + i) * d + off;
          double dot = 0.0;
          for (std::size_t j = 0; j < L; ++j) {
            const double* vj = vv.data() + (base + j) * d + off;
            double acc = 0.0;
            for (std::size_t t = 0; t < dh; ++t) acc += gi[t] * vj[t];
            dp[j] = acc;
            dot += acc * p[j];
            if (gv) {
              double* gvj = gv->data() + (base + j) * d + off;
              for (std::size_t t = 0; t < dh; ++t) gvj[t] += p[j] * gi[t];
            }
          }
          const double* qi = qv.data() + (base + i) * d + off;
          for (std::size_t j = 0; j < L; ++j) {
            const double ds = p[j] * (dp[j] - dot) * inv_sqrt;
            if (ds == 0.0) continue;
            const double* kj = kv.data() + (base + j) * d + off;
            if (gq) {
              double* gqi = gq->data() + (base + i) * d + off;
              for (std::size_t t = 0; t < dh; ++t) gqi[t] += ds * kj[t];
            }
            if (gk) {
              double* gkj = gk->data() + (base + j) * d + off;
              for (std::size_t t = 0; t < dh; ++t) gkj[t] += ds * qi[t];
            }
          }
        }
      }
    }
  });
  return y;
}

}  // namespace diva::ad

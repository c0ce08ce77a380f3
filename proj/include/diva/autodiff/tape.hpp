#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string_view>
#include <vector>

#include "diva/autodiff/tensor.hpp"

namespace diva::ad {

enum class OpKind {
  matmul,
  matmul_nt,
  transpose,
  add,
  mul,
  scale,
  exp,
  log,
  relu,
  softmax_rows,
  layernorm,
  concat,
  slice,
  gather_rows,
  sum,
  mean,
  l2_normalize_rows,
  row_norms,
  cosine_sim_matrix,
  cross_entropy_rows,
  attention,
};

std::string_view op_name(OpKind kind);

struct Node {
  OpKind kind;
  std::vector<std::shared_ptr<Cell>> inputs;
  std::shared_ptr<Cell> output;
  // Reads output->grad, accumulates into the grads of inputs that require them.
  std::function<void()> backward;
};

// Ordered record of executed operations. Ops record onto the tape that is
// active on the calling thread; with no active tape they run as plain math.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(Node node);

  // Seeds d(root)/d(root) = 1 and walks the recorded nodes once, newest first.
  // Leaf gradients accumulate across calls; intermediate gradients are
  // recomputed from scratch on every call.
  void backward(const Var& root);

  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<Node>& nodes() const { return nodes_; }
  Node& last() { return nodes_.back(); }

  static Tape* active();

  // Makes `tape` the active tape of this thread for the guard's lifetime.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

 private:
  std::vector<Node> nodes_;
};

// Suspends recording on this thread (evaluation paths).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

}  // namespace diva::ad

#include "diva/autodiff/tape.hpp"

#include <algorithm>

#include "diva/error.hpp"

namespace diva::ad {

namespace {
thread_local Tape* active_tape = nullptr;
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::matmul_nt: return "matmul_nt";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::scale: return "scale";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::relu: return "relu";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::layernorm: return "layernorm";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::l2_normalize_rows: return "l2_normalize_rows";
    case OpKind::row_norms: return "row_norms";
    case OpKind::cosine_sim_matrix: return "cosine_sim_matrix";
    case OpKind::cross_entropy_rows: return "cross_entropy_rows";
    case OpKind::attention: return "attention";
  }
  return "unknown";
}

void Tape::record(Node node) { nodes_.push_back(std::move(node)); }

void Tape::backward(const Var& root) {
  if (!root.defined() || root.numel() != 1) {
    throw ContractError("backward() needs a scalar root, got shape " +
                        (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  }
  for (Node& node : nodes_) node.output->grad.clear();
  if (!root.requires_grad()) return;
  root.cell()->ensure_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

Tape* Tape::active() { return active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(active_tape) { active_tape = &tape; }
Tape::Scope::~Scope() { active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(active_tape) { active_tape = nullptr; }
NoGradScope::~NoGradScope() { active_tape = previous_; }

}  // namespace diva::ad

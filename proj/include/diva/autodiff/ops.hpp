#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "diva/autodiff/tape.hpp"
#include "diva/autodiff/tensor.hpp"

namespace diva::ad {

// All ops treat rank-1 inputs as one row. Shape mismatches throw ConfigError.

Var matmul(const Var& a, const Var& b);     // (n,k)x(k,m)
Var matmul_nt(const Var& a, const Var& b);  // (n,k)x(m,k)^T
Var transpose(const Var& a);

// Elementwise. `b` may also be a single row broadcast over every row of `a`.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);

Var exp(const Var& a);
// Natural log. With floor > 0 inputs are clamped to floor first (zero
// gradient where clamped); otherwise non-positive inputs throw NumericError.
Var log(const Var& a, double floor = 0.0);
Var relu(const Var& a);

Var softmax_rows(const Var& a);
Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// axis 0 stacks rows, axis 1 stacks columns.
Var concat(std::span<const Var> parts, int axis = 0);
// Half-open [begin, end) range along axis.
Var slice(const Var& a, std::size_t begin, std::size_t end, int axis = 0);
Var gather_rows(const Var& a, std::span<const std::size_t> indices);

Var sum(const Var& a);
Var mean(const Var& a);

// Rows with norm below kNormalizeFloor pass through unchanged and bump the
// guard counter.
inline constexpr double kNormalizeFloor = 1e-8;
Var l2_normalize_rows(const Var& a);
std::uint64_t normalize_guard_hits();

// (n,h) -> (n,1) Euclidean norms; subgradient 0 at the origin.
Var row_norms(const Var& a);

// (n,h),(m,h) -> (n,m) cosine similarities.
Var cosine_sim_matrix(const Var& a, const Var& b);

// (n,K) logits, n targets -> (n,1) of -log softmax(logits)[target].
Var cross_entropy_rows(const Var& logits, std::span<const std::size_t> targets);

// Multi-head scaled dot-product self-attention over packed sequences.
// q, k, v are (n_seq * seq_len, d). Keys at positions >= lengths[s] are
// masked; an empty `lengths` means every sequence is full.
Var attention(const Var& q, const Var& k, const Var& v, std::size_t seq_len, std::size_t n_heads,
              std::span<const std::size_t> lengths = {});

}  // namespace diva::ad

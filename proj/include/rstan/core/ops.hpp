#pragma once

#include <cstddef>
#include <span>

#include "rstan/core/tape.hpp"

namespace rstan {

// (m,k)·(k,n) or batched (B,m,k)·(B,k,n).
Var matmul(Var a, Var b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Var transpose(Var a);

// Max-subtracted softmax along one axis.
Var softmax(Var x, std::size_t axis);

// Pointwise add/mul. b must have a's rank, with each extent equal to a's or
// 1; size-1 axes of b are broadcast.
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var x, double factor);

Var sum(Var x);
Var mean(Var x);
Var reshape(Var x, Shape shape);
Var relu(Var x);
Var concat(std::span<const Var> parts, std::size_t axis);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

}  // namespace rstan

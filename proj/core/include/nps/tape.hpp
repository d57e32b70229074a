#pragma once

#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "nps/geom.hpp"

namespace nps::ad {

// Reverse-mode tape over matrix-valued nodes. Every operation appends one
// node; backward() sweeps the node list once in reverse, accumulating
// adjoints. Scalars are 1x1 matrices. Forward-mode directional derivatives
// (for surface Jacobians) are recorded as ordinary nodes, so losses over
// tangents differentiate with no extra machinery.
class Tape;

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

struct Node {
  Mat value;
  Mat grad;  // allocated lazily during the reverse sweep
  bool needs_grad = false;
  virtual ~Node() = default;
  virtual void backward(Tape&) {}
};

class Tape {
 public:
  // Leaves. `param` leaves get gradients; constants do not.
  Var param(const Mat& v);
  Var constant(const Mat& v);

  const Mat& value(Var v) const { return nodes_[v.idx]->value; }
  // Valid after backward(); zero matrix if the leaf was never reached.
  Mat grad(Var v) const;
  double scalar(Var v) const { return nodes_[v.idx]->value(0, 0); }

  // --- elementwise / structural ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var add_const(Var a, const Mat& c);
  Var scale(Var a, double s);
  Var hadamard(Var a, Var b);
  Var gather_rows(Var a, std::vector<int> rows);
  Var mean_rows(Var a);  // 1 x cols

  // --- linear algebra ---
  Var matmul(Var a, Var b);
  Var matmul_const_left(const Mat& a, Var b);
  Var add_row_broadcast(Var a, Var row);  // a: n x m, row: 1 x m

  // --- activations ---
  Var softplus(Var a, double beta);
  Var softplus_prime(Var a, double beta);  // sigmoid(beta*x)

  // --- rowwise geometry ---
  Var cross_rows(Var a, Var b);    // n x 3 each
  Var normalize_rows(Var a);       // rows scaled to unit norm
  Var row_sq_norms(Var a);         // n x 1
  Var row_norms(Var a);            // n x 1, floored at eps
  Var normalize_frob(Var a);       // whole matrix scaled to unit Frobenius norm

  // --- scalar reductions ---
  Var sum_row_norms(Var a);
  Var sum_abs_rowdot(Var a, const Mat& n);       // sum_i |n_i . a_i|
  Var sum_one_minus_rowdot(Var a, const Mat& n); // sum_i (1 - n_i . a_i)
  Var mean_center_abs_sum(Var a);                // a: n x 1
  Var dot_const(Var a, const Mat& w);            // <a, w> (Frobenius)
  Var sqrt_one_minus(Var x);                     // sqrt(max(0, 1-x))
  Var frob_norm(Var a);                          // ||a||_F, smoothed at 0
  Var sum_scalars(const std::vector<std::pair<double, Var>>& terms);

  // Broadcast concat for the decoder: code (1 x C) replicated against a
  // K x 1 token column -> K x (C+1).
  Var broadcast_concat(Var code, const Mat& tokens);

  // Reverse sweep from a scalar node.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  Node& node(int idx) { return *nodes_[idx]; }

 private:
  friend struct Node;
  template <class T, class... Args>
  Var push(Args&&... args);
  std::vector<std::unique_ptr<Node>> nodes_;
};

}  // namespace nps::ad

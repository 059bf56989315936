#pragma once

// Minimal tape-based reverse-mode differentiation over dense matrices.
//
// Every operation appends a node holding its value and a closure that
// propagates the node's gradient to its inputs. Nodes that depend on no
// parameter are marked constant and skipped during the backward sweep.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace driftguard::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  Var constant(Matrix value);
  // Leaf whose gradient is added into `grad_sink` by backward().
  Var parameter(const Matrix& value, Matrix& grad_sink);

  // Seeds d(root)/d(root) = 1 for a 1 x 1 root and sweeps the tape backwards.
  void backward(Var root);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Used by operation implementations.
  Var push(Matrix value, std::span<const Var> inputs, std::function<void(const Matrix&)> backward);
  void accumulate(Var v, const Matrix& grad);
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    bool has_grad = false;
    Matrix* sink = nullptr;
    std::function<void(const Matrix&)> backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// Broadcast a 1 x m row across the rows of an n x m matrix.
Var add_row(Var a, Var row);
Var sub_row(Var a, Var row);
Var mul_row(Var a, Var row);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var rsqrt(Var a);
Var col_mean(Var a);  // 1 x m
Var row_sum(Var a);   // n x 1
Var sum(Var a);       // 1 x 1
Var mean(Var a);      // 1 x 1
Var gather_cols(Var a, std::span<const std::size_t> columns);
Var concat_cols(Var a, Var b);

}  // namespace driftguard::ad

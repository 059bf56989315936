#include "driftguard/autodiff.hpp"

#include <cassert>
#include <stdexcept>

namespace driftguard::ad {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::parameter(const Matrix& value, Matrix& grad_sink) {
  nodes_.push_back(Node{value, {}, true, false, &grad_sink, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::span<const Var> inputs,
               std::function<void(const Matrix&)> backward) {
  bool needs = false;
  for (const Var& v : inputs) needs = needs || nodes_[v.id].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, false, nullptr,
                        needs ? std::move(backward) : nullptr});
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& grad) {
  Node& node = nodes_[v.id];
  if (!node.needs_grad) return;
  if (!node.has_grad) {
    node.grad = grad;
    node.has_grad = true;
  } else {
    node.grad += grad;
  }
}

void Tape::backward(Var root) {
  if (value(root).size() != 1) throw std::invalid_argument("backward needs a scalar root");
  accumulate(root, Matrix::Ones(1, 1));
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad) continue;
    if (node.backward) node.backward(node.grad);
    if (node.sink) *node.sink += node.grad;
  }
}

namespace {

Matrix col_sums(const Matrix& m) { return m.colwise().sum(); }

}  // namespace

Var matmul(Var a, Var b) {
  Tape* t = a.tape;
  const Var in[] = {a, b};
  return t->push(a.value() * b.value(), in, [t, a, b](const Matrix& g) {
    if (t->needs_grad(a)) t->accumulate(a, g * b.value().transpose());
    if (t->needs_grad(b)) t->accumulate(b, a.value().transpose() * g);
  });
}

Var add(Var a, Var b) {
  Tape* t = a.tape;
  const Var in[] = {a, b};
  return t->push(a.value() + b.value(), in, [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  Tape* t = a.tape;
  const Var in[] = {a, b};
  return t->push(a.value() - b.value(), in, [t, a, b](const Matrix& g) {
    t->accumulate(a, g);
    t->accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  Tape* t = a.tape;
  const Var in[] = {a, b};
  return t->push(a.value().cwiseProduct(b.value()), in, [t, a, b](const Matrix& g) {
    if (t->needs_grad(a)) t->accumulate(a, g.cwiseProduct(b.value()));
    if (t->needs_grad(b)) t->accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var add_row(Var a, Var row) {
  Tape* t = a.tape;
  const Var in[] = {a, row};
  Matrix out = a.value().rowwise() + row.value().row(0);
  return t->push(std::move(out), in, [t, a, row](const Matrix& g) {
    t->accumulate(a, g);
    if (t->needs_grad(row)) t->accumulate(row, col_sums(g));
  });
}

Var sub_row(Var a, Var row) {
  Tape* t = a.tape;
  const Var in[] = {a, row};
  Matrix out = a.value().rowwise() - row.value().row(0);
  return t->push(std::move(out), in, [t, a, row](const Matrix& g) {
    t->accumulate(a, g);
    if (t->needs_grad(row)) t->accumulate(row, -col_sums(g));
  });
}

Var mul_row(Var a, Var row) {
  Tape* t = a.tape;
  const Var in[] = {a, row};
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return t->push(std::move(out), in, [t, a, row](const Matrix& g) {
    if (t->needs_grad(a)) {
      Matrix ga = g.array().rowwise() * row.value().row(0).array();
      t->accumulate(a, ga);
    }
    if (t->needs_grad(row)) t->accumulate(row, col_sums(g.cwiseProduct(a.value())));
  });
}

Var scale(Var a, double c) {
  Tape* t = a.tape;
  const Var in[] = {a};
  return t->push(a.value() * c, in, [t, a, c](const Matrix& g) { t->accumulate(a, g * c); });
}

Var add_scalar(Var a, double c) {
  Tape* t = a.tape;
  const Var in[] = {a};
  Matrix out = a.value().array() + c;
  return t->push(std::move(out), in, [t, a](const Matrix& g) { t->accumulate(a, g); });
}

Var relu(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  return t->push(a.value().cwiseMax(0.0), in, [t, a](const Matrix& g) {
    Matrix ga = (a.value().array() > 0.0).select(g, 0.0);
    t->accumulate(a, ga);
  });
}

Var tanh(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  Matrix y = a.value().array().tanh();
  return t->push(y, in, [t, a, y](const Matrix& g) {
    Matrix ga = g.array() * (1.0 - y.array().square());
    t->accumulate(a, ga);
  });
}

Var exp(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  Matrix y = a.value().array().exp();
  return t->push(y, in, [t, a, y](const Matrix& g) { t->accumulate(a, g.cwiseProduct(y)); });
}

Var log(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  return t->push(a.value().array().log().matrix(), in, [t, a](const Matrix& g) {
    t->accumulate(a, g.cwiseQuotient(a.value()));
  });
}

Var square(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  return t->push(a.value().cwiseAbs2(), in, [t, a](const Matrix& g) {
    t->accumulate(a, 2.0 * g.cwiseProduct(a.value()));
  });
}

Var rsqrt(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  Matrix y = a.value().array().rsqrt();
  return t->push(y, in, [t, a, y](const Matrix& g) {
    Matrix ga = -0.5 * g.array() * y.array().cube();
    t->accumulate(a, ga);
  });
}

Var col_mean(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  const double n = static_cast<double>(a.rows());
  Matrix out = a.value().colwise().sum() / n;
  const Eigen::Index rows = a.rows();
  return t->push(std::move(out), in, [t, a, n, rows](const Matrix& g) {
    Matrix ga = (g / n).replicate(rows, 1);
    t->accumulate(a, ga);
  });
}

Var row_sum(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  Matrix out = a.value().rowwise().sum();
  const Eigen::Index cols = a.cols();
  return t->push(std::move(out), in, [t, a, cols](const Matrix& g) {
    t->accumulate(a, g.replicate(1, cols));
  });
}

Var sum(Var a) {
  Tape* t = a.tape;
  const Var in[] = {a};
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const Eigen::Index r = a.rows(), c = a.cols();
  return t->push(std::move(out), in, [t, a, r, c](const Matrix& g) {
    t->accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var gather_cols(Var a, std::span<const std::size_t> columns) {
  Tape* t = a.tape;
  const Var in[] = {a};
  const Matrix& av = a.value();
  Matrix out(av.rows(), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) out.col(j) = av.col(columns[j]);
  std::vector<std::size_t> cols(columns.begin(), columns.end());
  const Eigen::Index width = av.cols();
  return t->push(std::move(out), in, [t, a, cols = std::move(cols), width](const Matrix& g) {
    Matrix ga = Matrix::Zero(g.rows(), width);
    for (std::size_t j = 0; j < cols.size(); ++j) ga.col(cols[j]) += g.col(j);
    t->accumulate(a, ga);
  });
}

Var concat_cols(Var a, Var b) {
  Tape* t = a.tape;
  const Var in[] = {a, b};
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Eigen::Index left = a.cols(), right = b.cols();
  return t->push(std::move(out), in, [t, a, b, left, right](const Matrix& g) {
    t->accumulate(a, g.leftCols(left));
    t->accumulate(b, g.rightCols(right));
  });
}

}  // namespace driftguard::ad

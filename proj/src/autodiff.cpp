// Copyright 2026 The safepilco Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "safepilco/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "safepilco/errors.hpp"

namespace safepilco::ad {
namespace {

Tape& tape_of(const Var& a) {
  if (a.tape() == nullptr) throw InvalidArgument("autodiff: uninitialized Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw InvalidArgument("autodiff: operands on different tapes");
  return tape_of(a);
}

Eigen::Index broadcast_dim(Eigen::Index x, Eigen::Index y) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  throw DimensionMismatch("autodiff: incompatible broadcast shapes");
}

MatrixXd expand(const MatrixXd& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  if (m.size() == 1) return MatrixXd::Constant(rows, cols, m(0, 0));
  if (m.cols() == 1 && m.rows() == rows) return m.replicate(1, cols);
  if (m.rows() == 1 && m.cols() == cols) return m.replicate(rows, 1);
  throw DimensionMismatch("autodiff: cannot expand operand");
}

// Sums a broadcast gradient back down to the operand's shape.
MatrixXd reduce_to(const MatrixXd& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return MatrixXd::Constant(1, 1, g.sum());
  if (cols == 1) return g.rowwise().sum();
  if (rows == 1) return g.colwise().sum();
  throw DimensionMismatch("autodiff: cannot reduce gradient");
}

template <typename Fn>
Var unary(const Var& a, MatrixXd value, Fn local_grad) {
  return tape_of(a).push(std::move(value), {a},
                         [a, local_grad](Tape& t, const MatrixXd& g) {
                           t.accumulate(a, local_grad(g));
                         });
}

}  // namespace

const MatrixXd& Var::value() const { return tape_->nodes_[static_cast<std::size_t>(id_)].value; }

double Var::scalar() const {
  const MatrixXd& v = value();
  if (v.size() != 1) throw DimensionMismatch("autodiff: scalar() on non-scalar");
  return v(0, 0);
}

bool Var::needs_grad() const { return tape_->nodes_[static_cast<std::size_t>(id_)].needs_grad; }

Var Tape::constant(MatrixXd value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::variable(MatrixXd value) {
  nodes_.push_back(Node{std::move(value), {}, {}, record_});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::push(MatrixXd value, std::initializer_list<Var> parents, Backward backward) {
  bool needs = false;
  if (record_) {
    for (const Var& p : parents) needs = needs || p.needs_grad();
  }
  Node node{std::move(value), {}, {}, needs};
  if (needs) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(const Var& v, const MatrixXd& g) {
  Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& output) {
  if (!record_) throw InvalidArgument("autodiff: backward on a non-recording tape");
  if (output.value().size() != 1) throw DimensionMismatch("autodiff: backward needs a scalar output");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  accumulate(output, MatrixXd::Ones(1, 1));
  for (int i = output.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure may accumulate into earlier nodes only, so n.grad is stable.
    n.backward(*this, n.grad);
  }
}

MatrixXd Tape::grad(const Var& v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  if (n.grad.size() == 0) return MatrixXd::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var operator+(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const auto r = broadcast_dim(a.rows(), b.rows());
  const auto c = broadcast_dim(a.cols(), b.cols());
  MatrixXd v = expand(a.value(), r, c) + expand(b.value(), r, c);
  return t.push(std::move(v), {a, b}, [a, b](Tape& tp, const MatrixXd& g) {
    tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    tp.accumulate(b, reduce_to(g, b.rows(), b.cols()));
  });
}

Var operator-(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const auto r = broadcast_dim(a.rows(), b.rows());
  const auto c = broadcast_dim(a.cols(), b.cols());
  MatrixXd v = expand(a.value(), r, c) - expand(b.value(), r, c);
  return t.push(std::move(v), {a, b}, [a, b](Tape& tp, const MatrixXd& g) {
    tp.accumulate(a, reduce_to(g, a.rows(), a.cols()));
    tp.accumulate(b, reduce_to(-g, b.rows(), b.cols()));
  });
}

Var operator-(const Var& a) {
  return unary(a, -a.value(), [](const MatrixXd& g) { return MatrixXd(-g); });
}

Var cmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const auto r = broadcast_dim(a.rows(), b.rows());
  const auto c = broadcast_dim(a.cols(), b.cols());
  MatrixXd ea = expand(a.value(), r, c);
  MatrixXd eb = expand(b.value(), r, c);
  MatrixXd v = ea.cwiseProduct(eb);
  return t.push(std::move(v), {a, b}, [a, b, ea, eb](Tape& tp, const MatrixXd& g) {
    if (a.needs_grad()) tp.accumulate(a, reduce_to(g.cwiseProduct(eb), a.rows(), a.cols()));
    if (b.needs_grad()) tp.accumulate(b, reduce_to(g.cwiseProduct(ea), b.rows(), b.cols()));
  });
}

Var cdiv(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  const auto r = broadcast_dim(a.rows(), b.rows());
  const auto c = broadcast_dim(a.cols(), b.cols());
  MatrixXd ea = expand(a.value(), r, c);
  MatrixXd eb = expand(b.value(), r, c);
  MatrixXd v = ea.cwiseQuotient(eb);
  return t.push(std::move(v), {a, b}, [a, b, eb, v](Tape& tp, const MatrixXd& g) {
    if (a.needs_grad()) tp.accumulate(a, reduce_to(g.cwiseQuotient(eb), a.rows(), a.cols()));
    if (b.needs_grad()) {
      MatrixXd gb = -g.cwiseProduct(v).cwiseQuotient(eb);
      tp.accumulate(b, reduce_to(gb, b.rows(), b.cols()));
    }
  });
}

Var scale(const Var& a, double s) {
  return unary(a, a.value() * s, [s](const MatrixXd& g) { return MatrixXd(g * s); });
}

Var add_scalar(const Var& a, double s) {
  return unary(a, a.value().array() + s, [](const MatrixXd& g) { return g; });
}

Var exp(const Var& a) {
  MatrixXd v = a.value().array().exp();
  return unary(a, v, [v](const MatrixXd& g) { return MatrixXd(g.cwiseProduct(v)); });
}

Var log(const Var& a) {
  MatrixXd x = a.value();
  return unary(a, x.array().log(), [x](const MatrixXd& g) { return MatrixXd(g.cwiseQuotient(x)); });
}

Var sin(const Var& a) {
  MatrixXd x = a.value();
  return unary(a, x.array().sin(), [x](const MatrixXd& g) {
    return MatrixXd(g.array() * x.array().cos());
  });
}

Var cos(const Var& a) {
  MatrixXd x = a.value();
  return unary(a, x.array().cos(), [x](const MatrixXd& g) {
    return MatrixXd(-g.array() * x.array().sin());
  });
}

Var sqrt(const Var& a) {
  MatrixXd v = a.value().array().sqrt();
  return unary(a, v, [v](const MatrixXd& g) { return MatrixXd(0.5 * g.array() / v.array()); });
}

Var square(const Var& a) {
  MatrixXd x = a.value();
  return unary(a, x.array().square(), [x](const MatrixXd& g) {
    return MatrixXd(2.0 * g.array() * x.array());
  });
}

Var normal_cdf(const Var& a) {
  MatrixXd x = a.value();
  MatrixXd v = x.unaryExpr([](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); });
  return unary(a, v, [x](const MatrixXd& g) {
    MatrixXd pdf = x.unaryExpr([](double z) {
      return std::exp(-0.5 * z * z) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    });
    return MatrixXd(g.cwiseProduct(pdf));
  });
}

Var atan2(const Var& y, const Var& x) {
  Tape& t = tape_of(y, x);
  if (y.rows() != x.rows() || y.cols() != x.cols()) throw DimensionMismatch("autodiff: atan2 shapes");
  const MatrixXd yv = y.value();
  const MatrixXd xv = x.value();
  MatrixXd v = yv.binaryExpr(xv, [](double a, double b) { return std::atan2(a, b); });
  return t.push(std::move(v), {y, x}, [y, x, yv, xv](Tape& tp, const MatrixXd& g) {
    MatrixXd r2 = xv.array().square() + yv.array().square();
    tp.accumulate(y, MatrixXd(g.array() * xv.array() / r2.array()));
    tp.accumulate(x, MatrixXd(-g.array() * yv.array() / r2.array()));
  });
}

Var sum(const Var& a) {
  const auto r = a.rows();
  const auto c = a.cols();
  return unary(a, MatrixXd::Constant(1, 1, a.value().sum()), [r, c](const MatrixXd& g) {
    return MatrixXd(MatrixXd::Constant(r, c, g(0, 0)));
  });
}

Var rowsum(const Var& a) {
  const auto c = a.cols();
  return unary(a, a.value().rowwise().sum(), [c](const MatrixXd& g) {
    return MatrixXd(g.replicate(1, c));
  });
}

Var colsum(const Var& a) {
  const auto r = a.rows();
  return unary(a, a.value().colwise().sum(), [r](const MatrixXd& g) {
    return MatrixXd(g.replicate(r, 1));
  });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) throw DimensionMismatch("autodiff: matmul inner dimensions differ");
  MatrixXd v = a.value() * b.value();
  return t.push(std::move(v), {a, b}, [a, b](Tape& tp, const MatrixXd& g) {
    if (a.needs_grad()) tp.accumulate(a, g * b.value().transpose());
    if (b.needs_grad()) tp.accumulate(b, a.value().transpose() * g);
  });
}

Var transpose(const Var& a) {
  return unary(a, a.value().transpose(), [](const MatrixXd& g) { return MatrixXd(g.transpose()); });
}

Var inverse(const Var& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("autodiff: inverse of non-square matrix");
  Eigen::PartialPivLU<MatrixXd> lu(a.value());
  MatrixXd inv = lu.inverse();
  if (!inv.allFinite()) throw SingularInput("autodiff: singular matrix in inverse");
  return unary(a, inv, [inv](const MatrixXd& g) {
    return MatrixXd(-inv.transpose() * g * inv.transpose());
  });
}

Var logdet(const Var& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("autodiff: logdet of non-square matrix");
  Eigen::PartialPivLU<MatrixXd> lu(a.value());
  const double det = lu.determinant();
  if (!(det > 0.0) || !std::isfinite(det)) throw SingularInput("autodiff: logdet needs a positive determinant");
  MatrixXd inv_t = lu.inverse().transpose();
  return unary(a, MatrixXd::Constant(1, 1, std::log(det)), [inv_t](const MatrixXd& g) {
    return MatrixXd(g(0, 0) * inv_t);
  });
}

Var symmetrize(const Var& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("autodiff: symmetrize of non-square matrix");
  MatrixXd v = 0.5 * (a.value() + a.value().transpose());
  return unary(a, v, [](const MatrixXd& g) { return MatrixXd(0.5 * (g + g.transpose())); });
}

Var diag(const Var& v) {
  if (v.cols() != 1) throw DimensionMismatch("autodiff: diag expects a column vector");
  MatrixXd d = v.value().col(0).asDiagonal();
  return unary(v, d, [](const MatrixXd& g) { return MatrixXd(g.diagonal()); });
}

Var diagonal(const Var& a) {
  const auto r = a.rows();
  const auto c = a.cols();
  return unary(a, a.value().diagonal(), [r, c](const MatrixXd& g) {
    MatrixXd out = MatrixXd::Zero(r, c);
    out.diagonal() = g.col(0);
    return out;
  });
}

Var block(const Var& a, Eigen::Index row, Eigen::Index col, Eigen::Index rows,
          Eigen::Index cols) {
  if (row < 0 || col < 0 || row + rows > a.rows() || col + cols > a.cols()) {
    throw DimensionMismatch("autodiff: block out of range");
  }
  const auto r = a.rows();
  const auto c = a.cols();
  return unary(a, a.value().block(row, col, rows, cols),
               [r, c, row, col, rows, cols](const MatrixXd& g) {
                 MatrixXd out = MatrixXd::Zero(r, c);
                 out.block(row, col, rows, cols) = g;
                 return out;
               });
}

Var vstack(const Var& top, const Var& bottom) {
  Tape& t = tape_of(top, bottom);
  if (top.cols() != bottom.cols()) throw DimensionMismatch("autodiff: vstack column mismatch");
  MatrixXd v(top.rows() + bottom.rows(), top.cols());
  v << top.value(), bottom.value();
  const auto split = top.rows();
  return t.push(std::move(v), {top, bottom}, [top, bottom, split](Tape& tp, const MatrixXd& g) {
    tp.accumulate(top, g.topRows(split));
    tp.accumulate(bottom, g.bottomRows(g.rows() - split));
  });
}

Var hstack(const Var& left, const Var& right) {
  Tape& t = tape_of(left, right);
  if (left.rows() != right.rows()) throw DimensionMismatch("autodiff: hstack row mismatch");
  MatrixXd v(left.rows(), left.cols() + right.cols());
  v << left.value(), right.value();
  const auto split = left.cols();
  return t.push(std::move(v), {left, right}, [left, right, split](Tape& tp, const MatrixXd& g) {
    tp.accumulate(left, g.leftCols(split));
    tp.accumulate(right, g.rightCols(g.cols() - split));
  });
}

Var se_pair(const Var& a, const Var& b, const Var& t, const Var& la, const Var& lb,
            const Var& c) {
  Tape& tp = tape_of(a, b);
  const MatrixXd& av = a.value();
  const MatrixXd& bv = b.value();
  const MatrixXd& tv = t.value();
  if (av.cols() != bv.cols() || tv.rows() != av.cols() || tv.cols() != av.cols() ||
      la.rows() != av.rows() || lb.rows() != bv.rows() || c.value().size() != 1) {
    throw DimensionMismatch("autodiff: se_pair shapes");
  }
  const MatrixXd at = av * tv;
  const MatrixXd bt = bv * tv;
  const Eigen::VectorXd qa = 0.5 * (at.cwiseProduct(av)).rowwise().sum() + la.value().col(0);
  const Eigen::VectorXd qb = 0.5 * (bt.cwiseProduct(bv)).rowwise().sum() + lb.value().col(0);
  MatrixXd q = at * bv.transpose();
  q.colwise() += qa;
  q.rowwise() += qb.transpose();
  q.array() += c.scalar();
  q = q.array().exp();
  return tp.push(q, {a, b, t, la, lb, c}, [a, b, t, la, lb, c, q, at, bt](Tape& tape, const MatrixXd& g) {
    const MatrixXd w = g.cwiseProduct(q);
    const Eigen::VectorXd rw = w.rowwise().sum();
    const Eigen::VectorXd cw = w.colwise().sum().transpose();
    const MatrixXd& av = a.value();
    const MatrixXd& bv = b.value();
    if (a.needs_grad()) tape.accumulate(a, rw.asDiagonal() * at + w * bt);
    if (b.needs_grad()) tape.accumulate(b, cw.asDiagonal() * bt + w.transpose() * at);
    if (t.needs_grad()) {
      MatrixXd cross = av.transpose() * w * bv;
      MatrixXd gt = 0.5 * (av.transpose() * rw.asDiagonal() * av + bv.transpose() * cw.asDiagonal() * bv +
                           cross + cross.transpose());
      tape.accumulate(t, gt);
    }
    tape.accumulate(la, MatrixXd(rw));
    tape.accumulate(lb, MatrixXd(cw));
    tape.accumulate(c, MatrixXd::Constant(1, 1, w.sum()));
  });
}

}  // namespace safepilco::ad

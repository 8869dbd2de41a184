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

#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// Every value is a MatrixXd (vectors are n x 1). Operations record a
// vector-Jacobian product closure on the tape when at least one operand
// requires a gradient; constant subexpressions cost nothing extra.

#include <deque>
#include <functional>

#include <Eigen/Dense>

namespace safepilco::ad {

using Eigen::MatrixXd;

class Tape;

class Var {
 public:
  Var() = default;

  const MatrixXd& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool needs_grad() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const MatrixXd& grad_out)>;

  /// With record == false no closures are kept; the tape is a plain
  /// evaluator.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(MatrixXd value);
  Var variable(MatrixXd value);

  Var push(MatrixXd value, std::initializer_list<Var> parents, Backward backward);

  /// Seeds d(output)/d(output) = 1 for a 1x1 output and runs every recorded
  /// closure in reverse order.
  void backward(const Var& output);

  /// Gradient accumulated at v; zero matrix of v's shape if none.
  MatrixXd grad(const Var& v) const;

  void accumulate(const Var& v, const MatrixXd& g);

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  friend class Var;
  struct Node {
    MatrixXd value;
    MatrixXd grad;
    Backward backward;
    bool needs_grad = false;
  };
  std::deque<Node> nodes_;
  bool record_;
};

// Elementwise binary ops broadcast 1x1, r x 1 and 1 x c operands.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator-(const Var& a);
Var cmul(const Var& a, const Var& b);
Var cdiv(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var exp(const Var& a);
Var log(const Var& a);
Var sin(const Var& a);
Var cos(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
/// Standard normal CDF.
Var normal_cdf(const Var& a);
/// Elementwise atan2(y, x); operands must share a shape.
Var atan2(const Var& y, const Var& x);

Var sum(const Var& a);
/// Sum across columns (result r x 1).
Var rowsum(const Var& a);
/// Sum across rows (result 1 x c).
Var colsum(const Var& a);

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var inverse(const Var& a);
/// log|det A| for a matrix with positive determinant.
Var logdet(const Var& a);
Var symmetrize(const Var& a);
Var diag(const Var& v);
Var diagonal(const Var& a);

Var block(const Var& a, Eigen::Index row, Eigen::Index col, Eigen::Index rows,
          Eigen::Index cols);
Var vstack(const Var& top, const Var& bottom);
Var hstack(const Var& left, const Var& right);

/// Q(i, j) = exp(la(i) + lb(j) + c + 0.5 * z_ij^T T z_ij) with
/// z_ij = a.row(i) + b.row(j), T symmetric. The second-moment kernel of
/// squared-exponential moment matching.
Var se_pair(const Var& a, const Var& b, const Var& t, const Var& la,
            const Var& lb, const Var& c);

}  // namespace safepilco::ad

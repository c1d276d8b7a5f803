#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "claimlm/matrix.hpp"

namespace claimlm {

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  bool requires_grad() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
// sweep visits consumers before producers and each node exactly once.
// A tape is confined to one thread.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var leaf(Matrix value, bool requires_grad = false);
  Var constant(Matrix value) { return leaf(std::move(value), false); }

  // Appends an op result. `backward` is kept only when recording and some
  // parent needs a gradient.
  Var push(Matrix value, std::initializer_list<Var> parents, Backward backward);
  Var push(Matrix value, std::span<const Var> parents, Backward backward);

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Mutable gradient buffer, allocated (zeroed) on first touch.
  Matrix& grad_buffer(std::size_t id);

  // Seeds d(root)/d(root) = 1 (root must be 1x1) and sweeps backward.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  bool record_;
};

namespace ad {

Var matmul(Var a, Var b);     // a * b
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var mul(Var a, Var b);  // elementwise
Var scale(Var a, double s);
Var add_row_vector(Var a, Var row);  // broadcast 1 x c over rows
Var silu(Var a);
Var rmsnorm_rows(Var x, Var gamma, double eps);
Var causal_mask(Var scores);  // entries with col > row set to -inf
Var softmax_rows(Var x, double temperature = 1.0);
Var slice_cols(Var a, std::size_t begin, std::size_t width);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var table, std::span<const int> ids);
Var rope(Var x, std::size_t head_dim, std::size_t start_pos, double base);
Var sum(Var a);  // 1x1
// Elementwise product with a constant matrix (dropout masks).
Var mul_constant(Var a, const Matrix& c);

}  // namespace ad

// Central-difference gradient check of a scalar function. Returns the max over
// coordinates of |analytic - numeric| / max(1, |analytic|).
double grad_check(const std::function<double(const Matrix&)>& f, const Matrix& analytic_grad,
                  const Matrix& point, double step);

// Convenience: builds the analytic gradient via a tape-based function.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& point, double step);

}  // namespace claimlm

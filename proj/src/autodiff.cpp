#include "claimlm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "claimlm/error.hpp"

namespace claimlm {

const Matrix& Var::value() const { return tape->value(id); }
const Matrix& Var::grad() const { return tape->grad(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, requires_grad && record_});
  return Var{this, nodes_.size() - 1};
}

Var Tape::push(Matrix value, std::initializer_list<Var> parents, Backward backward) {
  return push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
              std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> parents, Backward backward) {
  bool needs = false;
  for (const Var& p : parents) needs = needs || nodes_[p.id].requires_grad;
  needs = needs && record_;
  nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

const Matrix& Tape::grad(std::size_t id) const {
  return nodes_[id].grad;
}

Matrix& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || !n.grad.same_shape(n.value)) {
    n.grad = Matrix(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ParameterError("backward: variable belongs to another tape");
  const Matrix& v = nodes_[root.id].value;
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("backward root must be 1x1, got " + v.shape_string());
  if (!nodes_[root.id].requires_grad) return;
  grad_buffer(root.id)(0, 0) = 1.0;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

namespace ad {
namespace {

// Adds `g` into the parent's gradient if it participates in differentiation.
bool wants(Tape& t, Var p) { return t.requires_grad(p.id); }

void shape_check(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  shape_check(A.cols() == B.rows(),
              "matmul: incompatible shapes " + A.shape_string() + " and " + B.shape_string());
  Matrix out(A.rows(), B.cols());
  gemm_nn_acc(A, B, out);
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (wants(t, a)) gemm_nt_acc(g, t.value(b.id), t.grad_buffer(a.id));
    if (wants(t, b)) gemm_tn_acc(t.value(a.id), g, t.grad_buffer(b.id));
  });
}

Var matmul_nt(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  shape_check(A.cols() == B.cols(),
              "matmul_nt: incompatible shapes " + A.shape_string() + " and " + B.shape_string());
  Matrix out(A.rows(), B.rows());
  gemm_nt_acc(A, B, out);
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (wants(t, a)) gemm_nn_acc(g, t.value(b.id), t.grad_buffer(a.id));
    if (wants(t, b)) gemm_tn_acc(g, t.value(a.id), t.grad_buffer(b.id));
  });
}

Var add(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  shape_check(A.same_shape(B), "add: " + A.shape_string() + " vs " + B.shape_string());
  Matrix out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += B.data()[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (Var p : {a, b}) {
      if (!wants(t, p)) continue;
      Matrix& gp = t.grad_buffer(p.id);
      for (std::size_t i = 0; i < g.size(); ++i) gp.data()[i] += g.data()[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Matrix& A = a.value();
  const Matrix& B = b.value();
  shape_check(A.same_shape(B), "mul: " + A.shape_string() + " vs " + B.shape_string());
  Matrix out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= B.data()[i];
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (wants(t, a)) {
      Matrix& ga = t.grad_buffer(a.id);
      const Matrix& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * bv.data()[i];
    }
    if (wants(t, b)) {
      Matrix& gb = t.grad_buffer(b.id);
      const Matrix& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * av.data()[i];
    }
  });
}

Var mul_constant(Var a, const Matrix& c) {
  const Matrix& A = a.value();
  shape_check(A.same_shape(c), "mul_constant: " + A.shape_string() + " vs " + c.shape_string());
  Matrix out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c.data()[i];
  return a.tape->push(std::move(out), {a}, [a, c](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * c.data()[i];
  });
}

Var scale(Var a, double s) {
  Matrix out = a.value();
  for (double& v : out.data()) v *= s;
  return a.tape->push(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * s;
  });
}

Var add_row_vector(Var a, Var row) {
  const Matrix& A = a.value();
  const Matrix& R = row.value();
  shape_check(R.rows() == 1 && R.cols() == A.cols(),
              "add_row_vector: " + A.shape_string() + " vs " + R.shape_string());
  Matrix out = A;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += R(0, j);
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    if (wants(t, a)) {
      Matrix& ga = t.grad_buffer(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i];
    }
    if (wants(t, row)) {
      Matrix& gr = t.grad_buffer(row.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr(0, j) += g(i, j);
    }
  });
}

Var silu(Var a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = v / (1.0 + std::exp(-v));
  return a.tape->push(std::move(out), {a}, [a](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& x = t.value(a.id);
    Matrix& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
      ga.data()[i] += g.data()[i] * s * (1.0 + x.data()[i] * (1.0 - s));
    }
  });
}

Var rmsnorm_rows(Var x, Var gamma, double eps) {
  const Matrix& X = x.value();
  const Matrix& G = gamma.value();
  shape_check(G.rows() == 1 && G.cols() == X.cols(),
              "rmsnorm: input " + X.shape_string() + " gamma " + G.shape_string());
  const std::size_t n = X.rows(), d = X.cols();
  Matrix out(n, d);
  std::vector<double> inv(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (double v : X.row(i)) ss += v * v;
    const double denom = std::sqrt(ss / static_cast<double>(d) + eps);
    inv[i] = denom > 0.0 ? 1.0 / denom : 0.0;
    for (std::size_t j = 0; j < d; ++j) out(i, j) = X(i, j) * inv[i] * G(0, j);
  }
  return x.tape->push(std::move(out), {x, gamma}, [x, gamma, inv](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& X = t.value(x.id);
    const Matrix& G = t.value(gamma.id);
    const std::size_t n = X.rows(), d = X.cols();
    if (wants(t, gamma)) {
      Matrix& gg = t.grad_buffer(gamma.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gg(0, j) += g(i, j) * X(i, j) * inv[i];
    }
    if (wants(t, x)) {
      Matrix& gx = t.grad_buffer(x.id);
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g(i, j) * G(0, j) * X(i, j);
        const double c = inv[i] * inv[i] * inv[i] * dot / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) gx(i, j) += inv[i] * G(0, j) * g(i, j) - X(i, j) * c;
      }
    }
  });
}

Var causal_mask(Var scores) {
  Matrix out = scores.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = i + 1; j < out.cols(); ++j) out(i, j) = kNegInf;
  return scores.tape->push(std::move(out), {scores}, [scores](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gs = t.grad_buffer(scores.id);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j <= i && j < g.cols(); ++j) gs(i, j) += g(i, j);
  });
}

Var softmax_rows(Var x, double temperature) {
  Matrix out = claimlm::softmax_rows(x.value(), temperature);
  return x.tape->push(std::move(out), {x}, [x, temperature](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    const Matrix& y = t.value(self);
    Matrix& gx = t.grad_buffer(x.id);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) gx(i, j) += y(i, j) * (g(i, j) - dot) / temperature;
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t width) {
  const Matrix& A = a.value();
  shape_check(begin + width <= A.cols(), "slice_cols out of range for " + A.shape_string());
  Matrix out(A.rows(), width);
  for (std::size_t i = 0; i < A.rows(); ++i)
    for (std::size_t j = 0; j < width; ++j) out(i, j) = A(i, begin + j);
  return a.tape->push(std::move(out), {a}, [a, begin, width](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < width; ++j) ga(i, begin + j) += g(i, j);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape* tape = parts.front().tape;
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    shape_check(p.value().rows() == rows, "concat_cols: row mismatch");
    cols += p.value().cols();
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& P = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) out(i, off + j) = P(i, j);
    off += P.cols();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return tape->push(std::move(out), parts, [saved](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    std::size_t off = 0;
    for (const Var& p : saved) {
      const std::size_t w = t.value(p.id).cols();
      if (t.requires_grad(p.id)) {
        Matrix& gp = t.grad_buffer(p.id);
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gp(i, j) += g(i, off + j);
      }
      off += w;
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Matrix& T = table.value();
  Matrix out(ids.size(), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= T.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(T.rows()) + " rows");
    }
    auto src = T.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return table.tape->push(std::move(out), {table}, [table, saved](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad_buffer(table.id);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto dst = gt.row(static_cast<std::size_t>(saved[i]));
      auto src = g.row(i);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

namespace {

// Rotates interleaved pairs of each head; `sign` = -1 applies the inverse.
void rotate_pairs(const Matrix& in, Matrix& out, std::size_t head_dim, std::size_t start_pos,
                  double base, double sign, bool accumulate) {
  const std::size_t half = head_dim / 2;
  std::vector<double> freq(half);
  for (std::size_t k = 0; k < half; ++k)
    freq[k] = std::pow(base, -2.0 * static_cast<double>(k) / static_cast<double>(head_dim));
  for (std::size_t s = 0; s < in.rows(); ++s) {
    const double pos = static_cast<double>(start_pos + s);
    for (std::size_t k = 0; k < half; ++k) {
      const double angle = sign * pos * freq[k];
      const double c = std::cos(angle), sn = std::sin(angle);
      for (std::size_t h = 0; h < in.cols(); h += head_dim) {
        const std::size_t j = h + 2 * k;
        const double x0 = in(s, j), x1 = in(s, j + 1);
        const double y0 = x0 * c - x1 * sn;
        const double y1 = x0 * sn + x1 * c;
        if (accumulate) {
          out(s, j) += y0;
          out(s, j + 1) += y1;
        } else {
          out(s, j) = y0;
          out(s, j + 1) = y1;
        }
      }
    }
  }
}

}  // namespace

Var rope(Var x, std::size_t head_dim, std::size_t start_pos, double base) {
  const Matrix& X = x.value();
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ShapeError("rope: head dimension " + std::to_string(head_dim) + " must be even");
  }
  shape_check(X.cols() % head_dim == 0, "rope: width " + X.shape_string() + " not a multiple of head dim");
  Matrix out(X.rows(), X.cols());
  rotate_pairs(X, out, head_dim, start_pos, base, 1.0, false);
  return x.tape->push(std::move(out), {x}, [x, head_dim, start_pos, base](Tape& t, std::size_t self) {
    rotate_pairs(t.grad(self), t.grad_buffer(x.id), head_dim, start_pos, base, -1.0, true);
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape->push(Matrix(1, 1, s), {a}, [a](Tape& t, std::size_t self) {
    const double g = t.grad(self)(0, 0);
    Matrix& ga = t.grad_buffer(a.id);
    for (double& v : ga.data()) v += g;
  });
}

}  // namespace ad

double grad_check(const std::function<double(const Matrix&)>& f, const Matrix& analytic_grad,
                  const Matrix& point, double step) {
  if (!(step > 0.0)) throw ParameterError("grad_check step must be positive");
  if (!analytic_grad.same_shape(point)) {
    throw ShapeError("grad_check: gradient " + analytic_grad.shape_string() + " vs point " +
                     point.shape_string());
  }
  Matrix probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double fp = f(probe);
    probe.data()[i] = orig - step;
    const double fm = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("non-finite function value at coordinate " + std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * step);
    const double analytic = analytic_grad.data()[i];
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
  }
  return worst;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& point, double step) {
  Tape tape;
  Var x = tape.leaf(point, true);
  Var y = f(tape, x);
  tape.backward(y);
  Matrix analytic = x.grad().empty() ? Matrix(point.rows(), point.cols()) : x.grad();
  auto eval = [&f](const Matrix& p) {
    Tape t(false);
    Var v = t.leaf(p, false);
    return f(t, v).value()(0, 0);
  };
  return grad_check(eval, analytic, point, step);
}

}  // namespace claimlm

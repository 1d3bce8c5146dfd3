#include "newscast/autodiff.hpp"

#include <cmath>

#include "newscast/error.hpp"

namespace newscast::ad {

Var Tape::push(Matrix value, std::function<void(Tape&, std::size_t)> back) {
  Node n;
  n.value = std::move(value);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return {nodes_.size() - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::parameter(const Matrix& value, Matrix* grad) {
  Var v = push(value, nullptr);
  nodes_[v.id].sink = grad;
  return v;
}

void Tape::backward(Var loss) {
  if (val(loss.id).size() != 1) throw ParameterError("backward: loss must be scalar");
  for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
  nodes_[loss.id].grad(0, 0) = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back) n.back(*this, i);
    if (n.sink) *n.sink += n.grad;
  }
}

// Products in the forward pass are coefficient-based so that each output row
// depends only on its input row; predictions are then independent of batch size.

Var Tape::linear(Var x, Var w, Var b) {
  Matrix out = val(x.id).lazyProduct(val(w.id).transpose());
  out.rowwise() += val(b.id).row(0);
  return push(std::move(out), [x, w, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.grad(x.id).noalias() += g * t.val(w.id);
    t.grad(w.id).noalias() += g.transpose() * t.val(x.id);
    t.grad(b.id).row(0) += g.colwise().sum();
  });
}

Var Tape::linear_nobias(Var x, Var w) {
  return push(val(x.id).lazyProduct(val(w.id).transpose()), [x, w](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.grad(x.id).noalias() += g * t.val(w.id);
    t.grad(w.id).noalias() += g.transpose() * t.val(x.id);
  });
}

Var Tape::matmul(Var a, Var b) {
  return push(val(a.id).lazyProduct(val(b.id)), [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    t.grad(a.id).noalias() += g * t.val(b.id).transpose();
    t.grad(b.id).noalias() += t.val(a.id).transpose() * g;
  });
}

Var Tape::add(Var a, Var b) {
  return push(val(a.id) + val(b.id), [a, b](Tape& t, std::size_t self) {
    t.grad(a.id) += t.grad(self);
    t.grad(b.id) += t.grad(self);
  });
}

Var Tape::sub(Var a, Var b) {
  return push(val(a.id) - val(b.id), [a, b](Tape& t, std::size_t self) {
    t.grad(a.id) += t.grad(self);
    t.grad(b.id) -= t.grad(self);
  });
}

Var Tape::mul(Var a, Var b) {
  return push(val(a.id).cwiseProduct(val(b.id)), [a, b](Tape& t, std::size_t self) {
    t.grad(a.id) += t.grad(self).cwiseProduct(t.val(b.id));
    t.grad(b.id) += t.grad(self).cwiseProduct(t.val(a.id));
  });
}

Var Tape::one_minus(Var a) {
  return push((1.0 - val(a.id).array()).matrix(),
              [a](Tape& t, std::size_t self) { t.grad(a.id) -= t.grad(self); });
}

Var Tape::sigmoid(Var a) {
  Matrix out = (1.0 / (1.0 + (-val(a.id).array()).exp())).matrix();
  return push(std::move(out), [a](Tape& t, std::size_t self) {
    const auto s = t.val(self).array();
    t.grad(a.id).array() += t.grad(self).array() * s * (1.0 - s);
  });
}

Var Tape::tanh(Var a) {
  return push(val(a.id).array().tanh().matrix(), [a](Tape& t, std::size_t self) {
    const auto y = t.val(self).array();
    t.grad(a.id).array() += t.grad(self).array() * (1.0 - y * y);
  });
}

Var Tape::relu(Var a) {
  return push(val(a.id).cwiseMax(0.0), [a](Tape& t, std::size_t self) {
    t.grad(a.id).array() += (t.val(a.id).array() > 0.0).select(t.grad(self).array(), 0.0);
  });
}

Var Tape::mask(Var a, Matrix m) {
  Matrix out = val(a.id).cwiseProduct(m);
  return push(std::move(out), [a, m = std::move(m)](Tape& t, std::size_t self) {
    t.grad(a.id) += t.grad(self).cwiseProduct(m);
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  Eigen::Index rows = val(parts.front().id).rows();
  Eigen::Index cols = 0;
  for (auto p : parts) {
    if (val(p.id).rows() != rows) throw ParameterError("concat_cols: row mismatch");
    cols += val(p.id).cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (auto p : parts) {
    out.middleCols(c, val(p.id).cols()) = val(p.id);
    c += val(p.id).cols();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), [ids = std::move(ids)](Tape& t, std::size_t self) {
    Eigen::Index c = 0;
    for (auto p : ids) {
      const auto w = t.val(p.id).cols();
      t.grad(p.id) += t.grad(self).middleCols(c, w);
      c += w;
    }
  });
}

Var Tape::softmax_row(Var logits) {
  const Matrix& z = val(logits.id);
  if (z.rows() != 1) throw ParameterError("softmax_row expects a single row");
  Matrix e = (z.array() - z.maxCoeff()).exp().matrix();
  e /= e.sum();
  return push(std::move(e), [logits](Tape& t, std::size_t self) {
    const Matrix& s = t.val(self);
    const Matrix& g = t.grad(self);
    const double dot = s.cwiseProduct(g).sum();
    t.grad(logits.id).array() += s.array() * (g.array() - dot);
  });
}

Var Tape::weighted_sum(std::span<const Var> terms, Var weights) {
  const Matrix& w = val(weights.id);
  if (static_cast<std::size_t>(w.cols()) != terms.size()) throw ParameterError("weighted_sum: weight count mismatch");
  Matrix out = Matrix::Zero(val(terms[0].id).rows(), val(terms[0].id).cols());
  for (std::size_t k = 0; k < terms.size(); ++k) out += w(0, static_cast<Eigen::Index>(k)) * val(terms[k].id);
  std::vector<Var> ids(terms.begin(), terms.end());
  return push(std::move(out), [ids = std::move(ids), weights](Tape& t, std::size_t self) {
    const Matrix& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      t.grad(ids[k].id) += t.val(weights.id)(0, kk) * g;
      t.grad(weights.id)(0, kk) += g.cwiseProduct(t.val(ids[k].id)).sum();
    }
  });
}

Var Tape::mse(Var prediction, const Matrix& target) {
  const Matrix& p = val(prediction.id);
  if (p.rows() != target.rows() || p.cols() != target.cols()) throw ParameterError("mse: shape mismatch");
  Matrix diff = p - target;
  const double n = static_cast<double>(diff.size());
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm() / n;
  return push(std::move(out), [prediction, diff = std::move(diff), n](Tape& t, std::size_t self) {
    t.grad(prediction.id) += (2.0 * t.grad(self)(0, 0) / n) * diff;
  });
}

}  // namespace newscast::ad

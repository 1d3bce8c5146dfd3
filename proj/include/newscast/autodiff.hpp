#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace newscast::ad {

using Matrix = Eigen::MatrixXd;

struct Var {
  std::size_t id = 0;
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order; backward() walks them in reverse.
class Tape {
 public:
  Var constant(Matrix value);
  // Leaf whose gradient is accumulated into *grad by backward().
  Var parameter(const Matrix& value, Matrix* grad);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1. `loss` must be 1x1.
  void backward(Var loss);

  Var linear(Var x, Var weight, Var bias);  // x * weight^T + bias (bias broadcast over rows)
  Var linear_nobias(Var x, Var weight);    // x * weight^T
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var one_minus(Var a);
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var relu(Var a);
  Var mask(Var a, Matrix m);  // elementwise product with a constant
  Var concat_cols(std::span<const Var> parts);
  Var softmax_row(Var logits);  // 1 x K
  // sum_k weights(0, k) * terms[k]
  Var weighted_sum(std::span<const Var> terms, Var weights);
  Var mse(Var prediction, const Matrix& target);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Matrix* sink = nullptr;
    std::function<void(Tape&, std::size_t)> back;
  };
  Var push(Matrix value, std::function<void(Tape&, std::size_t)> back);
  Matrix& grad(std::size_t id) { return nodes_[id].grad; }
  const Matrix& val(std::size_t id) const { return nodes_[id].value; }

  std::vector<Node> nodes_;
};

}  // namespace newscast::ad

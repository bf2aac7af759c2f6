#pragma once

// Reverse-mode tape over rank-2 double matrices.
//
// Higher-rank data (time x entity x channel) is laid out as stacked row
// blocks; every op documents its row convention. A Tensor is a shared handle
// to a graph node; gradients accumulate into Node::grad during backward().

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

namespace lld::ad {

using Mat = Eigen::MatrixXd;

struct Node {
  Mat value;
  Mat grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Mat& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Mat value, bool requires_grad = false);
  explicit Tensor(std::shared_ptr<Node> node) : n_(std::move(node)) {}

  const Mat& value() const { return n_->value; }
  Mat& mutable_value() { return n_->value; }
  const Mat& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad.size() != 0; }
  Eigen::Index rows() const { return n_->value.rows(); }
  Eigen::Index cols() const { return n_->value.cols(); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  const std::shared_ptr<Node>& node() const { return n_; }
  bool defined() const { return static_cast<bool>(n_); }
  double item() const { return n_->value(0, 0); }
  void zero_grad() { n_->grad.resize(0, 0); }

 private:
  std::shared_ptr<Node> n_;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

// Builds an op result. The backward closure receives the result node and
// must accumulate into the parents' gradients. When no parent needs a
// gradient (or recording is off) the result is a plain constant.
Tensor make_result(Mat value, std::vector<Tensor> parents, std::function<void(Node&)> backward);

Tensor constant(Mat value);

// Seeds d(loss)/d(loss) = 1 and propagates through the recorded graph.
void backward(const Tensor& loss);

}  // namespace lld::ad

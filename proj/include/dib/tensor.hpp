#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Dense>

// Reverse-mode differentiation over 2-D dense tensors.
//
// A Tensor is a shared handle to a node holding a value and (when
// requires_grad is set) a gradient accumulator. Operations record a backward
// closure on a Tape in creation order; Tape::backward replays them in reverse,
// which is a valid reverse-topological order. A tape can be swept once; call
// reset() before recording the next step.
namespace dib::nn {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;  // empty until something is accumulated
  bool requires_grad = false;

  void accumulate(const Matrix<T>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor leaf(Matrix<T> value, bool requires_grad = false) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  const Matrix<T>& grad() const { return node_->grad; }
  Matrix<T>& mutable_grad() { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  void clear_grad() { node_->grad.resize(0, 0); }
  void zero_grad() { node_->grad = Matrix<T>::Zero(rows(), cols()); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  T item() const;

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;

  template <typename U>
  friend class Tape;
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Matrix<T>& upstream)>;

  /// Adds an op output. `backward` receives d(root)/d(output) and must
  /// accumulate into the op's inputs. It is only kept if requires_grad.
  Tensor<T> record(Matrix<T> value, bool requires_grad, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and sweeps the tape. Root must be 1x1.
  /// Throws StateError if this tape was already swept.
  void backward(const Tensor<T>& root);

  void reset();
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Entry {
    std::shared_ptr<Node<T>> output;
    BackwardFn backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

/// x (m x n) plus a row vector bias (1 x n) broadcast over rows.
template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);

/// Mean over rows of -log softmax(logits)[true class], max-shifted.
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, const Matrix<T>& labels_onehot);

/// Scalar node whose value and gradient with respect to `x` are computed
/// outside the tape. Backward adds upstream * grad into x.
template <typename T>
Tensor<T> external_scalar(Tape<T>& tape, const Tensor<T>& x, double value, Matrix<T> grad);

}  // namespace dib::nn

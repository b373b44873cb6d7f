#include "dib/tensor.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dib/errors.hpp"

namespace dib::nn {
namespace {

void require_same_shape(const char* op, Eigen::Index r1, Eigen::Index c1, Eigen::Index r2,
                        Eigen::Index c2) {
  if (r1 != r2 || c1 != c2) {
    throw ArgumentError(fmt::format("{}: shape mismatch {}x{} vs {}x{}", op, r1, c1, r2, c2));
  }
}

}  // namespace

template <typename T>
T Tensor<T>::item() const {
  if (rows() != 1 || cols() != 1) {
    throw ArgumentError(fmt::format("item() on a {}x{} tensor", rows(), cols()));
  }
  return node_->value(0, 0);
}

template <typename T>
Tensor<T> Tape<T>::record(Matrix<T> value, bool requires_grad, BackwardFn backward) {
  if (consumed_) {
    throw StateError("recording on a tape that was already swept; call reset()");
  }
  Tensor<T> out = Tensor<T>::leaf(std::move(value), requires_grad);
  if (requires_grad) {
    entries_.push_back({out.node_, std::move(backward)});
  }
  return out;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& root) {
  if (consumed_) {
    throw StateError("backward called twice on the same tape without reset()");
  }
  if (root.rows() != 1 || root.cols() != 1) {
    throw ArgumentError(
        fmt::format("backward needs a scalar root, got {}x{}", root.rows(), root.cols()));
  }
  consumed_ = true;
  if (!root.requires_grad()) {
    return;
  }
  const auto it = std::find_if(entries_.rbegin(), entries_.rend(),
                               [&](const Entry& e) { return e.output == root.node(); });
  if (it == entries_.rend()) {
    throw ArgumentError("backward root was not recorded on this tape");
  }
  root.node()->accumulate(Matrix<T>::Constant(1, 1, T(1)));
  for (auto e = it; e != entries_.rend(); ++e) {
    if (e->output->grad.size() != 0) {
      e->backward(e->output->grad);
    }
  }
  entries_.clear();
}

template <typename T>
void Tape<T>::reset() {
  entries_.clear();
  consumed_ = false;
}

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw ArgumentError(fmt::format("matmul: {}x{} times {}x{}", a.rows(), a.cols(), b.rows(),
                                    b.cols()));
  }
  Matrix<T> value = a.value() * b.value();
  auto na = a.node();
  auto nb = b.node();
  return tape.record(std::move(value), a.requires_grad() || b.requires_grad(),
                     [na, nb](const Matrix<T>& up) {
                       if (na->requires_grad) {
                         na->accumulate(up * nb->value.transpose());
                       }
                       if (nb->requires_grad) {
                         nb->accumulate(na->value.transpose() * up);
                       }
                     });
}

template <typename T>
Tensor<T> add_bias(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ArgumentError(fmt::format("add_bias: bias {}x{} for input {}x{}", bias.rows(),
                                    bias.cols(), x.rows(), x.cols()));
  }
  Matrix<T> value = x.value();
  value.rowwise() += bias.value().row(0);
  auto nx = x.node();
  auto nb = bias.node();
  return tape.record(std::move(value), x.requires_grad() || bias.requires_grad(),
                     [nx, nb](const Matrix<T>& up) {
                       if (nx->requires_grad) {
                         nx->accumulate(up);
                       }
                       if (nb->requires_grad) {
                         nb->accumulate(up.colwise().sum());
                       }
                     });
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a.rows(), a.cols(), b.rows(), b.cols());
  Matrix<T> value = a.value() + b.value();
  auto na = a.node();
  auto nb = b.node();
  return tape.record(std::move(value), a.requires_grad() || b.requires_grad(),
                     [na, nb](const Matrix<T>& up) {
                       if (na->requires_grad) {
                         na->accumulate(up);
                       }
                       if (nb->requires_grad) {
                         nb->accumulate(up);
                       }
                     });
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T factor) {
  Matrix<T> value = a.value() * factor;
  auto na = a.node();
  return tape.record(std::move(value), a.requires_grad(),
                     [na, factor](const Matrix<T>& up) { na->accumulate(up * factor); });
}

template <typename T>
Tensor<T> relu(Tape<T>& tape, const Tensor<T>& x) {
  Matrix<T> value = x.value().cwiseMax(T(0));
  auto nx = x.node();
  return tape.record(std::move(value), x.requires_grad(), [nx](const Matrix<T>& up) {
    nx->accumulate(Matrix<T>((nx->value.array() > T(0)).select(up.array(), T(0))));
  });
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  Matrix<T> value = Matrix<T>::Constant(1, 1, x.value().sum());
  auto nx = x.node();
  return tape.record(std::move(value), x.requires_grad(), [nx](const Matrix<T>& up) {
    nx->accumulate(Matrix<T>::Constant(nx->value.rows(), nx->value.cols(), up(0, 0)));
  });
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, const Matrix<T>& labels_onehot) {
  require_same_shape("cross_entropy", logits.rows(), logits.cols(), labels_onehot.rows(),
                     labels_onehot.cols());
  const Eigen::Index batch = logits.rows();
  if (batch == 0) {
    throw ArgumentError("cross_entropy on an empty batch");
  }
  for (Eigen::Index i = 0; i < batch; ++i) {
    if (std::abs(labels_onehot.row(i).sum() - T(1)) > T(1e-6)) {
      throw ArgumentError(fmt::format("label row {} does not sum to 1", i));
    }
  }
  const Matrix<T>& z = logits.value();
  Matrix<T> probs(z.rows(), z.cols());
  T total = 0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const T shift = z.row(i).maxCoeff();
    const auto e = (z.row(i).array() - shift).exp();
    const T norm = e.sum();
    probs.row(i) = (e / norm).matrix();
    const T log_norm = std::log(norm) + shift;
    total += log_norm - (labels_onehot.row(i).array() * z.row(i).array()).sum();
  }
  const T inv_batch = T(1) / static_cast<T>(batch);
  auto nz = logits.node();
  Matrix<T> delta = (probs - labels_onehot) * inv_batch;
  return tape.record(Matrix<T>::Constant(1, 1, total * inv_batch), logits.requires_grad(),
                     [nz, delta = std::move(delta)](const Matrix<T>& up) {
                       nz->accumulate(delta * up(0, 0));
                     });
}

template <typename T>
Tensor<T> external_scalar(Tape<T>& tape, const Tensor<T>& x, double value, Matrix<T> grad) {
  require_same_shape("external_scalar", x.rows(), x.cols(), grad.rows(), grad.cols());
  auto nx = x.node();
  return tape.record(Matrix<T>::Constant(1, 1, static_cast<T>(value)), x.requires_grad(),
                     [nx, grad = std::move(grad)](const Matrix<T>& up) {
                       nx->accumulate(grad * up(0, 0));
                     });
}

#define DIB_INSTANTIATE_TENSOR(T)                                                        \
  template class Tensor<T>;                                                              \
  template class Tape<T>;                                                                \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> add_bias(Tape<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                               \
  template Tensor<T> relu(Tape<T>&, const Tensor<T>&);                                   \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                    \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, const Matrix<T>&);        \
  template Tensor<T> external_scalar(Tape<T>&, const Tensor<T>&, double, Matrix<T>);

DIB_INSTANTIATE_TENSOR(float)
DIB_INSTANTIATE_TENSOR(double)

}  // namespace dib::nn

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dib/tensor.hpp"

namespace dib::nn {

/// Fully connected ReLU network. layer_dims = {in, h1, ..., hk, classes}.
/// The bottleneck is the post-ReLU output of the hidden layer whose width is
/// layer_dims[bottleneck_index] (1 <= bottleneck_index <= size-2).
///
/// Copies are deep: a copied Mlp owns its own parameter tensors.
template <typename T>
class Mlp {
 public:
  /// He-normal weights (std sqrt(2/fan_in)) drawn from `seed`, zero biases.
  Mlp(std::vector<int> layer_dims, int bottleneck_index, std::uint64_t seed);

  Mlp(const Mlp& other);
  Mlp& operator=(const Mlp& other);
  Mlp(Mlp&&) noexcept = default;
  Mlp& operator=(Mlp&&) noexcept = default;

  const std::vector<int>& layer_dims() const { return dims_; }
  int bottleneck_index() const { return bottleneck_index_; }
  std::size_t num_layers() const { return weights_.size(); }

  Tensor<T>& weight(std::size_t layer) { return weights_.at(layer); }
  const Tensor<T>& weight(std::size_t layer) const { return weights_.at(layer); }
  Tensor<T>& bias(std::size_t layer) { return biases_.at(layer); }
  const Tensor<T>& bias(std::size_t layer) const { return biases_.at(layer); }

  /// W0, b0, W1, b1, ... in layer order.
  std::vector<Tensor<T>> parameters() const;

  template <typename U>
  Mlp<U> cast() const;

  bool same_parameters(const Mlp& other) const;

 private:
  template <typename U>
  friend class Mlp;
  Mlp() = default;

  std::vector<int> dims_;
  int bottleneck_index_ = 0;
  std::vector<Tensor<T>> weights_;  // fan_in x fan_out
  std::vector<Tensor<T>> biases_;   // 1 x fan_out
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  Tensor<T> bottleneck;
};

/// Taped forward pass. Throws ArgumentError when x has the wrong width.
template <typename T>
ForwardResult<T> forward(const Mlp<T>& mlp, Tape<T>& tape, const Tensor<T>& x);

template <typename T>
struct Activations {
  Matrix<T> logits;
  Matrix<T> bottleneck;
};

/// Same arithmetic as forward() without recording anything.
template <typename T>
Activations<T> infer(const Mlp<T>& mlp, const Matrix<T>& x);

/// argmax of each logits row.
template <typename T>
std::vector<int> predict(const Mlp<T>& mlp, const Matrix<T>& x);

struct OptimizerConfig {
  enum class Kind { adam, sgd };

  Kind kind = Kind::adam;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double decay_factor = 1.0;
  int decay_interval = 1;

  void validate() const;
};

template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg);

  /// One update on every parameter, then clears the gradients.
  /// Throws StateError if a parameter has no gradient.
  void step(const std::vector<Tensor<T>>& params);

  /// lr = lr0 * decay_factor ^ floor(epoch / decay_interval)
  void schedule_epoch(int epoch);

  double learning_rate() const { return lr_; }
  long step_count() const { return steps_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  double lr_;
  long steps_ = 0;
  std::vector<Matrix<T>> first_;
  std::vector<Matrix<T>> second_;
};

template <typename T>
void opt_step(Optimizer<T>& optimizer, Mlp<T>& mlp) {
  optimizer.step(mlp.parameters());
}

template <typename T>
void schedule_epoch(Optimizer<T>& optimizer, int epoch) {
  optimizer.schedule_epoch(epoch);
}

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
};

/// Text manifest at `path` plus a little-endian float32 payload at
/// `path` + ".bin", tensors concatenated as W0 b0 W1 b1 ...
void save_checkpoint(const std::filesystem::path& path, const Mlp<float>& mlp,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Mlp<float> mlp;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dib::nn

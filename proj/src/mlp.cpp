#include "dib/mlp.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "dib/errors.hpp"

namespace dib::nn {
namespace {

void validate_dims(const std::vector<int>& dims, int bottleneck_index) {
  if (dims.size() < 3) {
    throw ArgumentError("an MLP needs an input, at least one hidden layer and an output");
  }
  for (int d : dims) {
    if (d <= 0) {
      throw ArgumentError("layer widths must be positive");
    }
  }
  if (bottleneck_index < 1 || bottleneck_index > static_cast<int>(dims.size()) - 2) {
    throw ArgumentError(fmt::format("bottleneck_index {} does not address a hidden layer",
                                    bottleneck_index));
  }
}

}  // namespace

template <typename T>
Mlp<T>::Mlp(std::vector<int> layer_dims, int bottleneck_index, std::uint64_t seed)
    : dims_(std::move(layer_dims)), bottleneck_index_(bottleneck_index) {
  validate_dims(dims_, bottleneck_index_);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const int fan_in = dims_[l];
    const int fan_out = dims_[l + 1];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    Matrix<T> w(fan_in, fan_out);
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w.data()[i] = static_cast<T>(normal(rng));
    }
    weights_.push_back(Tensor<T>::leaf(std::move(w), true));
    biases_.push_back(Tensor<T>::leaf(Matrix<T>::Zero(1, fan_out), true));
  }
}

template <typename T>
Mlp<T>::Mlp(const Mlp& other) : dims_(other.dims_), bottleneck_index_(other.bottleneck_index_) {
  for (std::size_t l = 0; l < other.weights_.size(); ++l) {
    weights_.push_back(Tensor<T>::leaf(other.weights_[l].value(), true));
    biases_.push_back(Tensor<T>::leaf(other.biases_[l].value(), true));
  }
}

template <typename T>
Mlp<T>& Mlp<T>::operator=(const Mlp& other) {
  if (this != &other) {
    Mlp copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
std::vector<Tensor<T>> Mlp<T>::parameters() const {
  std::vector<Tensor<T>> out;
  out.reserve(2 * weights_.size());
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.push_back(weights_[l]);
    out.push_back(biases_[l]);
  }
  return out;
}

template <typename T>
template <typename U>
Mlp<U> Mlp<T>::cast() const {
  Mlp<U> out;
  out.dims_ = dims_;
  out.bottleneck_index_ = bottleneck_index_;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    out.weights_.push_back(Tensor<U>::leaf(weights_[l].value().template cast<U>(), true));
    out.biases_.push_back(Tensor<U>::leaf(biases_[l].value().template cast<U>(), true));
  }
  return out;
}

template <typename T>
bool Mlp<T>::same_parameters(const Mlp& other) const {
  if (dims_ != other.dims_ || bottleneck_index_ != other.bottleneck_index_) {
    return false;
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    if (weights_[l].value() != other.weights_[l].value() ||
        biases_[l].value() != other.biases_[l].value()) {
      return false;
    }
  }
  return true;
}

template <typename T>
ForwardResult<T> forward(const Mlp<T>& mlp, Tape<T>& tape, const Tensor<T>& x) {
  if (x.cols() != mlp.layer_dims().front()) {
    throw ArgumentError(fmt::format("input width {} does not match layer_dims[0] = {}",
                                    x.cols(), mlp.layer_dims().front()));
  }
  ForwardResult<T> out;
  Tensor<T> h = x;
  const std::size_t last = mlp.num_layers() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    h = add_bias(tape, matmul(tape, h, mlp.weight(l)), mlp.bias(l));
    if (l < last) {
      h = relu(tape, h);
      if (static_cast<int>(l) + 1 == mlp.bottleneck_index()) {
        out.bottleneck = h;
      }
    }
  }
  out.logits = h;
  return out;
}

template <typename T>
Activations<T> infer(const Mlp<T>& mlp, const Matrix<T>& x) {
  if (x.cols() != mlp.layer_dims().front()) {
    throw ArgumentError(fmt::format("input width {} does not match layer_dims[0] = {}",
                                    x.cols(), mlp.layer_dims().front()));
  }
  Activations<T> out;
  Matrix<T> h = x;
  const std::size_t last = mlp.num_layers() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    Matrix<T> z = h * mlp.weight(l).value();
    z.rowwise() += mlp.bias(l).value().row(0);
    if (l < last) {
      h = z.cwiseMax(T(0));
      if (static_cast<int>(l) + 1 == mlp.bottleneck_index()) {
        out.bottleneck = h;
      }
    } else {
      h = std::move(z);
    }
  }
  out.logits = std::move(h);
  return out;
}

template <typename T>
std::vector<int> predict(const Mlp<T>& mlp, const Matrix<T>& x) {
  const Matrix<T> logits = infer(mlp, x).logits;
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ArgumentError("learning_rate must be > 0");
  }
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ArgumentError("decay_factor must be in (0, 1]");
  }
  if (decay_interval < 1) {
    throw ArgumentError("decay_interval must be >= 1");
  }
  if (kind == Kind::adam && (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
                             !(epsilon > 0.0))) {
    throw ArgumentError("adam needs beta1, beta2 in [0,1) and epsilon > 0");
  }
  if (momentum < 0.0 || weight_decay < 0.0) {
    throw ArgumentError("momentum and weight_decay must be non-negative");
  }
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerConfig cfg) : cfg_(cfg), lr_(cfg.learning_rate) {
  cfg_.validate();
}

template <typename T>
void Optimizer<T>::step(const std::vector<Tensor<T>>& params) {
  for (const auto& p : params) {
    if (!p.has_grad()) {
      throw StateError("opt_step called before gradients were populated");
    }
  }
  if (first_.empty()) {
    for (const auto& p : params) {
      first_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
      second_.push_back(Matrix<T>::Zero(p.rows(), p.cols()));
    }
  }
  if (first_.size() != params.size()) {
    throw StateError("parameter list changed between optimizer steps");
  }
  ++steps_;

  const T lr = static_cast<T>(lr_);
  const T wd = static_cast<T>(cfg_.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> p = params[i];
    Matrix<T>& w = p.mutable_value();
    Matrix<T> g = p.grad();
    if (cfg_.weight_decay != 0.0) {
      g += wd * w;
    }
    if (cfg_.kind == OptimizerConfig::Kind::adam) {
      const T b1 = static_cast<T>(cfg_.beta1);
      const T b2 = static_cast<T>(cfg_.beta2);
      const T c1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_)));
      const T c2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_)));
      const T eps = static_cast<T>(cfg_.epsilon);
      first_[i] = b1 * first_[i] + (T(1) - b1) * g;
      second_[i] = b2 * second_[i] + (T(1) - b2) * g.cwiseProduct(g);
      w.array() -= lr * (first_[i].array() / c1) /
                   ((second_[i].array() / c2).sqrt() + eps);
    } else if (cfg_.momentum != 0.0) {
      first_[i] = static_cast<T>(cfg_.momentum) * first_[i] + g;
      w -= lr * first_[i];
    } else {
      w -= lr * g;
    }
    p.clear_grad();
  }
}

template <typename T>
void Optimizer<T>::schedule_epoch(int epoch) {
  if (epoch < 0) {
    throw ArgumentError("epoch must be >= 0");
  }
  lr_ = cfg_.learning_rate * std::pow(cfg_.decay_factor, epoch / cfg_.decay_interval);
}

// ---- checkpoints ----------------------------------------------------------

namespace {

void write_le_floats(std::ofstream& out, const Matrix<float>& m) {
  std::vector<char> bytes(static_cast<std::size_t>(m.size()) * 4);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(m.data()[i]);
    for (int b = 0; b < 4; ++b) {
      bytes[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)] =
          static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void read_le_floats(const std::vector<unsigned char>& payload, std::size_t offset,
                    Matrix<float>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
      bits |= std::uint32_t{payload[offset + static_cast<std::size_t>(i) * 4 +
                                    static_cast<std::size_t>(b)]}
              << (8 * b);
    }
    m.data()[i] = std::bit_cast<float>(bits);
  }
}

std::filesystem::path payload_path(const std::filesystem::path& manifest) {
  return manifest.string() + ".bin";
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Mlp<float>& mlp,
                     const CheckpointMeta& meta) {
  const auto bin = payload_path(path);
  std::ofstream payload(bin, std::ios::binary);
  if (!payload) {
    throw IoError(fmt::format("cannot write '{}'", bin.string()));
  }
  std::ostringstream manifest;
  manifest << "dib-checkpoint 1\n";
  manifest << "payload " << bin.filename().string() << "\n";
  manifest << "dtype float32\nendianness little\n";
  manifest << "layer_dims";
  for (int d : mlp.layer_dims()) {
    manifest << ' ' << d;
  }
  manifest << "\nbottleneck_index " << mlp.bottleneck_index() << "\n";
  manifest << "seed " << meta.seed << "\n";
  manifest << "config_hash " << (meta.config_hash.empty() ? "-" : meta.config_hash) << "\n";

  std::size_t offset = 0;
  for (std::size_t l = 0; l < mlp.num_layers(); ++l) {
    for (const auto& [name, t] : {std::pair{'W', &mlp.weight(l)}, std::pair{'b', &mlp.bias(l)}}) {
      const std::size_t bytes = static_cast<std::size_t>(t->value().size()) * 4;
      manifest << "tensor " << name << l << ' ' << t->rows() << ' ' << t->cols() << " offset "
               << offset << " bytes " << bytes << "\n";
      write_le_floats(payload, t->value());
      offset += bytes;
    }
  }
  if (!payload) {
    throw IoError(fmt::format("failed writing '{}'", bin.string()));
  }
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write '{}'", path.string()));
  }
  out << manifest.str();
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError(fmt::format("cannot open checkpoint '{}'", path.string()));
  }
  std::string line;
  if (!std::getline(in, line) || line != "dib-checkpoint 1") {
    throw FormatError(fmt::format("'{}' is not a checkpoint manifest", path.string()));
  }
  std::string payload_name;
  std::vector<int> dims;
  int bottleneck = -1;
  CheckpointMeta meta;
  struct Entry {
    std::string name;
    Eigen::Index rows, cols;
    std::size_t offset, bytes;
  };
  std::vector<Entry> entries;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "payload") {
      ls >> payload_name;
    } else if (key == "dtype" || key == "endianness") {
      std::string v;
      ls >> v;
      if (v != "float32" && v != "little") {
        throw FormatError(fmt::format("unsupported {} '{}'", key, v));
      }
    } else if (key == "layer_dims") {
      int d;
      while (ls >> d) {
        dims.push_back(d);
      }
    } else if (key == "bottleneck_index") {
      ls >> bottleneck;
    } else if (key == "seed") {
      ls >> meta.seed;
    } else if (key == "config_hash") {
      ls >> meta.config_hash;
      if (meta.config_hash == "-") {
        meta.config_hash.clear();
      }
    } else if (key == "tensor") {
      Entry e;
      std::string kw1, kw2;
      ls >> e.name >> e.rows >> e.cols >> kw1 >> e.offset >> kw2 >> e.bytes;
      if (!ls || kw1 != "offset" || kw2 != "bytes") {
        throw FormatError(fmt::format("bad tensor line '{}'", line));
      }
      entries.push_back(e);
    } else if (!key.empty()) {
      throw FormatError(fmt::format("unknown manifest key '{}'", key));
    }
  }

  Mlp<float> mlp(dims, bottleneck, 0);
  if (entries.size() != 2 * mlp.num_layers()) {
    throw FormatError("tensor count does not match layer_dims");
  }
  const auto bin = path.parent_path() / payload_name;
  std::ifstream pin(bin, std::ios::binary);
  if (!pin) {
    throw IoError(fmt::format("cannot open checkpoint payload '{}'", bin.string()));
  }
  const std::vector<unsigned char> payload{std::istreambuf_iterator<char>(pin),
                                           std::istreambuf_iterator<char>()};
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    Tensor<float>& t = (i % 2 == 0) ? mlp.weight(i / 2) : mlp.bias(i / 2);
    if (e.rows != t.rows() || e.cols != t.cols() ||
        e.bytes != static_cast<std::size_t>(t.value().size()) * 4) {
      throw FormatError(fmt::format("tensor {} has unexpected shape", e.name));
    }
    if (e.offset + e.bytes > payload.size()) {
      throw IoError(fmt::format("checkpoint payload '{}' is truncated", bin.string()));
    }
    read_le_floats(payload, e.offset, t.mutable_value());
  }
  return {std::move(mlp), meta};
}

template class Mlp<float>;
template class Mlp<double>;
template Mlp<double> Mlp<float>::cast<double>() const;
template Mlp<float> Mlp<double>::cast<float>() const;
template Mlp<float> Mlp<float>::cast<float>() const;
template Mlp<double> Mlp<double>::cast<double>() const;
template ForwardResult<float> forward(const Mlp<float>&, Tape<float>&, const Tensor<float>&);
template ForwardResult<double> forward(const Mlp<double>&, Tape<double>&, const Tensor<double>&);
template Activations<float> infer(const Mlp<float>&, const Matrix<float>&);
template Activations<double> infer(const Mlp<double>&, const Matrix<double>&);
template std::vector<int> predict(const Mlp<float>&, const Matrix<float>&);
template std::vector<int> predict(const Mlp<double>&, const Matrix<double>&);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace dib::nn

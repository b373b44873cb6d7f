#include "dib/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "dib/errors.hpp"

namespace dib::data {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError(fmt::format("cannot open '{}'", path.string()));
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                        const std::filesystem::path& path) {
  if (bytes.size() < offset + 4) {
    throw IoError(fmt::format("'{}' is truncated in its header", path.string()));
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                 static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

void Dataset::validate() const {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ConsistencyError(fmt::format("{} feature rows but {} labels", features.rows(),
                                       labels.size()));
  }
  if (num_classes <= 0) {
    throw ConsistencyError("num_classes must be positive");
  }
  if (features.size() > 0 && (features.minCoeff() < 0.0f || features.maxCoeff() > 1.0f)) {
    throw ConsistencyError("feature values must lie in [0, 1]");
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw ConsistencyError(fmt::format("label {} outside [0, {})", y, num_classes));
    }
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), features.cols());
  out.labels.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= size()) {
      throw ArgumentError(fmt::format("row index {} out of range", indices[r]));
    }
    out.features.row(static_cast<Eigen::Index>(r)) =
        features.row(static_cast<Eigen::Index>(indices[r]));
    out.labels.push_back(labels[indices[r]]);
  }
  return out;
}

Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path, int num_classes) {
  const auto images = read_file(images_path);
  const auto labels = read_file(labels_path);

  if (read_be32(images, 0, images_path) != kImagesMagic) {
    throw FormatError(fmt::format("'{}' is not an IDX3 image file", images_path.string()));
  }
  if (read_be32(labels, 0, labels_path) != kLabelsMagic) {
    throw FormatError(fmt::format("'{}' is not an IDX1 label file", labels_path.string()));
  }
  const std::size_t count = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t label_count = read_be32(labels, 4, labels_path);
  if (count != label_count) {
    throw ConsistencyError(
        fmt::format("{} images but {} labels", count, label_count));
  }
  const std::size_t dim = rows * cols;
  if (images.size() < 16 + count * dim) {
    throw IoError(fmt::format("'{}' is truncated", images_path.string()));
  }
  if (labels.size() < 8 + count) {
    throw IoError(fmt::format("'{}' is truncated", labels_path.string()));
  }

  Dataset ds;
  ds.num_classes = num_classes;
  ds.features.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  const unsigned char* pixels = images.data() + 16;
  float* dst = ds.features.data();
  for (std::size_t i = 0; i < count * dim; ++i) {
    dst[i] = static_cast<float>(pixels[i]) / 255.0f;
  }
  ds.labels.assign(labels.begin() + 8, labels.begin() + 8 + static_cast<std::ptrdiff_t>(count));
  ds.validate();
  return ds;
}

void write_idx_images(const std::filesystem::path& path, const RowMatrixF& features,
                      std::uint32_t rows, std::uint32_t cols) {
  if (static_cast<Eigen::Index>(rows) * cols != features.cols()) {
    throw ArgumentError("image shape does not match feature width");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError(fmt::format("cannot write '{}'", path.string()));
  }
  put_be32(out, kImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(features.rows()));
  put_be32(out, rows);
  put_be32(out, cols);
  std::vector<char> bytes(static_cast<std::size_t>(features.size()));
  const float* src = features.data();
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const float v = std::clamp(src[i], 0.0f, 1.0f);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError(fmt::format("cannot write '{}'", path.string()));
  }
  put_be32(out, kLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) {
    out.put(static_cast<char>(static_cast<unsigned char>(y)));
  }
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, std::size_t val_count,
                                  std::uint64_t seed) {
  if (val_count == 0 || val_count >= dataset.size()) {
    throw ArgumentError(fmt::format("val_count must be in (0, {}), got {}", dataset.size(),
                                    val_count));
  }
  std::vector<std::size_t> perm(dataset.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);

  const std::span<const std::size_t> all(perm);
  const auto val = all.first(val_count);
  const auto train = all.subspan(val_count);
  return {dataset.subset(train), dataset.subset(val)};
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t num_samples,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 2) {
    throw ArgumentError("batch_size must be at least 2");
  }
  std::vector<std::size_t> perm(num_samples);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(perm.begin(), perm.end(), rng);

  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + batch_size <= num_samples; start += batch_size) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                     perm.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return out;
}

RowMatrixF one_hot(std::span<const int> labels, int num_classes) {
  RowMatrixF out = RowMatrixF::Zero(static_cast<Eigen::Index>(labels.size()), num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ArgumentError(fmt::format("label {} outside [0, {})", labels[i], num_classes));
    }
    out(static_cast<Eigen::Index>(i), labels[i]) = 1.0f;
  }
  return out;
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  if (indices.size() < 2) {
    throw ArgumentError("a batch needs at least 2 samples");
  }
  Dataset rows = dataset.subset(indices);
  Batch b;
  b.labels_onehot = one_hot(rows.labels, dataset.num_classes);
  b.features = std::move(rows.features);
  b.labels = std::move(rows.labels);
  return b;
}

std::vector<Batch> batches(const Dataset& dataset, std::size_t batch_size, std::uint64_t seed,
                           std::uint64_t epoch) {
  std::vector<Batch> out;
  for (const auto& idx : batch_indices(dataset.size(), batch_size, seed, epoch)) {
    out.push_back(make_batch(dataset, idx));
  }
  return out;
}

CorrelatedPair synth_correlated_gaussian(std::size_t n, double rho, std::uint64_t seed) {
  if (!(std::abs(rho) < 1.0)) {
    throw ArgumentError(fmt::format("|rho| must be < 1, got {}", rho));
  }
  if (n < 4) {
    throw ArgumentError("need at least 4 draws");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double tail = std::sqrt(1.0 - rho * rho);
  CorrelatedPair out{Eigen::VectorXd(static_cast<Eigen::Index>(n)),
                     Eigen::VectorXd(static_cast<Eigen::Index>(n))};
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    out.x[i] = z1;
    out.y[i] = rho * z1 + tail * z2;
  }
  return out;
}

std::string file_checksum(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace dib::data

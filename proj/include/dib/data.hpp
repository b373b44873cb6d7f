#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dib {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace data {

/// Labelled samples, one row per sample. Features are expected in [0, 1].
struct Dataset {
  RowMatrixF features;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Throws ConsistencyError if any invariant (row count, feature range,
  /// label range) is violated.
  void validate() const;

  /// Rows at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
};

struct Batch {
  RowMatrixF features;
  RowMatrixF labels_onehot;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

/// Raw IDX image/label files (big-endian headers). Pixels are divided by 255.
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path,
                       int num_classes = 10);

/// Writes `features` (values in [0,1], rounded to bytes) as an IDX3 image
/// file with the given image shape; rows*cols must equal the feature width.
void write_idx_images(const std::filesystem::path& path, const RowMatrixF& features,
                      std::uint32_t rows, std::uint32_t cols);
void write_idx_labels(const std::filesystem::path& path, std::span<const int> labels);

/// Disjoint seeded partition into (train, val) with `val_count` validation rows.
std::pair<Dataset, Dataset> split(const Dataset& dataset, std::size_t val_count,
                                  std::uint64_t seed);

/// Sample order for one epoch: a permutation seeded by (seed, epoch), cut
/// into full batches. The trailing remainder is dropped.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t num_samples,
                                                    std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch);

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

std::vector<Batch> batches(const Dataset& dataset, std::size_t batch_size,
                           std::uint64_t seed, std::uint64_t epoch);

RowMatrixF one_hot(std::span<const int> labels, int num_classes);

struct CorrelatedPair {
  Eigen::VectorXd x;
  Eigen::VectorXd y;
};

/// n draws from a bivariate standard normal with correlation rho.
CorrelatedPair synth_correlated_gaussian(std::size_t n, double rho, std::uint64_t seed);

/// FNV-1a 64-bit digest of a file's bytes, as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace data
}  // namespace dib

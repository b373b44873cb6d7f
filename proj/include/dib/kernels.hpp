#pragma once

#include <Eigen/Dense>

#include "dib/data.hpp"

namespace dib::kernels {

inline constexpr double kSigmaFloor = 1e-8;
inline constexpr int kDefaultNeighbors = 10;

struct Bandwidth {
  double sigma = 1.0;
  int k = kDefaultNeighbors;
  // Set when the k-NN mean fell below kSigmaFloor.
  bool floored = false;
};

/// n×n kernel matrix. `normalized` marks the trace-one form A = K / tr(K).
struct GramMatrix {
  Eigen::MatrixXd entries;
  bool normalized = false;

  Eigen::Index n() const { return entries.rows(); }
};

/// k-NN bandwidth heuristic: for every sample take the mean Euclidean distance
/// to its k nearest other samples, then average those means over all samples.
/// Results below kSigmaFloor are floored (and logged).
Bandwidth estimate_bandwidth(const RowMatrixD& samples, int k = kDefaultNeighbors);

/// K_ij = exp(-|x_i - x_j|^2 / (2 sigma^2)). Unit diagonal, exactly symmetric.
GramMatrix gram_rbf(const RowMatrixD& samples, double sigma);

GramMatrix normalize(const GramMatrix& gram);

}  // namespace dib::kernels

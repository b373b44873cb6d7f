#include "dib/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "dib/errors.hpp"

namespace dib::kernels {
namespace {

// Squared Euclidean distances, computed from explicit differences so that
// d(i,j) == d(j,i) bit for bit and never goes negative.
Eigen::MatrixXd pairwise_sq_distances(const RowMatrixD& x) {
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = (x.row(i) - x.row(j)).squaredNorm();
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

}  // namespace

Bandwidth estimate_bandwidth(const RowMatrixD& samples, int k) {
  const Eigen::Index n = samples.rows();
  if (k < 1 || n <= k) {
    throw ArgumentError(fmt::format("bandwidth heuristic needs n > k >= 1 (n={}, k={})", n, k));
  }
  if (!samples.allFinite()) {
    throw NumericError("non-finite sample in bandwidth estimation");
  }
  const Eigen::MatrixXd sq = pairwise_sq_distances(samples);

  std::vector<double> dist(static_cast<std::size_t>(n - 1));
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i) {
        dist[m++] = std::sqrt(sq(i, j));
      }
    }
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    double s = 0.0;
    for (int r = 0; r < k; ++r) {
      s += dist[static_cast<std::size_t>(r)];
    }
    total += s / k;
  }

  Bandwidth bw;
  bw.k = k;
  bw.sigma = total / static_cast<double>(n);
  if (bw.sigma < kSigmaFloor) {
    spdlog::debug("bandwidth {:.3e} below floor, using {:.0e}", bw.sigma, kSigmaFloor);
    bw.sigma = kSigmaFloor;
    bw.floored = true;
  }
  return bw;
}

GramMatrix gram_rbf(const RowMatrixD& samples, double sigma) {
  const Eigen::Index n = samples.rows();
  if (n < 2) {
    throw ArgumentError("a Gram matrix needs at least 2 samples");
  }
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ArgumentError(fmt::format("sigma must be positive and finite, got {}", sigma));
  }
  if (!samples.allFinite()) {
    throw NumericError("non-finite sample in Gram construction");
  }
  const Eigen::MatrixXd sq = pairwise_sq_distances(samples);
  const double scale = 1.0 / (2.0 * sigma * sigma);

  GramMatrix g;
  g.entries.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g.entries(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::exp(-sq(i, j) * scale);
      g.entries(i, j) = v;
      g.entries(j, i) = v;
    }
  }
  return g;
}

GramMatrix normalize(const GramMatrix& gram) {
  const double tr = gram.entries.trace();
  if (!(tr > 0.0) || !std::isfinite(tr)) {
    throw NumericError(fmt::format("cannot normalize a Gram matrix with trace {}", tr));
  }
  return GramMatrix{gram.entries / tr, true};
}

}  // namespace dib::kernels

#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "dib/data.hpp"
#include "dib/mlp.hpp"

namespace dib::attacks {

struct AttackConfig {
  std::vector<double> epsilons{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3};
  double clip_min = 0.0;
  double clip_max = 1.0;

  /// Throws ArgumentError unless epsilons are ascending and inside [0, 1].
  void validate() const;
};

/// Fast gradient sign perturbation of `x` against the cross-entropy of
/// `labels`: x + eps * sign(dCE/dx), sign(0) = 0, clipped to the config range.
RowMatrixF fgsm(const nn::Mlp<float>& mlp, const RowMatrixF& x, std::span<const int> labels,
                double epsilon, const AttackConfig& cfg = {});

struct CurvePoint {
  double epsilon = 0.0;
  double accuracy = 0.0;  // percent
};

/// Accuracy on the FGSM-perturbed test set for every epsilon, traversing the
/// test set in order in fixed-size chunks. When `dump_dir` is set, the
/// perturbed images for each epsilon are written there as IDX files.
std::vector<CurvePoint> robustness_curve(const nn::Mlp<float>& mlp,
                                         const data::Dataset& test_set, const AttackConfig& cfg,
                                         const std::filesystem::path& dump_dir = {});

void write_robustness_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve);

}  // namespace dib::attacks

#include "dib/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "dib/errors.hpp"

namespace dib::attacks {
namespace {

constexpr std::size_t kChunk = 500;

}  // namespace

void AttackConfig::validate() const {
  if (epsilons.empty()) {
    throw ArgumentError("attack needs at least one epsilon");
  }
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] >= 0.0 && epsilons[i] <= 1.0)) {
      throw ArgumentError(fmt::format("epsilon {} outside [0, 1]", epsilons[i]));
    }
    if (i > 0 && epsilons[i] < epsilons[i - 1]) {
      throw ArgumentError("epsilons must be sorted ascending");
    }
  }
  if (!(clip_min < clip_max)) {
    throw ArgumentError("clip_min must be below clip_max");
  }
}

RowMatrixF fgsm(const nn::Mlp<float>& mlp, const RowMatrixF& x, std::span<const int> labels,
                double epsilon, const AttackConfig& cfg) {
  if (!(epsilon >= 0.0)) {
    throw ArgumentError("epsilon must be >= 0");
  }
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw ArgumentError(fmt::format("{} inputs but {} labels", x.rows(), labels.size()));
  }
  if (x.cols() != mlp.layer_dims().front()) {
    throw ArgumentError("input width does not match the network");
  }
  if (epsilon == 0.0) {
    return x;
  }
  // Private copy with frozen parameters: only the input receives a gradient.
  nn::Mlp<float> frozen = mlp;
  for (auto p : frozen.parameters()) {
    p.set_requires_grad(false);
  }
  nn::Tape<float> tape;
  auto input = nn::Tensor<float>::leaf(x, true);
  const auto fwd = nn::forward(frozen, tape, input);
  const auto loss =
      nn::cross_entropy(tape, fwd.logits, data::one_hot(labels, mlp.layer_dims().back()));
  tape.backward(loss);

  const float eps = static_cast<float>(epsilon);
  const float lo = static_cast<float>(cfg.clip_min);
  const float hi = static_cast<float>(cfg.clip_max);
  const RowMatrixF& g = input.grad();
  RowMatrixF out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const float gi = g.data()[i];
    const float s = gi > 0.0f ? 1.0f : (gi < 0.0f ? -1.0f : 0.0f);
    out.data()[i] = std::clamp(x.data()[i] + eps * s, lo, hi);
  }
  return out;
}

std::vector<CurvePoint> robustness_curve(const nn::Mlp<float>& mlp,
                                         const data::Dataset& test_set, const AttackConfig& cfg,
                                         const std::filesystem::path& dump_dir) {
  cfg.validate();
  if (test_set.size() == 0) {
    throw ArgumentError("robustness curve on an empty test set");
  }
  const auto side = static_cast<std::uint32_t>(std::lround(std::sqrt(test_set.dim())));
  const bool square = static_cast<Eigen::Index>(side) * side == test_set.dim();

  std::vector<CurvePoint> curve;
  for (double eps : cfg.epsilons) {
    std::size_t correct = 0;
    RowMatrixF dumped;
    if (!dump_dir.empty()) {
      dumped.resize(test_set.features.rows(), test_set.features.cols());
    }
    for (std::size_t start = 0; start < test_set.size(); start += kChunk) {
      const std::size_t len = std::min(kChunk, test_set.size() - start);
      const RowMatrixF x = test_set.features.middleRows(static_cast<Eigen::Index>(start),
                                                        static_cast<Eigen::Index>(len));
      const std::span<const int> y(test_set.labels.data() + start, len);
      const RowMatrixF adv = fgsm(mlp, x, y, eps, cfg);
      const auto pred = nn::predict(mlp, adv);
      for (std::size_t i = 0; i < len; ++i) {
        correct += pred[i] == y[i] ? 1 : 0;
      }
      if (!dump_dir.empty()) {
        dumped.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) = adv;
      }
    }
    if (!dump_dir.empty()) {
      const auto rows = square ? side : 1u;
      const auto cols = square ? side : static_cast<std::uint32_t>(test_set.dim());
      data::write_idx_images(dump_dir / fmt::format("fgsm-eps{:.2f}-images-idx3-ubyte", eps),
                             dumped, rows, cols);
    }
    curve.push_back(
        {eps, 100.0 * static_cast<double>(correct) / static_cast<double>(test_set.size())});
  }
  return curve;
}

void write_robustness_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve) {
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write '{}'", path.string()));
  }
  out << "epsilon,accuracy\n";
  for (const auto& p : curve) {
    out << fmt::format("{:g},{:.4f}\n", p.epsilon, p.accuracy);
  }
}

}  // namespace dib::attacks

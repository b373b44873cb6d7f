#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dib/data.hpp"
#include "dib/errors.hpp"
#include "dib/mlp.hpp"
#include "dib/renyi.hpp"

namespace dib::ib {

struct TrainConfig {
  double beta = 0.0;
  double alpha = renyi::kDefaultAlpha;
  std::vector<int> layer_dims{784, 1024, 1024, 256, 10};
  int bottleneck_index = 3;
  nn::OptimizerConfig optimizer{nn::OptimizerConfig::Kind::adam, 1e-4, 0.9, 0.999, 1e-8,
                                0.0, 0.0, 0.97, 2};
  int epochs = 200;
  std::size_t batch_size = 100;
  std::uint64_t seed = 0;
  int bandwidth_k = kernels::kDefaultNeighbors;
  // Info-plane probe: a fixed seeded subset of the training set, measured in
  // chunks of subsample_n.
  std::size_t probe_size = 1000;
  std::size_t subsample_n = 100;

  void validate() const;
  renyi::EntropyConfig entropy() const { return {alpha}; }
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

/// FNV-1a digest of the canonical JSON form.
std::string config_hash(const TrainConfig& cfg);

struct InfoPlanePoint {
  int epoch = 0;
  double i_xt = 0.0;
  double i_yt = 0.0;
  double train_loss = 0.0;
  double test_error = 0.0;  // percent, on the validation set
};

struct IBCurvePoint {
  double beta = 0.0;
  double i_xt = 0.0;
  double i_yt = 0.0;
};

/// Raised when a training step produces a non-finite loss.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, int epoch, std::size_t batch, double sigma_x,
                   double sigma_t)
      : NumericError(what), epoch(epoch), batch(batch), sigma_x(sigma_x), sigma_t(sigma_t) {}

  int epoch;
  std::size_t batch;
  double sigma_x;
  double sigma_t;
};

template <typename T>
struct DibLoss {
  nn::Tensor<T> loss;  // taped total, for backward
  double value = 0.0;  // cross_entropy + beta * i_xt, in double
  double cross_entropy = 0.0;
  double i_xt = 0.0;
  double sigma_x = 0.0;
  double sigma_t = 0.0;
  bool sigma_t_floored = false;
};

struct DibLossOptions {
  // Use this bottleneck bandwidth instead of the per-batch heuristic.
  std::optional<double> sigma_t;
};

/// cross_entropy(logits, y) + beta * I_alpha(A_X; A_T) for one batch. The
/// gradient of the MI term enters the tape at the bottleneck as an external
/// scalar node, with both bandwidths held constant.
template <typename T>
DibLoss<T> dib_loss(nn::Tape<T>& tape, const nn::Matrix<T>& x, const nn::Matrix<T>& labels_onehot,
                    const nn::Mlp<T>& mlp, const TrainConfig& cfg,
                    const DibLossOptions& options = {});

DibLoss<float> dib_loss(nn::Tape<float>& tape, const data::Batch& batch, const nn::Mlp<float>& mlp,
                        const TrainConfig& cfg);

struct InfoMeasurement {
  double i_xt = 0.0;
  double i_yt = 0.0;
};

/// I(X;T) and I(Y;T) averaged over consecutive chunks of subsample_n probe
/// rows. A trailing chunk is kept when it still has more than bandwidth_k
/// rows. Labels are embedded one-hot and compared with an RBF kernel.
InfoMeasurement measure_info_activations(const data::Dataset& probe, const RowMatrixD& bottleneck,
                                         const TrainConfig& cfg, std::size_t subsample_n);

InfoMeasurement measure_info(const nn::Mlp<float>& mlp, const data::Dataset& probe,
                             const TrainConfig& cfg, std::size_t subsample_n);

/// Percentage of misclassified rows.
double error_rate(const nn::Mlp<float>& mlp, const data::Dataset& dataset);

/// Fixed, seeded probe subset of the training set.
data::Dataset probe_subset(const data::Dataset& train_set, std::size_t probe_size,
                           std::uint64_t seed);

struct TrainResult {
  nn::Mlp<float> best;   // lowest validation error
  nn::Mlp<float> final;  // after the last epoch
  std::vector<InfoPlanePoint> log;
  int best_epoch = 0;
};

using EpochCallback = std::function<void(const InfoPlanePoint&)>;

TrainResult train(const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

struct SweepResult {
  std::vector<IBCurvePoint> points;  // in the order of `betas`
  double h_y = 0.0;                  // log2(num_classes), balanced-label H(Y)
};

/// One independent training run per beta (seed + index). Up to `jobs` runs
/// execute concurrently.
SweepResult ib_curve_sweep(const data::Dataset& train_set, const data::Dataset& val_set,
                           std::span<const double> betas, const TrainConfig& cfg,
                           unsigned jobs = 1);

/// Theoretical IB curve for classification: min(i_xt, h_y).
inline double ib_envelope(double i_xt, double h_y) { return i_xt < h_y ? i_xt : h_y; }

void write_infoplane_csv(const std::filesystem::path& path,
                         std::span<const InfoPlanePoint> log);
void write_ibcurve_csv(const std::filesystem::path& path, std::span<const IBCurvePoint> points);

}  // namespace dib::ib

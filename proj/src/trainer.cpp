#include "dib/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace dib::ib {

using nlohmann::json;

// ---- configuration ----------------------------------------------------------

void TrainConfig::validate() const {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw ArgumentError("beta must be ≥ 0");
  }
  entropy().validate();
  if (epochs < 1) {
    throw ArgumentError("epochs must be >= 1");
  }
  if (batch_size < 2) {
    throw ArgumentError("batch_size must be >= 2");
  }
  if (bandwidth_k < 1 || static_cast<std::size_t>(bandwidth_k) >= batch_size) {
    throw ArgumentError("bandwidth_k must be in [1, batch_size)");
  }
  if (subsample_n < 2 || static_cast<std::size_t>(bandwidth_k) >= subsample_n) {
    throw ArgumentError("subsample_n must be >= 2 and > bandwidth_k");
  }
  if (probe_size < subsample_n) {
    throw ArgumentError("probe_size must be >= subsample_n");
  }
  // Constructing validates layer_dims and bottleneck_index.
  nn::Mlp<float> probe(layer_dims, bottleneck_index, 0);
  optimizer.validate();
}

void to_json(json& j, const TrainConfig& cfg) {
  const auto& o = cfg.optimizer;
  j = json{{"beta", cfg.beta},
           {"alpha", cfg.alpha},
           {"layer_dims", cfg.layer_dims},
           {"bottleneck_index", cfg.bottleneck_index},
           {"epochs", cfg.epochs},
           {"batch_size", cfg.batch_size},
           {"seed", cfg.seed},
           {"bandwidth_k", cfg.bandwidth_k},
           {"probe_size", cfg.probe_size},
           {"subsample_n", cfg.subsample_n},
           {"optimizer",
            {{"kind", o.kind == nn::OptimizerConfig::Kind::adam ? "adam" : "sgd"},
             {"learning_rate", o.learning_rate},
             {"beta1", o.beta1},
             {"beta2", o.beta2},
             {"epsilon", o.epsilon},
             {"momentum", o.momentum},
             {"weight_decay", o.weight_decay},
             {"decay_factor", o.decay_factor},
             {"decay_interval", o.decay_interval}}}};
}

void from_json(const json& j, TrainConfig& cfg) {
  auto get = [&](const json& obj, const char* key, auto& field) {
    if (obj.contains(key)) {
      obj.at(key).get_to(field);
    }
  };
  get(j, "beta", cfg.beta);
  get(j, "alpha", cfg.alpha);
  get(j, "layer_dims", cfg.layer_dims);
  get(j, "bottleneck_index", cfg.bottleneck_index);
  get(j, "epochs", cfg.epochs);
  get(j, "batch_size", cfg.batch_size);
  get(j, "seed", cfg.seed);
  get(j, "bandwidth_k", cfg.bandwidth_k);
  get(j, "probe_size", cfg.probe_size);
  get(j, "subsample_n", cfg.subsample_n);
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    if (o.contains("kind")) {
      const auto kind = o.at("kind").get<std::string>();
      if (kind == "adam") {
        cfg.optimizer.kind = nn::OptimizerConfig::Kind::adam;
      } else if (kind == "sgd") {
        cfg.optimizer.kind = nn::OptimizerConfig::Kind::sgd;
      } else {
        throw ArgumentError(fmt::format("unknown optimizer kind '{}'", kind));
      }
    }
    get(o, "learning_rate", cfg.optimizer.learning_rate);
    get(o, "beta1", cfg.optimizer.beta1);
    get(o, "beta2", cfg.optimizer.beta2);
    get(o, "epsilon", cfg.optimizer.epsilon);
    get(o, "momentum", cfg.optimizer.momentum);
    get(o, "weight_decay", cfg.optimizer.weight_decay);
    get(o, "decay_factor", cfg.optimizer.decay_factor);
    get(o, "decay_interval", cfg.optimizer.decay_interval);
  }
}

std::string config_hash(const TrainConfig& cfg) {
  const std::string text = json(cfg).dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

// ---- objective --------------------------------------------------------------

template <typename T>
DibLoss<T> dib_loss(nn::Tape<T>& tape, const nn::Matrix<T>& x, const nn::Matrix<T>& labels_onehot,
                    const nn::Mlp<T>& mlp, const TrainConfig& cfg, const DibLossOptions& options) {
  if (x.rows() < 2) {
    throw ArgumentError("dib_loss needs a batch of at least 2 samples");
  }
  const auto input = nn::Tensor<T>::leaf(x, false);
  const auto fwd = nn::forward(mlp, tape, input);
  const auto ce = nn::cross_entropy(tape, fwd.logits, labels_onehot);

  DibLoss<T> out;
  out.cross_entropy = static_cast<double>(ce.item());

  const RowMatrixD xd = x.template cast<double>();
  const RowMatrixD td = fwd.bottleneck.value().template cast<double>();
  const auto bx = kernels::estimate_bandwidth(xd, cfg.bandwidth_k);
  const auto kx = kernels::gram_rbf(xd, bx.sigma);
  out.sigma_x = bx.sigma;
  if (options.sigma_t) {
    out.sigma_t = *options.sigma_t;
  } else {
    const auto bt = kernels::estimate_bandwidth(td, cfg.bandwidth_k);
    out.sigma_t = bt.sigma;
    out.sigma_t_floored = bt.floored;
    if (bt.floored) {
      spdlog::debug("bottleneck representations collapsed; bandwidth floored to {:.0e}",
                   bt.sigma);
    }
  }

  const auto mi = renyi::mi_grad_samples(td, kx, out.sigma_t, cfg.entropy());
  out.i_xt = mi.value;
  out.value = out.cross_entropy + cfg.beta * out.i_xt;

  if (cfg.beta != 0.0) {
    const auto reg =
        nn::external_scalar(tape, fwd.bottleneck, mi.value, nn::Matrix<T>(mi.grad.template cast<T>()));
    out.loss = nn::add(tape, ce, nn::scale(tape, reg, static_cast<T>(cfg.beta)));
  } else {
    out.loss = ce;
  }
  return out;
}

DibLoss<float> dib_loss(nn::Tape<float>& tape, const data::Batch& batch,
                        const nn::Mlp<float>& mlp, const TrainConfig& cfg) {
  return dib_loss<float>(tape, batch.features, batch.labels_onehot, mlp, cfg);
}

template DibLoss<float> dib_loss(nn::Tape<float>&, const nn::Matrix<float>&,
                                 const nn::Matrix<float>&, const nn::Mlp<float>&,
                                 const TrainConfig&, const DibLossOptions&);
template DibLoss<double> dib_loss(nn::Tape<double>&, const nn::Matrix<double>&,
                                  const nn::Matrix<double>&, const nn::Mlp<double>&,
                                  const TrainConfig&, const DibLossOptions&);

// ---- measurement ------------------------------------------------------------

InfoMeasurement measure_info_activations(const data::Dataset& probe, const RowMatrixD& bottleneck,
                                         const TrainConfig& cfg, std::size_t subsample_n) {
  if (probe.size() < 2) {
    throw ArgumentError("probe set needs at least 2 samples");
  }
  if (subsample_n < 2 || subsample_n > probe.size()) {
    throw ArgumentError(fmt::format("subsample_n must be in [2, {}], got {}", probe.size(),
                                    subsample_n));
  }
  if (static_cast<std::size_t>(bottleneck.rows()) != probe.size()) {
    throw ArgumentError("bottleneck rows do not match probe size");
  }
  const auto entropy = cfg.entropy();
  const std::size_t k = static_cast<std::size_t>(cfg.bandwidth_k);
  const RowMatrixD features = probe.features.cast<double>();
  const RowMatrixD labels = data::one_hot(probe.labels, probe.num_classes).cast<double>();

  InfoMeasurement sum;
  std::size_t chunks = 0;
  for (std::size_t start = 0; start < probe.size(); start += subsample_n) {
    const std::size_t len = std::min(subsample_n, probe.size() - start);
    if (len <= k) {
      break;
    }
    const auto rows = Eigen::seqN(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len));
    const RowMatrixD x = features(rows, Eigen::all);
    const RowMatrixD t = bottleneck(rows, Eigen::all);
    const RowMatrixD y = labels(rows, Eigen::all);
    const auto kx = kernels::gram_rbf(x, kernels::estimate_bandwidth(x, cfg.bandwidth_k).sigma);
    const auto kt = kernels::gram_rbf(t, kernels::estimate_bandwidth(t, cfg.bandwidth_k).sigma);
    const auto ky = kernels::gram_rbf(y, kernels::estimate_bandwidth(y, cfg.bandwidth_k).sigma);
    sum.i_xt += renyi::mutual_information(kx, kt, entropy);
    sum.i_yt += renyi::mutual_information(ky, kt, entropy);
    ++chunks;
  }
  if (chunks == 0) {
    throw ArgumentError("no probe chunk is larger than bandwidth_k");
  }
  return {sum.i_xt / static_cast<double>(chunks), sum.i_yt / static_cast<double>(chunks)};
}

InfoMeasurement measure_info(const nn::Mlp<float>& mlp, const data::Dataset& probe,
                             const TrainConfig& cfg, std::size_t subsample_n) {
  if (probe.size() < 2) {
    throw ArgumentError("probe set needs at least 2 samples");
  }
  const RowMatrixD t = nn::infer(mlp, probe.features).bottleneck.cast<double>();
  return measure_info_activations(probe, t, cfg, subsample_n);
}

double error_rate(const nn::Mlp<float>& mlp, const data::Dataset& dataset) {
  if (dataset.size() == 0) {
    throw ArgumentError("error_rate on an empty dataset");
  }
  constexpr std::size_t kChunk = 1000;
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, dataset.size() - start);
    const RowMatrixF x = dataset.features.middleRows(static_cast<Eigen::Index>(start),
                                                     static_cast<Eigen::Index>(len));
    const auto pred = nn::predict(mlp, x);
    for (std::size_t i = 0; i < len; ++i) {
      wrong += pred[i] != dataset.labels[start + i] ? 1 : 0;
    }
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(dataset.size());
}

data::Dataset probe_subset(const data::Dataset& train_set, std::size_t probe_size,
                           std::uint64_t seed) {
  std::vector<std::size_t> idx(train_set.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(std::min(probe_size, idx.size()));
  return train_set.subset(idx);
}

// ---- training ---------------------------------------------------------------

TrainResult train(const data::Dataset& train_set, const data::Dataset& val_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  train_set.validate();
  val_set.validate();
  if (train_set.dim() != cfg.layer_dims.front() || val_set.dim() != cfg.layer_dims.front()) {
    throw ArgumentError(fmt::format("data width {} does not match layer_dims[0] = {}",
                                    train_set.dim(), cfg.layer_dims.front()));
  }
  if (train_set.num_classes != cfg.layer_dims.back()) {
    throw ArgumentError("num_classes does not match the output width");
  }
  if (train_set.size() < cfg.batch_size || val_set.size() == 0) {
    throw ArgumentError("training set smaller than one batch, or empty validation set");
  }

  nn::Mlp<float> mlp(cfg.layer_dims, cfg.bottleneck_index, cfg.seed);
  nn::Optimizer<float> optimizer(cfg.optimizer);
  const data::Dataset probe = probe_subset(train_set, cfg.probe_size, cfg.seed);
  const std::size_t subsample = std::min(cfg.subsample_n, probe.size());

  TrainResult result{mlp, mlp, {}, 0};
  double best_error = std::numeric_limits<double>::infinity();
  nn::Tape<float> tape;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    nn::schedule_epoch(optimizer, epoch);
    const auto plan = data::batch_indices(train_set.size(), cfg.batch_size, cfg.seed,
                                          static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    std::size_t floored = 0;
    for (std::size_t b = 0; b < plan.size(); ++b) {
      const data::Batch batch = data::make_batch(train_set, plan[b]);
      tape.reset();
      DibLoss<float> step;
      try {
        step = dib_loss(tape, batch, mlp, cfg);
      } catch (const NumericError& e) {
        // Non-finite activations surface in the kernel code before the loss.
        const double nan = std::numeric_limits<double>::quiet_NaN();
        throw TrainingDiverged(fmt::format("numerical failure at epoch {} batch {}: {} (sigma_x "
                                           "and sigma_t unavailable)",
                                           epoch + 1, b, e.what()),
                               epoch + 1, b, nan, nan);
      }
      if (!std::isfinite(step.value)) {
        throw TrainingDiverged(
            fmt::format("non-finite loss at epoch {} batch {} (ce {}, i_xt {}, sigma_x {:.4g}, "
                        "sigma_t {:.4g})",
                        epoch + 1, b, step.cross_entropy, step.i_xt, step.sigma_x, step.sigma_t),
            epoch + 1, b, step.sigma_x, step.sigma_t);
      }
      tape.backward(step.loss);
      nn::opt_step(optimizer, mlp);
      loss_sum += step.value;
      floored += step.sigma_t_floored;
    }
    if (floored > 0) {
      spdlog::warn("beta {:g} epoch {}: bottleneck collapsed in {}/{} batches, sigma_t floored",
                   cfg.beta, epoch + 1, floored, plan.size());
    }

    InfoPlanePoint point;
    point.epoch = epoch + 1;
    const auto info = measure_info(mlp, probe, cfg, subsample);
    point.i_xt = info.i_xt;
    point.i_yt = info.i_yt;
    point.train_loss = loss_sum / static_cast<double>(plan.size());
    point.test_error = error_rate(mlp, val_set);
    if (point.test_error < best_error) {
      best_error = point.test_error;
      result.best = mlp;
      result.best_epoch = point.epoch;
    }
    spdlog::info("beta {:g} epoch {}/{}: loss {:.5f} I(X;T) {:.4f} I(Y;T) {:.4f} val err {:.2f}%",
                 cfg.beta, point.epoch, cfg.epochs, point.train_loss, point.i_xt, point.i_yt,
                 point.test_error);
    result.log.push_back(point);
    if (on_epoch) {
      on_epoch(point);
    }
  }
  result.final = std::move(mlp);
  return result;
}

SweepResult ib_curve_sweep(const data::Dataset& train_set, const data::Dataset& val_set,
                           std::span<const double> betas, const TrainConfig& cfg, unsigned jobs) {
  if (betas.empty()) {
    throw ArgumentError("beta sweep needs at least one beta");
  }
  for (double b : betas) {
    if (!(b >= 0.0)) {
      throw ArgumentError("beta must be ≥ 0");
    }
  }
  SweepResult out;
  out.points.resize(betas.size());
  out.h_y = std::log2(static_cast<double>(train_set.num_classes));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < betas.size(); i = next++) {
      try {
        TrainConfig run = cfg;
        run.beta = betas[i];
        run.seed = cfg.seed + i;
        const auto result = train(train_set, val_set, run);
        const auto& last = result.log.back();
        out.points[i] = {betas[i], last.i_xt, last.i_yt};
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) {
          failure = std::current_exception();
        }
        next = betas.size();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(betas.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back(worker);
    }
  }
  if (failure) {
    std::rethrow_exception(failure);
  }
  return out;
}

// ---- CSV ----------------------------------------------------------------------

void write_infoplane_csv(const std::filesystem::path& path,
                         std::span<const InfoPlanePoint> log) {
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write '{}'", path.string()));
  }
  out << "epoch,i_xt,i_yt,train_loss,test_error\n";
  for (const auto& p : log) {
    out << fmt::format("{},{:.10g},{:.10g},{:.10g},{:.4f}\n", p.epoch, p.i_xt, p.i_yt,
                       p.train_loss, p.test_error);
  }
}

void write_ibcurve_csv(const std::filesystem::path& path, std::span<const IBCurvePoint> points) {
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write '{}'", path.string()));
  }
  out << "beta,i_xt,i_yt\n";
  for (const auto& p : points) {
    out << fmt::format("{:g},{:.10g},{:.10g}\n", p.beta, p.i_xt, p.i_yt);
  }
}

}  // namespace dib::ib

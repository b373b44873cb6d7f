#include "dib/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "dib/attacks.hpp"
#include "dib/errors.hpp"
#include "dib/kernels.hpp"
#include "dib/renyi.hpp"
#include "dib/trainer.hpp"

#ifndef DIB_VERSION
#define DIB_VERSION "unknown"
#endif

namespace dib::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataFiles {
  fs::path train_images;
  fs::path train_labels;
  fs::path test_images;
  fs::path test_labels;
};

struct RunConfig {
  json raw;
  fs::path source_dir;
  ib::TrainConfig train;
  std::size_t val_count = 10000;
  std::size_t train_subset = 0;  // 0 keeps the whole training split
  std::uint64_t split_seed = 0;
  attacks::AttackConfig attack;
  bool dump_images = false;
  std::vector<double> betas{0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0};
};

RunConfig load_config(const Options& opts) {
  if (opts.config.empty()) {
    throw UsageError("--config is required");
  }
  std::ifstream in(opts.config);
  if (!in) {
    throw UsageError(fmt::format("cannot open config '{}'", opts.config.string()));
  }
  RunConfig rc;
  rc.source_dir = opts.config.parent_path();
  try {
    rc.raw = json::parse(in);
    if (rc.raw.contains("train")) {
      rc.raw.at("train").get_to(rc.train);
    }
    if (opts.seed) {
      rc.train.seed = *opts.seed;
    }
    if (rc.raw.contains("data")) {
      const json& d = rc.raw.at("data");
      rc.val_count = d.value("val_count", rc.val_count);
      rc.train_subset = d.value("train_subset", rc.train_subset);
      rc.split_seed = d.value("split_seed", rc.split_seed);
    }
    if (rc.raw.contains("attack")) {
      const json& a = rc.raw.at("attack");
      rc.attack.epsilons = a.value("epsilons", rc.attack.epsilons);
      rc.dump_images = a.value("dump_images", false);
    }
    if (rc.raw.contains("sweep")) {
      rc.betas = rc.raw.at("sweep").value("betas", rc.betas);
    }
  } catch (const json::exception& e) {
    throw UsageError(fmt::format("invalid config '{}': {}", opts.config.string(), e.what()));
  }
  rc.train.validate();
  rc.attack.validate();
  return rc;
}

// A configured path is tried as given, next to the config file, then under
// DIB_DATA_DIR. Unconfigured paths fall back to DIB_DATA_DIR/<default_name>.
std::optional<fs::path> locate(const RunConfig* rc, const char* key, const char* default_name) {
  const char* env = std::getenv("DIB_DATA_DIR");
  std::vector<fs::path> candidates;
  if (rc != nullptr && rc->raw.contains("data") && rc->raw.at("data").contains(key)) {
    const fs::path p = rc->raw.at("data").at(key).get<std::string>();
    candidates.push_back(p);
    if (p.is_relative()) {
      candidates.push_back(rc->source_dir / p);
      if (env != nullptr) {
        candidates.push_back(fs::path(env) / p);
      }
    }
  } else if (env != nullptr) {
    candidates.push_back(fs::path(env) / default_name);
  }
  for (const auto& c : candidates) {
    if (fs::is_regular_file(c)) {
      return c;
    }
  }
  return std::nullopt;
}

fs::path require(const RunConfig* rc, const char* key, const char* default_name) {
  if (auto p = locate(rc, key, default_name)) {
    return *p;
  }
  throw UsageError(fmt::format(
      "dataset file for '{}' not found (set data.{} in the config or DIB_DATA_DIR)", key, key));
}

struct TrainData {
  data::Dataset train;
  data::Dataset val;
};

TrainData load_train_data(const RunConfig& rc, const DataFiles& files) {
  const auto full = data::load_mnist_idx(files.train_images, files.train_labels,
                                         rc.train.layer_dims.back());
  auto [train, val] = data::split(full, rc.val_count, rc.split_seed);
  if (rc.train_subset > 0 && rc.train_subset < train.size()) {
    std::vector<std::size_t> idx(rc.train_subset);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      idx[i] = i;
    }
    train = train.subset(idx);
  }
  return {std::move(train), std::move(val)};
}

class Manifest {
 public:
  Manifest(std::string command, const Options& opts) : started_(Clock::now()) {
    doc_["command"] = std::move(command);
    doc_["code_version"] = DIB_VERSION;
    doc_["out_dir"] = opts.out_dir.string();
    doc_["datasets"] = json::object();
    doc_["outputs"] = json::array();
  }

  void config(const RunConfig& rc) {
    doc_["config"] = rc.raw;
    doc_["train_config"] = json(rc.train);
    doc_["seed"] = rc.train.seed;
    doc_["config_hash"] = ib::config_hash(rc.train);
  }
  void dataset(const fs::path& p) { doc_["datasets"][p.string()] = data::file_checksum(p); }
  void output(const fs::path& p) { doc_["outputs"].push_back(p.filename().string()); }
  json& extra() { return doc_; }

  void write(const fs::path& out_dir) {
    doc_["wall_clock_seconds"] =
        std::chrono::duration<double>(Clock::now() - started_).count();
    for (const auto& name : doc_["outputs"]) {
      if (!fs::exists(out_dir / name.get<std::string>())) {
        throw IoError(fmt::format("declared output '{}' is missing", name.get<std::string>()));
      }
    }
    std::ofstream out(out_dir / "manifest.json");
    out << doc_.dump(2) << "\n";
  }

 private:
  json doc_;
  Clock::time_point started_;
};

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ib::TrainingDiverged& e) {
    err << "error: training diverged: " << e.what() << "\n";
    return kNumerical;
  } catch (const NumericError& e) {
    err << "error: numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConsistencyError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

// Strips "-0.000000".
std::string fixed6(double v) {
  std::string s = fmt::format("{:.6f}", v);
  if (s == "-0.000000") {
    s = "0.000000";
  }
  return s;
}

}  // namespace

// ---- train ------------------------------------------------------------------

int cmd_train(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig rc = load_config(opts);
    DataFiles files;
    files.train_images = require(&rc, "train_images", "train-images-idx3-ubyte");
    files.train_labels = require(&rc, "train_labels", "train-labels-idx1-ubyte");
    const auto test_images = locate(&rc, "test_images", "t10k-images-idx3-ubyte");
    const auto test_labels = locate(&rc, "test_labels", "t10k-labels-idx1-ubyte");
    const TrainData td = load_train_data(rc, files);
    std::optional<data::Dataset> test;
    if (test_images && test_labels) {
      test = data::load_mnist_idx(*test_images, *test_labels, rc.train.layer_dims.back());
    }

    Manifest manifest("train", opts);
    manifest.config(rc);
    manifest.dataset(files.train_images);
    manifest.dataset(files.train_labels);
    manifest.extra()["info_plane_probe"] = {
        {"source", "train"}, {"size", std::min(rc.train.probe_size, td.train.size())},
        {"chunk", rc.train.subsample_n}};

    fs::create_directories(opts.out_dir);
    const auto result = ib::train(td.train, td.val, rc.train);

    const fs::path ckpt = opts.out_dir / "model.ckpt";
    nn::save_checkpoint(ckpt, result.best, {rc.train.seed, ib::config_hash(rc.train)});
    manifest.output(ckpt);
    manifest.output(fs::path(ckpt.string() + ".bin"));
    const fs::path infoplane = opts.out_dir / "infoplane.csv";
    ib::write_infoplane_csv(infoplane, result.log);
    manifest.output(infoplane);
    manifest.extra()["best_epoch"] = result.best_epoch;

    if (test) {
      manifest.dataset(*test_images);
      manifest.dataset(*test_labels);
      const double e = ib::error_rate(result.best, *test);
      manifest.extra()["test_error_percent"] = e;
      out << fmt::format("test error: {:.2f}%\n", e);
    }
    manifest.write(opts.out_dir);
    out << "wrote " << ckpt.string() << ", " << infoplane.string() << "\n";
    return kOk;
  });
}

// ---- eval ---------------------------------------------------------------------

int cmd_eval(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.checkpoint.empty()) {
      throw UsageError("--checkpoint is required");
    }
    std::optional<RunConfig> rc;
    if (!opts.config.empty()) {
      rc = load_config(opts);
    }
    const RunConfig* rcp = rc ? &*rc : nullptr;
    const fs::path images = require(rcp, "test_images", "t10k-images-idx3-ubyte");
    const fs::path labels = require(rcp, "test_labels", "t10k-labels-idx1-ubyte");
    const auto ckpt = nn::load_checkpoint(opts.checkpoint);
    const auto test = data::load_mnist_idx(images, labels, ckpt.mlp.layer_dims().back());

    Manifest manifest("eval", opts);
    if (rc) {
      manifest.config(*rc);
    }
    manifest.extra()["checkpoint"] = opts.checkpoint.string();
    manifest.dataset(images);
    manifest.dataset(labels);

    const double e = ib::error_rate(ckpt.mlp, test);
    fs::create_directories(opts.out_dir);
    const fs::path csv = opts.out_dir / "eval.csv";
    {
      std::ofstream f(csv);
      f << "samples,test_error\n" << test.size() << ',' << fmt::format("{:.2f}", e) << "\n";
    }
    manifest.output(csv);
    manifest.extra()["test_error_percent"] = e;
    manifest.write(opts.out_dir);
    out << fmt::format("test error: {:.2f}%\n", e);
    return kOk;
  });
}

// ---- attack ---------------------------------------------------------------------

int cmd_attack(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.checkpoint.empty()) {
      throw UsageError("--checkpoint is required");
    }
    const RunConfig rc = load_config(opts);
    const fs::path images = require(&rc, "test_images", "t10k-images-idx3-ubyte");
    const fs::path labels = require(&rc, "test_labels", "t10k-labels-idx1-ubyte");
    const auto ckpt = nn::load_checkpoint(opts.checkpoint);
    const auto test = data::load_mnist_idx(images, labels, ckpt.mlp.layer_dims().back());

    Manifest manifest("attack", opts);
    manifest.config(rc);
    manifest.extra()["checkpoint"] = opts.checkpoint.string();
    manifest.dataset(images);
    manifest.dataset(labels);

    fs::create_directories(opts.out_dir);
    fs::path dump;
    if (rc.dump_images) {
      dump = opts.out_dir / "fgsm";
      fs::create_directories(dump);
    }
    const auto curve = attacks::robustness_curve(ckpt.mlp, test, rc.attack, dump);
    const fs::path csv = opts.out_dir / "robustness.csv";
    attacks::write_robustness_csv(csv, curve);
    manifest.output(csv);
    manifest.write(opts.out_dir);
    for (const auto& p : curve) {
      out << fmt::format("epsilon {:.2f}: accuracy {:.2f}%\n", p.epsilon, p.accuracy);
    }
    return kOk;
  });
}

// ---- ibcurve --------------------------------------------------------------------

int cmd_ibcurve(const Options& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RunConfig rc = load_config(opts);
    if (rc.betas.empty()) {
      throw UsageError("sweep.betas must not be empty");
    }
    for (double b : rc.betas) {
      if (!(b >= 0.0)) {
        throw UsageError("beta must be ≥ 0");
      }
    }
    DataFiles files;
    files.train_images = require(&rc, "train_images", "train-images-idx3-ubyte");
    files.train_labels = require(&rc, "train_labels", "train-labels-idx1-ubyte");
    const TrainData td = load_train_data(rc, files);

    Manifest manifest("ibcurve", opts);
    manifest.config(rc);
    manifest.dataset(files.train_images);
    manifest.dataset(files.train_labels);
    manifest.extra()["betas"] = rc.betas;
    manifest.extra()["seed_policy"] = "seed + beta index";

    fs::create_directories(opts.out_dir);
    const auto sweep = ib::ib_curve_sweep(td.train, td.val, rc.betas, rc.train, opts.jobs);
    const fs::path csv = opts.out_dir / "ibcurve.csv";
    ib::write_ibcurve_csv(csv, sweep.points);
    manifest.output(csv);

    double max_ixt = sweep.h_y;
    for (const auto& p : sweep.points) {
      max_ixt = std::max(max_ixt, p.i_xt);
    }
    const fs::path theory = opts.out_dir / "ibcurve_theory.csv";
    {
      std::ofstream f(theory);
      f << "i_xt,i_yt\n";
      for (double x : {0.0, sweep.h_y, max_ixt + 1.0}) {
        f << fmt::format("{:.10g},{:.10g}\n", x, ib::ib_envelope(x, sweep.h_y));
      }
    }
    manifest.output(theory);
    manifest.extra()["h_y"] = sweep.h_y;
    manifest.write(opts.out_dir);
    for (const auto& p : sweep.points) {
      out << fmt::format("beta {:g}: I(X;T) {:.4f} I(Y;T) {:.4f}\n", p.beta, p.i_xt, p.i_yt);
    }
    return kOk;
  });
}

// ---- estimate ---------------------------------------------------------------------

RowMatrixD read_csv_matrix(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError(fmt::format("cannot open '{}'", path.string()));
  }
  std::vector<std::vector<double>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.find_first_not_of(" \t") == std::string::npos) {
      continue;
    }
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || cell.find_first_not_of(" \t", static_cast<std::size_t>(
                                                                    end - cell.c_str())) !=
                                     std::string::npos) {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (first) {
        first = false;
        continue;
      }
      throw FormatError(fmt::format("non-numeric row in '{}': {}", path.string(), line));
    }
    first = false;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw FormatError(fmt::format("ragged rows in '{}'", path.string()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) {
    throw FormatError(fmt::format("'{}' has no data rows", path.string()));
  }
  RowMatrixD m(static_cast<Eigen::Index>(rows.size()),
               static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
  }
  return m;
}

EstimateResult estimate(const RowMatrixD& x, const RowMatrixD& y, const EstimateOptions& opts) {
  if (x.rows() != y.rows()) {
    throw ArgumentError(fmt::format("row count mismatch: {} vs {}", x.rows(), y.rows()));
  }
  if (x.rows() < 2) {
    throw ArgumentError("need at least 2 rows");
  }
  const renyi::EntropyConfig cfg{opts.alpha};
  cfg.validate();
  // The heuristic needs n > k; small files use every other sample.
  const int k = std::min<int>(opts.k, static_cast<int>(x.rows()) - 1);
  const double sx = opts.sigma_x ? *opts.sigma_x : kernels::estimate_bandwidth(x, k).sigma;
  const double sy = opts.sigma_y ? *opts.sigma_y : kernels::estimate_bandwidth(y, k).sigma;
  const auto kx = kernels::gram_rbf(x, sx);
  const auto ky = kernels::gram_rbf(y, sy);

  EstimateResult r;
  r.h_x = renyi::entropy(kernels::normalize(kx), cfg);
  r.h_y = renyi::entropy(kernels::normalize(ky), cfg);
  r.h_xy = renyi::joint_entropy(kx, ky, cfg);
  r.i_xy = r.h_x + r.h_y - r.h_xy;
  return r;
}

int cmd_estimate(const EstimateOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const RowMatrixD x = read_csv_matrix(opts.x_csv);
    const RowMatrixD y = read_csv_matrix(opts.y_csv);
    if (x.rows() != y.rows()) {
      throw UsageError(fmt::format("row count mismatch: {} has {} rows, {} has {}",
                                   opts.x_csv.string(), x.rows(), opts.y_csv.string(), y.rows()));
    }
    const auto r = estimate(x, y, opts);
    out << "H(X) = " << fixed6(r.h_x) << "\n";
    out << "H(Y) = " << fixed6(r.h_y) << "\n";
    out << "H(X,Y) = " << fixed6(r.h_xy) << "\n";
    out << "I(X;Y) = " << fixed6(r.i_xy) << "\n";
    return kOk;
  });
}

// ---- entry point -----------------------------------------------------------------

int run(int argc, char** argv) {
  CLI::App app{"Deterministic information bottleneck training and Renyi estimators"};
  app.require_subcommand(1);
  app.set_version_flag("--version", DIB_VERSION);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Per-epoch progress on stderr");

  Options opts;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub, bool needs_config, bool needs_checkpoint) {
    auto* c = sub->add_option("--config", opts.config, "JSON run configuration");
    if (needs_config) {
      c->required();
    }
    if (needs_checkpoint) {
      sub->add_option("--checkpoint", opts.checkpoint, "Checkpoint manifest")->required();
    }
    sub->add_option("--out", opts.out_dir, "Output directory");
    sub->add_option("--seed", seed, "Override the configured seed");
  };

  auto* train = app.add_subcommand("train", "Train an MLP with the DIB objective");
  add_common(train, true, false);
  auto* eval = app.add_subcommand("eval", "Test error of a checkpoint");
  add_common(eval, false, true);
  auto* attack = app.add_subcommand("attack", "FGSM robustness curve of a checkpoint");
  add_common(attack, true, true);
  auto* ibcurve = app.add_subcommand("ibcurve", "Train one model per beta and collect the IB curve");
  add_common(ibcurve, true, false);
  ibcurve->add_option("--jobs", opts.jobs, "Concurrent training runs")
      ->check(CLI::PositiveNumber);

  EstimateOptions est;
  auto* estimate_cmd = app.add_subcommand("estimate", "Renyi entropies and MI of two CSV files");
  estimate_cmd->add_option("x_csv", est.x_csv, "Samples of X, one row each")->required();
  estimate_cmd->add_option("y_csv", est.y_csv, "Samples of Y, one row each")->required();
  estimate_cmd->add_option("--alpha", est.alpha, "Entropy order");
  estimate_cmd->add_option("--k", est.k, "Neighbours in the bandwidth heuristic");
  estimate_cmd->add_option("--sigma-x", est.sigma_x, "Fixed bandwidth for X");
  estimate_cmd->add_option("--sigma-y", est.sigma_y, "Fixed bandwidth for Y");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);
  for (auto* sub : {train, eval, attack, ibcurve}) {
    if (sub->parsed() && sub->count("--seed") > 0) {
      opts.seed = seed;
    }
  }

  if (train->parsed()) {
    return cmd_train(opts, std::cout, std::cerr);
  }
  if (eval->parsed()) {
    return cmd_eval(opts, std::cout, std::cerr);
  }
  if (attack->parsed()) {
    return cmd_attack(opts, std::cout, std::cerr);
  }
  if (ibcurve->parsed()) {
    return cmd_ibcurve(opts, std::cout, std::cerr);
  }
  return cmd_estimate(est, std::cout, std::cerr);
}

}  // namespace dib::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "dib/data.hpp"

namespace dib::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,      // bad flags, bad config, missing or malformed input files
  kNumerical = 3,  // non-finite loss or broken spectra
};

struct Options {
  std::filesystem::path config;
  std::filesystem::path checkpoint;
  std::filesystem::path out_dir = "dib-out";
  unsigned jobs = 1;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_eval(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_attack(const Options& opts, std::ostream& out, std::ostream& err);
int cmd_ibcurve(const Options& opts, std::ostream& out, std::ostream& err);

struct EstimateOptions {
  std::filesystem::path x_csv;
  std::filesystem::path y_csv;
  double alpha = 1.01;
  int k = 10;
  // Fixed bandwidths instead of the k-NN heuristic.
  std::optional<double> sigma_x;
  std::optional<double> sigma_y;
};

struct EstimateResult {
  double h_x = 0.0;
  double h_y = 0.0;
  double h_xy = 0.0;
  double i_xy = 0.0;
};

EstimateResult estimate(const RowMatrixD& x, const RowMatrixD& y, const EstimateOptions& opts);
int cmd_estimate(const EstimateOptions& opts, std::ostream& out, std::ostream& err);

/// Numeric CSV, one row per sample. A non-numeric first line is a header.
RowMatrixD read_csv_matrix(const std::filesystem::path& path);

/// Parses argv and dispatches to a subcommand.
int run(int argc, char** argv);

}  // namespace dib::cli

#include "dib/renyi.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "dib/errors.hpp"

namespace dib::renyi {
namespace {

constexpr double kSymmetryTol = 1e-10;
constexpr double kTraceTol = 1e-8;

// Eigen-decomposed trace-one matrix with the clamped spectrum and the power
// sum tr(A^alpha) already evaluated.
struct Spectrum {
  SymEigResult eig;
  double power_sum = 0.0;
};

Spectrum spectrum(const Eigen::MatrixXd& normalized, double alpha) {
  Spectrum s{sym_eig(normalized), 0.0};
  for (Eigen::Index i = 0; i < s.eig.eigenvalues.size(); ++i) {
    double& lambda = s.eig.eigenvalues[i];
    if (lambda < -kEigenClamp) {
      throw NumericError(fmt::format(
          "Gram matrix is not positive semi-definite (eigenvalue {:.3e})", lambda));
    }
    if (lambda < 0.0) {
      lambda = 0.0;
    }
    s.power_sum += std::pow(lambda, alpha);
  }
  if (!(s.power_sum > 0.0) || !std::isfinite(s.power_sum)) {
    throw NumericError(fmt::format("degenerate spectrum, tr(A^alpha) = {}", s.power_sum));
  }
  return s;
}

double value_from(const Spectrum& s, double alpha) {
  return std::log2(s.power_sum) / (1.0 - alpha);
}

double grad_scale(double alpha) {
  return alpha / ((1.0 - alpha) * std::numbers::ln2);
}

// alpha/((1-alpha) ln2) * A^(alpha-1) / tr(A^alpha), spectrally.
Eigen::MatrixXd grad_from(const Spectrum& s, double alpha) {
  const Eigen::VectorXd& lambda = s.eig.eigenvalues;
  Eigen::VectorXd p(lambda.size());
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda[i] <= kEigenClamp) {
      if (alpha < 1.0) {
        throw NumericError(fmt::format(
            "entropy gradient diverges: eigenvalue {:.3e} with alpha {} < 1", lambda[i], alpha));
      }
      p[i] = 0.0;
    } else {
      p[i] = std::pow(lambda[i], alpha - 1.0);
    }
  }
  const Eigen::MatrixXd& v = s.eig.eigenvectors;
  Eigen::MatrixXd g = v * p.asDiagonal() * v.transpose();
  g = 0.5 * (g + g.transpose());
  g *= grad_scale(alpha) / s.power_sum;
  return g;
}

void check_normalized(const GramMatrix& a) {
  const double tr = a.entries.trace();
  if (std::abs(tr - 1.0) > kTraceTol) {
    throw ArgumentError(fmt::format("entropy expects a trace-one matrix, trace is {}", tr));
  }
}

void check_same_size(const GramMatrix& a, const GramMatrix& b) {
  if (a.entries.rows() != b.entries.rows() || a.entries.cols() != b.entries.cols() ||
      a.entries.rows() != a.entries.cols()) {
    throw ArgumentError(fmt::format("Gram dimension mismatch: {}x{} vs {}x{}", a.entries.rows(),
                                    a.entries.cols(), b.entries.rows(), b.entries.cols()));
  }
}

double positive_trace(const Eigen::MatrixXd& m) {
  const double tr = m.trace();
  if (!(tr > 0.0) || !std::isfinite(tr)) {
    throw NumericError(fmt::format("trace must be positive, got {}", tr));
  }
  return tr;
}

// Gradient of f(K / tr K) with respect to raw K, given g = df/dA at A = K/trK.
Eigen::MatrixXd through_normalization(const Eigen::MatrixXd& g, const Eigen::MatrixXd& normalized,
                                      double trace) {
  const double inner = (g.array() * normalized.array()).sum();
  Eigen::MatrixXd out = g;
  out.diagonal().array() -= inner;
  return out / trace;
}

struct MarginalTerm {
  double value;
  Eigen::MatrixXd grad_raw;
};

MarginalTerm marginal(const Eigen::MatrixXd& raw, double alpha) {
  const double tr = positive_trace(raw);
  const Eigen::MatrixXd normalized = raw / tr;
  const Spectrum s = spectrum(normalized, alpha);
  return {value_from(s, alpha), through_normalization(grad_from(s, alpha), normalized, tr)};
}

}  // namespace

void EntropyConfig::validate() const {
  if (!(alpha > 0.0) || alpha == 1.0 || !std::isfinite(alpha)) {
    throw ArgumentError(fmt::format("alpha must be in (0,1) or (1,inf), got {}", alpha));
  }
}

SymEigResult sym_eig(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) {
    throw ArgumentError("sym_eig needs a square matrix");
  }
  if (!m.allFinite()) {
    throw NumericError("sym_eig input has non-finite entries");
  }
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol) {
    throw ArgumentError("sym_eig input is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) {
    throw NumericError("symmetric eigensolver did not converge");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

double entropy(const GramMatrix& a, const EntropyConfig& cfg) {
  cfg.validate();
  check_normalized(a);
  return value_from(spectrum(a.entries, cfg.alpha), cfg.alpha);
}

double joint_entropy(const GramMatrix& a, const GramMatrix& b, const EntropyConfig& cfg) {
  cfg.validate();
  check_same_size(a, b);
  const Eigen::MatrixXd c = a.entries.cwiseProduct(b.entries);
  const double tr = positive_trace(c);
  return value_from(spectrum(c / tr, cfg.alpha), cfg.alpha);
}

double mutual_information(const GramMatrix& a, const GramMatrix& b, const EntropyConfig& cfg) {
  cfg.validate();
  check_same_size(a, b);
  const double ha = value_from(spectrum(a.entries / positive_trace(a.entries), cfg.alpha),
                               cfg.alpha);
  const double hb = value_from(spectrum(b.entries / positive_trace(b.entries), cfg.alpha),
                               cfg.alpha);
  return ha + hb - joint_entropy(a, b, cfg);
}

EntropyWithGrad entropy_grad(const GramMatrix& a, const EntropyConfig& cfg) {
  cfg.validate();
  check_normalized(a);
  const Spectrum s = spectrum(a.entries, cfg.alpha);
  return {value_from(s, cfg.alpha), grad_from(s, cfg.alpha)};
}

EntropyWithGrad joint_entropy_grad(const GramMatrix& a, const GramMatrix& b,
                                   const EntropyConfig& cfg) {
  cfg.validate();
  check_same_size(a, b);
  const Eigen::MatrixXd c = a.entries.cwiseProduct(b.entries);
  const double tr = positive_trace(c);
  const Eigen::MatrixXd normalized = c / tr;
  const Spectrum s = spectrum(normalized, cfg.alpha);
  const Eigen::MatrixXd grad_c =
      through_normalization(grad_from(s, cfg.alpha), normalized, tr);
  return {value_from(s, cfg.alpha), grad_c.cwiseProduct(b.entries)};
}

MutualInfoWithGrad mi_grad(const GramMatrix& a, const GramMatrix& b, const EntropyConfig& cfg) {
  cfg.validate();
  check_same_size(a, b);
  const MarginalTerm ha = marginal(a.entries, cfg.alpha);
  const MarginalTerm hb = marginal(b.entries, cfg.alpha);
  const MarginalTerm hab = marginal(a.entries.cwiseProduct(b.entries), cfg.alpha);

  MutualInfoWithGrad out;
  out.value = ha.value + hb.value - hab.value;
  out.grad_a = ha.grad_raw - hab.grad_raw.cwiseProduct(b.entries);
  out.grad_b = hb.grad_raw - hab.grad_raw.cwiseProduct(a.entries);
  return out;
}

SampleGradient mi_grad_samples(const RowMatrixD& t, const GramMatrix& a_x, double sigma_t,
                               const EntropyConfig& cfg) {
  if (t.rows() != a_x.entries.rows()) {
    throw ArgumentError(fmt::format("{} samples but input Gram is {}x{}", t.rows(),
                                    a_x.entries.rows(), a_x.entries.cols()));
  }
  const GramMatrix k_t = kernels::gram_rbf(t, sigma_t);
  const MutualInfoWithGrad mi = mi_grad(a_x, k_t, cfg);

  // dK_ij/dt_i = K_ij (t_j - t_i) / sigma^2 and K_ij = K_ji, so
  // dI/dt_i = sum_j W_ij (t_j - t_i) / sigma^2 with W = (G + G^T) o K.
  Eigen::MatrixXd w = (mi.grad_b + mi.grad_b.transpose()).cwiseProduct(k_t.entries);
  w.diagonal().setZero();
  const Eigen::VectorXd row_sums = w.rowwise().sum();
  RowMatrixD grad = w * t;
  grad -= row_sums.asDiagonal() * t;
  grad /= sigma_t * sigma_t;
  return {mi.value, std::move(grad)};
}

}  // namespace dib::renyi

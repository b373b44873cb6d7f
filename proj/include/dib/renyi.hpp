#pragma once

#include <Eigen/Dense>

#include "dib/data.hpp"
#include "dib/kernels.hpp"

// Matrix-based Renyi alpha-order entropy functionals over Gram matrices and
// their analytic gradients. Values are in bits.
//
// Conventions:
//  * H(A) = log2(sum_i lambda_i(A)^alpha) / (1 - alpha) on a trace-one A.
//  * H(A,B) = H((A o B) / tr(A o B)), o the Hadamard product.
//  * I(A;B) = H(A) + H(B) - H(A,B), marginals trace-normalized internally.
//  * Gradients are exact derivatives of the base-2 quantities, so they carry
//    a 1/ln 2 factor.
//  * Eigenvalues in [-1e-8, 0) are PSD round-off and treated as zero; anything
//    more negative is a NumericError.
namespace dib::renyi {

using kernels::GramMatrix;

inline constexpr double kDefaultAlpha = 1.01;
inline constexpr double kEigenClamp = 1e-8;

struct EntropyConfig {
  double alpha = kDefaultAlpha;

  /// Throws ArgumentError unless alpha > 0 and alpha != 1.
  void validate() const;
};

/// Ascending eigenvalues with orthonormal eigenvectors as columns.
struct SymEigResult {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd eigenvectors;
};

struct EntropyWithGrad {
  double value = 0.0;
  Eigen::MatrixXd grad;
};

struct MutualInfoWithGrad {
  double value = 0.0;
  Eigen::MatrixXd grad_a;  // d I / d A, A raw
  Eigen::MatrixXd grad_b;  // d I / d B, B raw
};

struct SampleGradient {
  double value = 0.0;  // I(A_x; K_t) in bits
  RowMatrixD grad;     // d I / d t, same shape as t
};

/// Full spectral decomposition of a symmetric matrix (asymmetry tolerance 1e-10).
SymEigResult sym_eig(const Eigen::MatrixXd& m);

/// Entropy of a trace-one Gram matrix.
double entropy(const GramMatrix& a, const EntropyConfig& cfg = {});

double joint_entropy(const GramMatrix& a, const GramMatrix& b, const EntropyConfig& cfg = {});

double mutual_information(const GramMatrix& a, const GramMatrix& b,
                          const EntropyConfig& cfg = {});

/// Gradient with respect to the entries of the trace-one matrix itself:
/// alpha / ((1 - alpha) ln 2) * A^(alpha-1) / tr(A^alpha).
EntropyWithGrad entropy_grad(const GramMatrix& a, const EntropyConfig& cfg = {});

/// Gradient of H(A,B) with respect to A (raw or normalized; the value is
/// scale invariant). Swap the arguments for the derivative with respect to B.
EntropyWithGrad joint_entropy_grad(const GramMatrix& a, const GramMatrix& b,
                                   const EntropyConfig& cfg = {});

/// Total derivative of I(A;B) with respect to both raw Gram inputs,
/// including the trace normalization of the marginals:
///   dI/dA = dH(A/trA)/dA - dH(A,B)/dA
MutualInfoWithGrad mi_grad(const GramMatrix& a, const GramMatrix& b,
                           const EntropyConfig& cfg = {});

/// I(A_x; K_t) and its gradient with respect to the samples t, where K_t is
/// the RBF Gram of t at bandwidth sigma_t (held constant). A_x carries no
/// gradient.
SampleGradient mi_grad_samples(const RowMatrixD& t, const GramMatrix& a_x, double sigma_t,
                               const EntropyConfig& cfg = {});

}  // namespace dib::renyi

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>

#include "specpool/operators.hpp"

namespace specpool {

// Truncated Laplace-Beltrami eigenbasis of one mesh. phi is M-orthonormal
// (phi' * M * phi = I), evals ascending and nonnegative. Immutable once built.
struct SpectralBasis {
  Eigen::MatrixXd phi;    // n x k
  Eigen::VectorXd evals;  // k
  MassDiagonal mass;      // n
  std::string shape_id;

  int k() const { return static_cast<int>(phi.cols()); }
  Eigen::Index n() const { return phi.rows(); }
};

struct EigenOptions {
  enum class Method { Auto, Dense, Lanczos };
  Method method = Method::Auto;
  int dense_threshold = 500;    // Auto uses the dense solver below this size
  double shift = -1e-8;         // shift-invert handles the zero eigenvalue
  double residual_tol = 1e-10;  // on ||W phi - lambda M phi|| / ||phi||
  int max_restart_factor = 10;  // restart cap = factor * k
  std::uint64_t seed = 0;       // start-vector seed
};

// Solves W phi = lambda M phi for the k smallest eigenvalues. Eigenvector
// signs are fixed so each column's largest-magnitude entry is positive; no
// rotation fixing is attempted inside numerically degenerate clusters.
SpectralBasis eigenbasis(const StiffnessMatrix& w, const MassDiagonal& mass, int k,
                         const EigenOptions& options = {});
SpectralBasis eigenbasis(const Mesh& mesh, int k, const EigenOptions& options = {});

// Spectral coefficients of vertex functions: coeffs = phi' * M * F.
struct CoefficientMatrix {
  Eigen::MatrixXd coeffs;  // k x d
  int basis_k = 0;
  int feature_dim = 0;
};

CoefficientMatrix project(const SpectralBasis& basis, const Eigen::MatrixXd& features);
Eigen::MatrixXd lift(const SpectralBasis& basis, const CoefficientMatrix& coeffs);

}  // namespace specpool

#pragma once

#include <Eigen/Core>
#include <string>

#include "specpool/mesh.hpp"
#include "specpool/spectral.hpp"

namespace specpool {

enum class FeatureKind { Hks, Wks, Xyz };

std::string feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string& name);

// Per-vertex probe functions driving functional-map estimation.
struct FeatureSet {
  Eigen::MatrixXd values;  // n x d
  FeatureKind kind = FeatureKind::Xyz;
  Eigen::VectorXd grid;    // time samples (HKS) or energy samples (WKS)
  double sigma = 0.0;      // WKS bandwidth

  int dim() const { return static_cast<int>(values.cols()); }
};

// Heat kernel signature h(x,t) = sum_j exp(-lambda_j t) phi_j(x)^2 on a
// log-spaced time grid; each column is L2-normalized under the mass weights.
FeatureSet hks(const SpectralBasis& basis, int num_times, double t_min, double t_max);

// 64 samples over [4 ln10 / lambda_{k-1}, 4 ln10 / lambda_1].
FeatureSet hks_default(const SpectralBasis& basis);

// Wave kernel signature w(x,e) = C_e sum_{j>=1} exp(-(e - log lambda_j)^2 /
// (2 sigma^2)) phi_j(x)^2, skipping the near-zero first eigenvalue. Energies
// span [log lambda_1, log lambda_{k-1}] shrunk by 2 sigma at each end, with
// sigma = variance_scale * range / num_energies. C_e makes the mass-weighted
// vertex sum of every column exactly 1.
FeatureSet wks(const SpectralBasis& basis, int num_energies, double variance_scale);

// 128 energies, variance scale 7.
FeatureSet wks_default(const SpectralBasis& basis);

// The raw n x 3 coordinate matrix.
FeatureSet xyz_features(const Mesh& mesh);

// Rescales every column to unit mass-weighted L2 norm (zero columns pass
// through). Balances heterogeneous probe families before map estimation.
Eigen::MatrixXd unit_mass_columns(Eigen::MatrixXd values, const MassDiagonal& mass);

}  // namespace specpool

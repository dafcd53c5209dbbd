#include "specpool/descriptors.hpp"

#include <cmath>
#include <utility>
#include <vector>

#include "specpool/errors.hpp"

namespace specpool {

std::string feature_kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::Hks: return "hks";
    case FeatureKind::Wks: return "wks";
    case FeatureKind::Xyz: return "xyz";
  }
  return "xyz";
}

FeatureKind feature_kind_from_name(const std::string& name) {
  if (name == "hks") return FeatureKind::Hks;
  if (name == "wks") return FeatureKind::Wks;
  if (name == "xyz") return FeatureKind::Xyz;
  fail("BadParameter", "unknown feature kind '" + name + "'");
}

FeatureSet hks(const SpectralBasis& basis, int num_times, double t_min, double t_max) {
  if (num_times < 1) fail("BadParameter", "hks needs at least one time sample");
  if (!(t_min > 0.0) || !(t_min < t_max)) fail("BadParameter", "hks needs 0 < t_min < t_max");

  const Eigen::Index n = basis.n();
  const Eigen::MatrixXd phi_sq = basis.phi.array().square();
  Eigen::VectorXd times(num_times);
  const double log_min = std::log(t_min);
  const double log_max = std::log(t_max);
  for (int i = 0; i < num_times; ++i) {
    const double s = num_times == 1 ? 0.0 : static_cast<double>(i) / (num_times - 1);
    times[i] = std::exp(log_min + s * (log_max - log_min));
  }

  FeatureSet out;
  out.kind = FeatureKind::Hks;
  out.grid = times;
  out.values.resize(n, num_times);
  for (int i = 0; i < num_times; ++i) {
    const Eigen::VectorXd weights = (-basis.evals.array() * times[i]).exp();
    Eigen::VectorXd col = phi_sq * weights;
    const double norm = std::sqrt(col.dot(basis.mass.asDiagonal() * col));
    if (norm > 0.0) col /= norm;
    out.values.col(i) = col;
  }
  return out;
}

FeatureSet hks_default(const SpectralBasis& basis) {
  if (basis.k() < 2 || !(basis.evals[1] > 0.0))
    fail("KTooSmall", "default HKS time range needs k >= 2 with a positive second eigenvalue");
  const double four_ln10 = 4.0 * std::log(10.0);
  double t_min = four_ln10 / basis.evals[basis.k() - 1];
  double t_max = four_ln10 / basis.evals[1];
  if (t_max < t_min) std::swap(t_min, t_max);
  if (!(t_max > t_min)) t_max = t_min * (1.0 + 1e-6);  // flat spectrum
  return hks(basis, 64, t_min, t_max);
}

FeatureSet wks(const SpectralBasis& basis, int num_energies, double variance_scale) {
  if (basis.k() < 2) fail("KTooSmall", "wks needs a basis with k >= 2");
  if (num_energies < 1) fail("BadParameter", "wks needs at least one energy");
  if (!(variance_scale > 0.0)) fail("BadParameter", "wks variance scale must be positive");

  const int k = basis.k();
  // Skip the (near-)zero first eigenvalue; log of the rest must be defined.
  std::vector<int> used;
  for (int j = 1; j < k; ++j)
    if (basis.evals[j] > 0.0) used.push_back(j);
  if (used.empty()) fail("KTooSmall", "wks needs at least one positive eigenvalue");

  const double e_lo = std::log(basis.evals[used.front()]);
  const double e_hi = std::log(basis.evals[used.back()]);
  const double range = e_hi - e_lo;
  double sigma = variance_scale * range / num_energies;
  if (!(sigma > 0.0)) sigma = 1.0;  // fully degenerate spectrum

  Eigen::VectorXd energies(num_energies);
  const double lo = e_lo + 2.0 * sigma;
  const double hi = e_hi - 2.0 * sigma;
  for (int i = 0; i < num_energies; ++i) {
    const double s = num_energies == 1 ? 0.5 : static_cast<double>(i) / (num_energies - 1);
    energies[i] = lo + s * (hi - lo);
  }

  const Eigen::Index n = basis.n();
  Eigen::MatrixXd phi_sq(n, static_cast<Eigen::Index>(used.size()));
  Eigen::VectorXd log_evals(static_cast<Eigen::Index>(used.size()));
  for (std::size_t c = 0; c < used.size(); ++c) {
    phi_sq.col(static_cast<Eigen::Index>(c)) = basis.phi.col(used[c]).array().square();
    log_evals[static_cast<Eigen::Index>(c)] = std::log(basis.evals[used[c]]);
  }

  FeatureSet out;
  out.kind = FeatureKind::Wks;
  out.grid = energies;
  out.sigma = sigma;
  out.values.resize(n, num_energies);
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
  for (int i = 0; i < num_energies; ++i) {
    const Eigen::VectorXd weights =
        (-(energies[i] - log_evals.array()).square() * inv_two_sigma_sq).exp();
    Eigen::VectorXd col = phi_sq * weights;
    const double total = col.dot(basis.mass);
    if (total > 0.0) col /= total;  // mass-weighted sum over vertices becomes 1
    out.values.col(i) = col;
  }
  return out;
}

FeatureSet wks_default(const SpectralBasis& basis) { return wks(basis, 128, 7.0); }

FeatureSet xyz_features(const Mesh& mesh) {
  validate_mesh(mesh);
  FeatureSet out;
  out.kind = FeatureKind::Xyz;
  out.values = mesh.vertices;
  return out;
}

Eigen::MatrixXd unit_mass_columns(Eigen::MatrixXd values, const MassDiagonal& mass) {
  if (values.rows() != mass.size())
    fail("DimensionMismatch", "feature rows do not match the mass diagonal");
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    const double norm = std::sqrt(values.col(c).dot(mass.asDiagonal() * values.col(c)));
    if (norm > 0.0) values.col(c) /= norm;
  }
  return values;
}

}  // namespace specpool

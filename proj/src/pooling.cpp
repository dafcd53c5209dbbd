#include "specpool/pooling.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "specpool/errors.hpp"
#include "specpool/util.hpp"

namespace specpool {

namespace {

Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& m, bool* rank_deficient,
                               Eigen::Index full_rank) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double cutoff = 1e-10 * (sv.size() > 0 ? sv[0] : 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv[i] > cutoff && sv[i] > 0.0) {
      inv[i] = 1.0 / sv[i];
      ++rank;
    }
  }
  if (rank_deficient) *rank_deficient = rank < full_rank;
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

}  // namespace

Eigen::MatrixXd spectral_pool_raw(const SpectralBasis& basis, const Eigen::MatrixXd& y_tilde,
                                  const Eigen::MatrixXd& features, bool* rank_deficient) {
  const Eigen::Index k1 = y_tilde.rows();
  const Eigen::Index k2 = y_tilde.cols();
  if (k2 > k1) fail("DimensionMismatch", "y_tilde must be k1 x k2 with k2 <= k1");
  if (k1 > basis.k())
    fail("DimensionMismatch", "y_tilde expects k1 = " + std::to_string(k1) +
                                  " basis columns, basis has " + std::to_string(basis.k()));
  if (features.rows() != basis.n())
    fail("DimensionMismatch", "feature rows do not match the vertex count");

  const Eigen::MatrixXd coeffs =
      basis.phi.leftCols(k1).transpose() * (basis.mass.asDiagonal() * features);
  const Eigen::MatrixXd y_pinv = pseudo_inverse(y_tilde, rank_deficient, k2);
  return y_pinv * coeffs;
}

LatentCode spectral_pool(const SpectralBasis& basis, const CanonicalBasis& cclb, int shape_index,
                         const FeatureSet& features, bool* rank_deficient) {
  if (shape_index < 0 || shape_index >= static_cast<int>(cclb.y_tilde.size()))
    fail("UnknownShape", "shape index outside the canonical basis");
  LatentCode code;
  code.z = spectral_pool_raw(basis, cclb.y_tilde[static_cast<std::size_t>(shape_index)],
                             features.values, rank_deficient);
  code.shape_id = cclb.shape_ids[static_cast<std::size_t>(shape_index)];
  code.cclb_id = cclb.cclb_id;
  code.kind = features.kind;
  return code;
}

Eigen::MatrixXd spectral_unpool(const TemplateRef& tmpl, const LatentCode& code) {
  if (!tmpl.cclb_id.empty() && !code.cclb_id.empty() && tmpl.cclb_id != code.cclb_id)
    fail("CclbMismatch", "latent code was produced by a different canonical basis");
  const Eigen::Index k1 = tmpl.y_tilde.rows();
  const Eigen::Index k2 = tmpl.y_tilde.cols();
  if (code.z.rows() != k2)
    fail("DimensionMismatch", "code k2 does not match the template basis");
  if (!tmpl.basis || k1 > tmpl.basis->k())
    fail("DimensionMismatch", "template basis is missing or smaller than k1");
  return tmpl.basis->phi.leftCols(k1) * (tmpl.y_tilde * code.z);
}

LatentCode encode_shape(const Mesh& normalized_mesh, const SpectralBasis& basis,
                        const CanonicalBasis& cclb, int shape_index, FeatureKind kind) {
  FeatureSet features;
  switch (kind) {
    case FeatureKind::Xyz: features = xyz_features(normalized_mesh); break;
    case FeatureKind::Hks: features = hks_default(basis); break;
    case FeatureKind::Wks: features = wks_default(basis); break;
  }
  return spectral_pool(basis, cclb, shape_index, features);
}

Mesh decode_to_template(const LatentCode& code, const TemplateRef& tmpl) {
  if (code.kind != FeatureKind::Xyz || code.feature_dim() != 3)
    fail("WrongFeatureKind", "decoding needs an XYZ code with F = 3, got F = " +
                                 std::to_string(code.feature_dim()));
  const Eigen::MatrixXd verts = spectral_unpool(tmpl, code);
  Mesh out;
  out.vertices = verts;
  out.faces = tmpl.faces;
  out.name = code.shape_id + "_on_" + tmpl.shape_id;
  return out;
}

Eigen::MatrixX3d pull_vertices(const PointToPointMap& p2p, const Mesh& source) {
  validate_p2p(p2p, p2p.size(), source.vertex_count());
  Eigen::MatrixX3d pulled(p2p.size(), 3);
  for (Eigen::Index i = 0; i < p2p.size(); ++i)
    pulled.row(i) = source.vertices.row(p2p.assignment[static_cast<std::size_t>(i)]);
  return pulled;
}

double p2p_loss(const PointToPointMap& p2p, const Mesh& source, const Mesh& reconstruction) {
  if (p2p.size() != reconstruction.vertex_count())
    fail("DimensionMismatch", "p2p length does not match the reconstruction vertex count");
  const Eigen::MatrixX3d pulled = pull_vertices(p2p, source);
  return (pulled - reconstruction.vertices).squaredNorm();
}

namespace {

Eigen::MatrixXd squared_distance_matrix(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose());
  d.colwise() += sq;
  d.rowwise() += sq.transpose();
  d.diagonal().setZero();
  return d.cwiseMax(0.0);
}

}  // namespace

double pairwise_distance_loss(const Eigen::MatrixXd& pulled_source,
                              const Eigen::MatrixXd& reconstruction, int max_points,
                              std::uint64_t seed) {
  if (pulled_source.rows() != reconstruction.rows())
    fail("DimensionMismatch", "pairwise_distance_loss needs equal row counts");
  if (max_points < 2) fail("BadParameter", "max_points must be at least 2");

  const Eigen::Index n = pulled_source.rows();
  Eigen::MatrixXd a = pulled_source;
  Eigen::MatrixXd b = reconstruction;
  if (n > max_points) {
    // One seeded index set subsamples both matrices identically.
    std::vector<Eigen::Index> indices(static_cast<std::size_t>(n));
    std::iota(indices.begin(), indices.end(), 0);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < max_points; ++i) {
      const auto j = static_cast<Eigen::Index>(
          i + static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n - i))));
      std::swap(indices[static_cast<std::size_t>(i)], indices[static_cast<std::size_t>(j)]);
    }
    std::sort(indices.begin(), indices.begin() + max_points);
    a.resize(max_points, pulled_source.cols());
    b.resize(max_points, reconstruction.cols());
    for (Eigen::Index i = 0; i < max_points; ++i) {
      a.row(i) = pulled_source.row(indices[static_cast<std::size_t>(i)]);
      b.row(i) = reconstruction.row(indices[static_cast<std::size_t>(i)]);
    }
  }
  return (squared_distance_matrix(a) - squared_distance_matrix(b)).squaredNorm();
}

double combined_loss(double l1, double l2, double lambda) {
  if (l1 < 0.0 || l2 < 0.0 || lambda < 0.0)
    fail("BadParameter", "combined_loss takes nonnegative inputs");
  return l1 + lambda * l2;
}

double mse_eval(const Mesh& reconstruction, const Mesh& ground_truth,
                const PointToPointMap& p2p) {
  if (p2p.size() != reconstruction.vertex_count())
    fail("DimensionMismatch", "p2p length does not match the reconstruction vertex count");
  const Eigen::MatrixX3d pulled = pull_vertices(p2p, ground_truth);
  const double mse =
      (reconstruction.vertices - pulled).rowwise().squaredNorm().mean();
  return mse * 1e4;
}

}  // namespace specpool

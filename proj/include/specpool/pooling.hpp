#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>

#include "specpool/descriptors.hpp"
#include "specpool/fmap.hpp"
#include "specpool/mesh.hpp"
#include "specpool/network.hpp"
#include "specpool/spectral.hpp"

namespace specpool {

// A shape's features expressed in the canonical consistent latent basis.
struct LatentCode {
  Eigen::MatrixXd z;  // k2 x F
  std::string shape_id;
  std::string cclb_id;
  FeatureKind kind = FeatureKind::Xyz;

  int k2() const { return static_cast<int>(z.rows()); }
  int feature_dim() const { return static_cast<int>(z.cols()); }
};

// The designated reconstruction host of a category; its faces carry every
// decoded mesh.
struct TemplateRef {
  std::string shape_id;
  std::shared_ptr<const SpectralBasis> basis;
  Eigen::MatrixX3i faces;
  Eigen::MatrixXd y_tilde;  // k1 x k2
  std::string cclb_id;
};

// z = pinv(Ytilde) * (Phi' M F), using the first k1 basis columns. A
// numerically rank-deficient Ytilde is pooled through the pseudo-inverse and
// reported via `rank_deficient` rather than failing.
Eigen::MatrixXd spectral_pool_raw(const SpectralBasis& basis, const Eigen::MatrixXd& y_tilde,
                                  const Eigen::MatrixXd& features,
                                  bool* rank_deficient = nullptr);

LatentCode spectral_pool(const SpectralBasis& basis, const CanonicalBasis& cclb, int shape_index,
                         const FeatureSet& features, bool* rank_deficient = nullptr);

// Phi_t Ytilde_t z on the template's vertices.
Eigen::MatrixXd spectral_unpool(const TemplateRef& tmpl, const LatentCode& code);

LatentCode encode_shape(const Mesh& normalized_mesh, const SpectralBasis& basis,
                        const CanonicalBasis& cclb, int shape_index,
                        FeatureKind kind = FeatureKind::Xyz);

// Unpooled XYZ features become the vertex coordinates of a mesh with the
// template's faces.
Mesh decode_to_template(const LatentCode& code, const TemplateRef& tmpl);

// L1 = ||Pi S - X||_F^2 where the p2p maps template vertices to source
// vertices and X is the reconstruction on the template.
double p2p_loss(const PointToPointMap& p2p, const Mesh& source, const Mesh& reconstruction);

// Pi S: source coordinates gathered onto the p2p's source (template) side.
Eigen::MatrixX3d pull_vertices(const PointToPointMap& p2p, const Mesh& source);

// L2 = ||D^S - D^X||_F^2 over squared-distance matrices; rows beyond
// max_points are subsampled with one seeded index set shared by both inputs.
double pairwise_distance_loss(const Eigen::MatrixXd& pulled_source,
                              const Eigen::MatrixXd& reconstruction, int max_points = 20000,
                              std::uint64_t seed = 0);

// L = L1 + lambda * L2.
double combined_loss(double l1, double l2, double lambda);

// Mean squared vertex-coordinate error under the correspondence, reported
// x1e4 to match the usual table scale. Inputs are expected in [-1, 1].
double mse_eval(const Mesh& reconstruction, const Mesh& ground_truth,
                const PointToPointMap& p2p);

}  // namespace specpool

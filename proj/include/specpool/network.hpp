#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>
#include <vector>

#include "specpool/fmap.hpp"
#include "specpool/spectral.hpp"

namespace specpool {

struct NetworkShape {
  std::string id;
  std::shared_ptr<const SpectralBasis> basis;
};

// One undirected edge carrying both map directions; c_ij transports
// coefficients of functions on shape i to shape j.
struct NetworkEdge {
  int i = 0;
  int j = 0;
  Eigen::MatrixXd c_ij;
  Eigen::MatrixXd c_ji;
};

struct FmapNetwork {
  std::vector<NetworkShape> shapes;
  std::vector<NetworkEdge> edges;
  int k1 = 0;

  int index_of(const std::string& id) const;
};

// Validates that every edge carries both directions of one common size k1 and
// that the graph is connected.
FmapNetwork build_network(std::vector<NetworkShape> shapes,
                          const std::vector<FunctionalMap>& maps);

// Consistent latent basis: per-shape Y_i minimizing
// sum_{(i,j)} ||C_ij Y_i - Y_j||_F^2 subject to sum_i Y_i' Y_i = I.
struct LatentBasisSet {
  std::vector<Eigen::MatrixXd> y;  // k1 x k1 each
  double residual = 0.0;           // achieved consistency energy
  int k1 = 0;
};

LatentBasisSet compute_clb(const FmapNetwork& network);

// Consistency energy of an arbitrary constraint-satisfying stack; the
// independent route used by optimality tests.
double clb_consistency_energy(const FmapNetwork& network,
                              const std::vector<Eigen::MatrixXd>& y);

// Canonical consistent latent basis: E = (1/n) sum_i Y_i' diag(evals_i) Y_i is
// diagonalized, the k2 lowest-eigenvalue directions are kept, and
// Ytilde_i = Y_i U[:, :k2].
struct CanonicalBasis {
  std::vector<Eigen::MatrixXd> y_tilde;  // k1 x k2 per shape
  Eigen::MatrixXd u;                     // k1 x k2
  Eigen::MatrixXd e_matrix;              // k1 x k1, symmetric PSD
  Eigen::VectorXd gamma;                 // k1 latent eigenvalues, ascending
  int k1 = 0;
  int k2 = 0;
  std::vector<std::string> shape_ids;
  std::string cclb_id;  // content hash stamped into latent codes

  int index_of(const std::string& id) const;
};

CanonicalBasis compute_cclb(const LatentBasisSet& clb,
                            const std::vector<Eigen::VectorXd>& eval_sets, int k2,
                            std::vector<std::string> shape_ids = {});

}  // namespace specpool

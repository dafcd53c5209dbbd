#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "specpool/pooling.hpp"

namespace specpool {

// (1 - t) a + t b; both codes must come from the same canonical basis.
LatentCode interpolate(const LatentCode& a, const LatentCode& b, double t);

struct WeightedCode {
  double coeff = 1.0;
  LatentCode code;
};

// sum_i coeff_i * z_i.
LatentCode latent_algebra(const std::vector<WeightedCode>& terms);

struct EmbeddingRow {
  std::string shape_id;
  std::string tag;
  Eigen::VectorXd coords;  // dim entries, mean-centered
};

struct EmbeddingTable {
  std::vector<EmbeddingRow> rows;
  Eigen::VectorXd explained_variance;  // fractions per axis, non-increasing
  int dim = 0;

  std::string to_csv() const;
};

// Codes are flattened row-major (k2-major), mean-centered and projected onto
// the top-dim principal axes. Axis signs are fixed so the largest-magnitude
// loading is positive.
EmbeddingTable pca_embed(const std::vector<LatentCode>& codes, int dim,
                         const std::vector<std::string>& tags = {});

}  // namespace specpool

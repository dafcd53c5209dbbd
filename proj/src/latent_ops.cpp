#include "specpool/latent_ops.hpp"

#include <Eigen/Dense>
#include <cstdio>

#include "specpool/errors.hpp"

namespace specpool {

namespace {

void check_compatible(const LatentCode& a, const LatentCode& b, const char* what) {
  if (!a.cclb_id.empty() && !b.cclb_id.empty() && a.cclb_id != b.cclb_id)
    fail("CclbMismatch", std::string(what) + ": codes come from different canonical bases");
  if (a.z.rows() != b.z.rows() || a.z.cols() != b.z.cols())
    fail("DimensionMismatch", std::string(what) + ": code dimensions disagree");
}

}  // namespace

LatentCode interpolate(const LatentCode& a, const LatentCode& b, double t) {
  check_compatible(a, b, "interpolate");
  LatentCode out = a;
  out.z = (1.0 - t) * a.z + t * b.z;
  out.shape_id = a.shape_id + "~" + b.shape_id;
  return out;
}

LatentCode latent_algebra(const std::vector<WeightedCode>& terms) {
  if (terms.empty()) fail("EmptyTerms", "latent_algebra needs at least one term");
  for (const auto& term : terms) check_compatible(terms.front().code, term.code, "latent_algebra");
  LatentCode out = terms.front().code;
  out.z = Eigen::MatrixXd::Zero(out.z.rows(), out.z.cols());
  for (const auto& term : terms) out.z += term.coeff * term.code.z;
  out.shape_id = "combo";
  return out;
}

std::string EmbeddingTable::to_csv() const {
  std::string out = dim == 3 ? "shape_id,tag,x,y,z\n" : "shape_id,tag,x,y\n";
  char buf[160];
  for (const auto& row : rows) {
    out += row.shape_id + "," + row.tag;
    for (Eigen::Index c = 0; c < row.coords.size(); ++c) {
      std::snprintf(buf, sizeof(buf), ",%.17g", row.coords[c]);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

EmbeddingTable pca_embed(const std::vector<LatentCode>& codes, int dim,
                         const std::vector<std::string>& tags) {
  if (dim != 2 && dim != 3) fail("BadParameter", "embedding dimension must be 2 or 3");
  if (static_cast<int>(codes.size()) < dim + 1)
    fail("TooFewCodes", "pca_embed needs at least dim + 1 codes");
  if (!tags.empty() && tags.size() != codes.size())
    fail("DimensionMismatch", "one tag per code required");
  for (const auto& code : codes) check_compatible(codes.front(), code, "pca_embed");

  const Eigen::Index m = static_cast<Eigen::Index>(codes.size());
  const Eigen::Index d = codes.front().z.size();
  Eigen::MatrixXd data(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::MatrixXd& z = codes[static_cast<std::size_t>(i)].z;
    // Row-major (k2-major) flattening.
    Eigen::Index at = 0;
    for (Eigen::Index r = 0; r < z.rows(); ++r)
      for (Eigen::Index c = 0; c < z.cols(); ++c) data(i, at++) = z(r, c);
  }

  const Eigen::RowVectorXd mean = data.colwise().mean();
  data.rowwise() -= mean;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(data, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  Eigen::MatrixXd axes = svd.matrixV().leftCols(dim);
  for (Eigen::Index c = 0; c < axes.cols(); ++c) {
    Eigen::Index at = 0;
    axes.col(c).cwiseAbs().maxCoeff(&at);
    if (axes(at, c) < 0.0) axes.col(c) = -axes.col(c);
  }

  EmbeddingTable table;
  table.dim = dim;
  const double total_var = sv.array().square().sum();
  table.explained_variance.resize(dim);
  for (int i = 0; i < dim; ++i)
    table.explained_variance[i] =
        total_var > 0.0 && i < sv.size() ? sv[i] * sv[i] / total_var : 0.0;

  const Eigen::MatrixXd coords = data * axes;
  table.rows.reserve(codes.size());
  for (Eigen::Index i = 0; i < m; ++i) {
    EmbeddingRow row;
    row.shape_id = codes[static_cast<std::size_t>(i)].shape_id;
    row.tag = tags.empty() ? "" : tags[static_cast<std::size_t>(i)];
    row.coords = coords.row(i);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace specpool

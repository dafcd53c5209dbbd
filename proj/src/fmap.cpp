#include "specpool/fmap.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "specpool/errors.hpp"

namespace specpool {

namespace {

void check_ids(const std::string& got, const std::string& expected, const char* what) {
  if (!got.empty() && !expected.empty() && got != expected)
    fail("MapOrientation", std::string(what) + ": expected shape '" + expected + "', got '" +
                               got + "'");
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<int>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

}  // namespace

void validate_p2p(const PointToPointMap& p2p, Eigen::Index n_source, Eigen::Index n_target) {
  if (p2p.size() != n_source)
    fail("DimensionMismatch", "p2p assignment length " + std::to_string(p2p.size()) +
                                  " does not match source vertex count " +
                                  std::to_string(n_source));
  for (int v : p2p.assignment)
    if (v < 0 || v >= n_target)
      fail("IndexError", "p2p assignment references target vertex " + std::to_string(v) +
                             " outside [0, " + std::to_string(n_target) + ")");
}

double fmap_data_energy(const Eigen::MatrixXd& c, const Eigen::MatrixXd& a_src,
                        const Eigen::MatrixXd& a_tgt) {
  return (c * a_src - a_tgt).squaredNorm();
}

double fmap_commute_energy(const Eigen::MatrixXd& c, const Eigen::VectorXd& evals_src,
                           const Eigen::VectorXd& evals_tgt) {
  // (C D1 - D2 C)_{lj} = C_{lj} (d1_j - d2_l)
  double total = 0.0;
  for (Eigen::Index l = 0; l < c.rows(); ++l)
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      const double g = evals_src[j] - evals_tgt[l];
      total += c(l, j) * c(l, j) * g * g;
    }
  return total;
}

FunctionalMap estimate_fmap(const CoefficientMatrix& a_src, const CoefficientMatrix& a_tgt,
                            const Eigen::VectorXd& evals_src, const Eigen::VectorXd& evals_tgt,
                            double lambda, EstimateStats* stats) {
  const int k = a_src.basis_k;
  if (a_tgt.basis_k != k || evals_src.size() != k || evals_tgt.size() != k)
    fail("DimensionMismatch", "estimate_fmap requires equal k on both sides");
  if (a_src.feature_dim != a_tgt.feature_dim || a_src.feature_dim < 1)
    fail("DimensionMismatch", "estimate_fmap requires matching descriptor dimensions");
  if (lambda < 0.0) fail("BadParameter", "lambda must be nonnegative");

  const Eigen::MatrixXd& a1 = a_src.coeffs;
  const Eigen::MatrixXd& a2 = a_tgt.coeffs;
  const Eigen::MatrixXd gram = a1 * a1.transpose();       // k x k
  const Eigen::MatrixXd rhs_all = a1 * a2.transpose();    // column l = rhs of row l

  EstimateStats local;
  FunctionalMap out;
  out.c.resize(k, k);
  for (int l = 0; l < k; ++l) {
    Eigen::MatrixXd system = gram;
    if (lambda > 0.0) {
      const Eigen::ArrayXd gaps = evals_src.array() - evals_tgt[l];
      system += (lambda * gaps.square()).matrix().asDiagonal();
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
    bool singular = ldlt.info() != Eigen::Success;
    if (!singular) {
      const Eigen::VectorXd d = ldlt.vectorD().cwiseAbs();
      singular = d.minCoeff() <= 1e-12 * std::max(d.maxCoeff(), 1e-300);
    }
    if (singular) {
      // SingularSystem: minimum-norm solve and keep going.
      ++local.pinv_rows;
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(system);
      cod.setThreshold(1e-12);
      out.c.row(l) = cod.solve(rhs_all.col(l)).transpose();
    } else {
      out.c.row(l) = ldlt.solve(rhs_all.col(l)).transpose();
    }
  }
  if (stats) *stats = local;
  return out;
}

StructuralEnergy structural_energy(const FunctionalMap& c12, const FunctionalMap& c21) {
  if (c12.k() != c21.k() || c12.c.cols() != c21.c.rows())
    fail("DimensionMismatch", "structural_energy requires equal map sizes");
  check_ids(c21.source_id, c12.target_id, "structural_energy c21.source");
  check_ids(c21.target_id, c12.source_id, "structural_energy c21.target");

  const Eigen::Index k = c12.c.rows();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k, k);
  StructuralEnergy e;
  e.bijectivity = (c12.c * c21.c - eye).squaredNorm();
  e.orthogonality = (c12.c.transpose() * c12.c - eye).squaredNorm() +
                    (c21.c.transpose() * c21.c - eye).squaredNorm();
  e.total = e.bijectivity + e.orthogonality;
  return e;
}

namespace {

struct RefineProblem {
  const Eigen::MatrixXd& a1;
  const Eigen::MatrixXd& a2;
  Eigen::ArrayXXd gaps12;  // gaps12(l, j) = evals1[j] - evals2[l]
  Eigen::ArrayXXd gaps21;
  RefineWeights w;
  Eigen::MatrixXd eye;

  double energy(const Eigen::MatrixXd& c12, const Eigen::MatrixXd& c21) const {
    double e = 0.0;
    e += w.data * ((c12 * a1 - a2).squaredNorm() + (c21 * a2 - a1).squaredNorm());
    e += w.commute * ((c12.array() * gaps12).square().sum() +
                      (c21.array() * gaps21).square().sum());
    e += w.structural * ((c12 * c21 - eye).squaredNorm() +
                         (c12.transpose() * c12 - eye).squaredNorm() +
                         (c21.transpose() * c21 - eye).squaredNorm());
    return e;
  }

  void gradient(const Eigen::MatrixXd& c12, const Eigen::MatrixXd& c21, Eigen::MatrixXd& g12,
                Eigen::MatrixXd& g21) const {
    g12 = 2.0 * w.data * (c12 * a1 - a2) * a1.transpose();
    g21 = 2.0 * w.data * (c21 * a2 - a1) * a2.transpose();
    g12.array() += 2.0 * w.commute * c12.array() * gaps12.square();
    g21.array() += 2.0 * w.commute * c21.array() * gaps21.square();
    const Eigen::MatrixXd bij = c12 * c21 - eye;
    g12.noalias() += 2.0 * w.structural * bij * c21.transpose();
    g21.noalias() += 2.0 * w.structural * c12.transpose() * bij;
    g12.noalias() += 4.0 * w.structural * c12 * (c12.transpose() * c12 - eye);
    g21.noalias() += 4.0 * w.structural * c21 * (c21.transpose() * c21 - eye);
  }
};

}  // namespace

std::pair<FunctionalMap, FunctionalMap> refine_pair_unsupervised(
    const FunctionalMap& c12, const FunctionalMap& c21, const CoefficientMatrix& a1,
    const CoefficientMatrix& a2, const Eigen::VectorXd& evals1, const Eigen::VectorXd& evals2,
    const RefineWeights& weights, const RefineOptions& options, RefineStats* stats) {
  const int k = c12.k();
  if (c21.k() != k || a1.basis_k != k || a2.basis_k != k || evals1.size() != k ||
      evals2.size() != k)
    fail("DimensionMismatch", "refine_pair_unsupervised requires one common k");
  if (a1.feature_dim != a2.feature_dim)
    fail("DimensionMismatch", "descriptor dimensions disagree");
  check_ids(c21.source_id, c12.target_id, "refine c21.source");
  check_ids(c21.target_id, c12.source_id, "refine c21.target");

  RefineProblem problem{a1.coeffs, a2.coeffs, {}, {}, weights,
                        Eigen::MatrixXd::Identity(k, k)};
  problem.gaps12.resize(k, k);
  problem.gaps21.resize(k, k);
  for (int l = 0; l < k; ++l)
    for (int j = 0; j < k; ++j) {
      problem.gaps12(l, j) = evals1[j] - evals2[l];
      problem.gaps21(l, j) = evals2[j] - evals1[l];
    }

  Eigen::MatrixXd x12 = c12.c, x21 = c21.c;
  double energy = problem.energy(x12, x21);
  if (!std::isfinite(energy)) fail("NonFiniteEnergy", "refinement energy is not finite");

  RefineStats local;
  local.initial_energy = energy;
  local.energy_trace.push_back(energy);

  Eigen::MatrixXd g12, g21;
  double step = 1.0;
  int iter = 0;
  for (; iter < options.max_iters; ++iter) {
    problem.gradient(x12, x21, g12, g21);
    const double grad_inf = std::max(g12.cwiseAbs().maxCoeff(), g21.cwiseAbs().maxCoeff());
    if (!std::isfinite(grad_inf)) fail("NonFiniteEnergy", "refinement gradient is not finite");
    if (grad_inf < options.grad_tol) break;

    const double grad_sq = g12.squaredNorm() + g21.squaredNorm();
    double alpha = step;
    bool accepted = false;
    while (alpha > 1e-18) {
      const Eigen::MatrixXd t12 = x12 - alpha * g12;
      const Eigen::MatrixXd t21 = x21 - alpha * g21;
      const double trial = problem.energy(t12, t21);
      if (std::isfinite(trial) && trial <= energy - options.armijo_c * alpha * grad_sq) {
        x12 = t12;
        x21 = t21;
        energy = trial;
        accepted = true;
        break;
      }
      alpha *= options.shrink;
    }
    if (!accepted) break;  // no descent direction at working precision
    local.energy_trace.push_back(energy);
    step = alpha * 2.0;  // warm-start the next line search
  }

  local.final_energy = energy;
  local.iterations = iter;
  if (stats) *stats = std::move(local);

  FunctionalMap r12 = c12, r21 = c21;
  r12.c = std::move(x12);
  r21.c = std::move(x21);
  return {std::move(r12), std::move(r21)};
}

FunctionalMap fmap_from_p2p(const PointToPointMap& p2p, const SpectralBasis& basis_src,
                            const SpectralBasis& basis_tgt, int k) {
  check_ids(basis_src.shape_id, p2p.source_id, "fmap_from_p2p source basis");
  check_ids(basis_tgt.shape_id, p2p.target_id, "fmap_from_p2p target basis");
  validate_p2p(p2p, basis_src.n(), basis_tgt.n());
  if (k < 0) {
    if (basis_src.k() != basis_tgt.k())
      fail("DimensionMismatch", "bases have different k; pass the truncation explicitly");
    k = basis_src.k();
  }
  if (k > basis_src.k() || k > basis_tgt.k())
    fail("KExceedsBasis", "requested truncation exceeds a basis size");

  const Eigen::MatrixXd pulled = gather_rows(basis_tgt.phi.leftCols(k), p2p.assignment);
  FunctionalMap out;
  out.c = basis_src.phi.leftCols(k).transpose() * (basis_src.mass.asDiagonal() * pulled);
  out.source_id = p2p.target_id;  // transports functions target -> source
  out.target_id = p2p.source_id;
  return out;
}

PointToPointMap p2p_from_fmap(const FunctionalMap& c, const SpectralBasis& basis_src,
                              const SpectralBasis& basis_tgt) {
  check_ids(basis_src.shape_id, c.target_id, "p2p_from_fmap source basis");
  check_ids(basis_tgt.shape_id, c.source_id, "p2p_from_fmap target basis");
  const int k = c.k();
  if (k > basis_src.k() || k > basis_tgt.k())
    fail("KExceedsBasis", "map size exceeds a basis size");

  const Eigen::MatrixXd query = basis_src.phi.leftCols(k) * c.c;  // n_src x k
  const Eigen::MatrixXd& target = basis_tgt.phi;
  const Eigen::VectorXd target_sq =
      target.leftCols(k).rowwise().squaredNorm();

  const Eigen::Index n_src = query.rows();
  const Eigen::Index n_tgt = target.rows();
  PointToPointMap out;
  out.assignment.resize(static_cast<std::size_t>(n_src));
  out.source_id = c.target_id;
  out.target_id = c.source_id;

  // Exact blocked nearest neighbor via one GEMM per block; ties resolve to
  // the smallest target index.
  const Eigen::Index block = 512;
  for (Eigen::Index start = 0; start < n_src; start += block) {
    const Eigen::Index rows = std::min(block, n_src - start);
    const Eigen::MatrixXd prod =
        query.middleRows(start, rows) * target.leftCols(k).transpose();
    for (Eigen::Index r = 0; r < rows; ++r) {
      int best = 0;
      double best_d = target_sq[0] - 2.0 * prod(r, 0);
      for (Eigen::Index j = 1; j < n_tgt; ++j) {
        const double d = target_sq[j] - 2.0 * prod(r, j);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(j);
        }
      }
      out.assignment[static_cast<std::size_t>(start + r)] = best;
    }
  }
  return out;
}

std::pair<PointToPointMap, FunctionalMap> zoomout(const PointToPointMap& p2p_init,
                                                  const SpectralBasis& basis_src,
                                                  const SpectralBasis& basis_tgt, int k_start,
                                                  int k_end, int step, ZoomoutStats* stats) {
  if (k_end > basis_src.k() || k_end > basis_tgt.k())
    fail("KExceedsBasis", "zoomout k_end exceeds a basis size");
  if (k_start < 1 || k_start > k_end) fail("BadParameter", "zoomout needs 1 <= k_start <= k_end");
  if (step < 1) fail("BadParameter", "zoomout step must be >= 1");
  validate_p2p(p2p_init, basis_src.n(), basis_tgt.n());

  PointToPointMap p2p = p2p_init;
  int rounds = 0;
  for (int k = k_start; k < k_end; k += step) {
    FunctionalMap c = fmap_from_p2p(p2p, basis_src, basis_tgt, k);
    p2p = p2p_from_fmap(c, basis_src, basis_tgt);
    ++rounds;
  }
  FunctionalMap final_map = fmap_from_p2p(p2p, basis_src, basis_tgt, k_end);
  if (stats) stats->rounds = rounds;
  return {std::move(p2p), std::move(final_map)};
}

int zoomout_default_step(int k_start, int k_end) {
  return std::max(1, (k_end - k_start) / 30);
}

}  // namespace specpool

#include "specpool/spectral.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "specpool/errors.hpp"
#include "specpool/util.hpp"

namespace specpool {

namespace {

void fix_column_signs(Eigen::MatrixXd& m) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    Eigen::Index at = 0;
    m.col(c).cwiseAbs().maxCoeff(&at);
    if (m(at, c) < 0.0) m.col(c) = -m.col(c);
  }
}

Eigen::MatrixXd dense_smallest(const StiffnessMatrix& w, const MassDiagonal& mass, int k,
                               Eigen::VectorXd& evals_out) {
  const Eigen::Index n = mass.size();
  Eigen::MatrixXd wd = Eigen::MatrixXd(w);
  wd = 0.5 * (wd + wd.transpose());
  Eigen::MatrixXd md = mass.asDiagonal();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> solver(wd, md);
  if (solver.info() != Eigen::Success)
    fail("ConvergenceFailure", "dense generalized eigensolver failed");
  evals_out = solver.eigenvalues().head(k);
  (void)n;
  return solver.eigenvectors().leftCols(k);
}

// Thick-restart Lanczos on the shift-inverted operator (W - sigma M)^{-1} M,
// self-adjoint in the M-inner product. The k largest transformed eigenvalues
// theta = 1/(lambda - sigma) correspond to the k smallest lambda.
//
// The constant vector spans the kernel of W exactly (rows sum to zero by
// construction), and its transformed eigenvalue 1/(0 - sigma) ~ 1e8 would
// wreck the conditioning of the projected problem for every other pair. It is
// therefore locked analytically: the Krylov chain lives in its M-orthogonal
// complement and the (0, const) pair is prepended on extraction.
class ShiftInvertLanczos {
public:
  ShiftInvertLanczos(const StiffnessMatrix& w, const MassDiagonal& mass,
                     const EigenOptions& opts)
      : w_(w), mass_(mass), opts_(opts) {
    StiffnessMatrix a = w;
    if (opts.shift != 0.0) {
      StiffnessMatrix m_sparse(mass.size(), mass.size());
      m_sparse.reserve(Eigen::VectorXi::Constant(static_cast<int>(mass.size()), 1));
      for (Eigen::Index i = 0; i < mass.size(); ++i)
        m_sparse.insert(i, i) = mass[i];
      m_sparse.makeCompressed();
      a = w - opts.shift * m_sparse;
    }
    ldlt_.compute(a);
    if (ldlt_.info() != Eigen::Success)
      fail("ConvergenceFailure", "factorization of the shifted stiffness matrix failed");
    w_norm_inf_ = 0.0;
    for (int col = 0; col < w.outerSize(); ++col) {
      double s = 0.0;
      for (StiffnessMatrix::InnerIterator it(w, col); it; ++it) s += std::abs(it.value());
      w_norm_inf_ = std::max(w_norm_inf_, s);
    }
    locked_ = Eigen::VectorXd::Ones(mass.size()) / std::sqrt(mass.sum());
  }

  std::pair<Eigen::MatrixXd, Eigen::VectorXd> solve(int k) {
    const Eigen::Index n = mass_.size();
    if (k == 1) return finish(Eigen::MatrixXd(n, 0), Eigen::VectorXd(0), k);

    const int want = k - 1;  // beyond the locked constant
    const int m = static_cast<int>(
        std::min<Eigen::Index>(n - 1, std::max(2 * want + 32, 64)));
    const int keep_extra = std::min(20, std::max(2, m - want - 2));
    const int max_restarts = std::max(8, opts_.max_restart_factor * k);

    Eigen::MatrixXd v(n, m);    // M-orthonormal, all orthogonal to locked_
    Eigen::MatrixXd opv(n, m);  // operator applied to each basis column
    int size = 0;

    Rng rng(opts_.seed * 0x9e3779b97f4a7c15ull + 17);
    {
      Eigen::VectorXd cand(n);
      if (!random_direction(v, size, rng, cand))
        fail("ConvergenceFailure", "could not seed the Krylov basis");
      v.col(size) = cand;
      opv.col(size) = apply(cand);
      ++size;
    }

    Eigen::MatrixXd ritz_vectors;
    Eigen::VectorXd ritz_values;

    for (int restart = 0; restart < max_restarts; ++restart) {
      while (size < m) {
        Eigen::VectorXd cand = opv.col(size - 1);
        if (!orthonormalize(v, size, cand) && !random_direction(v, size, rng, cand)) break;
        v.col(size) = cand;
        opv.col(size) = apply(cand);
        ++size;
      }

      Eigen::MatrixXd t =
          v.leftCols(size).transpose() * (mass_.asDiagonal() * opv.leftCols(size));
      t = 0.5 * (t + t.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
      if (es.info() != Eigen::Success) fail("ConvergenceFailure", "Rayleigh-Ritz solve failed");

      const int take = std::min(size, want + keep_extra);
      Eigen::MatrixXd s_sel(size, take);
      Eigen::VectorXd theta(take);
      for (int i = 0; i < take; ++i) {
        s_sel.col(i) = es.eigenvectors().col(size - 1 - i);  // theta descending
        theta[i] = es.eigenvalues()[size - 1 - i];
      }
      ritz_vectors = v.leftCols(size) * s_sel;
      ritz_values.resize(take);
      for (int i = 0; i < take; ++i) {
        if (!(theta[i] > 0.0))
          fail("ConvergenceFailure",
               "nonpositive transformed eigenvalue; the pencil is not positive definite");
        ritz_values[i] = opts_.shift + 1.0 / theta[i];
      }

      if (size >= static_cast<int>(n - 1) || converged(ritz_vectors, ritz_values, want))
        return finish(ritz_vectors, ritz_values, k);

      // Thick restart.
      const int keep = std::min(take, want + keep_extra / 2);
      const Eigen::MatrixXd kept_v = ritz_vectors.leftCols(keep);
      const Eigen::MatrixXd kept_opv = opv.leftCols(size) * s_sel.leftCols(keep);
      v.leftCols(keep) = kept_v;
      opv.leftCols(keep) = kept_opv;
      size = keep;
      const int next = first_unconverged(ritz_vectors, ritz_values, want);
      Eigen::VectorXd cand = apply(ritz_vectors.col(std::min(next, keep - 1)));
      if (!orthonormalize(v, size, cand) && !random_direction(v, size, rng, cand))
        return finish(ritz_vectors, ritz_values, k);
      v.col(size) = cand;
      opv.col(size) = apply(cand);
      ++size;
    }
    fail("ConvergenceFailure",
         "Lanczos did not converge within " + std::to_string(max_restarts) + " restarts");
  }

private:
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    return ldlt_.solve(mass_.asDiagonal() * x);
  }

  double m_norm(const Eigen::VectorXd& x) const {
    return std::sqrt(x.dot(mass_.asDiagonal() * x));
  }

  // Twice-repeated Gram-Schmidt against the locked constant and the current
  // basis; false if the candidate is numerically inside the span.
  bool orthonormalize(const Eigen::MatrixXd& v, int size, Eigen::VectorXd& cand) const {
    const double initial = m_norm(cand);
    for (int pass = 0; pass < 2; ++pass) {
      cand.noalias() -= locked_ * locked_.dot(mass_.asDiagonal() * cand);
      if (size > 0) {
        Eigen::VectorXd coeffs = v.leftCols(size).transpose() * (mass_.asDiagonal() * cand);
        cand.noalias() -= v.leftCols(size) * coeffs;
      }
    }
    const double norm = m_norm(cand);
    if (!(norm > 1e-12 * std::max(initial, 1.0))) return false;
    cand /= norm;
    return true;
  }

  bool random_direction(const Eigen::MatrixXd& v, int size, Rng& rng,
                        Eigen::VectorXd& cand) const {
    for (int attempt = 0; attempt < 4; ++attempt) {
      cand.resize(v.rows());
      for (Eigen::Index i = 0; i < cand.size(); ++i) cand[i] = rng.symmetric();
      if (orthonormalize(v, size, cand)) return true;
    }
    return false;
  }

  double residual(const Eigen::VectorXd& y, double lambda) const {
    const Eigen::VectorXd r = w_ * y - lambda * (mass_.asDiagonal() * y).eval();
    return r.norm() / std::max(y.norm(), 1e-300);
  }

  double residual_bound() const {
    return std::max(opts_.residual_tol, 1e-13 * std::max(w_norm_inf_, 1.0));
  }

  bool converged(const Eigen::MatrixXd& ritz, const Eigen::VectorXd& values, int want) const {
    if (ritz.cols() < want) return false;
    const double bound = residual_bound();
    for (int i = 0; i < want; ++i)
      if (residual(ritz.col(i), values[i]) > bound) return false;
    return true;
  }

  int first_unconverged(const Eigen::MatrixXd& ritz, const Eigen::VectorXd& values,
                        int want) const {
    const double bound = residual_bound();
    for (int i = 0; i < std::min<int>(want, static_cast<int>(ritz.cols())); ++i)
      if (residual(ritz.col(i), values[i]) > bound) return i;
    return 0;
  }

  // Prepends the locked (0, const) pair and ascending-sorts the rest.
  std::pair<Eigen::MatrixXd, Eigen::VectorXd> finish(const Eigen::MatrixXd& ritz,
                                                     const Eigen::VectorXd& values,
                                                     int k) const {
    const int want = k - 1;
    if (ritz.cols() < want)
      fail("ConvergenceFailure", "subspace exhausted before reaching k eigenpairs");
    std::vector<int> order(static_cast<std::size_t>(want));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return values[a] < values[b]; });
    Eigen::MatrixXd phi(mass_.size(), k);
    Eigen::VectorXd evals(k);
    phi.col(0) = locked_;
    evals[0] = 0.0;
    for (int c = 0; c < want; ++c) {
      phi.col(c + 1) = ritz.col(order[static_cast<std::size_t>(c)]);
      evals[c + 1] = values[order[static_cast<std::size_t>(c)]];
    }
    return {phi, evals};
  }

  const StiffnessMatrix& w_;
  const MassDiagonal& mass_;
  EigenOptions opts_;
  Eigen::SimplicialLDLT<StiffnessMatrix> ldlt_;
  Eigen::VectorXd locked_;
  double w_norm_inf_ = 0.0;
};

}  // namespace

SpectralBasis eigenbasis(const StiffnessMatrix& w, const MassDiagonal& mass, int k,
                         const EigenOptions& options) {
  const Eigen::Index n = mass.size();
  if (w.rows() != n || w.cols() != n)
    fail("DimensionMismatch", "stiffness and mass sizes disagree");
  if (k < 1) fail("KTooLarge", "basis size must be positive");
  if (k >= n)
    fail("KTooLarge", "requested k=" + std::to_string(k) + " on a mesh with n=" +
                          std::to_string(n) + " vertices (k < n required)");
  if ((mass.array() <= 0.0).any()) fail("ZeroAreaFace", "mass diagonal has nonpositive entries");

  bool dense = options.method == EigenOptions::Method::Dense;
  if (options.method == EigenOptions::Method::Auto) {
    const Eigen::Index needed = std::max(2 * k + 32, 64);
    dense = n <= options.dense_threshold || needed >= n;
  }

  Eigen::MatrixXd phi;
  Eigen::VectorXd evals;
  if (dense) {
    phi = dense_smallest(w, mass, k, evals);
  } else {
    ShiftInvertLanczos solver(w, mass, options);
    std::tie(phi, evals) = solver.solve(k);
  }

  evals = evals.cwiseMax(0.0);  // the pencil is PSD; clip sub-epsilon negatives
  fix_column_signs(phi);
  SpectralBasis basis;
  basis.phi = std::move(phi);
  basis.evals = std::move(evals);
  basis.mass = mass;
  return basis;
}

SpectralBasis eigenbasis(const Mesh& mesh, int k, const EigenOptions& options) {
  const MassDiagonal mass = vertex_areas(mesh);
  const StiffnessMatrix w = cotangent_stiffness(mesh);
  SpectralBasis basis = eigenbasis(w, mass, k, options);
  basis.shape_id = mesh.name;
  return basis;
}

CoefficientMatrix project(const SpectralBasis& basis, const Eigen::MatrixXd& features) {
  if (features.rows() != basis.n())
    fail("DimensionMismatch", "feature rows (" + std::to_string(features.rows()) +
                                  ") do not match vertex count (" + std::to_string(basis.n()) +
                                  ")");
  CoefficientMatrix out;
  out.coeffs = basis.phi.transpose() * (basis.mass.asDiagonal() * features);
  out.basis_k = basis.k();
  out.feature_dim = static_cast<int>(features.cols());
  return out;
}

Eigen::MatrixXd lift(const SpectralBasis& basis, const CoefficientMatrix& coeffs) {
  if (coeffs.basis_k != basis.k() || coeffs.coeffs.rows() != basis.k())
    fail("DimensionMismatch", "coefficient basis size does not match the basis");
  return basis.phi * coeffs.coeffs;
}

}  // namespace specpool

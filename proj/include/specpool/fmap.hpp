#pragma once

#include <Eigen/Core>
#include <string>
#include <utility>
#include <vector>

#include "specpool/spectral.hpp"

namespace specpool {

// Transports spectral coefficients of functions living on `source_id` to
// coefficients on `target_id`: a_target ~= c * a_source. Note that the map
// built from a vertex assignment source->target transports functions the
// OTHER way (it pulls functions back), so fmap_from_p2p returns a map whose
// source_id is the p2p's target shape. Compositions are validated against the
// stored ids to keep this orientation honest.
struct FunctionalMap {
  Eigen::MatrixXd c;  // k x k (equal truncation on both shapes)
  std::string source_id;
  std::string target_id;

  int k() const { return static_cast<int>(c.rows()); }
};

// Vertex assignment: one target vertex index per source vertex.
struct PointToPointMap {
  std::vector<int> assignment;
  std::string source_id;
  std::string target_id;

  Eigen::Index size() const { return static_cast<Eigen::Index>(assignment.size()); }
};

void validate_p2p(const PointToPointMap& p2p, Eigen::Index n_source, Eigen::Index n_target);

// --- Eq.-style energies, shared by the solver, the refiner and tests ---

double fmap_data_energy(const Eigen::MatrixXd& c, const Eigen::MatrixXd& a_src,
                        const Eigen::MatrixXd& a_tgt);
double fmap_commute_energy(const Eigen::MatrixXd& c, const Eigen::VectorXd& evals_src,
                           const Eigen::VectorXd& evals_tgt);

struct EstimateStats {
  int pinv_rows = 0;  // rows solved through the pseudo-inverse fallback
};

// Exact minimizer of ||C A_src - A_tgt||_F^2 + lambda ||C D_src - D_tgt C||_F^2,
// solved row by row: (A A' + lambda (D_src - d_l I)^2) c_l' = (A_src A_tgt')_l.
// Rank-deficient row systems fall back to a pseudo-inverse and are counted in
// `stats` instead of failing.
FunctionalMap estimate_fmap(const CoefficientMatrix& a_src, const CoefficientMatrix& a_tgt,
                            const Eigen::VectorXd& evals_src, const Eigen::VectorXd& evals_tgt,
                            double lambda, EstimateStats* stats = nullptr);

struct StructuralEnergy {
  double bijectivity = 0.0;   // ||C12 C21 - I||_F^2
  double orthogonality = 0.0; // ||C12'C12 - I||_F^2 + ||C21'C21 - I||_F^2
  double total = 0.0;
};

StructuralEnergy structural_energy(const FunctionalMap& c12, const FunctionalMap& c21);

struct RefineWeights {
  double data = 1.0;
  double commute = 1e-3;
  double structural = 1.0;
};

struct RefineOptions {
  int max_iters = 2000;
  double grad_tol = 1e-7;  // infinity norm
  double armijo_c = 1e-4;
  double shrink = 0.5;
};

struct RefineStats {
  double initial_energy = 0.0;
  double final_energy = 0.0;
  int iterations = 0;
  std::vector<double> energy_trace;  // energy after each accepted step
};

// Joint gradient descent over (C12, C21) on the weighted sum of both data
// terms, both commutativity terms and the structural (bijectivity +
// orthogonality) energy, with Armijo backtracking. Monotone by construction.
std::pair<FunctionalMap, FunctionalMap> refine_pair_unsupervised(
    const FunctionalMap& c12, const FunctionalMap& c21, const CoefficientMatrix& a1,
    const CoefficientMatrix& a2, const Eigen::VectorXd& evals1, const Eigen::VectorXd& evals2,
    const RefineWeights& weights = {}, const RefineOptions& options = {},
    RefineStats* stats = nullptr);

// C = Phi_src' M_src gather(Phi_tgt); transports functions on the p2p's
// target shape to the p2p's source shape. k = -1 uses the full basis size.
FunctionalMap fmap_from_p2p(const PointToPointMap& p2p, const SpectralBasis& basis_src,
                            const SpectralBasis& basis_tgt, int k = -1);

// assignment[i] = argmin_j || (Phi_src C)_i - (Phi_tgt)_j ||, ties to the
// smallest index. basis_src belongs to the map's target_id shape (the p2p's
// source), basis_tgt to the map's source_id shape.
PointToPointMap p2p_from_fmap(const FunctionalMap& c, const SpectralBasis& basis_src,
                              const SpectralBasis& basis_tgt);

struct ZoomoutStats {
  int rounds = 0;
};

// Alternates fmap_from_p2p and p2p_from_fmap while the truncation grows from
// k_start to k_end in increments of `step`; returns the refined p2p together
// with the k_end-sized functional map of that p2p.
std::pair<PointToPointMap, FunctionalMap> zoomout(const PointToPointMap& p2p_init,
                                                  const SpectralBasis& basis_src,
                                                  const SpectralBasis& basis_tgt, int k_start,
                                                  int k_end, int step,
                                                  ZoomoutStats* stats = nullptr);

// (k_end - k_start) / 30 rounded up to at least 1; reproduces 30 rounds for
// the default 30 -> 120 schedule.
int zoomout_default_step(int k_start, int k_end);

}  // namespace specpool

#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "specpool/mesh.hpp"

namespace specpool {

// Diagonal of the lumped mass matrix: per-vertex areas.
using MassDiagonal = Eigen::VectorXd;

// Symmetric positive semi-definite cotangent weights; constants span the kernel.
using StiffnessMatrix = Eigen::SparseMatrix<double>;

struct MeshQuality {
  int clamped_cotangents = 0;
  int nonmanifold_edges = 0;
  int boundary_edges = 0;
};

double total_surface_area(const Mesh& mesh);

// Barycentric lumping: each vertex receives one third of the area of its
// incident triangles. Throws ZeroAreaFace for collinear triangles.
MassDiagonal vertex_areas(const Mesh& mesh);

// Off-diagonal w_ij = -(cot a_ij + cot b_ij)/2 over the angles opposite edge
// (i,j); boundary edges use the single available cotangent; the diagonal makes
// every row sum to zero. Cotangents are clamped to [-1e4, 1e4] and clamps are
// counted in `quality` rather than failing on slivers.
StiffnessMatrix cotangent_stiffness(const Mesh& mesh, MeshQuality* quality = nullptr);

}  // namespace specpool

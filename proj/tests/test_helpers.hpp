#pragma once

// Shared mesh generators, deformations and independent brute-force oracles
// for the unit and acceptance suites.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "specpool/mesh.hpp"
#include "specpool/operators.hpp"
#include "specpool/spectral.hpp"
#include "specpool/util.hpp"

namespace testutil {

using specpool::Mesh;

inline Mesh make_tetrahedron(double edge = 1.0, const std::string& name = "tet") {
  const double s = edge / (2.0 * std::sqrt(2.0));
  Eigen::MatrixX3d v(4, 3);
  v << 1, 1, 1, 1, -1, -1, -1, 1, -1, -1, -1, 1;
  v *= s;
  Eigen::MatrixX3i f(4, 3);
  f << 0, 1, 2, 0, 3, 1, 0, 2, 3, 1, 3, 2;
  return specpool::make_mesh(v, f, name);
}

inline Mesh make_single_triangle(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                                 const Eigen::Vector3d& c, const std::string& name = "tri") {
  Eigen::MatrixX3d v(3, 3);
  v.row(0) = a;
  v.row(1) = b;
  v.row(2) = c;
  Eigen::MatrixX3i f(1, 3);
  f << 0, 1, 2;
  return specpool::make_mesh(v, f, name);
}

// Unit square split along the diagonal (0,0)-(1,1).
inline Mesh make_unit_square(const std::string& name = "square") {
  Eigen::MatrixX3d v(4, 3);
  v << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  Eigen::MatrixX3i f(2, 3);
  f << 0, 1, 2, 0, 2, 3;
  return specpool::make_mesh(v, f, name);
}

inline Mesh make_box(double ax, double ay, double az, const std::string& name = "box") {
  Eigen::MatrixX3d v(8, 3);
  int at = 0;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) v.row(at++) << x * ax, y * ay, z * az;
  Eigen::MatrixX3i f(12, 3);
  f << 0, 2, 1, 1, 2, 3,  // bottom
      4, 5, 6, 5, 7, 6,   // top
      0, 1, 5, 0, 5, 4,   // front
      2, 6, 7, 2, 7, 3,   // back
      0, 4, 6, 0, 6, 2,   // left
      1, 3, 7, 1, 7, 5;   // right
  return specpool::make_mesh(v, f, name);
}

// Icosphere by midpoint subdivision of the icosahedron; vertex order is
// deterministic. subdiv 0/1/2/3/4 -> 12/42/162/642/2562 vertices.
inline Mesh make_icosphere(int subdiv, double radius = 1.0,
                           const std::string& name = "icosphere") {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {
      {-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0}, {0, -1, t},  {0, 1, t},
      {0, -1, -t}, {0, 1, -t}, {t, 0, -1},  {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},
      {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},   {3, 4, 2},
      {3, 2, 6},  {3, 6, 8},  {3, 8, 9},   {4, 9, 5},  {2, 4, 11},  {6, 2, 10},
      {8, 6, 7},  {9, 8, 1}};

  for (int level = 0; level < subdiv; ++level) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Eigen::Vector3d m = (verts[static_cast<std::size_t>(a)] +
                           verts[static_cast<std::size_t>(b)]).normalized();
      verts.push_back(m);
      const int idx = static_cast<int>(verts.size()) - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      const int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }

  Eigen::MatrixX3d v(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i)
    v.row(static_cast<Eigen::Index>(i)) = radius * verts[i];
  Eigen::MatrixX3i f(static_cast<Eigen::Index>(faces.size()), 3);
  for (std::size_t i = 0; i < faces.size(); ++i)
    f.row(static_cast<Eigen::Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
  return specpool::make_mesh(v, f, name);
}

// Smooth low-frequency radial deformations used to build synthetic
// collections: r' = r * (1 + amplitude * field(direction)).
inline Mesh radial_deform(const Mesh& mesh, int which, double amplitude,
                          const std::string& name) {
  Mesh out = mesh;
  out.name = name;
  for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
    const Eigen::Vector3d p = mesh.vertices.row(i);
    const double r = p.norm();
    if (r == 0.0) continue;
    const Eigen::Vector3d d = p / r;
    double field = 0.0;
    switch (which % 4) {
      case 0: field = std::sin(2.1 * d.z() + 0.3) * std::cos(1.7 * d.x()); break;
      case 1: field = std::cos(2.3 * d.y()) * std::sin(1.3 * d.x() + 0.5); break;
      case 2: field = std::sin(1.9 * d.x() * d.y() + 1.0); break;
      case 3: field = std::cos(1.1 * d.z() + 0.7) * std::sin(2.9 * d.y() - 0.2); break;
    }
    out.vertices.row(i) = p * (1.0 + amplitude * field);
  }
  return out;
}

// Asymmetric blob with a generically simple Laplacian spectrum.
inline Mesh make_blob(int subdiv, const std::string& name = "blob") {
  Mesh sphere = make_icosphere(subdiv, 1.0, name);
  for (Eigen::Index i = 0; i < sphere.vertex_count(); ++i) {
    const Eigen::Vector3d p = sphere.vertices.row(i);
    const double f = 0.23 * std::sin(3.0 * p.x() + 1.0) * std::cos(2.0 * p.y()) +
                     0.17 * std::sin(2.5 * p.z() + 0.4) + 0.11 * std::cos(1.7 * p.x() * p.z());
    sphere.vertices.row(i) = p * (1.0 + f);
  }
  return sphere;
}

// Relabels vertices with a seeded permutation: perm[old] = new index.
inline std::pair<Mesh, std::vector<int>> permute_mesh(const Mesh& mesh, std::uint64_t seed,
                                                      const std::string& name) {
  const Eigen::Index n = mesh.vertex_count();
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  specpool::Rng rng(seed);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  Mesh out;
  out.name = name;
  out.vertices.resize(n, 3);
  for (Eigen::Index i = 0; i < n; ++i)
    out.vertices.row(perm[static_cast<std::size_t>(i)]) = mesh.vertices.row(i);
  out.faces.resize(mesh.face_count(), 3);
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f)
    for (int c = 0; c < 3; ++c)
      out.faces(f, c) = perm[static_cast<std::size_t>(mesh.faces(f, c))];
  return {std::move(out), std::move(perm)};
}

inline Eigen::Matrix3d random_rotation(std::uint64_t seed) {
  specpool::Rng rng(seed);
  Eigen::Matrix3d g;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) g(r, c) = rng.symmetric();
  const Eigen::HouseholderQR<Eigen::Matrix3d> qr(g);
  Eigen::Matrix3d q = qr.householderQ();
  if (q.determinant() < 0) q.col(0) = -q.col(0);
  return q;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  specpool::Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.symmetric();
  return m;
}

// ---- independent oracles ----

// Sum of incident face areas / 3, accumulated face by face.
inline Eigen::VectorXd vertex_areas_oracle(const Mesh& mesh) {
  Eigen::VectorXd areas = Eigen::VectorXd::Zero(mesh.vertex_count());
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0));
    const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1));
    const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2));
    const double area = 0.5 * (b - a).cross(c - a).norm();
    for (int v = 0; v < 3; ++v) areas[mesh.faces(f, v)] += area / 3.0;
  }
  return areas;
}

// Plain double-loop heat kernel signature, no normalization.
inline Eigen::MatrixXd hks_oracle(const specpool::SpectralBasis& basis,
                                  const Eigen::VectorXd& times) {
  Eigen::MatrixXd out(basis.n(), times.size());
  for (Eigen::Index x = 0; x < basis.n(); ++x)
    for (Eigen::Index ti = 0; ti < times.size(); ++ti) {
      double acc = 0.0;
      for (int j = 0; j < basis.k(); ++j)
        acc += std::exp(-basis.evals[j] * times[ti]) * basis.phi(x, j) * basis.phi(x, j);
      out(x, ti) = acc;
    }
  return out;
}

// Plain double-loop wave kernel signature, no normalization; skips
// nonpositive eigenvalues like the implementation.
inline Eigen::MatrixXd wks_oracle(const specpool::SpectralBasis& basis,
                                  const Eigen::VectorXd& energies, double sigma) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(basis.n(), energies.size());
  for (Eigen::Index x = 0; x < basis.n(); ++x)
    for (Eigen::Index e = 0; e < energies.size(); ++e) {
      double acc = 0.0;
      for (int j = 1; j < basis.k(); ++j) {
        if (!(basis.evals[j] > 0.0)) continue;
        const double gap = energies[e] - std::log(basis.evals[j]);
        acc += std::exp(-gap * gap / (2.0 * sigma * sigma)) * basis.phi(x, j) * basis.phi(x, j);
      }
      out(x, e) = acc;
    }
  return out;
}

// Steepest descent with exact line search on the quadratic map energy
// ||C A1 - A2||_F^2 + lambda ||C D1 - D2 C||_F^2; independent of the
// closed-form row solver.
inline Eigen::MatrixXd fmap_gd_oracle(const Eigen::MatrixXd& a1, const Eigen::MatrixXd& a2,
                                      const Eigen::VectorXd& ev1, const Eigen::VectorXd& ev2,
                                      double lambda, double grad_tol = 1e-10,
                                      int max_iters = 200000) {
  const Eigen::Index k = a1.rows();
  Eigen::ArrayXXd gaps(k, k);
  for (Eigen::Index l = 0; l < k; ++l)
    for (Eigen::Index j = 0; j < k; ++j) gaps(l, j) = ev1[j] - ev2[l];
  const Eigen::ArrayXXd gaps_sq = gaps.square();
  const Eigen::MatrixXd gram = a1 * a1.transpose();
  const Eigen::MatrixXd cross = a2 * a1.transpose();

  // gradient(C) = 2 (C gram - cross) + 2 lambda C .* gaps^2
  auto grad = [&](const Eigen::MatrixXd& c) -> Eigen::MatrixXd {
    Eigen::MatrixXd g = 2.0 * (c * gram - cross);
    g.array() += 2.0 * lambda * c.array() * gaps_sq;
    return g;
  };
  // Hessian action on a direction (the gradient map is affine).
  auto hess = [&](const Eigen::MatrixXd& d) -> Eigen::MatrixXd {
    Eigen::MatrixXd h = 2.0 * d * gram;
    h.array() += 2.0 * lambda * d.array() * gaps_sq;
    return h;
  };

  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k, k);
  for (int it = 0; it < max_iters; ++it) {
    const Eigen::MatrixXd g = grad(c);
    if (g.cwiseAbs().maxCoeff() < grad_tol) break;
    const double gg = g.squaredNorm();
    const double ghg = (g.array() * hess(g).array()).sum();
    if (!(ghg > 0.0)) break;
    c -= (gg / ghg) * g;
  }
  return c;
}

inline double fmap_energy(const Eigen::MatrixXd& c, const Eigen::MatrixXd& a1,
                          const Eigen::MatrixXd& a2, const Eigen::VectorXd& ev1,
                          const Eigen::VectorXd& ev2, double lambda) {
  double e = (c * a1 - a2).squaredNorm();
  for (Eigen::Index l = 0; l < c.rows(); ++l)
    for (Eigen::Index j = 0; j < c.cols(); ++j) {
      const double gap = ev1[j] - ev2[l];
      e += lambda * c(l, j) * c(l, j) * gap * gap;
    }
  return e;
}

// Scratch directory unique to a test, cleared on entry.
inline std::filesystem::path fresh_dir(const std::string& name) {
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "specpool_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil

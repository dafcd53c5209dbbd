#include "specpool/operators.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "specpool/errors.hpp"

namespace specpool {

namespace {

constexpr double kCotClamp = 1e4;

double face_area(const Mesh& mesh, Eigen::Index f) {
  const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0));
  const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1));
  const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2));
  return 0.5 * (b - a).cross(c - a).norm();
}

double longest_edge_sq(const Mesh& mesh, Eigen::Index f) {
  const Eigen::Vector3d a = mesh.vertices.row(mesh.faces(f, 0));
  const Eigen::Vector3d b = mesh.vertices.row(mesh.faces(f, 1));
  const Eigen::Vector3d c = mesh.vertices.row(mesh.faces(f, 2));
  return std::max({(b - a).squaredNorm(), (c - b).squaredNorm(), (a - c).squaredNorm()});
}

}  // namespace

double total_surface_area(const Mesh& mesh) {
  double total = 0.0;
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) total += face_area(mesh, f);
  return total;
}

MassDiagonal vertex_areas(const Mesh& mesh) {
  validate_mesh(mesh);
  MassDiagonal areas = MassDiagonal::Zero(mesh.vertex_count());
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const double area = face_area(mesh, f);
    if (area < 1e-14 * longest_edge_sq(mesh, f))
      fail("ZeroAreaFace", "mesh '" + mesh.name + "': face " + std::to_string(f) +
                               " has collinear vertices");
    const double third = area / 3.0;
    for (int v = 0; v < 3; ++v) areas[mesh.faces(f, v)] += third;
  }
  return areas;
}

StiffnessMatrix cotangent_stiffness(const Mesh& mesh, MeshQuality* quality) {
  validate_mesh(mesh);
  const Eigen::Index n = mesh.vertex_count();

  MeshQuality local;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(mesh.face_count()) * 12);
  std::map<std::pair<int, int>, int> edge_faces;

  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const int idx[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
    const Eigen::Vector3d p[3] = {mesh.vertices.row(idx[0]), mesh.vertices.row(idx[1]),
                                  mesh.vertices.row(idx[2])};
    for (int corner = 0; corner < 3; ++corner) {
      const int i = idx[(corner + 1) % 3];
      const int j = idx[(corner + 2) % 3];
      const Eigen::Vector3d u = p[(corner + 1) % 3] - p[corner];
      const Eigen::Vector3d v = p[(corner + 2) % 3] - p[corner];
      const double cross = u.cross(v).norm();
      double cot;
      if (cross == 0.0) {
        cot = kCotClamp;
        ++local.clamped_cotangents;
      } else {
        cot = u.dot(v) / cross;
        if (cot > kCotClamp || cot < -kCotClamp) {
          cot = std::clamp(cot, -kCotClamp, kCotClamp);
          ++local.clamped_cotangents;
        }
      }
      const double w = 0.5 * cot;
      triplets.emplace_back(i, j, -w);
      triplets.emplace_back(j, i, -w);
      triplets.emplace_back(i, i, w);
      triplets.emplace_back(j, j, w);
      edge_faces[{std::min(i, j), std::max(i, j)}] += 1;
    }
  }

  for (const auto& [edge, count] : edge_faces) {
    if (count == 1) ++local.boundary_edges;
    if (count > 2) ++local.nonmanifold_edges;
  }
  if (quality) *quality = local;

  StiffnessMatrix w(n, n);
  w.setFromTriplets(triplets.begin(), triplets.end());
  w.makeCompressed();
  return w;
}

}  // namespace specpool

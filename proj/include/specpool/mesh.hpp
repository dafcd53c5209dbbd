#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>

namespace specpool {

enum class MeshFormat { Auto, Off, Obj, Ply };

// Immutable after construction; all operations on meshes are pure functions.
struct Mesh {
  Eigen::MatrixX3d vertices;
  Eigen::MatrixX3i faces;
  std::string name;

  Eigen::Index vertex_count() const { return vertices.rows(); }
  Eigen::Index face_count() const { return faces.rows(); }
};

// Structural validation: every face index in [0, n), three distinct indices
// per face, at least one face. `file_grade` additionally requires n >= 4,
// the contract for meshes ingested from disk; in-memory meshes may be single
// triangles (n >= 3).
void validate_mesh(const Mesh& mesh, bool file_grade = false);

// Validating constructor for programmatic meshes.
Mesh make_mesh(Eigen::MatrixX3d vertices, Eigen::MatrixX3i faces, std::string name);

// ASCII OFF / OBJ (v and f records, everything else ignored) / ASCII PLY.
// Polygonal faces are fan-triangulated. Binary PLY is rejected.
Mesh load_mesh(const std::filesystem::path& path, MeshFormat format = MeshFormat::Auto);

void save_off(const Mesh& mesh, const std::filesystem::path& path);
std::string to_off_string(const Mesh& mesh);

// Translate to the bounding-box center, then scale uniformly so the largest
// axis extent maps exactly to [-1, 1]. Aspect ratio is preserved.
Mesh normalize_unit_box(const Mesh& mesh);

}  // namespace specpool

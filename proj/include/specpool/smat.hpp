#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

namespace specpool {

// Binary container for named f64 matrices:
//   magic "SMAT" | u32 version=1 | u32 entry count |
//   per entry: u32 name length | name bytes | u32 rows | u32 cols |
//              rows*cols little-endian f64, row-major.
// read(write(x)) round-trips bit exactly.
struct SmatEntry {
  std::string name;
  Eigen::MatrixXd matrix;
};

struct SmatFile {
  std::vector<SmatEntry> entries;

  bool has(const std::string& name) const;
  const Eigen::MatrixXd& get(const std::string& name) const;  // throws MissingEntry
};

std::string to_smat_bytes(const std::vector<SmatEntry>& entries);
void write_smat(const std::filesystem::path& path, const std::vector<SmatEntry>& entries);
SmatFile read_smat_bytes(const std::string& bytes, const std::string& origin = "<memory>");
SmatFile read_smat(const std::filesystem::path& path);

}  // namespace specpool

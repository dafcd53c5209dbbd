#include "specpool/smat.hpp"

#include <bit>
#include <cstring>
#include <set>

#include "specpool/errors.hpp"
#include "specpool/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "SMAT serialization assumes a little-endian host");

namespace specpool {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  char bytes[4];
  std::memcpy(bytes, &v, 4);
  out.append(bytes, 4);
}

std::uint32_t take_u32(const std::string& bytes, std::size_t& at, const std::string& origin) {
  if (at + 4 > bytes.size())
    fail("TruncatedPayload", origin + ": container ends inside a header field");
  std::uint32_t v;
  std::memcpy(&v, bytes.data() + at, 4);
  at += 4;
  return v;
}

}  // namespace

bool SmatFile::has(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return true;
  return false;
}

const Eigen::MatrixXd& SmatFile::get(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e.matrix;
  fail("MissingEntry", "SMAT container has no entry named '" + name + "'");
}

std::string to_smat_bytes(const std::vector<SmatEntry>& entries) {
  std::set<std::string> seen;
  for (const auto& e : entries)
    if (!seen.insert(e.name).second)
      fail("DuplicateName", "duplicate SMAT entry name '" + e.name + "'");

  std::string out;
  out += "SMAT";
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    put_u32(out, static_cast<std::uint32_t>(e.matrix.rows()));
    put_u32(out, static_cast<std::uint32_t>(e.matrix.cols()));
    for (Eigen::Index r = 0; r < e.matrix.rows(); ++r)
      for (Eigen::Index c = 0; c < e.matrix.cols(); ++c) {
        const double v = e.matrix(r, c);
        char bytes[8];
        std::memcpy(bytes, &v, 8);
        out.append(bytes, 8);
      }
  }
  return out;
}

void write_smat(const std::filesystem::path& path, const std::vector<SmatEntry>& entries) {
  write_file_atomic(path, to_smat_bytes(entries));
}

SmatFile read_smat_bytes(const std::string& bytes, const std::string& origin) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "SMAT") != 0)
    fail("BadMagic", origin + ": not an SMAT container");
  std::size_t at = 4;
  const std::uint32_t version = take_u32(bytes, at, origin);
  if (version != 1)
    fail("BadMagic", origin + ": unsupported SMAT version " + std::to_string(version));
  const std::uint32_t count = take_u32(bytes, at, origin);

  SmatFile file;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = take_u32(bytes, at, origin);
    if (at + name_len > bytes.size())
      fail("TruncatedPayload", origin + ": container ends inside an entry name");
    std::string name = bytes.substr(at, name_len);
    at += name_len;
    if (!seen.insert(name).second)
      fail("DuplicateName", origin + ": duplicate SMAT entry name '" + name + "'");
    const std::uint32_t rows = take_u32(bytes, at, origin);
    const std::uint32_t cols = take_u32(bytes, at, origin);
    const std::size_t payload = static_cast<std::size_t>(rows) * cols * 8;
    if (at + payload > bytes.size())
      fail("TruncatedPayload", origin + ": entry '" + name + "' declares " +
                                   std::to_string(rows) + "x" + std::to_string(cols) +
                                   " but the payload is short");
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        double v;
        std::memcpy(&v, bytes.data() + at, 8);
        at += 8;
        m(r, c) = v;
      }
    file.entries.push_back({std::move(name), std::move(m)});
  }
  if (at != bytes.size())
    fail("TruncatedPayload", origin + ": trailing bytes after the declared entries");
  return file;
}

SmatFile read_smat(const std::filesystem::path& path) {
  return read_smat_bytes(read_file(path), path.string());
}

}  // namespace specpool

#include "specpool/mesh.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "specpool/errors.hpp"
#include "specpool/util.hpp"

namespace specpool {

namespace {

struct Tri {
  int a, b, c;
};

[[noreturn]] void parse_fail(const std::filesystem::path& path, int line, const std::string& what) {
  fail("ParseError", path.string() + ":" + std::to_string(line) + ": " + what);
}

// Line-oriented token reader that keeps track of line numbers for error
// reporting. '#' starts a comment in OFF/OBJ.
class LineReader {
public:
  LineReader(std::istream& in, bool hash_comments) : in_(in), hash_comments_(hash_comments) {}

  // Next non-empty line split into tokens; false at EOF.
  bool next(std::vector<std::string>& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_number_;
      if (hash_comments_) {
        if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
      }
      tokens.clear();
      std::istringstream ss(line);
      std::string tok;
      while (ss >> tok) tokens.push_back(tok);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  int line() const { return line_number_; }

private:
  std::istream& in_;
  bool hash_comments_;
  int line_number_ = 0;
};

double parse_double(const std::string& tok, const std::filesystem::path& path, int line) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    parse_fail(path, line, "expected a number, got '" + tok + "'");
  }
}

long parse_long(const std::string& tok, const std::filesystem::path& path, int line) {
  long v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
    parse_fail(path, line, "expected an integer, got '" + tok + "'");
  return v;
}

void check_face_index(long idx, long n_vertices, const std::filesystem::path& path, int line) {
  if (idx < 0 || idx >= n_vertices)
    fail("IndexError", path.string() + ":" + std::to_string(line) + ": face references vertex " +
                           std::to_string(idx) + " of a " + std::to_string(n_vertices) +
                           "-vertex mesh");
}

void fan_triangulate(const std::vector<long>& poly, std::vector<Tri>& out) {
  for (std::size_t i = 1; i + 1 < poly.size(); ++i)
    out.push_back({static_cast<int>(poly[0]), static_cast<int>(poly[i]),
                   static_cast<int>(poly[i + 1])});
}

Mesh finalize(std::vector<Eigen::Vector3d>& verts, std::vector<Tri>& tris, std::string name) {
  Mesh mesh;
  mesh.name = std::move(name);
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
  mesh.faces.resize(static_cast<Eigen::Index>(tris.size()), 3);
  for (std::size_t i = 0; i < tris.size(); ++i)
    mesh.faces.row(static_cast<Eigen::Index>(i)) << tris[i].a, tris[i].b, tris[i].c;
  validate_mesh(mesh, /*file_grade=*/true);
  return mesh;
}

Mesh load_off(std::istream& in, const std::filesystem::path& path) {
  LineReader reader(in, /*hash_comments=*/true);
  std::vector<std::string> tok;
  if (!reader.next(tok)) fail("EmptyMesh", path.string() + ": empty OFF file");
  std::size_t cursor = 0;
  if (tok[0] != "OFF") parse_fail(path, reader.line(), "missing OFF header");
  cursor = 1;
  // Counts may share the header line or follow on their own line.
  std::vector<std::string> counts(tok.begin() + static_cast<long>(cursor), tok.end());
  if (counts.empty()) {
    if (!reader.next(counts)) parse_fail(path, reader.line(), "missing OFF counts");
  }
  if (counts.size() < 2) parse_fail(path, reader.line(), "OFF counts need vertices and faces");
  const long nv = parse_long(counts[0], path, reader.line());
  const long nf = parse_long(counts[1], path, reader.line());
  if (nv < 0 || nf < 0) parse_fail(path, reader.line(), "negative OFF counts");

  std::vector<Eigen::Vector3d> verts;
  verts.reserve(static_cast<std::size_t>(nv));
  for (long i = 0; i < nv; ++i) {
    if (!reader.next(tok)) parse_fail(path, reader.line(), "unexpected end of file in vertex list");
    if (tok.size() < 3) parse_fail(path, reader.line(), "vertex line needs 3 coordinates");
    verts.emplace_back(parse_double(tok[0], path, reader.line()),
                       parse_double(tok[1], path, reader.line()),
                       parse_double(tok[2], path, reader.line()));
  }
  std::vector<Tri> tris;
  tris.reserve(static_cast<std::size_t>(nf));
  for (long i = 0; i < nf; ++i) {
    if (!reader.next(tok)) parse_fail(path, reader.line(), "unexpected end of file in face list");
    const long m = parse_long(tok[0], path, reader.line());
    if (m < 3) parse_fail(path, reader.line(), "face with fewer than 3 vertices");
    if (static_cast<long>(tok.size()) < 1 + m) parse_fail(path, reader.line(), "truncated face line");
    std::vector<long> poly;
    for (long j = 0; j < m; ++j) {
      const long idx = parse_long(tok[static_cast<std::size_t>(1 + j)], path, reader.line());
      check_face_index(idx, nv, path, reader.line());
      poly.push_back(idx);
    }
    fan_triangulate(poly, tris);
  }
  return finalize(verts, tris, path.stem().string());
}

Mesh load_obj(std::istream& in, const std::filesystem::path& path) {
  LineReader reader(in, /*hash_comments=*/true);
  std::vector<std::string> tok;
  std::vector<Eigen::Vector3d> verts;
  std::vector<Tri> tris;
  while (reader.next(tok)) {
    if (tok[0] == "v") {
      if (tok.size() < 4) parse_fail(path, reader.line(), "v record needs 3 coordinates");
      verts.emplace_back(parse_double(tok[1], path, reader.line()),
                         parse_double(tok[2], path, reader.line()),
                         parse_double(tok[3], path, reader.line()));
    } else if (tok[0] == "f") {
      if (tok.size() < 4) parse_fail(path, reader.line(), "f record needs at least 3 vertices");
      std::vector<long> poly;
      for (std::size_t j = 1; j < tok.size(); ++j) {
        // a, a/t, a/t/n, a//n; negative indices are relative to the end.
        std::string head = tok[j].substr(0, tok[j].find('/'));
        long idx = parse_long(head, path, reader.line());
        if (idx < 0)
          idx = static_cast<long>(verts.size()) + idx;  // -1 is the last vertex
        else
          idx -= 1;  // OBJ is 1-based
        check_face_index(idx, static_cast<long>(verts.size()), path, reader.line());
        poly.push_back(idx);
      }
      fan_triangulate(poly, tris);
    }
    // All other records (vt, vn, usemtl, groups, ...) are ignored.
  }
  return finalize(verts, tris, path.stem().string());
}

struct PlyProperty {
  bool is_list = false;
  std::string name;
};

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<PlyProperty> props;
};

Mesh load_ply(std::istream& in, const std::filesystem::path& path) {
  LineReader reader(in, /*hash_comments=*/false);
  std::vector<std::string> tok;
  if (!reader.next(tok) || tok[0] != "ply") parse_fail(path, reader.line(), "missing ply header");

  std::vector<PlyElement> elements;
  bool saw_format = false;
  while (true) {
    if (!reader.next(tok)) parse_fail(path, reader.line(), "unexpected end of PLY header");
    if (tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2) parse_fail(path, reader.line(), "malformed format line");
      if (tok[1] != "ascii")
        parse_fail(path, reader.line(), "binary PLY is not supported (ASCII only)");
      saw_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() < 3) parse_fail(path, reader.line(), "malformed element line");
      elements.push_back({tok[1], parse_long(tok[2], path, reader.line()), {}});
    } else if (tok[0] == "property") {
      if (elements.empty() || tok.size() < 3) parse_fail(path, reader.line(), "property outside element");
      PlyProperty p;
      p.is_list = tok[1] == "list";
      p.name = tok.back();
      elements.back().props.push_back(p);
    } else if (tok[0] == "end_header") {
      break;
    } else {
      parse_fail(path, reader.line(), "unexpected header record '" + tok[0] + "'");
    }
  }
  if (!saw_format) parse_fail(path, reader.line(), "missing format line");

  std::vector<Eigen::Vector3d> verts;
  std::vector<Tri> tris;
  long n_vertices = 0;
  for (const auto& el : elements) {
    if (el.name == "vertex") {
      int ix = -1, iy = -1, iz = -1;
      for (std::size_t p = 0; p < el.props.size(); ++p) {
        if (el.props[p].is_list) parse_fail(path, reader.line(), "list property in vertex element");
        if (el.props[p].name == "x") ix = static_cast<int>(p);
        if (el.props[p].name == "y") iy = static_cast<int>(p);
        if (el.props[p].name == "z") iz = static_cast<int>(p);
      }
      if (ix < 0 || iy < 0 || iz < 0) parse_fail(path, reader.line(), "vertex element lacks x/y/z");
      n_vertices = el.count;
      verts.reserve(static_cast<std::size_t>(el.count));
      for (long i = 0; i < el.count; ++i) {
        if (!reader.next(tok)) parse_fail(path, reader.line(), "unexpected end of vertex data");
        if (tok.size() < el.props.size()) parse_fail(path, reader.line(), "short vertex row");
        verts.emplace_back(parse_double(tok[static_cast<std::size_t>(ix)], path, reader.line()),
                           parse_double(tok[static_cast<std::size_t>(iy)], path, reader.line()),
                           parse_double(tok[static_cast<std::size_t>(iz)], path, reader.line()));
      }
    } else if (el.name == "face") {
      for (long i = 0; i < el.count; ++i) {
        if (!reader.next(tok)) parse_fail(path, reader.line(), "unexpected end of face data");
        const long m = parse_long(tok[0], path, reader.line());
        if (m < 3 || static_cast<long>(tok.size()) < 1 + m)
          parse_fail(path, reader.line(), "malformed face row");
        std::vector<long> poly;
        for (long j = 0; j < m; ++j) {
          const long idx = parse_long(tok[static_cast<std::size_t>(1 + j)], path, reader.line());
          check_face_index(idx, n_vertices, path, reader.line());
          poly.push_back(idx);
        }
        fan_triangulate(poly, tris);
      }
    } else {
      // Unknown element: skip its rows.
      for (long i = 0; i < el.count; ++i)
        if (!reader.next(tok)) parse_fail(path, reader.line(), "unexpected end of element data");
    }
  }
  return finalize(verts, tris, path.stem().string());
}

MeshFormat detect_format(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".off") return MeshFormat::Off;
  if (ext == ".obj") return MeshFormat::Obj;
  if (ext == ".ply") return MeshFormat::Ply;
  fail("ParseError", path.string() + ": cannot infer mesh format from extension '" + ext + "'");
}

}  // namespace

void validate_mesh(const Mesh& mesh, bool file_grade) {
  const Eigen::Index n = mesh.vertex_count();
  if (n == 0 || mesh.face_count() == 0)
    fail("EmptyMesh", "mesh '" + mesh.name + "' has no vertices or no faces");
  const Eigen::Index minimum = file_grade ? 4 : 3;
  if (n < minimum)
    fail("EmptyMesh", "mesh '" + mesh.name + "' has fewer than " + std::to_string(minimum) +
                          " vertices");
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    const int a = mesh.faces(f, 0), b = mesh.faces(f, 1), c = mesh.faces(f, 2);
    for (int idx : {a, b, c})
      if (idx < 0 || idx >= n)
        fail("IndexError", "mesh '" + mesh.name + "': face " + std::to_string(f) +
                               " references vertex " + std::to_string(idx));
    if (a == b || b == c || a == c)
      fail("DegenerateFace", "mesh '" + mesh.name + "': face " + std::to_string(f) +
                                 " repeats a vertex index");
  }
}

Mesh make_mesh(Eigen::MatrixX3d vertices, Eigen::MatrixX3i faces, std::string name) {
  Mesh mesh{std::move(vertices), std::move(faces), std::move(name)};
  validate_mesh(mesh);
  return mesh;
}

Mesh load_mesh(const std::filesystem::path& path, MeshFormat format) {
  if (!std::filesystem::exists(path)) fail("IoError", "mesh file not found: " + path.string());
  if (format == MeshFormat::Auto) format = detect_format(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("IoError", "cannot open mesh file: " + path.string());
  switch (format) {
    case MeshFormat::Off: return load_off(in, path);
    case MeshFormat::Obj: return load_obj(in, path);
    case MeshFormat::Ply: return load_ply(in, path);
    default: fail("ParseError", "unresolved mesh format");
  }
}

std::string to_off_string(const Mesh& mesh) {
  std::string out;
  out.reserve(static_cast<std::size_t>(mesh.vertex_count()) * 48);
  out += "OFF\n";
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%lld %lld 0\n", static_cast<long long>(mesh.vertex_count()),
                static_cast<long long>(mesh.face_count()));
  out += buf;
  for (Eigen::Index i = 0; i < mesh.vertex_count(); ++i) {
    // %.17g round-trips doubles exactly.
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", mesh.vertices(i, 0),
                  mesh.vertices(i, 1), mesh.vertices(i, 2));
    out += buf;
  }
  for (Eigen::Index f = 0; f < mesh.face_count(); ++f) {
    std::snprintf(buf, sizeof(buf), "3 %d %d %d\n", mesh.faces(f, 0), mesh.faces(f, 1),
                  mesh.faces(f, 2));
    out += buf;
  }
  return out;
}

void save_off(const Mesh& mesh, const std::filesystem::path& path) {
  write_file_atomic(path, to_off_string(mesh));
}

Mesh normalize_unit_box(const Mesh& mesh) {
  validate_mesh(mesh);
  const Eigen::RowVector3d lo = mesh.vertices.colwise().minCoeff();
  const Eigen::RowVector3d hi = mesh.vertices.colwise().maxCoeff();
  const double extent = (hi - lo).maxCoeff();
  if (extent <= 0.0)
    fail("DegenerateExtent", "mesh '" + mesh.name + "': all vertices coincide");
  const Eigen::RowVector3d center = 0.5 * (lo + hi);
  Mesh out = mesh;
  out.vertices = (mesh.vertices.rowwise() - center) * (2.0 / extent);
  return out;
}

}  // namespace specpool

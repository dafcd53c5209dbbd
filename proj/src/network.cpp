#include "specpool/network.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <numeric>
#include <sstream>

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

}  // namespace

int FmapNetwork::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < shapes.size(); ++i)
    if (shapes[i].id == id) return static_cast<int>(i);
  fail("UnknownShape", "shape '" + id + "' is not part of the network");
}

int CanonicalBasis::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < shape_ids.size(); ++i)
    if (shape_ids[i] == id) return static_cast<int>(i);
  fail("UnknownShape", "shape '" + id + "' is not part of the canonical basis");
}

FmapNetwork build_network(std::vector<NetworkShape> shapes,
                          const std::vector<FunctionalMap>& maps) {
  FmapNetwork net;
  net.shapes = std::move(shapes);
  if (net.shapes.empty()) fail("EmptyNetwork", "a network needs at least one shape");

  std::map<std::string, int> index;
  for (std::size_t i = 0; i < net.shapes.size(); ++i) {
    if (!index.emplace(net.shapes[i].id, static_cast<int>(i)).second)
      fail("DuplicateShape", "shape id '" + net.shapes[i].id + "' appears twice");
  }

  int k1 = -1;
  std::map<std::pair<int, int>, const FunctionalMap*> directed;
  for (const auto& m : maps) {
    auto si = index.find(m.source_id);
    auto ti = index.find(m.target_id);
    if (si == index.end() || ti == index.end())
      fail("UnknownShape", "map " + m.source_id + "->" + m.target_id +
                               " references a shape outside the collection");
    if (si->second == ti->second)
      fail("SizeMismatch", "self map on shape '" + m.source_id + "'");
    if (m.c.rows() != m.c.cols()) fail("SizeMismatch", "non-square functional map");
    if (k1 < 0) k1 = m.k();
    if (m.k() != k1)
      fail("SizeMismatch", "maps disagree on k1 (" + std::to_string(m.k()) + " vs " +
                               std::to_string(k1) + ")");
    if (!directed.emplace(std::make_pair(si->second, ti->second), &m).second)
      fail("DuplicateMap", "map " + m.source_id + "->" + m.target_id + " given twice");
  }
  if (k1 < 0) k1 = net.shapes.size() == 1 ? 0 : -1;
  if (k1 < 0) fail("DisconnectedGraph", "no maps supplied for a multi-shape collection");

  for (const auto& [key, map] : directed) {
    const auto [i, j] = key;
    if (i > j) continue;
    auto rev = directed.find({j, i});
    if (rev == directed.end())
      fail("MissingReverseMap", "edge (" + net.shapes[static_cast<std::size_t>(i)].id + ", " +
                                    net.shapes[static_cast<std::size_t>(j)].id +
                                    ") lacks the reverse map");
    net.edges.push_back({i, j, map->c, rev->second->c});
  }
  for (const auto& [key, map] : directed) {
    (void)map;
    if (key.first < key.second) continue;
    if (directed.find({key.second, key.first}) == directed.end())
      fail("MissingReverseMap", "edge lacks the reverse map");
  }
  net.k1 = std::max(k1, 0);

  // Connectivity over the undirected edges.
  const std::size_t n = net.shapes.size();
  std::vector<int> component(n, -1);
  int n_components = 0;
  for (std::size_t root = 0; root < n; ++root) {
    if (component[root] >= 0) continue;
    const int label = n_components++;
    std::vector<std::size_t> stack{root};
    component[root] = label;
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      for (const auto& e : net.edges) {
        std::size_t other;
        if (static_cast<std::size_t>(e.i) == v) other = static_cast<std::size_t>(e.j);
        else if (static_cast<std::size_t>(e.j) == v) other = static_cast<std::size_t>(e.i);
        else continue;
        if (component[other] < 0) {
          component[other] = label;
          stack.push_back(other);
        }
      }
    }
  }
  if (n_components > 1) {
    std::ostringstream msg;
    msg << "functional map network is disconnected; components:";
    for (int c = 0; c < n_components; ++c) {
      msg << " {";
      bool first = true;
      for (std::size_t i = 0; i < n; ++i)
        if (component[i] == c) {
          if (!first) msg << ", ";
          msg << net.shapes[i].id;
          first = false;
        }
      msg << "}";
    }
    fail("DisconnectedGraph", msg.str());
  }

  // A single shape with no edges still needs a k1 for the latent basis.
  if (net.edges.empty() && net.k1 == 0 && !net.shapes.empty() && net.shapes[0].basis)
    net.k1 = net.shapes[0].basis->k();
  return net;
}

double clb_consistency_energy(const FmapNetwork& network,
                              const std::vector<Eigen::MatrixXd>& y) {
  if (y.size() != network.shapes.size())
    fail("DimensionMismatch", "one latent basis per shape required");
  double total = 0.0;
  for (const auto& e : network.edges) {
    total += (e.c_ij * y[static_cast<std::size_t>(e.i)] - y[static_cast<std::size_t>(e.j)])
                 .squaredNorm();
    total += (e.c_ji * y[static_cast<std::size_t>(e.j)] - y[static_cast<std::size_t>(e.i)])
                 .squaredNorm();
  }
  return total;
}

LatentBasisSet compute_clb(const FmapNetwork& network) {
  const int n = static_cast<int>(network.shapes.size());
  const int k1 = network.k1;
  if (n == 0 || k1 <= 0) fail("EmptyNetwork", "network has no shapes or k1 == 0");

  // Block operator: H_ii = sum_{j in N(i)} (C_ij' C_ij + I),
  // H_ij = -(C_ij' + C_ji). Its k1 smallest eigenvectors stack the Y_i.
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n) * k1,
                                            static_cast<Eigen::Index>(n) * k1);
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(k1, k1);
  auto block = [&](int a, int b) {
    return h.block(static_cast<Eigen::Index>(a) * k1, static_cast<Eigen::Index>(b) * k1, k1, k1);
  };
  for (const auto& e : network.edges) {
    block(e.i, e.i) += e.c_ij.transpose() * e.c_ij + eye;
    block(e.j, e.j) += e.c_ji.transpose() * e.c_ji + eye;
    const Eigen::MatrixXd coupling = -(e.c_ij.transpose() + e.c_ji);
    block(e.i, e.j) += coupling;
    block(e.j, e.i) += coupling.transpose();
  }
  h = 0.5 * (h + h.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(h);
  if (solver.info() != Eigen::Success) fail("EigenFailure", "CLB eigendecomposition failed");
  Eigen::MatrixXd stacked = solver.eigenvectors().leftCols(k1);
  fix_column_signs(stacked);

  LatentBasisSet out;
  out.k1 = k1;
  out.y.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    out.y.push_back(stacked.middleRows(static_cast<Eigen::Index>(i) * k1, k1));
  out.residual = clb_consistency_energy(network, out.y);
  return out;
}

CanonicalBasis compute_cclb(const LatentBasisSet& clb,
                            const std::vector<Eigen::VectorXd>& eval_sets, int k2,
                            std::vector<std::string> shape_ids) {
  const int n = static_cast<int>(clb.y.size());
  const int k1 = clb.k1;
  if (n == 0) fail("EmptyNetwork", "latent basis set is empty");
  if (k2 < 1 || k2 > k1)
    fail("K2TooLarge", "k2 must satisfy 1 <= k2 <= k1 (" + std::to_string(k2) + " vs k1 = " +
                           std::to_string(k1) + ")");
  if (static_cast<int>(eval_sets.size()) != n)
    fail("DimensionMismatch", "one eigenvalue vector per shape required");
  if (!shape_ids.empty() && static_cast<int>(shape_ids.size()) != n)
    fail("DimensionMismatch", "shape id list does not match the collection");

  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(k1, k1);
  for (int i = 0; i < n; ++i) {
    if (eval_sets[static_cast<std::size_t>(i)].size() < k1)
      fail("DimensionMismatch", "eigenvalue vector shorter than k1");
    const Eigen::VectorXd lam = eval_sets[static_cast<std::size_t>(i)].head(k1);
    e.noalias() += clb.y[static_cast<std::size_t>(i)].transpose() * lam.asDiagonal() *
                   clb.y[static_cast<std::size_t>(i)];
  }
  e /= static_cast<double>(n);
  e = 0.5 * (e + e.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(e);
  if (solver.info() != Eigen::Success) fail("EigenFailure", "CCLB eigendecomposition failed");
  Eigen::MatrixXd u_full = solver.eigenvectors();  // ascending latent frequencies
  fix_column_signs(u_full);

  CanonicalBasis out;
  out.k1 = k1;
  out.k2 = k2;
  out.e_matrix = e;
  out.gamma = solver.eigenvalues();
  out.u = u_full.leftCols(k2);
  out.y_tilde.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.y_tilde.push_back(clb.y[static_cast<std::size_t>(i)] * out.u);
  if (shape_ids.empty()) {
    for (int i = 0; i < n; ++i) shape_ids.push_back("shape_" + std::to_string(i));
  }
  out.shape_ids = std::move(shape_ids);

  std::uint64_t h = fnv1a64(std::to_string(k1) + ":" + std::to_string(k2));
  for (const auto& id : out.shape_ids) h = fnv1a64(id, h);
  h = fnv1a64(out.e_matrix.data(), sizeof(double) * static_cast<std::size_t>(out.e_matrix.size()), h);
  h = fnv1a64(out.u.data(), sizeof(double) * static_cast<std::size_t>(out.u.size()), h);
  out.cclb_id = hex64(h);
  return out;
}

}  // namespace specpool

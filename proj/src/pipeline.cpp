#include "specpool/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "specpool/errors.hpp"
#include "specpool/fmap.hpp"
#include "specpool/latent_ops.hpp"
#include "specpool/network.hpp"
#include "specpool/pooling.hpp"
#include "specpool/smat.hpp"
#include "specpool/util.hpp"

namespace specpool {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct StageInfo {
  Stage stage;
  const char* name;
};

constexpr StageInfo kStages[] = {
    {Stage::Laplacian, "laplacian"}, {Stage::Descriptors, "descriptors"},
    {Stage::Fmap, "fmap"},           {Stage::Zoomout, "zoomout"},
    {Stage::Network, "network"},     {Stage::Cclb, "cclb"},
    {Stage::Encode, "encode"},       {Stage::Decode, "decode"},
    {Stage::Interp, "interp"},       {Stage::Embed, "embed"},
    {Stage::Eval, "eval"},
};

struct Context {
  CollectionManifest manifest;
  fs::path run_dir;
  std::string config_hash;
  int jobs = 1;
  bool force = false;

  fs::path stage_dir(Stage s) const { return run_dir / stage_name(s); }
};

// ---- stamps: each stage records its config hash, the stamp hashes of its
// upstream stages, and content hashes of its own artifacts.

fs::path stamp_path(const Context& ctx, Stage s) { return ctx.stage_dir(s) / ".stamp.json"; }

std::string stamp_state(const Context& ctx, Stage s) {
  const fs::path p = stamp_path(ctx, s);
  if (!fs::exists(p)) return "";
  return hex64(hash_file(p));
}

std::vector<Stage> prerequisites(const Context& ctx, Stage s) {
  const bool supervised = ctx.manifest.supervised();
  switch (s) {
    case Stage::Laplacian: return {};
    case Stage::Descriptors: return {Stage::Laplacian};
    case Stage::Fmap:
      return supervised ? std::vector<Stage>{Stage::Laplacian}
                        : std::vector<Stage>{Stage::Laplacian, Stage::Descriptors};
    case Stage::Zoomout: return {Stage::Laplacian, Stage::Fmap};
    case Stage::Network: return {Stage::Laplacian, Stage::Zoomout};
    case Stage::Cclb: return {Stage::Laplacian, Stage::Network};
    case Stage::Encode: return {Stage::Laplacian, Stage::Cclb};
    case Stage::Decode: return {Stage::Laplacian, Stage::Cclb, Stage::Encode};
    case Stage::Interp: return {Stage::Laplacian, Stage::Cclb, Stage::Encode};
    case Stage::Embed: return {Stage::Encode};
    case Stage::Eval: return {Stage::Laplacian, Stage::Zoomout, Stage::Decode};
  }
  return {};
}

void verify_prerequisites(const Context& ctx, Stage s) {
  for (Stage pre : prerequisites(ctx, s)) {
    const fs::path stamp_file = stamp_path(ctx, pre);
    if (!fs::exists(stamp_file))
      fail("MissingPrerequisite", "stage '" + stage_name(s) + "' needs stage '" +
                                      stage_name(pre) + "' to run first");
    json stamp;
    try {
      stamp = json::parse(read_file(stamp_file));
    } catch (const json::exception& e) {
      fail("StalePrerequisite", "unreadable stamp for stage '" + stage_name(pre) + "': " + e.what());
    }
    if (stamp.value("config", "") != ctx.config_hash)
      fail("StalePrerequisite", "stage '" + stage_name(pre) +
                                    "' was built with a different configuration");
    for (const auto& [rel, digest] : stamp.at("artifacts").items()) {
      const fs::path artifact = ctx.run_dir / rel;
      if (!fs::exists(artifact) || hex64(hash_file(artifact)) != digest.get<std::string>())
        fail("StalePrerequisite", "artifact '" + rel + "' of stage '" + stage_name(pre) +
                                      "' is missing or was modified; re-run that stage");
    }
  }
}

bool stage_up_to_date(const Context& ctx, Stage s) {
  if (ctx.force) return false;
  const fs::path stamp_file = stamp_path(ctx, s);
  if (!fs::exists(stamp_file)) return false;
  json stamp;
  try {
    stamp = json::parse(read_file(stamp_file));
  } catch (const json::exception&) {
    return false;
  }
  if (stamp.value("config", "") != ctx.config_hash) return false;
  for (Stage pre : prerequisites(ctx, s)) {
    const std::string want = stamp["inputs"].value(stage_name(pre), "");
    if (want.empty() || want != stamp_state(ctx, pre)) return false;
  }
  for (const auto& [rel, digest] : stamp.at("artifacts").items()) {
    const fs::path artifact = ctx.run_dir / rel;
    if (!fs::exists(artifact) || hex64(hash_file(artifact)) != digest.get<std::string>())
      return false;
  }
  return true;
}

void write_stamp(const Context& ctx, Stage s, const std::vector<fs::path>& artifacts) {
  json stamp;
  stamp["stage"] = stage_name(s);
  stamp["config"] = ctx.config_hash;
  json inputs = json::object();
  for (Stage pre : prerequisites(ctx, s)) inputs[stage_name(pre)] = stamp_state(ctx, pre);
  stamp["inputs"] = inputs;
  json arts = json::object();
  for (const auto& a : artifacts)
    arts[fs::relative(a, ctx.run_dir).generic_string()] = hex64(hash_file(a));
  stamp["artifacts"] = arts;
  write_file_atomic(stamp_path(ctx, s), stamp.dump(2) + "\n");
}

std::vector<fs::path> listed_artifacts(const Context& ctx, Stage s) {
  const json stamp = json::parse(read_file(stamp_path(ctx, s)));
  std::vector<fs::path> out;
  for (const auto& [rel, digest] : stamp.at("artifacts").items()) {
    (void)digest;
    out.push_back(ctx.run_dir / rel);
  }
  return out;
}

// ---- shared artifact access ----

fs::path norm_mesh_path(const Context& ctx, const std::string& id) {
  return ctx.stage_dir(Stage::Laplacian) / (id + ".norm.off");
}
fs::path basis_path(const Context& ctx, const std::string& id) {
  return ctx.stage_dir(Stage::Laplacian) / (id + ".basis.smat");
}
fs::path desc_path(const Context& ctx, const std::string& id) {
  return ctx.stage_dir(Stage::Descriptors) / (id + ".desc.smat");
}
std::string pair_key(const std::string& a, const std::string& b) { return a + "__" + b; }
fs::path fmap_pair_path(const Context& ctx, const std::string& a, const std::string& b) {
  return ctx.stage_dir(Stage::Fmap) / (pair_key(a, b) + ".fmap.smat");
}
fs::path zoomout_p2p_path(const Context& ctx, const std::string& a, const std::string& b) {
  return ctx.stage_dir(Stage::Zoomout) / (pair_key(a, b) + ".p2p.txt");
}
fs::path zoomout_fmap_path(const Context& ctx, const std::string& a, const std::string& b) {
  return ctx.stage_dir(Stage::Zoomout) / (pair_key(a, b) + ".fmap.smat");
}
fs::path network_pair_path(const Context& ctx, const std::string& a, const std::string& b) {
  return ctx.stage_dir(Stage::Network) / (pair_key(a, b) + ".maps.smat");
}
fs::path code_path(const Context& ctx, const std::string& id) {
  return ctx.stage_dir(Stage::Encode) / (id + ".code.smat");
}
fs::path decode_path(const Context& ctx, const std::string& id) {
  return ctx.stage_dir(Stage::Decode) / (id + ".off");
}

std::shared_ptr<SpectralBasis> load_basis(const Context& ctx, const std::string& id) {
  const SmatFile f = read_smat(basis_path(ctx, id));
  auto basis = std::make_shared<SpectralBasis>();
  basis->phi = f.get("phi");
  basis->evals = f.get("evals").col(0);
  basis->mass = f.get("mass").col(0);
  basis->shape_id = id;
  return basis;
}

SpectralBasis truncate_basis(const SpectralBasis& basis, int k) {
  if (k > basis.k()) fail("KExceedsBasis", "truncation exceeds the stored basis size");
  SpectralBasis out;
  out.phi = basis.phi.leftCols(k);
  out.evals = basis.evals.head(k);
  out.mass = basis.mass;
  out.shape_id = basis.shape_id;
  return out;
}

Mesh load_norm_mesh(const Context& ctx, const std::string& id) {
  Mesh mesh = load_mesh(norm_mesh_path(ctx, id), MeshFormat::Off);
  mesh.name = id;
  return mesh;
}

// Ordered shape pairs carrying maps. "all": every ordered pair. "star": a hub
// template is connected to every category template, and each category
// template to its members; both directions each.
std::vector<std::pair<std::string, std::string>> ordered_pairs(const CollectionManifest& m) {
  std::vector<std::pair<std::string, std::string>> pairs;
  if (m.supervised()) {
    for (const auto& g : m.ground_truth) pairs.emplace_back(g.source, g.target);
    return pairs;
  }
  if (m.params.pairs == "all") {
    for (const auto& a : m.shapes)
      for (const auto& b : m.shapes)
        if (a.id != b.id) pairs.emplace_back(a.id, b.id);
    return pairs;
  }
  std::set<std::pair<std::string, std::string>> undirected;
  const std::string hub = m.template_for(m.shapes.front().category);
  for (const auto& cat : m.categories()) {
    const std::string tpl = m.template_for(cat);
    if (tpl != hub) undirected.insert({std::min(hub, tpl), std::max(hub, tpl)});
    for (const auto& s : m.shapes)
      if (s.category == cat && s.id != tpl)
        undirected.insert({std::min(tpl, s.id), std::max(tpl, s.id)});
  }
  for (const auto& [a, b] : undirected) {
    pairs.emplace_back(a, b);
    pairs.emplace_back(b, a);
  }
  return pairs;
}

std::vector<std::pair<std::string, std::string>> unordered_pairs(const CollectionManifest& m) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [a, b] : ordered_pairs(m)) seen.insert({std::min(a, b), std::max(a, b)});
  return {seen.begin(), seen.end()};
}

// ---- stage bodies ----

std::vector<fs::path> run_laplacian(const Context& ctx) {
  const auto& m = ctx.manifest;
  std::vector<std::vector<fs::path>> per_shape(m.shapes.size());
  parallel_for(static_cast<int>(m.shapes.size()), ctx.jobs, [&](int i) {
    const ShapeEntry& entry = m.shapes[static_cast<std::size_t>(i)];
    Mesh mesh = load_mesh(entry.path);
    mesh.name = entry.id;
    if (m.params.normalize) mesh = normalize_unit_box(mesh);
    if (m.params.k >= mesh.vertex_count())
      fail("KTooLarge", "shape '" + entry.id + "' has " + std::to_string(mesh.vertex_count()) +
                            " vertices; k = " + std::to_string(m.params.k) + " needs more");

    MeshQuality quality;
    const StiffnessMatrix w = cotangent_stiffness(mesh, &quality);
    const MassDiagonal mass = vertex_areas(mesh);
    EigenOptions opts;
    opts.seed = m.params.seed;
    SpectralBasis basis = eigenbasis(w, mass, m.params.k, opts);
    basis.shape_id = entry.id;

    const fs::path mesh_file = norm_mesh_path(ctx, entry.id);
    save_off(mesh, mesh_file);
    const fs::path basis_file = basis_path(ctx, entry.id);
    write_smat(basis_file, {{"phi", basis.phi},
                            {"evals", basis.evals},
                            {"mass", basis.mass}});
    const fs::path quality_file = ctx.stage_dir(Stage::Laplacian) / (entry.id + ".quality.json");
    json q = {{"shape_id", entry.id},
              {"clamped_cotangents", quality.clamped_cotangents},
              {"nonmanifold_edges", quality.nonmanifold_edges},
              {"boundary_edges", quality.boundary_edges}};
    write_file_atomic(quality_file, q.dump(2) + "\n");
    per_shape[static_cast<std::size_t>(i)] = {mesh_file, basis_file, quality_file};
  });
  std::vector<fs::path> artifacts;
  for (auto& v : per_shape) artifacts.insert(artifacts.end(), v.begin(), v.end());
  return artifacts;
}

std::vector<fs::path> run_descriptors(const Context& ctx) {
  const auto& m = ctx.manifest;
  std::vector<std::vector<fs::path>> per_shape(m.shapes.size());
  parallel_for(static_cast<int>(m.shapes.size()), ctx.jobs, [&](int i) {
    const ShapeEntry& entry = m.shapes[static_cast<std::size_t>(i)];
    const auto basis = load_basis(ctx, entry.id);
    const std::string& kind = m.params.descriptor.kind;

    Eigen::MatrixXd values;
    Eigen::VectorXd grid;
    double sigma = 0.0;
    if (kind == "wks") {
      const FeatureSet f = wks(*basis, m.params.descriptor.num, m.params.descriptor.variance_scale);
      values = f.values;
      grid = f.grid;
      sigma = f.sigma;
    } else if (kind == "hks") {
      const FeatureSet f = hks_default(*basis);
      values = f.values;
      grid = f.grid;
    } else if (kind == "xyz") {
      values = xyz_features(load_norm_mesh(ctx, entry.id)).values;
    } else {  // combo: WKS | HKS | coordinates
      const FeatureSet w = wks(*basis, m.params.descriptor.num, m.params.descriptor.variance_scale);
      const FeatureSet h = hks_default(*basis);
      const Eigen::MatrixXd xyz = load_norm_mesh(ctx, entry.id).vertices;
      values.resize(basis->n(), w.values.cols() + h.values.cols() + 3);
      values << w.values, h.values, xyz;
      grid = w.grid;
      sigma = w.sigma;
    }

    const fs::path smat_file = desc_path(ctx, entry.id);
    std::vector<SmatEntry> entries = {{"values", values}};
    if (grid.size() > 0) entries.push_back({"grid", grid});
    write_smat(smat_file, entries);
    const fs::path sidecar = ctx.stage_dir(Stage::Descriptors) / (entry.id + ".desc.json");
    json side = {{"shape_id", entry.id},
                 {"kind", kind},
                 {"dim", static_cast<int>(values.cols())},
                 {"sigma", sigma}};
    write_file_atomic(sidecar, side.dump(2) + "\n");
    per_shape[static_cast<std::size_t>(i)] = {smat_file, sidecar};
  });
  std::vector<fs::path> artifacts;
  for (auto& v : per_shape) artifacts.insert(artifacts.end(), v.begin(), v.end());
  return artifacts;
}

std::vector<int> load_gt_assignment(const Context& ctx, const std::string& source,
                                    const std::string& target) {
  for (const auto& g : ctx.manifest.ground_truth)
    if (g.source == source && g.target == target) return read_p2p_text(g.path);
  fail("MissingPrerequisite", "no ground-truth p2p for pair " + source + " -> " + target);
}

std::vector<fs::path> run_fmap(const Context& ctx) {
  const auto& m = ctx.manifest;
  if (m.supervised()) {
    // Supervised mode bypasses estimation: validate the ground-truth maps
    // against the meshes and record the roster.
    json roster = json::array();
    for (const auto& g : m.ground_truth) {
      const auto src = load_basis(ctx, g.source);
      const auto tgt = load_basis(ctx, g.target);
      PointToPointMap p2p{load_gt_assignment(ctx, g.source, g.target), g.source, g.target};
      validate_p2p(p2p, src->n(), tgt->n());
      roster.push_back({{"source", g.source}, {"target", g.target}});
    }
    const fs::path file = ctx.stage_dir(Stage::Fmap) / "supervised.json";
    write_file_atomic(file, roster.dump(2) + "\n");
    return {file};
  }

  const auto pairs = unordered_pairs(m);
  std::vector<std::vector<fs::path>> per_pair(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), ctx.jobs, [&](int idx) {
    const auto& [a, b] = pairs[static_cast<std::size_t>(idx)];
    const SpectralBasis basis_a = truncate_basis(*load_basis(ctx, a), m.params.k_map);
    const SpectralBasis basis_b = truncate_basis(*load_basis(ctx, b), m.params.k_map);
    // Probe columns are balanced to unit mass-norm so no family dominates the
    // data term of the map energy.
    const Eigen::MatrixXd feat_a =
        unit_mass_columns(read_smat(desc_path(ctx, a)).get("values"), basis_a.mass);
    const Eigen::MatrixXd feat_b =
        unit_mass_columns(read_smat(desc_path(ctx, b)).get("values"), basis_b.mass);
    const CoefficientMatrix coeff_a = project(basis_a, feat_a);
    const CoefficientMatrix coeff_b = project(basis_b, feat_b);

    EstimateStats stats_ab, stats_ba;
    FunctionalMap c_ab = estimate_fmap(coeff_a, coeff_b, basis_a.evals, basis_b.evals,
                                       m.params.lambda_commute, &stats_ab);
    c_ab.source_id = a;
    c_ab.target_id = b;
    FunctionalMap c_ba = estimate_fmap(coeff_b, coeff_a, basis_b.evals, basis_a.evals,
                                       m.params.lambda_commute, &stats_ba);
    c_ba.source_id = b;
    c_ba.target_id = a;

    json side = {{"source", a},
                 {"target", b},
                 {"k", m.params.k_map},
                 {"lambda", m.params.lambda_commute},
                 {"pinv_rows", stats_ab.pinv_rows + stats_ba.pinv_rows},
                 {"refined", m.params.refine.enabled}};
    if (m.params.refine.enabled) {
      RefineWeights weights{m.params.refine.w_data, m.params.refine.w_commute,
                            m.params.refine.w_struct};
      RefineOptions options;
      options.max_iters = m.params.refine.max_iters;
      RefineStats rstats;
      std::tie(c_ab, c_ba) = refine_pair_unsupervised(c_ab, c_ba, coeff_a, coeff_b,
                                                      basis_a.evals, basis_b.evals, weights,
                                                      options, &rstats);
      side["refine_initial_energy"] = rstats.initial_energy;
      side["refine_final_energy"] = rstats.final_energy;
      side["refine_iterations"] = rstats.iterations;
    }

    const fs::path smat_file = fmap_pair_path(ctx, a, b);
    write_smat(smat_file, {{"c_" + a + "__" + b, c_ab.c}, {"c_" + b + "__" + a, c_ba.c}});
    const fs::path sidecar = ctx.stage_dir(Stage::Fmap) / (pair_key(a, b) + ".json");
    write_file_atomic(sidecar, side.dump(2) + "\n");
    per_pair[static_cast<std::size_t>(idx)] = {smat_file, sidecar};
  });
  std::vector<fs::path> artifacts;
  for (auto& v : per_pair) artifacts.insert(artifacts.end(), v.begin(), v.end());
  return artifacts;
}

std::vector<fs::path> run_zoomout(const Context& ctx) {
  const auto& m = ctx.manifest;
  const auto pairs = ordered_pairs(m);
  std::vector<std::vector<fs::path>> per_pair(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), ctx.jobs, [&](int idx) {
    const auto& [src, tgt] = pairs[static_cast<std::size_t>(idx)];
    const auto basis_src = load_basis(ctx, src);
    const auto basis_tgt = load_basis(ctx, tgt);

    PointToPointMap final_p2p;
    FunctionalMap final_map;
    if (m.supervised()) {
      final_p2p = {load_gt_assignment(ctx, src, tgt), src, tgt};
      validate_p2p(final_p2p, basis_src->n(), basis_tgt->n());
      final_map = fmap_from_p2p(final_p2p, *basis_src, *basis_tgt, m.params.zoomout.k_end);
    } else {
      const std::string lo = std::min(src, tgt), hi = std::max(src, tgt);
      const SmatFile maps = read_smat(fmap_pair_path(ctx, lo, hi));
      // Initial p2p src->tgt comes from the map transporting tgt -> src.
      FunctionalMap c{maps.get("c_" + tgt + "__" + src), tgt, src};
      const SpectralBasis bs = truncate_basis(*basis_src, m.params.k_map);
      const SpectralBasis bt = truncate_basis(*basis_tgt, m.params.k_map);
      PointToPointMap init = p2p_from_fmap(c, bs, bt);
      std::tie(final_p2p, final_map) =
          zoomout(init, *basis_src, *basis_tgt, m.params.zoomout.k_start,
                  m.params.zoomout.k_end, m.params.zoomout.step);
    }

    const fs::path p2p_file = zoomout_p2p_path(ctx, src, tgt);
    write_file_atomic(p2p_file, p2p_to_text(final_p2p.assignment));
    const fs::path fmap_file = zoomout_fmap_path(ctx, src, tgt);
    write_smat(fmap_file, {{"c_" + tgt + "__" + src, final_map.c}});
    per_pair[static_cast<std::size_t>(idx)] = {p2p_file, fmap_file};
  });
  std::vector<fs::path> artifacts;
  for (auto& v : per_pair) artifacts.insert(artifacts.end(), v.begin(), v.end());
  return artifacts;
}

std::vector<fs::path> run_network(const Context& ctx) {
  const auto& m = ctx.manifest;
  const auto pairs = unordered_pairs(m);
  const int k1 = m.params.k1;

  std::vector<std::vector<fs::path>> per_pair(pairs.size());
  parallel_for(static_cast<int>(pairs.size()), ctx.jobs, [&](int idx) {
    const auto& [a, b] = pairs[static_cast<std::size_t>(idx)];
    const auto basis_a = load_basis(ctx, a);
    const auto basis_b = load_basis(ctx, b);
    // Both directions must exist; fmap_from_p2p(a->b) transports b -> a.
    const fs::path ab = zoomout_p2p_path(ctx, a, b);
    const fs::path ba = zoomout_p2p_path(ctx, b, a);
    if (!fs::exists(ab) || !fs::exists(ba))
      fail("MissingReverseMap", "pair (" + a + ", " + b + ") lacks p2p maps in both directions");
    PointToPointMap p2p_ab{read_p2p_text(ab), a, b};
    PointToPointMap p2p_ba{read_p2p_text(ba), b, a};
    const FunctionalMap c_ba = fmap_from_p2p(p2p_ab, *basis_a, *basis_b, k1);
    const FunctionalMap c_ab = fmap_from_p2p(p2p_ba, *basis_b, *basis_a, k1);
    const fs::path file = network_pair_path(ctx, a, b);
    write_smat(file, {{"c_" + a + "__" + b, c_ab.c}, {"c_" + b + "__" + a, c_ba.c}});
    per_pair[static_cast<std::size_t>(idx)] = {file};
  });

  // Assemble once to validate connectivity and sizes.
  std::vector<NetworkShape> shapes;
  for (const auto& s : m.shapes) shapes.push_back({s.id, load_basis(ctx, s.id)});
  std::vector<FunctionalMap> maps;
  for (const auto& [a, b] : pairs) {
    const SmatFile f = read_smat(network_pair_path(ctx, a, b));
    maps.push_back({f.get("c_" + a + "__" + b), a, b});
    maps.push_back({f.get("c_" + b + "__" + a), b, a});
  }
  const FmapNetwork net = build_network(shapes, maps);

  json edges = json::array();
  for (const auto& [a, b] : pairs) edges.push_back({{"a", a}, {"b", b}});
  json doc = {{"k1", net.k1}, {"edges", edges}};
  const fs::path edges_file = ctx.stage_dir(Stage::Network) / "edges.json";
  write_file_atomic(edges_file, doc.dump(2) + "\n");

  std::vector<fs::path> artifacts;
  for (auto& v : per_pair) artifacts.insert(artifacts.end(), v.begin(), v.end());
  artifacts.push_back(edges_file);
  return artifacts;
}

struct CclbArtifacts {
  CanonicalBasis cclb;
  std::map<std::string, std::shared_ptr<SpectralBasis>> bases;
};

CclbArtifacts load_cclb(const Context& ctx) {
  const fs::path json_file = ctx.stage_dir(Stage::Cclb) / "cclb.json";
  const json doc = json::parse(read_file(json_file));
  const SmatFile f = read_smat(ctx.stage_dir(Stage::Cclb) / "cclb.smat");

  CclbArtifacts out;
  out.cclb.k1 = doc.at("k1").get<int>();
  out.cclb.k2 = doc.at("k2").get<int>();
  out.cclb.cclb_id = doc.at("cclb_id").get<std::string>();
  out.cclb.u = f.get("U");
  out.cclb.e_matrix = f.get("E");
  out.cclb.gamma = f.get("Gamma").col(0);
  for (const auto& id : doc.at("shapes")) {
    const std::string shape_id = id.get<std::string>();
    out.cclb.shape_ids.push_back(shape_id);
    out.cclb.y_tilde.push_back(f.get("Ytilde:" + shape_id));
  }
  return out;
}

std::vector<fs::path> run_cclb(const Context& ctx) {
  const auto& m = ctx.manifest;
  const json net_doc = json::parse(read_file(ctx.stage_dir(Stage::Network) / "edges.json"));
  const int k1 = net_doc.at("k1").get<int>();

  std::vector<NetworkShape> shapes;
  std::vector<Eigen::VectorXd> eval_sets;
  std::vector<std::string> ids;
  for (const auto& s : m.shapes) {
    auto basis = load_basis(ctx, s.id);
    eval_sets.push_back(basis->evals);
    ids.push_back(s.id);
    shapes.push_back({s.id, std::move(basis)});
  }
  std::vector<FunctionalMap> maps;
  for (const auto& e : net_doc.at("edges")) {
    const std::string a = e.at("a").get<std::string>();
    const std::string b = e.at("b").get<std::string>();
    const SmatFile f = read_smat(network_pair_path(ctx, a, b));
    maps.push_back({f.get("c_" + a + "__" + b), a, b});
    maps.push_back({f.get("c_" + b + "__" + a), b, a});
  }
  const FmapNetwork net = build_network(std::move(shapes), maps);
  if (net.k1 != k1)
    fail("StalePrerequisite", "network artifacts disagree on k1 with edges.json");
  const LatentBasisSet clb = compute_clb(net);
  const CanonicalBasis cclb = compute_cclb(clb, eval_sets, m.params.k2, ids);

  std::vector<SmatEntry> entries;
  entries.push_back({"U", cclb.u});
  entries.push_back({"E", cclb.e_matrix});
  entries.push_back({"Gamma", cclb.gamma});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    entries.push_back({"Y:" + ids[i], clb.y[i]});
    entries.push_back({"Ytilde:" + ids[i], cclb.y_tilde[i]});
  }
  const fs::path smat_file = ctx.stage_dir(Stage::Cclb) / "cclb.smat";
  write_smat(smat_file, entries);

  json edges = net_doc.at("edges");
  json doc = {{"k1", cclb.k1},       {"k2", cclb.k2},
              {"cclb_id", cclb.cclb_id}, {"shapes", ids},
              {"edges", edges},      {"clb_residual", clb.residual}};
  const fs::path json_file = ctx.stage_dir(Stage::Cclb) / "cclb.json";
  write_file_atomic(json_file, doc.dump(2) + "\n");
  return {smat_file, json_file};
}

std::vector<fs::path> run_encode(const Context& ctx) {
  const auto& m = ctx.manifest;
  const CclbArtifacts cclb = load_cclb(ctx);
  std::vector<std::vector<fs::path>> per_shape(m.shapes.size());
  parallel_for(static_cast<int>(m.shapes.size()), ctx.jobs, [&](int i) {
    const ShapeEntry& entry = m.shapes[static_cast<std::size_t>(i)];
    const auto basis = load_basis(ctx, entry.id);
    const Mesh mesh = load_norm_mesh(ctx, entry.id);
    const int index = cclb.cclb.index_of(entry.id);
    const LatentCode code = encode_shape(mesh, *basis, cclb.cclb, index, m.params.feature_kind);

    const fs::path smat_file = code_path(ctx, entry.id);
    write_smat(smat_file, {{"z", code.z}});
    const fs::path sidecar = ctx.stage_dir(Stage::Encode) / (entry.id + ".code.json");
    json side = {{"shape_id", entry.id},
                 {"cclb_id", code.cclb_id},
                 {"kind", feature_kind_name(code.kind)},
                 {"k2", code.k2()},
                 {"F", code.feature_dim()}};
    write_file_atomic(sidecar, side.dump(2) + "\n");
    per_shape[static_cast<std::size_t>(i)] = {smat_file, sidecar};
  });
  std::vector<fs::path> artifacts;
  for (auto& v : per_shape) artifacts.insert(artifacts.end(), v.begin(), v.end());
  return artifacts;
}

LatentCode load_code(const Context& ctx, const std::string& id) {
  const SmatFile f = read_smat(code_path(ctx, id));
  const json side =
      json::parse(read_file(ctx.stage_dir(Stage::Encode) / (id + ".code.json")));
  LatentCode code;
  code.z = f.get("z");
  code.shape_id = id;
  code.cclb_id = side.at("cclb_id").get<std::string>();
  code.kind = feature_kind_from_name(side.at("kind").get<std::string>());
  return code;
}

TemplateRef template_ref(const Context& ctx, const CclbArtifacts& cclb,
                         const std::string& template_id) {
  TemplateRef tmpl;
  tmpl.shape_id = template_id;
  tmpl.basis = load_basis(ctx, template_id);
  tmpl.faces = load_norm_mesh(ctx, template_id).faces;
  tmpl.y_tilde = cclb.cclb.y_tilde[static_cast<std::size_t>(cclb.cclb.index_of(template_id))];
  tmpl.cclb_id = cclb.cclb.cclb_id;
  return tmpl;
}

std::vector<fs::path> run_decode(const Context& ctx) {
  const auto& m = ctx.manifest;
  const CclbArtifacts cclb = load_cclb(ctx);
  std::map<std::string, TemplateRef> templates;
  for (const auto& cat : m.categories())
    templates.emplace(cat, template_ref(ctx, cclb, m.template_for(cat)));

  std::vector<fs::path> artifacts(m.shapes.size());
  parallel_for(static_cast<int>(m.shapes.size()), ctx.jobs, [&](int i) {
    const ShapeEntry& entry = m.shapes[static_cast<std::size_t>(i)];
    const LatentCode code = load_code(ctx, entry.id);
    const Mesh recon = decode_to_template(code, templates.at(entry.category));
    const fs::path file = decode_path(ctx, entry.id);
    save_off(recon, file);
    artifacts[static_cast<std::size_t>(i)] = file;
  });
  return artifacts;
}

std::vector<fs::path> run_interp(const Context& ctx) {
  const auto& m = ctx.manifest;
  const InterpConfig& cfg = m.params.interp;
  if (cfg.a.empty() || cfg.b.empty())
    fail("BadParameter",
         "interp needs shape ids, e.g. --set interp.a=ID --set interp.b=ID");
  if (cfg.steps < 2) fail("BadParameter", "interp.steps must be >= 2");
  m.shape(cfg.a);
  m.shape(cfg.b);

  const CclbArtifacts cclb = load_cclb(ctx);
  const LatentCode za = load_code(ctx, cfg.a);
  const LatentCode zb = load_code(ctx, cfg.b);
  const TemplateRef tmpl = template_ref(ctx, cclb, m.template_for(m.shape(cfg.a).category));

  std::vector<fs::path> artifacts;
  std::vector<SmatEntry> codes;
  for (int s = 0; s < cfg.steps; ++s) {
    const double t = static_cast<double>(s) / (cfg.steps - 1);
    LatentCode zt = interpolate(za, zb, t);
    zt.shape_id = pair_key(cfg.a, cfg.b) + "_" + std::to_string(s);
    codes.push_back({"z:" + std::to_string(s), zt.z});
    const Mesh mesh = decode_to_template(zt, tmpl);
    const fs::path file =
        ctx.stage_dir(Stage::Interp) / (pair_key(cfg.a, cfg.b) + "." + std::to_string(s) + ".off");
    save_off(mesh, file);
    artifacts.push_back(file);
  }
  const fs::path codes_file = ctx.stage_dir(Stage::Interp) / (pair_key(cfg.a, cfg.b) + ".codes.smat");
  write_smat(codes_file, codes);
  artifacts.push_back(codes_file);
  return artifacts;
}

std::vector<fs::path> run_embed(const Context& ctx) {
  const auto& m = ctx.manifest;
  std::vector<LatentCode> codes;
  std::vector<std::string> tags;
  for (const auto& s : m.shapes) {
    codes.push_back(load_code(ctx, s.id));
    tags.push_back(s.tag.empty() ? s.category : s.tag);
  }
  const EmbeddingTable table = pca_embed(codes, m.params.embed_dim, tags);

  const fs::path csv_file = ctx.stage_dir(Stage::Embed) / "embedding.csv";
  write_file_atomic(csv_file, table.to_csv());
  json header = {{"dim", table.dim},
                 {"flatten", "row-major"},
                 {"explained_variance", json::array()}};
  for (Eigen::Index i = 0; i < table.explained_variance.size(); ++i)
    header["explained_variance"].push_back(table.explained_variance[i]);
  const fs::path json_file = ctx.stage_dir(Stage::Embed) / "embedding.json";
  write_file_atomic(json_file, header.dump(2) + "\n");
  return {csv_file, json_file};
}

PointToPointMap template_to_shape_p2p(const Context& ctx, const std::string& tpl,
                                      const std::string& id, Eigen::Index n_template,
                                      Eigen::Index n_shape) {
  PointToPointMap p2p;
  p2p.source_id = tpl;
  p2p.target_id = id;
  if (tpl == id) {
    p2p.assignment.resize(static_cast<std::size_t>(n_template));
    for (Eigen::Index i = 0; i < n_template; ++i)
      p2p.assignment[static_cast<std::size_t>(i)] = static_cast<int>(i);
    return p2p;
  }
  const fs::path file = zoomout_p2p_path(ctx, tpl, id);
  if (!fs::exists(file))
    fail("MissingPrerequisite",
         "no correspondence " + tpl + " -> " + id + " (pair not covered by the pair policy)");
  p2p.assignment = read_p2p_text(file);
  validate_p2p(p2p, n_template, n_shape);
  return p2p;
}

std::vector<fs::path> run_eval(const Context& ctx, std::string& csv_out) {
  const auto& m = ctx.manifest;
  struct Row {
    std::string id, category;
    Eigen::Index n = 0;
    double mse = 0, l1 = 0, l2 = 0, loss = 0;
  };
  std::vector<Row> rows(m.shapes.size());
  parallel_for(static_cast<int>(m.shapes.size()), ctx.jobs, [&](int i) {
    const ShapeEntry& entry = m.shapes[static_cast<std::size_t>(i)];
    const std::string tpl = m.template_for(entry.category);
    Mesh recon = load_mesh(decode_path(ctx, entry.id), MeshFormat::Off);
    const Mesh gt = load_norm_mesh(ctx, entry.id);
    const PointToPointMap p2p =
        template_to_shape_p2p(ctx, tpl, entry.id, recon.vertex_count(), gt.vertex_count());

    Row row;
    row.id = entry.id;
    row.category = entry.category;
    row.n = gt.vertex_count();
    row.l1 = p2p_loss(p2p, gt, recon);
    const Eigen::MatrixX3d pulled = pull_vertices(p2p, gt);
    row.l2 = pairwise_distance_loss(pulled, recon.vertices, m.params.resample_cap,
                                    m.params.seed);
    row.loss = combined_loss(row.l1, row.l2, m.params.lambda_l2);
    row.mse = mse_eval(recon, gt, p2p);
    rows[static_cast<std::size_t>(i)] = std::move(row);
  });

  std::string csv = "shape_id,category,n_vertices,mse_x1e4,l1,l2,loss\n";
  char buf[256];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%lld,%.17g,%.17g,%.17g,%.17g\n", row.id.c_str(),
                  row.category.c_str(), static_cast<long long>(row.n), row.mse, row.l1, row.l2,
                  row.loss);
    csv += buf;
  }
  const fs::path report = ctx.stage_dir(Stage::Eval) / "report.csv";
  write_file_atomic(report, csv);
  csv_out = csv;
  return {report};
}

}  // namespace

Stage stage_from_name(const std::string& name) {
  for (const auto& info : kStages)
    if (name == info.name) return info.stage;
  fail("BadParameter", "unknown stage '" + name + "'");
}

std::string stage_name(Stage stage) {
  for (const auto& info : kStages)
    if (info.stage == stage) return info.name;
  return "?";
}

std::vector<Stage> all_stages() {
  std::vector<Stage> out;
  for (const auto& info : kStages) out.push_back(info.stage);
  return out;
}

std::vector<int> read_p2p_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail("IoError", "cannot open p2p file: " + path.string());
  std::vector<int> assignment;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      const int v = std::stoi(line, &used);
      assignment.push_back(v);
    } catch (const std::exception&) {
      fail("ParseError",
           path.string() + ":" + std::to_string(line_number) + ": expected a vertex index");
    }
  }
  if (assignment.empty()) fail("ParseError", path.string() + ": empty p2p file");
  return assignment;
}

std::string p2p_to_text(const std::vector<int>& assignment) {
  std::string out;
  out.reserve(assignment.size() * 7);
  for (int v : assignment) {
    out += std::to_string(v);
    out += '\n';
  }
  return out;
}

StageReport run_stage(Stage stage, const std::filesystem::path& manifest_path,
                      const std::vector<std::string>& overrides, const RunOptions& options) {
  Context ctx;
  ctx.manifest = load_manifest(manifest_path, overrides);
  ctx.force = options.force;
  ctx.jobs = options.jobs > 0 ? options.jobs
                              : std::max(1u, std::thread::hardware_concurrency());

  const std::string dump = ctx.manifest.resolved.dump();
  ctx.config_hash = hex64(fnv1a64(dump));
  ctx.run_dir = options.out_dir / ctx.config_hash;
  fs::create_directories(ctx.run_dir);
  const fs::path config_file = ctx.run_dir / "resolved_config.json";
  if (!fs::exists(config_file))
    write_file_atomic(config_file, ctx.manifest.resolved.dump(2) + "\n");

  StageReport report;
  report.stage = stage;
  report.run_dir = ctx.run_dir;

  verify_prerequisites(ctx, stage);
  if (stage_up_to_date(ctx, stage)) {
    report.skipped = true;
    report.artifacts = listed_artifacts(ctx, stage);
    if (stage == Stage::Eval)
      report.eval_csv = read_file(ctx.stage_dir(Stage::Eval) / "report.csv");
    return report;
  }

  fs::create_directories(ctx.stage_dir(stage));
  std::vector<fs::path> artifacts;
  switch (stage) {
    case Stage::Laplacian: artifacts = run_laplacian(ctx); break;
    case Stage::Descriptors: artifacts = run_descriptors(ctx); break;
    case Stage::Fmap: artifacts = run_fmap(ctx); break;
    case Stage::Zoomout: artifacts = run_zoomout(ctx); break;
    case Stage::Network: artifacts = run_network(ctx); break;
    case Stage::Cclb: artifacts = run_cclb(ctx); break;
    case Stage::Encode: artifacts = run_encode(ctx); break;
    case Stage::Decode: artifacts = run_decode(ctx); break;
    case Stage::Interp: artifacts = run_interp(ctx); break;
    case Stage::Embed: artifacts = run_embed(ctx); break;
    case Stage::Eval: artifacts = run_eval(ctx, report.eval_csv); break;
  }
  write_stamp(ctx, stage, artifacts);
  report.artifacts = std::move(artifacts);
  return report;
}

}  // namespace specpool

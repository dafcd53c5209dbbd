#include "specpool/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "specpool/errors.hpp"
#include "specpool/util.hpp"

namespace specpool {

namespace {

using nlohmann::json;

bool valid_id(const std::string& id) {
  if (id.empty() || id.find("__") != std::string::npos) return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '_' || c == '-' || c == '.';
  });
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);  // unquoted strings like wks, star
  }
}

void apply_override(json& params, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0)
    fail("BadParameter", "override must look like key=value, got '" + text + "'");
  const std::string key = text.substr(0, eq);
  const json value = parse_override_value(text.substr(eq + 1));

  json* node = &params;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (part.empty()) fail("BadParameter", "bad override key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null())
      fail("BadParameter", "override key '" + key + "' descends into a non-object");
    start = dot + 1;
  }
}

template <typename T>
T field_or(const json& obj, const char* name, T fallback) {
  if (!obj.is_object() || !obj.contains(name)) return fallback;
  try {
    return obj.at(name).get<T>();
  } catch (const json::exception& e) {
    fail("BadParameter", std::string("manifest field '") + name + "': " + e.what());
  }
}

}  // namespace

const ShapeEntry& CollectionManifest::shape(const std::string& id) const {
  for (const auto& s : shapes)
    if (s.id == id) return s;
  fail("UnknownShape", "shape '" + id + "' is not in the manifest");
}

std::string CollectionManifest::template_for(const std::string& category) const {
  auto it = params.templates.find(category);
  if (it != params.templates.end()) return it->second;
  fail("UnknownShape", "no template for category '" + category + "'");
}

std::vector<std::string> CollectionManifest::categories() const {
  std::vector<std::string> out;
  for (const auto& s : shapes)
    if (std::find(out.begin(), out.end(), s.category) == out.end()) out.push_back(s.category);
  return out;
}

CollectionManifest load_manifest(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides) {
  if (!std::filesystem::exists(path))
    fail("IoError", "manifest not found: " + path.string());
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail("ParseError", path.string() + ": " + e.what());
  }
  if (!doc.is_object() || !doc.contains("shapes") || !doc["shapes"].is_array())
    fail("ParseError", path.string() + ": manifest needs a 'shapes' array");

  CollectionManifest m;
  m.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

  std::set<std::string> ids;
  for (const auto& s : doc["shapes"]) {
    ShapeEntry entry;
    entry.id = field_or<std::string>(s, "id", "");
    entry.category = field_or<std::string>(s, "category", "default");
    entry.tag = field_or<std::string>(s, "tag", "");
    const std::string rel = field_or<std::string>(s, "path", "");
    if (entry.id.empty() || rel.empty())
      fail("ParseError", "every shape needs an id and a path");
    if (!valid_id(entry.id))
      fail("BadParameter", "shape id '" + entry.id +
                               "' must match [A-Za-z0-9_.-]+ without '__'");
    if (!ids.insert(entry.id).second)
      fail("BadParameter", "duplicate shape id '" + entry.id + "'");
    std::filesystem::path p(rel);
    entry.path = p.is_absolute() ? p : m.base_dir / p;
    if (!std::filesystem::exists(entry.path))
      fail("IoError", "shape file not found: " + entry.path.string());
    m.shapes.push_back(std::move(entry));
  }
  if (m.shapes.empty()) fail("ParseError", "manifest lists no shapes");

  json params = doc.contains("params") ? doc["params"] : json::object();
  if (!params.is_object()) fail("ParseError", "'params' must be an object");
  for (const auto& o : overrides) apply_override(params, o);

  PipelineParams& p = m.params;
  p.k = field_or<int>(params, "k", 120);
  p.k_map = field_or<int>(params, "k_map", 30);
  p.k1 = field_or<int>(params, "k1", std::min(p.k, 120));
  p.lambda_commute = field_or<double>(params, "lambda_commute", 1e-3);
  p.lambda_l2 = field_or<double>(params, "lambda_l2", 10.0);
  p.normalize = field_or<bool>(params, "normalize", true);
  p.seed = field_or<std::uint64_t>(params, "seed", 0);
  p.resample_cap = field_or<int>(params, "resample_cap", 20000);
  p.pairs = field_or<std::string>(params, "pairs", "all");
  p.feature_kind =
      feature_kind_from_name(field_or<std::string>(params, "feature_kind", "xyz"));
  p.embed_dim = field_or<int>(params, "embed_dim", 2);

  const json desc = params.contains("descriptor") ? params["descriptor"] : json::object();
  p.descriptor.kind = field_or<std::string>(desc, "kind", "combo");
  p.descriptor.num = field_or<int>(desc, "num", 128);
  p.descriptor.variance_scale = field_or<double>(desc, "variance_scale", 7.0);
  if (p.descriptor.kind != "combo" && p.descriptor.kind != "wks" &&
      p.descriptor.kind != "hks" && p.descriptor.kind != "xyz")
    fail("BadParameter", "descriptor.kind must be combo, wks, hks or xyz");

  const json refine = params.contains("refine") ? params["refine"] : json::object();
  p.refine.enabled = field_or<bool>(refine, "enabled", true);
  p.refine.w_data = field_or<double>(refine, "w_data", 1.0);
  p.refine.w_commute = field_or<double>(refine, "w_commute", 1e-3);
  p.refine.w_struct = field_or<double>(refine, "w_struct", 1.0);
  p.refine.max_iters = field_or<int>(refine, "max_iters", 2000);

  const json zo = params.contains("zoomout") ? params["zoomout"] : json::object();
  p.zoomout.k_start = field_or<int>(zo, "k_start", std::min(p.k_map, p.k1));
  p.zoomout.k_end = field_or<int>(zo, "k_end", p.k1);
  p.zoomout.step = field_or<int>(zo, "step", 0);
  if (p.zoomout.step <= 0)
    p.zoomout.step = std::max(1, (p.zoomout.k_end - p.zoomout.k_start) / 30);

  // Default embedding size targets k2 * F ~= 1024; XYZ (F = 3) defaults to
  // 120 capped at k1.
  int default_k2;
  if (p.feature_kind == FeatureKind::Xyz) {
    default_k2 = std::min(120, p.k1);
  } else {
    const int f = std::max(1, p.descriptor.num);
    default_k2 = std::clamp(1024 / f, 1, p.k1);
  }
  p.k2 = field_or<int>(params, "k2", default_k2);

  const json interp = params.contains("interp") ? params["interp"] : json::object();
  p.interp.a = field_or<std::string>(interp, "a", "");
  p.interp.b = field_or<std::string>(interp, "b", "");
  p.interp.steps = field_or<int>(interp, "steps", 5);

  if (params.contains("templates")) {
    for (const auto& [cat, id] : params["templates"].items())
      p.templates[cat] = id.get<std::string>();
  }
  for (const auto& s : m.shapes)
    if (!p.templates.count(s.category)) p.templates[s.category] = s.id;

  // Ranges per the documented contract.
  if (p.k < 2) fail("BadParameter", "k must be >= 2");
  if (p.k_map < 2 || p.k_map > p.k) fail("BadParameter", "k_map must satisfy 2 <= k_map <= k");
  if (p.k1 < 1 || p.k1 > p.k) fail("BadParameter", "k1 must satisfy 1 <= k1 <= k");
  if (p.k2 < 1 || p.k2 > p.k1) fail("BadParameter", "k2 must satisfy 1 <= k2 <= k1");
  if (p.lambda_commute < 0.0 || p.lambda_l2 < 0.0) fail("BadParameter", "lambdas must be >= 0");
  if (p.resample_cap < 2) fail("BadParameter", "resample_cap must be >= 2");
  if (p.pairs != "all" && p.pairs != "star")
    fail("BadParameter", "pairs must be 'all' or 'star'");
  if (p.embed_dim != 2 && p.embed_dim != 3) fail("BadParameter", "embed_dim must be 2 or 3");
  if (p.zoomout.k_start < 1 || p.zoomout.k_start > p.zoomout.k_end || p.zoomout.k_end > p.k)
    fail("BadParameter", "zoomout needs 1 <= k_start <= k_end <= k");
  if (p.zoomout.step < 1) fail("BadParameter", "zoomout step must be >= 1");
  if (p.refine.max_iters < 0) fail("BadParameter", "refine.max_iters must be >= 0");
  if (p.descriptor.num < 1) fail("BadParameter", "descriptor.num must be >= 1");
  for (const auto& [cat, id] : p.templates) {
    const auto& s = m.shape(id);
    if (s.category != cat)
      fail("BadParameter", "template '" + id + "' is not in category '" + cat + "'");
  }

  if (doc.contains("ground_truth_p2p")) {
    for (const auto& g : doc["ground_truth_p2p"]) {
      GroundTruthP2p gt;
      gt.source = field_or<std::string>(g, "source", "");
      gt.target = field_or<std::string>(g, "target", "");
      const std::string rel = field_or<std::string>(g, "path", "");
      if (gt.source.empty() || gt.target.empty() || rel.empty())
        fail("ParseError", "ground_truth_p2p entries need source, target and path");
      m.shape(gt.source);
      m.shape(gt.target);
      std::filesystem::path gp(rel);
      gt.path = gp.is_absolute() ? gp : m.base_dir / gp;
      if (!std::filesystem::exists(gt.path))
        fail("IoError", "ground-truth p2p file not found: " + gt.path.string());
      m.ground_truth.push_back(std::move(gt));
    }
  }

  // Canonical resolved document: defaults and overrides baked in.
  json resolved;
  resolved["shapes"] = json::array();
  for (const auto& s : m.shapes)
    resolved["shapes"].push_back({{"id", s.id},
                                  {"path", s.path.string()},
                                  {"category", s.category},
                                  {"tag", s.tag}});
  json rp;
  rp["k"] = p.k;
  rp["k_map"] = p.k_map;
  rp["k1"] = p.k1;
  rp["k2"] = p.k2;
  rp["lambda_commute"] = p.lambda_commute;
  rp["lambda_l2"] = p.lambda_l2;
  rp["normalize"] = p.normalize;
  rp["seed"] = p.seed;
  rp["resample_cap"] = p.resample_cap;
  rp["pairs"] = p.pairs;
  rp["feature_kind"] = feature_kind_name(p.feature_kind);
  rp["embed_dim"] = p.embed_dim;
  rp["descriptor"] = {{"kind", p.descriptor.kind},
                      {"num", p.descriptor.num},
                      {"variance_scale", p.descriptor.variance_scale}};
  rp["refine"] = {{"enabled", p.refine.enabled},
                  {"w_data", p.refine.w_data},
                  {"w_commute", p.refine.w_commute},
                  {"w_struct", p.refine.w_struct},
                  {"max_iters", p.refine.max_iters}};
  rp["zoomout"] = {{"k_start", p.zoomout.k_start},
                   {"k_end", p.zoomout.k_end},
                   {"step", p.zoomout.step}};
  rp["interp"] = {{"a", p.interp.a}, {"b", p.interp.b}, {"steps", p.interp.steps}};
  rp["templates"] = p.templates;
  resolved["params"] = rp;
  if (!m.ground_truth.empty()) {
    resolved["ground_truth_p2p"] = json::array();
    for (const auto& g : m.ground_truth)
      resolved["ground_truth_p2p"].push_back(
          {{"source", g.source}, {"target", g.target}, {"path", g.path.string()}});
  }
  m.resolved = std::move(resolved);
  return m;
}

}  // namespace specpool

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "specpool/descriptors.hpp"

namespace specpool {

struct ShapeEntry {
  std::string id;
  std::filesystem::path path;  // resolved against the manifest directory
  std::string category;
  std::string tag;
};

struct GroundTruthP2p {
  std::string source;
  std::string target;
  std::filesystem::path path;  // one 0-based target index per line
};

struct DescriptorConfig {
  // Probe families driving map estimation: "combo" concatenates WKS, HKS and
  // the vertex coordinates; "wks"/"hks"/"xyz" select a single family.
  std::string kind = "combo";
  int num = 128;                // WKS energy count
  double variance_scale = 7.0;  // WKS sigma multiplier (x energy step)
};

struct RefineConfig {
  bool enabled = true;
  double w_data = 1.0;
  double w_commute = 1e-3;
  double w_struct = 1.0;
  int max_iters = 2000;
};

struct ZoomoutConfig {
  int k_start = 30;
  int k_end = 120;
  int step = 3;
};

struct InterpConfig {
  std::string a;
  std::string b;
  int steps = 5;
};

struct PipelineParams {
  int k = 120;      // eigenbasis size per shape
  int k_map = 30;   // pairwise map estimation size
  int k1 = 120;     // latent basis size (<= k)
  int k2 = 120;     // canonical basis size (<= k1); defaulted from features
  double lambda_commute = 1e-3;  // commutativity weight in the map solve
  double lambda_l2 = 10.0;       // L = L1 + lambda * L2
  bool normalize = true;
  std::uint64_t seed = 0;
  int resample_cap = 20000;
  std::string pairs = "all";  // "all" | "star"
  FeatureKind feature_kind = FeatureKind::Xyz;  // encoder features
  int embed_dim = 2;
  DescriptorConfig descriptor;
  RefineConfig refine;
  ZoomoutConfig zoomout;
  InterpConfig interp;
  std::map<std::string, std::string> templates;  // category -> shape id
};

struct CollectionManifest {
  std::filesystem::path base_dir;
  std::vector<ShapeEntry> shapes;
  PipelineParams params;
  std::vector<GroundTruthP2p> ground_truth;
  nlohmann::json resolved;  // defaults + overrides, canonical for hashing

  bool supervised() const { return !ground_truth.empty(); }
  const ShapeEntry& shape(const std::string& id) const;
  std::string template_for(const std::string& category) const;
  std::vector<std::string> categories() const;
};

// Parses, applies "--set key=value" overrides onto the params block (dotted
// paths reach nested objects), fills defaults, and validates ranges
// (k >= 2, k2 <= k1 <= k, referenced files exist, unique ids, ...).
CollectionManifest load_manifest(const std::filesystem::path& path,
                                 const std::vector<std::string>& overrides = {});

}  // namespace specpool

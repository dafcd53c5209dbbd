#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "collection_helpers.hpp"
#include "specpool/errors.hpp"
#include "specpool/pipeline.hpp"
#include "specpool/pooling.hpp"
#include "specpool/smat.hpp"
#include "specpool/util.hpp"
#include "test_helpers.hpp"

using namespace specpool;
using nlohmann::json;

namespace {

// Writes a 3-sphere collection plus manifest; returns the manifest path.
std::filesystem::path write_demo_collection(const std::filesystem::path& dir, bool supervised,
                                            json extra_params = json::object()) {
  std::filesystem::create_directories(dir / "meshes");
  const auto family = testutil::deformed_sphere_family(1, 0.15);  // 42 vertices each
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < 3; ++i) {
    const std::string id = "s" + std::to_string(i);
    Mesh mesh = family[i];
    mesh.name = id;
    save_off(mesh, dir / "meshes" / (id + ".off"));
    ids.push_back(id);
  }

  json params = {{"k", 16},
                 {"k_map", 8},
                 {"k1", 12},
                 {"k2", 6},
                 {"seed", 0},
                 {"zoomout", {{"k_start", 8}, {"k_end", 12}, {"step", 1}}},
                 {"descriptor", {{"kind", "wks"}, {"num", 24}, {"variance_scale", 7.0}}},
                 {"refine", {{"enabled", true}, {"max_iters", 200}}}};
  for (auto& [key, value] : extra_params.items()) params[key] = value;

  json manifest;
  manifest["shapes"] = json::array();
  for (const auto& id : ids)
    manifest["shapes"].push_back(
        {{"id", id}, {"path", "meshes/" + id + ".off"}, {"category", "sphere"}, {"tag", id}});
  manifest["params"] = params;

  if (supervised) {
    std::filesystem::create_directories(dir / "p2p");
    const Eigen::Index n = family[0].vertex_count();
    std::string identity;
    for (Eigen::Index i = 0; i < n; ++i) identity += std::to_string(i) + "\n";
    json gt = json::array();
    for (int i = 1; i < 3; ++i) {
      const std::string fwd = "p2p/s0_s" + std::to_string(i) + ".txt";
      const std::string rev = "p2p/s" + std::to_string(i) + "_s0.txt";
      write_file_atomic(dir / fwd, identity);
      write_file_atomic(dir / rev, identity);
      gt.push_back({{"source", "s0"}, {"target", "s" + std::to_string(i)}, {"path", fwd}});
      gt.push_back({{"source", "s" + std::to_string(i)}, {"target", "s0"}, {"path", rev}});
    }
    manifest["ground_truth_p2p"] = gt;
  }

  const auto path = dir / "manifest.json";
  write_file_atomic(path, manifest.dump(2) + "\n");
  return path;
}

void run_all(const std::filesystem::path& manifest, const RunOptions& options,
             const std::vector<std::string>& overrides = {}) {
  for (Stage s : all_stages()) {
    if (s == Stage::Interp) continue;  // needs explicit endpoints
    run_stage(s, manifest, overrides, options);
  }
}

}  // namespace

TEST_CASE("laplacian stage writes one basis container per shape") {
  const auto dir = testutil::fresh_dir("pipe_laplacian");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";
  options.jobs = 2;

  const StageReport report = run_stage(Stage::Laplacian, manifest, {}, options);
  CHECK(!report.skipped);
  int basis_files = 0;
  for (const auto& artifact : report.artifacts)
    if (artifact.string().ends_with(".basis.smat")) ++basis_files;
  CHECK(basis_files == 3);

  // Quality report exists and is well-formed JSON.
  const json quality =
      json::parse(read_file(report.run_dir / "laplacian" / "s0.quality.json"));
  CHECK(quality.contains("clamped_cotangents"));
  CHECK(quality.contains("nonmanifold_edges"));
  CHECK(quality.contains("boundary_edges"));

  // Re-running without force skips.
  const StageReport again = run_stage(Stage::Laplacian, manifest, {}, options);
  CHECK(again.skipped);
  RunOptions forced = options;
  forced.force = true;
  CHECK(!run_stage(Stage::Laplacian, manifest, {}, forced).skipped);
}

TEST_CASE("stages demand their prerequisites") {
  const auto dir = testutil::fresh_dir("pipe_prereq");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";
  try {
    run_stage(Stage::Cclb, manifest, {}, options);
    FAIL("expected MissingPrerequisite");
  } catch (const Error& e) {
    CHECK(e.code() == "MissingPrerequisite");
  }
}

TEST_CASE("full unsupervised pipeline runs and eval matches library-level recomputation") {
  const auto dir = testutil::fresh_dir("pipe_full");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";
  options.jobs = 2;
  run_all(manifest, options);

  const StageReport eval = run_stage(Stage::Eval, manifest, {}, options);
  REQUIRE(!eval.eval_csv.empty());

  // Parse the CSV row for s1 and recompute its losses from the artifacts.
  std::istringstream csv(eval.eval_csv);
  std::string line;
  std::getline(csv, line);  // header
  CHECK(line == "shape_id,category,n_vertices,mse_x1e4,l1,l2,loss");
  double mse = -1, l1 = -1, l2 = -1;
  while (std::getline(csv, line)) {
    if (line.rfind("s1,", 0) != 0) continue;
    std::stringstream row(line);
    std::string field;
    std::getline(row, field, ',');  // id
    std::getline(row, field, ',');  // category
    std::getline(row, field, ',');  // n
    std::getline(row, field, ',');
    mse = std::stod(field);
    std::getline(row, field, ',');
    l1 = std::stod(field);
    std::getline(row, field, ',');
    l2 = std::stod(field);
  }
  REQUIRE(mse >= 0);

  const auto run_dir = eval.run_dir;
  const Mesh recon = load_mesh(run_dir / "decode" / "s1.off");
  Mesh gt = load_mesh(run_dir / "laplacian" / "s1.norm.off");
  PointToPointMap p2p;
  p2p.assignment = read_p2p_text(run_dir / "zoomout" / "s0__s1.p2p.txt");
  CHECK(mse == doctest::Approx(mse_eval(recon, gt, p2p)).epsilon(1e-12));
  CHECK(l1 == doctest::Approx(p2p_loss(p2p, gt, recon)).epsilon(1e-12));
  const Eigen::MatrixX3d pulled = pull_vertices(p2p, gt);
  CHECK(l2 == doctest::Approx(pairwise_distance_loss(pulled, recon.vertices, 20000, 0))
                  .epsilon(1e-12));

  // Embedding table columns match the manifest.
  const std::string embed_csv = read_file(run_dir / "embed" / "embedding.csv");
  CHECK(embed_csv.rfind("shape_id,tag,x,y\n", 0) == 0);
}

TEST_CASE("supervised mode bypasses estimation and uses the p2p files verbatim") {
  const auto dir = testutil::fresh_dir("pipe_supervised");
  const auto manifest = write_demo_collection(dir, true);
  RunOptions options;
  options.out_dir = dir / "out";
  options.jobs = 2;
  run_all(manifest, options);

  const StageReport eval = run_stage(Stage::Eval, manifest, {}, options);
  // Identity ground truth: the zoomout artifacts replicate it.
  const auto p2p = read_p2p_text(eval.run_dir / "zoomout" / "s0__s1.p2p.txt");
  for (std::size_t i = 0; i < p2p.size(); ++i) CHECK(p2p[i] == static_cast<int>(i));
  // The fmap stage only validated the supplied maps; nothing was estimated.
  CHECK(std::filesystem::exists(eval.run_dir / "fmap" / "supervised.json"));
  for (const auto& entry : std::filesystem::directory_iterator(eval.run_dir / "fmap"))
    CHECK(entry.path().extension() != ".smat");
}

TEST_CASE("interp stage writes the requested number of frames") {
  const auto dir = testutil::fresh_dir("pipe_interp");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";
  options.jobs = 2;
  // Overrides are part of the config hash; the whole chain runs under them.
  const std::vector<std::string> overrides = {"interp.a=s0", "interp.b=s1", "interp.steps=4"};
  run_all(manifest, options, overrides);

  const StageReport report = run_stage(Stage::Interp, manifest, overrides, options);
  CHECK(report.artifacts.size() == 5);  // 4 meshes + codes container
}

TEST_CASE("overrides change the resolved config hash and are recorded") {
  const auto dir = testutil::fresh_dir("pipe_overrides");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";

  const StageReport base = run_stage(Stage::Laplacian, manifest, {}, options);
  const StageReport tweaked = run_stage(Stage::Laplacian, manifest, {"k2=4"}, options);
  CHECK(base.run_dir != tweaked.run_dir);
  const json resolved = json::parse(read_file(tweaked.run_dir / "resolved_config.json"));
  CHECK(resolved["params"]["k2"] == 4);
}

TEST_CASE("CLI reports structured errors and exit code 2 for missing prerequisites") {
  const auto dir = testutil::fresh_dir("pipe_cli");
  const auto manifest = write_demo_collection(dir, false);
  const auto err_file = dir / "stderr.txt";
  const std::string cmd = std::string(SPECPOOL_CLI_PATH) + " --manifest " + manifest.string() +
                          " --stage cclb --out " + (dir / "out").string() + " 2> " +
                          err_file.string();
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  CHECK(WEXITSTATUS(status) == 2);
  const std::string err = read_file(err_file);
  const json parsed = json::parse(err);
  CHECK(parsed["code"] == "MissingPrerequisite");
  CHECK(parsed["stage"] == "cclb");
}

TEST_CASE("tampered upstream artifacts are detected by content hash") {
  const auto dir = testutil::fresh_dir("pipe_stale");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";
  const StageReport lap = run_stage(Stage::Laplacian, manifest, {}, options);

  // Corrupt one basis container behind the stamp's back.
  write_file_atomic(lap.run_dir / "laplacian" / "s0.basis.smat", "SMATgarbage");
  try {
    run_stage(Stage::Descriptors, manifest, {}, options);
    FAIL("expected StalePrerequisite");
  } catch (const Error& e) {
    CHECK(e.code() == "StalePrerequisite");
  }
}

TEST_CASE("manifest validation rejects bad parameters and missing files") {
  const auto dir = testutil::fresh_dir("pipe_manifest");
  const auto manifest = write_demo_collection(dir, false);

  auto expect_code = [&](const std::vector<std::string>& overrides, const std::string& code) {
    try {
      load_manifest(manifest, overrides);
      FAIL("expected " << code);
    } catch (const Error& e) {
      CHECK(e.code() == code);
    }
  };
  expect_code({"k2=13"}, "BadParameter");          // k2 > k1
  expect_code({"k1=17"}, "BadParameter");          // k1 > k
  expect_code({"k=1"}, "BadParameter");            // k < 2
  expect_code({"pairs=ring"}, "BadParameter");     // unknown pair policy
  expect_code({"embed_dim=4"}, "BadParameter");    // embeddings are 2D or 3D
  expect_code({"zoomout.k_end=99"}, "BadParameter");

  // Unknown template shape.
  expect_code({"templates={\"sphere\":\"nope\"}"}, "UnknownShape");

  // Duplicate ids fail at parse time.
  nlohmann::json doc = json::parse(read_file(manifest));
  doc["shapes"].push_back(doc["shapes"][0]);
  const auto dup = dir / "dup.json";
  write_file_atomic(dup, doc.dump());
  try {
    load_manifest(dup);
    FAIL("expected BadParameter for duplicate ids");
  } catch (const Error& e) {
    CHECK(e.code() == "BadParameter");
  }

  // Missing mesh file.
  doc = json::parse(read_file(manifest));
  doc["shapes"][0]["path"] = "meshes/missing.off";
  const auto missing = dir / "missing.json";
  write_file_atomic(missing, doc.dump());
  try {
    load_manifest(missing);
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.code() == "IoError");
  }
}

TEST_CASE("star pair policy produces a hub topology that still evaluates") {
  const auto dir = testutil::fresh_dir("pipe_star");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";
  options.jobs = 2;
  const std::vector<std::string> overrides = {"pairs=star"};
  run_all(manifest, options, overrides);
  const StageReport eval = run_stage(Stage::Eval, manifest, overrides, options);

  // Hub s0: maps exist to s1/s2 in both directions, but not s1 <-> s2.
  CHECK(std::filesystem::exists(eval.run_dir / "zoomout" / "s0__s1.p2p.txt"));
  CHECK(std::filesystem::exists(eval.run_dir / "zoomout" / "s1__s0.p2p.txt"));
  CHECK(std::filesystem::exists(eval.run_dir / "zoomout" / "s0__s2.p2p.txt"));
  CHECK(!std::filesystem::exists(eval.run_dir / "zoomout" / "s1__s2.p2p.txt"));
  CHECK(!eval.eval_csv.empty());
}

TEST_CASE("laplacian stage rejects k at or above the vertex count") {
  const auto dir = testutil::fresh_dir("pipe_ktoolarge");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";
  try {
    run_stage(Stage::Laplacian, manifest, {"k=50", "k1=50", "k_map=50", "zoomout.k_end=50"},
              options);
    FAIL("expected KTooLarge");  // the demo meshes have 42 vertices
  } catch (const Error& e) {
    CHECK(e.code() == "KTooLarge");
  }
}

TEST_CASE("p2p text files parse strictly") {
  const auto dir = testutil::fresh_dir("pipe_p2p_text");
  const std::vector<int> assignment = {4, 0, 2, 2, 1};
  write_file_atomic(dir / "good.txt", p2p_to_text(assignment));
  CHECK(read_p2p_text(dir / "good.txt") == assignment);

  write_file_atomic(dir / "bad.txt", "0\n1\nbanana\n");
  try {
    read_p2p_text(dir / "bad.txt");
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.code() == "ParseError");
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
}

TEST_CASE("interp stage fails cleanly without endpoints") {
  const auto dir = testutil::fresh_dir("pipe_interp_bad");
  const auto manifest = write_demo_collection(dir, false);
  RunOptions options;
  options.out_dir = dir / "out";
  run_all(manifest, options);
  try {
    run_stage(Stage::Interp, manifest, {}, options);
    FAIL("expected BadParameter");
  } catch (const Error& e) {
    CHECK(e.code() == "BadParameter");
  }
}

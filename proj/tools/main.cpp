// Pipeline driver: runs one stage (or all of them) against a collection
// manifest. Errors are reported as machine-readable JSON on stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "specpool/errors.hpp"
#include "specpool/pipeline.hpp"

namespace {

int exit_code_for(const std::string& code) {
  return code == "MissingPrerequisite" ? 2 : 1;
}

void print_error(const std::string& stage, const std::string& code, const std::string& message) {
  nlohmann::json err = {{"stage", stage}, {"code", code}, {"message", message}};
  std::cerr << err.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"specpool: connectivity-independent latent spaces for mesh collections"};

  std::string manifest;
  std::string stage = "all";
  std::string out_dir = "out";
  int jobs = 0;
  bool force = false;
  std::vector<std::string> overrides;

  app.add_option("--manifest", manifest, "collection manifest (JSON)")->required();
  app.add_option("--stage", stage,
                 "laplacian|descriptors|fmap|zoomout|network|cclb|encode|decode|interp|embed|"
                 "eval|all");
  app.add_option("--out", out_dir, "output directory (default: out)");
  app.add_option("--jobs", jobs, "worker threads (default: logical cores)");
  app.add_flag("--force", force, "recompute even if artifacts are up to date");
  app.add_option("--set", overrides, "parameter override key=value (repeatable)")
      ->take_all();

  CLI11_PARSE(app, argc, argv);

  specpool::RunOptions options;
  options.out_dir = out_dir;
  options.jobs = jobs;
  options.force = force;

  std::vector<specpool::Stage> stages;
  std::string current = stage;
  try {
    if (stage == "all") {
      stages = specpool::all_stages();
      // interp needs explicit endpoints; only run it when they are set.
      std::erase_if(stages, [&](specpool::Stage s) {
        return s == specpool::Stage::Interp &&
               std::none_of(overrides.begin(), overrides.end(), [](const std::string& o) {
                 return o.rfind("interp.", 0) == 0;
               });
      });
    } else {
      stages.push_back(specpool::stage_from_name(stage));
    }

    for (specpool::Stage s : stages) {
      current = specpool::stage_name(s);
      const specpool::StageReport report = specpool::run_stage(s, manifest, overrides, options);
      std::fprintf(stderr, "[%s] %s (%zu artifacts) -> %s\n", current.c_str(),
                   report.skipped ? "up to date" : "done", report.artifacts.size(),
                   report.run_dir.string().c_str());
      if (s == specpool::Stage::Eval && !report.eval_csv.empty())
        std::fputs(report.eval_csv.c_str(), stdout);
    }
  } catch (const specpool::Error& e) {
    print_error(current, e.code(), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    print_error(current, "Internal", e.what());
    return 1;
  }
  return 0;
}

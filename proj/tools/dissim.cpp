// Batch front-end: parse a network description, run the full certification
// pipeline, and write the report, abstraction dumps, and trace CSVs.
//
// Exit codes: 0 all checks pass, 1 a check failed, 2 input error,
// 3 capacity limit hit.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dissim/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"finite-abstraction certification toolkit"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run the pipeline on a network spec file");
  std::string spec_path;
  std::string out_dir = "out";
  unsigned threads = 0;
  bool threads_given = false;
  run->add_option("spec", spec_path, "network spec file (JSON)")->required();
  run->add_option("--out", out_dir, "output directory (default: out)");
  run->add_option("--threads", threads, "worker cap (overrides the spec)")
      ->each([&](const std::string&) { threads_given = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    dissim::NetworkSpec spec = dissim::parse_network_spec_file(spec_path);
    if (threads_given) spec.run.threads = threads;
    dissim::PipelineResult res = dissim::run_pipeline(spec, out_dir);
    std::cout << res.report;
    std::cout << "\nartifacts in " << out_dir << "/ (" << res.files.size() << " files)\n";
    return res.exit_code;
  } catch (const dissim::CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return 3;
  } catch (const dissim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "qgi/cli.hpp"
#include "qgi/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Simulation and analysis pipelines for a gravity-sensitive Stern-Gerlach interferometer"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir, scan_csv;
  std::uint64_t seed = 0;
  int threads = 0;
  double perturb_ppm = -1;
  app.add_option("--config", config_path, "INI configuration file");
  app.add_option("--out", out_dir, "output directory (overrides run.out_dir)");
  app.add_option("--seed", seed, "noise seed (overrides run.seed)");
  app.add_option("--threads", threads, "worker threads for simulate and sweep");
  app.add_option("--perturb-kick-ppm", perturb_ppm, "kick-current perturbation for sweep bands");
  for (const char* name : {"simulate", "calibrate", "phases", "fringes", "analyze", "sweep"}) {
    auto* sub = app.add_subcommand(name);
    if (std::string(name) == "analyze") sub->add_option("--scan", scan_csv, "scan CSV to analyze");
  }
  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  qgi::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = qgi::load_config(config_path);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (app.count("--seed")) cfg.seed = seed;
    if (app.count("--threads")) cfg.threads = threads;
    if (app.count("--perturb-kick-ppm")) cfg.perturb_kick_ppm = perturb_ppm;
    if (!scan_csv.empty()) cfg.scan_csv = scan_csv;
    const auto res = qgi::run_pipeline(cfg, qgi::parse_command(command));
    for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& f : res.files) std::cout << f << "\n";
    return 0;
  } catch (const std::exception& e) {
    const std::string record = qgi::error_record(e, command);
    std::cerr << record << "\n";
    std::error_code ec;
    const std::string dir = out_dir.empty() ? cfg.out_dir : out_dir;
    std::filesystem::create_directories(dir, ec);
    if (!ec) std::ofstream(std::filesystem::path(dir) / "error.json") << record << "\n";
    return qgi::exit_code_for(e);
  }
}

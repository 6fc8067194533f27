#pragma once

#include <cstdint>
#include <exception>
#include <iosfwd>
#include <string>
#include <vector>

#include "qgi/fringe.hpp"

namespace qgi {

/// Flat-sectioned INI configuration. Keys carry their units; values below are
/// stored in SI.
struct RunConfig {
  // [species]
  std::string species = "rb87";
  // [geometry]
  std::string geometry = "three_wire";
  // [bias]
  double bias_G = 12.6;
  double ambient_gradient_G_per_m = 68.0;
  // [timings]
  std::vector<double> two_T = {1.6e-3};
  double T_kick = 80e-6;
  double T_d = 77e-6;
  // [currents]
  double I_hold = 0.0;  // 0 calibrates at z_hold
  double I_idle = 0.0;
  double max_current = 1.0;
  double z_hold = -113e-6;
  double calib_lo = 10e-3;
  double calib_hi = 40e-3;
  // [physics]
  double g = 9.81;      // dynamics and wave packets
  double g_eff = 9.91;  // closed-form phases and synthetic fringes
  // [noise]
  double amp_sigma = 0.018;
  double phase_sigma = 0.0;
  double phase_sigma_rel = 0.0;
  // [fringe]
  double vis_start = 0.8, vis_end = 0.2, mean = 0.5;
  double grid_start = 0.2e-3, grid_stop = 2.4e-3, grid_step = 5e-6;
  int envelope_order = 7;
  int smoothing_window = 3;
  // [analyze]
  std::string scan_csv;
  // [run]
  std::uint64_t seed = 1;
  std::string out_dir = "qgi_out";
  int threads = 1;
  double perturb_kick_ppm = 5000.0;
  double dt = 0.5e-6;

  void validate() const;
  /// Every setting that affects results, one "section.key=value" per line in
  /// fixed order. Output location and thread count are left out.
  std::string canonical() const;
};

/// Parse INI text; unknown sections or keys and malformed numbers are ConfigError.
RunConfig parse_config(std::istream& is);
RunConfig load_config(const std::string& path);

/// 64-bit FNV-1a of `canonical()`, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

enum class Command { simulate, calibrate, phases, fringes, analyze, sweep };
Command parse_command(const std::string& name);
const char* to_string(Command c);

struct PipelineResult {
  std::vector<std::string> files;  // paths written, in order
  std::vector<std::string> warnings;
};

/// Runs one command and writes its artifacts under cfg.out_dir.
PipelineResult run_pipeline(const RunConfig& cfg, Command command);

/// 2 for configuration errors, 3 for numerical and other failures.
int exit_code_for(const std::exception& e);
/// One-line JSON error record.
std::string error_record(const std::exception& e, const std::string& command);

/// Comment line heading every output file.
std::string provenance_line(const RunConfig& cfg, Command command);

}  // namespace qgi

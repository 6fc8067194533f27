#include "qgi/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "qgi/dynamics.hpp"
#include "qgi/errors.hpp"
#include "qgi/fieldmap.hpp"
#include "qgi/phases.hpp"
#include "qgi/pulses.hpp"
#include "qgi/wavepacket.hpp"

namespace qgi {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::map<std::string, std::set<std::string>> k = {
      {"species", {"name"}},
      {"geometry", {"preset"}},
      {"bias", {"b0_g", "ambient_gradient_g_per_m"}},
      {"timings", {"two_t_us", "two_t_start_us", "two_t_stop_us", "two_t_step_us", "t_kick_us", "t_d_us"}},
      {"currents", {"i_hold_ma", "i_idle_ma", "max_current_a", "z_hold_um", "calib_lo_ma", "calib_hi_ma"}},
      {"physics", {"g_m_s2", "g_eff_m_s2"}},
      {"noise", {"amp_sigma", "phase_sigma_rad", "phase_sigma_rel"}},
      {"fringe", {"vis_start", "vis_end", "mean", "grid_start_us", "grid_stop_us", "grid_step_us",
                  "envelope_order", "smoothing_window"}},
      {"analyze", {"scan_csv"}},
      {"run", {"seed", "out_dir", "threads", "perturb_kick_ppm", "dt_us"}},
  };
  return k;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: '{}' is not a number", key, v));
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(fmt::format("{}: '{}' is not an integer", key, v));
  }
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  const auto e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::string us_label(double two_T) { return fmt::format("{:.0f}us", two_T * 1e6); }

Species species_of(const RunConfig& cfg) {
  if (cfg.species != "rb87") throw ConfigError(fmt::format("unknown species '{}'", cfg.species));
  return Species::rubidium87();
}

WireGeometry geometry_of(const RunConfig& cfg) {
  if (cfg.geometry == "three_wire") return WireGeometry::three_wire();
  throw ConfigError(fmt::format("unknown geometry preset '{}'", cfg.geometry));
}

BiasField bias_of(const RunConfig& cfg) {
  BiasField b;
  b.B0 = Vec3(0.0, cfg.bias_G, 0.0);
  b.ambient_gradient = cfg.ambient_gradient_G_per_m;
  return b;
}

Timings timings_of(const RunConfig& cfg, double two_T) {
  Timings t = Timings::paper(two_T);
  t.T_kick = cfg.T_kick;
  t.T_d = cfg.T_d;
  t.validate();
  return t;
}

class Output {
 public:
  Output(const RunConfig& cfg, Command cmd, PipelineResult& res) : cfg_(cfg), cmd_(cmd), res_(res) {}

  std::ofstream open(const std::string& name, bool comment = true) {
    const fs::path p = fs::path(cfg_.out_dir) / name;
    fs::create_directories(p.parent_path());
    std::ofstream os(p);
    if (!os) throw ConfigError(fmt::format("cannot write {}", p.string()));
    if (comment) os << provenance_line(cfg_, cmd_) << "\n";
    res_.files.push_back(p.string());
    return os;
  }
  // SVG carries the provenance as an XML comment
  std::ofstream open_svg(const std::string& name) {
    auto os = open(name, false);
    os << "<!-- " << provenance_line(cfg_, cmd_).substr(2) << " -->\n";
    return os;
  }

 private:
  const RunConfig& cfg_;
  Command cmd_;
  PipelineResult& res_;
};

// Runs jobs on a pool of `threads` workers; results land at their own index.
template <typename R>
std::vector<R> parallel_map(int n, int threads, const std::function<R(int)>& job) {
  std::vector<R> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        out[i] = job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int k = 1; k < std::min(threads, n); ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

PaperRunOptions paper_options(const RunConfig& cfg, double two_T) {
  PaperRunOptions po;
  po.timings = timings_of(cfg, two_T);
  po.z_hold = cfg.z_hold;
  po.I_idle = cfg.I_idle;
  po.I_hold = cfg.I_hold;
  po.bias = bias_of(cfg);
  po.dt = cfg.dt;
  po.g = cfg.g;
  return po;
}

void cmd_calibrate(const RunConfig& cfg, Output& out, PipelineResult&) {
  const auto sp = species_of(cfg);
  const ChipField field(geometry_of(cfg), bias_of(cfg));
  const auto cal = calibrate_levitation(field, sp, cfg.z_hold, cfg.calib_lo, cfg.calib_hi, cfg.g);
  std::vector<double> currents;
  for (double f : {0.9, 0.95, 1.0, 1.05, 1.1}) currents.push_back(f * cal.I_hold);
  const auto par = calibrate_levitation_parabola(field, sp, cfg.z_hold, currents, 2e-3, cfg.g, {}, cfg.dt);
  auto os = out.open("calibration.csv");
  os << "z_hold_um,i_hold_ma,residual_a_m_s2,iterations,i_hold_parabola_ma,da_di_m_s2_per_a\n";
  os << fmt::format("{:.3f},{:.6f},{:.3e},{},{:.6f},{:.6e}\n", cfg.z_hold * 1e6, cal.I_hold * 1e3,
                    cal.residual_a, cal.iterations, par.I_hold * 1e3, par.slope);
  auto ks = out.open("kick_currents.csv");
  ks << "two_T_us,i_hold_ma,i_kick_ma,t_pi1_us,t_pi2_us,t_open_us,t_close_us\n";
  for (double x : cfg.two_T) {
    SourceLimits lim;
    lim.max_current = cfg.max_current;
    const auto s = build_schedule(timings_of(cfg, x), cal.I_hold, cfg.I_idle, lim);
    ks << fmt::format("{:.3f},{:.6f},{:.6f},{:.3f},{:.3f},{:.3f},{:.3f}\n", x * 1e6, cal.I_hold * 1e3,
                      s.I_kick * 1e3, s.t_pi1 * 1e6, s.t_pi2 * 1e6, s.t_open() * 1e6, s.t_close() * 1e6);
  }
}

void cmd_phases(const RunConfig& cfg, Output& out, PipelineResult&) {
  const auto sp = species_of(cfg);
  auto os = out.open("phases.csv");
  os << "two_T_us,analytic_rad,action_rad,gauge_rad,galilean_rad,gedanken_rad,action_error_rad,"
        "max_route_spread_rad\n";
  for (double x : cfg.two_T) {
    const auto r = qgi_route_phases(timings_of(cfg, x), cfg.g_eff, sp);
    const auto [lo, hi] = std::minmax({r.analytic, r.action, r.gauge, r.galilean});
    os << fmt::format("{:.3f},{:.12f},{:.12f},{:.12f},{:.12f},{:.12f},{:.3e},{:.3e}\n", x * 1e6,
                      r.analytic, r.action, r.gauge, r.galilean, r.gedanken, r.action_error, hi - lo);
  }
}

void cmd_simulate(const RunConfig& cfg, Output& out, PipelineResult& res) {
  const auto sp = species_of(cfg);
  const ChipField field(geometry_of(cfg), bias_of(cfg));
  const double I_hold =
      cfg.I_hold > 0 ? cfg.I_hold
                     : calibrate_levitation(field, sp, cfg.z_hold, cfg.calib_lo, cfg.calib_hi, cfg.g).I_hold;
  struct Point {
    PaperRunResult wp;
    std::vector<Trajectory> traj;
    ClosureMetrics closure;
    std::vector<std::string> warnings;
  };
  const int n = static_cast<int>(cfg.two_T.size());
  const auto pts = parallel_map<Point>(n, cfg.threads, [&](int i) {
    Point p;
    const Timings t = timings_of(cfg, cfg.two_T[i]);
    SourceLimits lim;
    lim.max_current = cfg.max_current;
    const auto sched = build_schedule(t, I_hold, cfg.I_idle, lim);
    p.warnings = sched.warnings;
    const auto ic = ballistic_shift(paper_initial_condition(t, cfg.g, cfg.z_hold), sched.t_open(), cfg.g);
    ComOptions co;
    co.dt = cfg.dt;
    co.g = cfg.g;
    for (Arm arm : {Arm::ballistic, Arm::reference})
      p.traj.push_back(integrate_com(sched, arm, field, sp, ic, sched.t_close(), co));
    p.closure = closure_metrics(p.traj[0], p.traj[1]);
    auto po = paper_options(cfg, cfg.two_T[i]);
    po.I_hold = I_hold;
    p.wp = run_paper_wavepackets(po, sp);
    return p;
  });
  auto ov = out.open("overlap.csv");
  ov << "two_T_s,visibility,phase_rad,path_phase_rad,shape_phase_rad,analytic_rad,dz_final_m,dv_final_m_s\n";
  for (int i = 0; i < n; ++i) {
    const auto& p = pts[i];
    const auto& r = p.wp.overlap;
    ov << fmt::format("{:.9e},{:.9f},{:.9f},{:.9f},{:.9f},{:.9f},{:.3e},{:.3e}\n", cfg.two_T[i],
                      r.visibility, r.phase, r.path_phase, r.shape_phase, p.wp.analytic_phase,
                      p.closure.dz_final, p.closure.dv_final);
    auto tr = out.open(fmt::format("trajectories_{}.csv", us_label(cfg.two_T[i])));
    tr << "arm,t_s,z_m,v_m_s,a_m_s2,F,mF\n";
    for (const auto& traj : p.traj)
      for (const auto& s : traj.samples)
        tr << fmt::format("{},{:.9e},{:.12e},{:.12e},{:.9e},{},{}\n", to_string(traj.arm), s.t, s.z, s.v,
                          s.a, s.state.F, s.state.mF);
    auto wd = out.open(fmt::format("widths_{}.csv", us_label(cfg.two_T[i])));
    write_width_csv(wd, p.wp.ballistic, Arm::ballistic);
    // second block without repeating the header
    std::ostringstream ref;
    write_width_csv(ref, p.wp.reference, Arm::reference);
    const std::string body = ref.str();
    wd << body.substr(body.find('\n') + 1);
    for (const auto& w : p.warnings) res.warnings.push_back(fmt::format("2T = {}: {}", us_label(cfg.two_T[i]), w));
  }
}

void cmd_fringes(const RunConfig& cfg, Output& out, PipelineResult& res) {
  const auto sp = species_of(cfg);
  NoiseModel nm{cfg.phase_sigma, cfg.phase_sigma_rel, cfg.amp_sigma, cfg.seed};
  const double x0 = cfg.grid_start, x1 = cfg.grid_stop;
  auto vis = [&](double x) { return cfg.vis_start + (cfg.vis_end - cfg.vis_start) * (x - x0) / (x1 - x0); };
  auto phase = [&](double x) { return analytic_qgi_phase(timings_of(cfg, x), cfg.g_eff, sp); };
  const double mean = cfg.mean;
  const auto scan = synthesize_scan(phase, vis, [mean](double) { return mean; },
                                    uniform_grid(x0, x1, cfg.grid_step), nm);
  for (const auto& w : scan.warnings) res.warnings.push_back(w);
  auto os = out.open("scan.csv");
  write_scan_csv(os, scan);
  PhaseFit fit;
  bool have_fit = true;
  try {
    ExtractOptions opt;
    opt.envelope_order = cfg.envelope_order;
    opt.smoothing_window = cfg.smoothing_window;
    fit = extract_phase(scan, opt);
  } catch (const NumericalError& e) {
    have_fit = false;
    res.warnings.push_back(fmt::format("plot without fitted model: {}", e.what()));
  }
  auto svg = out.open_svg("fringes.svg");
  write_fringe_svg(svg, scan, have_fit ? &fit : nullptr);
}

void cmd_analyze(const RunConfig& cfg, Output& out, PipelineResult&) {
  if (cfg.scan_csv.empty()) throw ConfigError("analyze needs analyze.scan_csv or --scan");
  std::ifstream is(cfg.scan_csv);
  if (!is) throw ConfigError(fmt::format("cannot read {}", cfg.scan_csv));
  auto scan = read_scan_csv(is);
  scan.noise.seed = cfg.seed;
  ExtractOptions opt;
  opt.envelope_order = cfg.envelope_order;
  opt.smoothing_window = cfg.smoothing_window;
  const auto fit = extract_phase(scan, opt);
  auto txt = out.open("phase_fit.txt");
  write_phase_fit(txt, fit, scan);
  auto os = out.open("phase_fit.csv");
  os << "two_T_us,phase_rad,rate_rad_per_s,phase_sigma_rad,hilbert_rad,residual_rad,in_fit\n";
  std::vector<double> xs, ps, ss;
  for (size_t i = 0; i < scan.rows.size(); ++i) {
    const double x = scan.rows[i].two_T;
    const bool in = x >= fit.window_lo && x <= fit.window_hi;
    os << fmt::format("{:.3f},{:.9f},{:.6f},{:.6e},{:.9f},{:.6e},{}\n", x * 1e6, fit.phase(x), fit.rate(x),
                      fit.phase_sigma[i], fit.hilbert_phase[i], fit.residuals[i], in ? 1 : 0);
    if (in) {
      xs.push_back(x);
      ps.push_back(fit.phase(x));
      ss.push_back(fit.phase_sigma[i]);
    }
  }
  auto std_poly = out.open("phase_sigma_poly.csv");
  std_poly << "c0_rad,c1_rad_per_s,c2_rad_per_s2,c3_rad_per_s3\n";
  const auto sp = fit_std_polynomial(xs, ss);
  std_poly << fmt::format("{:.9e},{:.9e},{:.9e},{:.9e}\n", sp[0], sp[1], sp[2], sp[3]);
  auto svg = out.open_svg("fit.svg");
  write_fringe_svg(svg, scan, &fit);
  const auto species = species_of(cfg);
  auto psvg = out.open_svg("phase.svg");
  write_phase_svg(psvg, xs, ps, ss,
                  [&](double x) { return analytic_qgi_phase(timings_of(cfg, x), cfg.g_eff, species); },
                  "closed form");
}

void cmd_sweep(const RunConfig& cfg, Output& out, PipelineResult&) {
  const auto sp = species_of(cfg);
  const ChipField field(geometry_of(cfg), bias_of(cfg));
  const double I_hold =
      cfg.I_hold > 0 ? cfg.I_hold
                     : calibrate_levitation(field, sp, cfg.z_hold, cfg.calib_lo, cfg.calib_hi, cfg.g).I_hold;
  const double eps = cfg.perturb_kick_ppm * 1e-6;
  const int n = static_cast<int>(cfg.two_T.size());
  // three runs per point: nominal, then kick current scaled by 1 -+ eps
  const auto runs = parallel_map<OverlapResult>(3 * n, cfg.threads, [&](int j) {
    auto po = paper_options(cfg, cfg.two_T[j / 3]);
    po.I_hold = I_hold;
    po.kick_perturbation = (j % 3 == 0) ? 0.0 : (j % 3 == 1 ? -eps : eps);
    return run_paper_wavepackets(po, sp).overlap;
  });
  auto total = [](const OverlapResult& r) { return r.path_phase + r.shape_phase; };
  // perturbed phases are defined mod 2 pi; take the branch nearest the nominal run
  auto near = [&](int i, int k) {
    const double t0 = total(runs[3 * i]);
    return t0 + std::remainder(total(runs[3 * i + k]) - t0, 2 * M_PI);
  };
  // per-point files first, then the merged table in 2T order
  const std::string header =
      "two_T_us,analytic_rad,simulated_rad,band_low_rad,band_high_rad,visibility,shape_phase_rad";
  std::vector<std::string> lines(n);
  for (int i = 0; i < n; ++i) {
    const auto& nom = runs[3 * i];
    const double a = near(i, 1), b = near(i, 2);
    lines[i] = fmt::format("{:.3f},{:.9f},{:.9f},{:.9f},{:.9f},{:.6f},{:.9f}", cfg.two_T[i] * 1e6,
                           analytic_qgi_phase(timings_of(cfg, cfg.two_T[i]), cfg.g, sp), total(nom),
                           std::min(a, b), std::max(a, b), nom.visibility, nom.shape_phase);
    auto pf = out.open(fmt::format("sweep_points/point_{}.csv", us_label(cfg.two_T[i])));
    pf << header << "\n" << lines[i] << "\n";
  }
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return cfg.two_T[a] < cfg.two_T[b]; });
  auto os = out.open("sweep.csv");
  os << header << "\n";
  std::vector<double> xs, ps, ss;
  for (int i : order) {
    os << lines[i] << "\n";
    xs.push_back(cfg.two_T[i]);
    ps.push_back(total(runs[3 * i]));
    ss.push_back(0.5 * std::abs(near(i, 2) - near(i, 1)));
  }
  auto svg = out.open_svg("sweep.svg");
  write_phase_svg(svg, xs, ps, ss,
                  [&](double x) { return analytic_qgi_phase(timings_of(cfg, x), cfg.g, sp); },
                  "closed form");
}

}  // namespace

void RunConfig::validate() const {
  species_of(*this);
  geometry_of(*this);
  if (two_T.empty()) throw ConfigError("timings: no 2T values");
  for (double x : two_T)
    if (!(x > 0)) throw ConfigError("timings: 2T must be positive");
  if (!(T_kick > 0) || !(T_d >= 0)) throw ConfigError("timings: t_kick_us > 0 and t_d_us >= 0 required");
  for (double x : two_T) timings_of(*this, x);
  if (!(bias_G > 0)) throw ConfigError("bias.b0_g must be positive");
  if (I_hold < 0 || I_idle < 0 || !(max_current > 0)) throw ConfigError("currents must be non-negative");
  if (!(calib_hi > calib_lo && calib_lo >= 0)) throw ConfigError("currents: calib_hi_ma must exceed calib_lo_ma");
  if (!(g > 0) || !(g_eff > 0)) throw ConfigError("physics: g must be positive");
  if (amp_sigma < 0 || phase_sigma < 0 || phase_sigma_rel < 0) throw ConfigError("noise widths must be >= 0");
  if (vis_start < 0 || vis_start > 1 || vis_end < 0 || vis_end > 1) throw ConfigError("fringe: visibility outside [0, 1]");
  if (mean < 0 || mean > 1) throw ConfigError("fringe: mean outside [0, 1]");
  if (!(grid_stop > grid_start && grid_step > 0)) throw ConfigError("fringe: empty grid");
  if (envelope_order < 1 || envelope_order > 15) throw ConfigError("fringe: envelope_order in [1, 15]");
  if (smoothing_window < 1) throw ConfigError("fringe: smoothing_window >= 1");
  if (threads < 1) throw ConfigError("run: threads >= 1");
  if (perturb_kick_ppm < 0) throw ConfigError("run: perturb_kick_ppm >= 0");
  if (!(dt > 0 && dt <= 5e-6)) throw ConfigError("run: dt_us in (0, 5]");
}

std::string RunConfig::canonical() const {
  std::string s;
  auto put = [&](const char* k, const std::string& v) { s += fmt::format("{}={}\n", k, v); };
  auto num = [](double v) { return fmt::format("{:.17g}", v); };
  std::string ts;
  for (double x : two_T) ts += (ts.empty() ? "" : ",") + num(x);
  put("species.name", species);
  put("geometry.preset", geometry);
  put("bias.b0_g", num(bias_G));
  put("bias.ambient_gradient_g_per_m", num(ambient_gradient_G_per_m));
  put("timings.two_t_s", ts);
  put("timings.t_kick_s", num(T_kick));
  put("timings.t_d_s", num(T_d));
  put("currents.i_hold_a", num(I_hold));
  put("currents.i_idle_a", num(I_idle));
  put("currents.max_current_a", num(max_current));
  put("currents.z_hold_m", num(z_hold));
  put("currents.calib_lo_a", num(calib_lo));
  put("currents.calib_hi_a", num(calib_hi));
  put("physics.g_m_s2", num(g));
  put("physics.g_eff_m_s2", num(g_eff));
  put("noise.amp_sigma", num(amp_sigma));
  put("noise.phase_sigma_rad", num(phase_sigma));
  put("noise.phase_sigma_rel", num(phase_sigma_rel));
  put("fringe.vis_start", num(vis_start));
  put("fringe.vis_end", num(vis_end));
  put("fringe.mean", num(mean));
  put("fringe.grid_s", num(grid_start) + ":" + num(grid_step) + ":" + num(grid_stop));
  put("fringe.envelope_order", std::to_string(envelope_order));
  put("fringe.smoothing_window", std::to_string(smoothing_window));
  put("analyze.scan_csv", scan_csv);
  put("run.seed", std::to_string(seed));
  put("run.perturb_kick_ppm", num(perturb_kick_ppm));
  put("run.dt_s", num(dt));
  return s;
}

RunConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("config line {}: {}", e.line(), e.message()));
  }
  RunConfig c;
  const auto& allowed = allowed_keys();
  std::map<std::string, std::string> kv;
  for (const auto& [section, body] : tree) {
    const auto it = allowed.find(section);
    if (it == allowed.end()) {
      if (body.empty()) throw ConfigError(fmt::format("key '{}' outside any section", section));
      throw ConfigError(fmt::format("unknown section [{}]", section));
    }
    for (const auto& [key, val] : body) {
      if (!it->second.count(key)) throw ConfigError(fmt::format("unknown key {}.{}", section, key));
      kv[section + "." + key] = trim(val.data());
    }
  }
  auto has = [&](const char* k) { return kv.count(k) > 0; };
  auto d = [&](const char* k, double& dst, double scale = 1.0) {
    if (has(k)) dst = to_double(k, kv[k]) * scale;
  };
  auto i = [&](const char* k, int& dst) {
    if (has(k)) dst = static_cast<int>(to_int(k, kv[k]));
  };
  if (has("species.name")) c.species = kv["species.name"];
  if (has("geometry.preset")) c.geometry = kv["geometry.preset"];
  d("bias.b0_g", c.bias_G);
  d("bias.ambient_gradient_g_per_m", c.ambient_gradient_G_per_m);
  const bool list = has("timings.two_t_us");
  const bool range = has("timings.two_t_start_us") || has("timings.two_t_stop_us") || has("timings.two_t_step_us");
  if (list && range) throw ConfigError("timings: give either two_t_us or a start/stop/step range");
  if (list) {
    c.two_T.clear();
    std::stringstream ss(kv["timings.two_t_us"]);
    std::string item;
    while (std::getline(ss, item, ',')) c.two_T.push_back(to_double("timings.two_t_us", trim(item)) * 1e-6);
  }
  if (range) {
    for (const char* k : {"timings.two_t_start_us", "timings.two_t_stop_us", "timings.two_t_step_us"})
      if (!has(k)) throw ConfigError(fmt::format("timings: range needs {}", k));
    const double a = to_double("timings.two_t_start_us", kv["timings.two_t_start_us"]);
    const double b = to_double("timings.two_t_stop_us", kv["timings.two_t_stop_us"]);
    const double h = to_double("timings.two_t_step_us", kv["timings.two_t_step_us"]);
    c.two_T.clear();
    for (double x : uniform_grid(a, b, h)) c.two_T.push_back(x * 1e-6);
  }
  d("timings.t_kick_us", c.T_kick, 1e-6);
  d("timings.t_d_us", c.T_d, 1e-6);
  d("currents.i_hold_ma", c.I_hold, 1e-3);
  d("currents.i_idle_ma", c.I_idle, 1e-3);
  d("currents.max_current_a", c.max_current);
  d("currents.z_hold_um", c.z_hold, 1e-6);
  d("currents.calib_lo_ma", c.calib_lo, 1e-3);
  d("currents.calib_hi_ma", c.calib_hi, 1e-3);
  d("physics.g_m_s2", c.g);
  d("physics.g_eff_m_s2", c.g_eff);
  d("noise.amp_sigma", c.amp_sigma);
  d("noise.phase_sigma_rad", c.phase_sigma);
  d("noise.phase_sigma_rel", c.phase_sigma_rel);
  d("fringe.vis_start", c.vis_start);
  d("fringe.vis_end", c.vis_end);
  d("fringe.mean", c.mean);
  d("fringe.grid_start_us", c.grid_start, 1e-6);
  d("fringe.grid_stop_us", c.grid_stop, 1e-6);
  d("fringe.grid_step_us", c.grid_step, 1e-6);
  i("fringe.envelope_order", c.envelope_order);
  i("fringe.smoothing_window", c.smoothing_window);
  if (has("analyze.scan_csv")) c.scan_csv = kv["analyze.scan_csv"];
  if (has("run.seed")) {
    const long long s = to_int("run.seed", kv["run.seed"]);
    if (s < 0) throw ConfigError("run.seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(s);
  }
  if (has("run.out_dir")) c.out_dir = kv["run.out_dir"];
  i("run.threads", c.threads);
  d("run.perturb_kick_ppm", c.perturb_kick_ppm);
  d("run.dt_us", c.dt, 1e-6);
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(fmt::format("cannot read config {}", path));
  return parse_config(is);
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : cfg.canonical()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

Command parse_command(const std::string& name) {
  static const std::map<std::string, Command> m = {
      {"simulate", Command::simulate}, {"calibrate", Command::calibrate}, {"phases", Command::phases},
      {"fringes", Command::fringes},   {"analyze", Command::analyze},     {"sweep", Command::sweep}};
  const auto it = m.find(name);
  if (it == m.end()) throw ConfigError(fmt::format("unknown command '{}'", name));
  return it->second;
}

const char* to_string(Command c) {
  switch (c) {
    case Command::simulate: return "simulate";
    case Command::calibrate: return "calibrate";
    case Command::phases: return "phases";
    case Command::fringes: return "fringes";
    case Command::analyze: return "analyze";
    case Command::sweep: return "sweep";
  }
  return "?";
}

std::string provenance_line(const RunConfig& cfg, Command command) {
  return fmt::format("# qgi command={} config_hash={} seed={}", to_string(command), config_hash(cfg), cfg.seed);
}

PipelineResult run_pipeline(const RunConfig& cfg, Command command) {
  cfg.validate();
  PipelineResult res;
  Output out(cfg, command, res);
  switch (command) {
    case Command::calibrate: cmd_calibrate(cfg, out, res); break;
    case Command::phases: cmd_phases(cfg, out, res); break;
    case Command::simulate: cmd_simulate(cfg, out, res); break;
    case Command::fringes: cmd_fringes(cfg, out, res); break;
    case Command::analyze: cmd_analyze(cfg, out, res); break;
    case Command::sweep: cmd_sweep(cfg, out, res); break;
  }
  return res;
}

int exit_code_for(const std::exception& e) {
  return dynamic_cast<const ConfigError*>(&e) ? 2 : 3;
}

std::string error_record(const std::exception& e, const std::string& command) {
  nlohmann::json j;
  j["status"] = "error";
  j["command"] = command;
  const auto* qe = dynamic_cast<const Error*>(&e);
  j["kind"] = qe ? qe->kind() : std::string("internal");
  j["message"] = e.what();
  j["exit_code"] = exit_code_for(e);
  return j.dump();
}

}  // namespace qgi

#include "qgi/pulses.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>

#include "qgi/rk4.hpp"

namespace qgi {

void CurrentProgram::validate() const {
  if (I_idle < 0) throw ConfigError("idle current must be non-negative");
  for (size_t k = 0; k < pulses.size(); ++k) {
    const auto& p = pulses[k];
    if (p.tau < 0 || p.w < 0) throw ConfigError("pulse ramp and flat-top durations must be >= 0");
    if (p.I_max < 0) throw ConfigError("pulse current must be non-negative");
    if (k > 0 && p.t0 < pulses[k - 1].end() - 1e-15)
      throw ConfigError(fmt::format("pulse {} overlaps its predecessor", k));
  }
}

double CurrentProgram::current_at(double t) const {
  for (const auto& p : pulses) {
    if (t < p.t0 || t > p.end()) continue;
    const double dI = p.I_max - I_idle;
    const double s = t - p.t0;
    if (s < p.tau) return I_idle + 0.5 * dI * (1 - std::cos(M_PI * s / p.tau));
    if (s <= p.tau + p.w) return p.I_max;
    const double u = s - p.tau - p.w;
    return I_idle + 0.5 * dI * (1 + std::cos(M_PI * u / p.tau));
  }
  return I_idle;
}

double CurrentProgram::slope_at(double t) const {
  for (const auto& p : pulses) {
    if (t < p.t0 || t > p.end()) continue;
    const double dI = p.I_max - I_idle;
    const double s = t - p.t0;
    if (s < p.tau) return 0.5 * dI * M_PI / p.tau * std::sin(M_PI * s / p.tau);
    if (s <= p.tau + p.w) return 0.0;
    const double u = s - p.tau - p.w;
    return -0.5 * dI * M_PI / p.tau * std::sin(M_PI * u / p.tau);
  }
  return 0.0;
}

double CurrentProgram::start() const { return pulses.empty() ? 0.0 : pulses.front().t0; }
double CurrentProgram::end() const { return pulses.empty() ? 0.0 : pulses.back().end(); }

double current_at(const CurrentProgram& program, double t) { return program.current_at(t); }

SpinState QgiSchedule::state_at(Arm arm, double t) const {
  const auto& tl = timeline(arm);
  if (tl.empty()) throw ConfigError("schedule has no spin timeline");
  SpinState s = tl.front().state;
  for (const auto& e : tl) {
    if (e.t <= t) s = e.state;
    else break;
  }
  return s;
}

QgiSchedule QgiSchedule::perturb_kick(double eps) const {
  QgiSchedule out = *this;
  out.I_kick = I_kick * (1.0 + eps);
  for (size_t k : {size_t{0}, out.program.pulses.size() - 1}) out.program.pulses[k].I_max = out.I_kick;
  return out;
}

double kick_current(const Timings& t, double I_hold, double I_idle) {
  const double w_kick = t.T_kick - 2.0 * t.tau_kick;
  return (I_hold - I_idle) * t.T_h() / (2.0 * (t.tau_kick + w_kick)) + I_idle;
}

QgiSchedule build_schedule(const Timings& timings, double I_hold, double I_idle,
                           const SourceLimits& limits, const PulseGaps& gaps) {
  timings.validate();
  if (!(timings.T_h() > 0)) throw ConfigError("holding time T_h must be positive");
  if (!(I_hold > I_idle && I_idle >= 0)) throw ConfigError("need I_hold > I_idle >= 0");
  const double w_kick = timings.T_kick - 2.0 * timings.tau_kick;
  if (w_kick < -1e-15 || !(timings.tau_kick > 0))
    throw ConfigError("kick pulse needs tau_kick > 0 and T_kick >= 2 tau_kick");
  if (timings.raw_delay() < 0) throw ConfigError("T_d shorter than half the hold ramp");
  if (timings.T_h() < timings.tau_hold)
    throw ConfigError("holding time shorter than its ramp");

  QgiSchedule s;
  s.timings = timings;
  s.I_hold = I_hold;
  s.I_idle = I_idle;
  s.I_kick = kick_current(timings, I_hold, I_idle);
  if (s.I_kick > limits.max_current) {
    const auto msg = fmt::format("kick current {:.1f} mA exceeds source limit {:.1f} mA",
                                 s.I_kick * 1e3, limits.max_current * 1e3);
    if (limits.enforce_current) throw ConfigError(msg);
    s.warnings.push_back(msg);
  }

  const double Tk = timings.T_kick;
  const double hold_start = Tk + timings.raw_delay();
  const CosinePulse kick1{0.0, timings.tau_kick, std::max(w_kick, 0.0), s.I_kick};
  const CosinePulse hold{hold_start, timings.tau_hold, timings.T_h() - timings.tau_hold, I_hold};
  const CosinePulse kick2{hold.end() + timings.raw_delay(), timings.tau_kick,
                          std::max(w_kick, 0.0), s.I_kick};
  s.program.I_idle = I_idle;
  s.program.pulses = {kick1, hold, kick2};
  s.program.validate();

  for (const auto& p : s.program.pulses) {
    const double slew = M_PI * (p.I_max - I_idle) / (2.0 * p.tau);
    if (slew > limits.max_slew)
      s.warnings.push_back(fmt::format("pulse slew {:.1f} mA/us exceeds {:.1f} mA/us",
                                       slew * 1e-3, limits.max_slew * 1e-3));
  }
  if (std::abs(gaps.raw_delay() - timings.raw_delay()) > 1e-12)
    s.warnings.push_back(fmt::format("pulse gaps sum to {:.1f} us but T_d - tau_hold/2 = {:.1f} us",
                                     gaps.raw_delay() * 1e6, timings.raw_delay() * 1e6));

  s.t_pi1 = Tk + gaps.gradient_to_pi + 0.5 * gaps.pi_duration;
  s.t_pi2 = kick2.t0 - gaps.gradient_to_pi - 0.5 * gaps.pi_duration;
  const double t0 = s.t_open();
  s.ballistic = {{t0, kState1}, {s.t_pi1, kState0}, {s.t_pi2, kState1}};
  s.reference = {{t0, kState0}, {s.t_pi1, kState1}, {s.t_pi2, kState0}};
  return s;
}

LevitationResult calibrate_levitation(const FieldModel& field, const Species& species,
                                      double z_atom, double I_lo, double I_hi, double g,
                                      const Constants& c) {
  const Vec3 r(0, 0, z_atom);
  int evals = 0;
  auto az = [&](double I) {
    ++evals;
    return acceleration_of(kState1, r, I, field, species, g, c).z();
  };
  const double a_lo = az(I_lo), a_hi = az(I_hi);
  if (!(a_lo * a_hi < 0))
    throw NumericalError(fmt::format("no sign change of a_z in [{:.3g}, {:.3g}] A (a = {:.3g}, {:.3g})",
                                     I_lo, I_hi, a_lo, a_hi),
                         "calibration");
  std::uintmax_t max_iter = 200;
  auto tol = [](double a, double b) { return std::abs(a - b) <= 1e-15 * std::max(1.0, std::abs(a)); };
  const auto [lo, hi] = boost::math::tools::toms748_solve(az, I_lo, I_hi, a_lo, a_hi, tol, max_iter);
  const double I = 0.5 * (lo + hi);
  LevitationResult res{I, az(I), evals};
  if (std::abs(res.residual_a) > 1e-4)
    throw NumericalError(fmt::format("levitation residual {:.3g} m/s^2 above 1e-4", res.residual_a),
                         "calibration");
  return res;
}

ParabolaCalibration calibrate_levitation_parabola(const FieldModel& field, const Species& species,
                                                  double z_atom, const std::vector<double>& currents,
                                                  double duration, double g, const Constants& c,
                                                  double dt) {
  if (currents.size() < 2) throw ConfigError("parabola calibration needs at least two currents");
  if (!(duration > 0 && dt > 0)) throw ConfigError("duration and step must be positive");
  ParabolaCalibration out;
  out.currents = currents;
  const int n = static_cast<int>(std::ceil(duration / dt));
  for (double I : currents) {
    auto f = [&](double, const Eigen::Vector2d& y) {
      const double a = acceleration_of(kState1, Vec3(0, 0, y(0)), I, field, species, g, c).z();
      return Eigen::Vector2d(y(1), a);
    };
    Eigen::MatrixXd A(n + 1, 3);
    Eigen::VectorXd z(n + 1);
    Eigen::Vector2d y(z_atom, 0.0);
    for (int k = 0; k <= n; ++k) {
      const double t = k * dt;
      A.row(k) << 1.0, t, 0.5 * t * t;
      z(k) = y(0) - z_atom;
      if (k < n) y = rk4_step(f, t, y, dt);
    }
    out.fitted_a.push_back(A.colPivHouseholderQr().solve(z)(2));
  }
  Eigen::MatrixXd L(currents.size(), 2);
  Eigen::VectorXd a(currents.size());
  for (size_t k = 0; k < currents.size(); ++k) {
    L.row(k) << 1.0, currents[k];
    a(k) = out.fitted_a[k];
  }
  const Eigen::Vector2d line = L.colPivHouseholderQr().solve(a);
  out.intercept = line(0);
  out.slope = line(1);
  if (out.slope == 0) throw NumericalError("acceleration independent of current", "calibration");
  out.I_hold = -out.intercept / out.slope;
  return out;
}

std::vector<CurrentSample> sample_program(const CurrentProgram& program, double t0, double t1,
                                          double dt) {
  if (!(dt > 0) || t1 < t0) throw ConfigError("invalid sampling interval");
  std::vector<CurrentSample> out;
  const auto n = static_cast<long>(std::floor((t1 - t0) / dt + 1e-9));
  out.reserve(n + 1);
  for (long k = 0; k <= n; ++k) {
    const double t = t0 + k * dt;
    out.push_back({t, program.current_at(t)});
  }
  return out;
}

}  // namespace qgi

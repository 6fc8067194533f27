#pragma once

#include <string>
#include <vector>

#include "qgi/core.hpp"
#include "qgi/fieldmap.hpp"

namespace qgi {

/// Cosine ramp of length tau up to I_max, flat top of length w, cosine ramp
/// down. Total duration 2 tau + w.
struct CosinePulse {
  double t0 = 0.0;
  double tau = 0.0;
  double w = 0.0;
  double I_max = 0.0;

  double end() const { return t0 + 2.0 * tau + w; }
  double center() const { return t0 + tau + 0.5 * w; }
  /// Integral of (I - I_idle) over the pulse.
  double area(double I_idle) const { return (I_max - I_idle) * (tau + w); }
};

struct CurrentProgram {
  std::vector<CosinePulse> pulses;
  double I_idle = 0.0;

  void validate() const;
  double current_at(double t) const;
  double slope_at(double t) const;
  double start() const;
  double end() const;
};

double current_at(const CurrentProgram& program, double t);

struct SpinEvent {
  double t = 0.0;
  SpinState state;
};

/// Source envelope. The current limit is a hard error when `enforce_current`
/// is set; the slew limit only produces warnings.
struct SourceLimits {
  double max_current = 1.0;           // A
  double max_slew = 30e-3 / 1e-6;     // A/s (30 mA/us)
  bool enforce_current = true;
};

/// Gradient sequence and spin timeline of one interferometer run. Time zero is
/// the start of the first kick. The π/2 splitting and the final π/2 are placed
/// symmetrically around the two π flips (spin-echo window), which may start
/// before the first kick.
struct QgiSchedule {
  Timings timings;
  double I_hold = 0.0;
  double I_kick = 0.0;
  double I_idle = 0.0;
  CurrentProgram program;
  double t_pi1 = 0.0;
  double t_pi2 = 0.0;
  std::vector<SpinEvent> ballistic;  // (time, state entered at that time)
  std::vector<SpinEvent> reference;
  std::vector<std::string> warnings;

  double tau_dd() const { return 0.5 * (t_pi2 - t_pi1); }
  double t_open() const { return t_pi1 - tau_dd(); }
  double t_close() const { return t_pi2 + tau_dd(); }
  double midpoint() const { return 0.5 * (program.start() + program.end()); }
  const std::vector<SpinEvent>& timeline(Arm arm) const {
    return arm == Arm::ballistic ? ballistic : reference;
  }
  SpinState state_at(Arm arm, double t) const;
  double current_at(double t) const { return program.current_at(t); }

  /// Copy with I_kick scaled by (1 + eps); used for uncertainty bands.
  QgiSchedule perturb_kick(double eps) const;
};

/// Gap between the end of a kick and the π-pulse start, π duration, and gap
/// from π end to hold start.
struct PulseGaps {
  double gradient_to_pi = 50e-6;
  double pi_duration = 16e-6;
  double pi_to_hold = 5e-6;
  double raw_delay() const { return gradient_to_pi + pi_duration + pi_to_hold; }
};

double kick_current(const Timings& timings, double I_hold, double I_idle);

QgiSchedule build_schedule(const Timings& timings, double I_hold, double I_idle,
                           const SourceLimits& limits = {}, const PulseGaps& gaps = {});

struct LevitationResult {
  double I_hold = 0.0;
  double residual_a = 0.0;  // m/s^2
  int iterations = 0;
};

/// Current at which the net z-acceleration of |1> vanishes at z_atom (y = 0).
LevitationResult calibrate_levitation(const FieldModel& field, const Species& species,
                                      double z_atom, double I_lo, double I_hi, double g,
                                      const Constants& c = {});

struct ParabolaCalibration {
  std::vector<double> currents;
  std::vector<double> fitted_a;  // m/s^2, one per current
  double slope = 0.0;            // da/dI
  double intercept = 0.0;
  double I_hold = 0.0;           // zero crossing of the linear fit
};

/// Held trajectories at fixed currents, z(t) parabola fits, a(I) line fit and
/// its zero crossing.
ParabolaCalibration calibrate_levitation_parabola(const FieldModel& field, const Species& species,
                                                  double z_atom, const std::vector<double>& currents,
                                                  double duration, double g,
                                                  const Constants& c = {}, double dt = 0.5e-6);

struct CurrentSample {
  double t, I;
};
std::vector<CurrentSample> sample_program(const CurrentProgram& program, double t0, double t1,
                                          double dt);

}  // namespace qgi

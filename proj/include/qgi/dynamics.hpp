#pragma once

#include <array>
#include <functional>
#include <vector>

#include "qgi/core.hpp"
#include "qgi/fieldmap.hpp"
#include "qgi/pulses.hpp"

namespace qgi {

struct TrajectorySample {
  double t = 0.0;
  double z = 0.0;
  double v = 0.0;
  double a = 0.0;
  SpinState state;
};

/// Constant-acceleration piece of a trajectory, valid on [t0, t1].
struct Segment {
  double t0 = 0.0, t1 = 0.0;
  double z0 = 0.0, v0 = 0.0, a = 0.0;

  double duration() const { return t1 - t0; }
  double z(double t) const { const double s = t - t0; return z0 + v0 * s + 0.5 * a * s * s; }
  double v(double t) const { return v0 + a * (t - t0); }
};

struct Trajectory {
  Arm arm = Arm::ballistic;
  std::vector<TrajectorySample> samples;
  /// Exact piecewise-parabolic form when the trajectory is analytic.
  std::vector<Segment> segments;

  double t_begin() const { return samples.front().t; }
  double t_end() const { return samples.back().t; }
  /// Cubic Hermite interpolation on the samples (exact on segments if present).
  double z_at(double t) const;
  double v_at(double t) const;
  void validate() const;
};

struct ClosureMetrics {
  double dz_final = 0.0;
  double dv_final = 0.0;
  double max_split = 0.0;
};

struct InitialCondition {
  double t = 0.0;
  double z = 0.0;
  double v = 0.0;
};

/// z(0), v(0) at the start of the first kick such that an arm under -g for
/// T_kick + T_d arrives at rest at z_hold.
InitialCondition paper_initial_condition(const Timings& timings, double g, double z_hold = 0.0);

/// Free-fall back-extrapolation of an initial condition to time t.
InitialCondition ballistic_shift(const InitialCondition& ic, double t, double g);

struct ComOptions {
  double dt = 0.5e-6;
  double g = 9.81;
  double y = 0.0;            // lateral position held fixed in the 1D model
  double a_limit = 1e4;      // m/s^2 sanity bound
};

/// RK4 integration of z'' = a_z(state(t), z, I(t)) over [ic.t, t_end]. The
/// grid is aligned to spin flips and pulse boundaries.
Trajectory integrate_com(const QgiSchedule& schedule, Arm arm, const FieldModel& field,
                         const Species& species, const InitialCondition& ic, double t_end,
                         const ComOptions& opt = {}, const Constants& c = {});

/// Sorted integration nodes on [t0, t1]: pulse edges, π flips and the arm's
/// spin events. Steps never straddle a node.
std::vector<double> schedule_nodes(const QgiSchedule& schedule, Arm arm, double t0, double t1);

/// Generic RK4 for a prescribed acceleration a(t, z); used for square-pulse
/// cross-checks. `breaks` are extra grid alignment points.
Trajectory integrate_prescribed(const std::function<double(double, double)>& accel,
                                const InitialCondition& ic, double t_end, double dt,
                                const std::vector<double>& breaks = {}, Arm arm = Arm::ballistic);

/// Per-segment accelerations for (T_kick, T_d, T_h, T_d, T_kick).
std::array<double, 5> arm_accelerations(Arm arm, const Timings& timings, double g, double a_hold);

/// Closed-form piecewise-parabolic trajectory starting at ic (time 0).
Trajectory analytic_trajectory(const Timings& timings, const std::array<double, 5>& accelerations,
                               const InitialCondition& ic, Arm arm, int samples_per_segment = 64);

ClosureMetrics closure_metrics(const Trajectory& a, const Trajectory& b, int n_grid = 4001);

/// Effective-duration estimate: 0.5 g T_eff^2 with T_eff = T + T_kick/2.
double methods_apex_height(double T_half, double T_kick, double g);
/// Reference-arm rise estimate: 0.5 g (T_kick + T_d)^2.
double methods_reference_rise(double T_kick, double T_d, double g);

}  // namespace qgi

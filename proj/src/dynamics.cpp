#include "qgi/dynamics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "qgi/rk4.hpp"

namespace qgi {

namespace {

size_t locate(const std::vector<TrajectorySample>& s, double t) {
  auto it = std::upper_bound(s.begin(), s.end(), t,
                             [](double x, const TrajectorySample& p) { return x < p.t; });
  size_t k = it == s.begin() ? 0 : static_cast<size_t>(it - s.begin()) - 1;
  return std::min(k, s.size() - 2);
}

const Segment* find_segment(const std::vector<Segment>& segs, double t) {
  for (const auto& sg : segs)
    if (t <= sg.t1) return &sg;
  return &segs.back();
}

std::vector<double> grid_breaks(double t0, double t1, std::vector<double> extra) {
  extra.push_back(t0);
  extra.push_back(t1);
  std::sort(extra.begin(), extra.end());
  std::vector<double> out;
  for (double x : extra) {
    if (x < t0 || x > t1) continue;
    if (out.empty() || x - out.back() > 1e-13) out.push_back(x);
  }
  if (out.back() < t1) out.back() = t1;
  return out;
}

}  // namespace

double Trajectory::z_at(double t) const {
  if (!segments.empty()) return find_segment(segments, t)->z(t);
  const size_t k = locate(samples, t);
  const auto& p = samples[k];
  const auto& q = samples[k + 1];
  const double h = q.t - p.t;
  const double s = (t - p.t) / h;
  const double h00 = (1 + 2 * s) * (1 - s) * (1 - s), h10 = s * (1 - s) * (1 - s);
  const double h01 = s * s * (3 - 2 * s), h11 = s * s * (s - 1);
  return h00 * p.z + h10 * h * p.v + h01 * q.z + h11 * h * q.v;
}

double Trajectory::v_at(double t) const {
  if (!segments.empty()) return find_segment(segments, t)->v(t);
  const size_t k = locate(samples, t);
  const auto& p = samples[k];
  const auto& q = samples[k + 1];
  const double h = q.t - p.t;
  const double s = (t - p.t) / h;
  const double d00 = 6 * s * s - 6 * s, d10 = 3 * s * s - 4 * s + 1;
  const double d01 = -6 * s * s + 6 * s, d11 = 3 * s * s - 2 * s;
  return (d00 * p.z + d01 * q.z) / h + d10 * p.v + d11 * q.v;
}

void Trajectory::validate() const {
  if (samples.size() < 2) throw NumericalError("trajectory needs at least two samples");
  for (size_t k = 1; k < samples.size(); ++k)
    if (!(samples[k].t > samples[k - 1].t))
      throw NumericalError("trajectory times must be strictly increasing");
}

InitialCondition paper_initial_condition(const Timings& t, double g, double z_hold) {
  const double s = t.T_kick + t.T_d;
  return {0.0, z_hold - 0.5 * g * s * s, g * s};
}

InitialCondition ballistic_shift(const InitialCondition& ic, double t, double g) {
  const double s = t - ic.t;
  return {t, ic.z + ic.v * s - 0.5 * g * s * s, ic.v - g * s};
}

Trajectory integrate_prescribed(const std::function<double(double, double)>& accel,
                                const InitialCondition& ic, double t_end, double dt,
                                const std::vector<double>& breaks, Arm arm) {
  if (!(dt > 0) || !(t_end > ic.t)) throw ConfigError("invalid integration interval");
  Trajectory tr;
  tr.arm = arm;
  const auto nodes = grid_breaks(ic.t, t_end, breaks);
  Eigen::Vector2d y(ic.z, ic.v);
  tr.samples.push_back({ic.t, y(0), y(1), 0.0, {}});
  for (size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double a = nodes[k], b = nodes[k + 1];
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / dt - 1e-9)));
    const double h = (b - a) / n;
    // keep evaluations inside the open interval so jumps sit on nodes
    auto f = [&](double t, const Eigen::Vector2d& s) {
      return Eigen::Vector2d(s(1), accel(std::clamp(t, a + 1e-15, b - 1e-15), s(0)));
    };
    tr.samples.back().a = accel(std::min(a + 1e-15, b), y(0));
    for (int j = 0; j < n; ++j) {
      const double t = a + j * h;
      y = rk4_step(f, t, y, h);
      const double tn = j + 1 == n ? b : a + (j + 1) * h;
      tr.samples.push_back({tn, y(0), y(1), accel(std::max(tn - 1e-15, a), y(0)), {}});
    }
  }
  return tr;
}

std::vector<double> schedule_nodes(const QgiSchedule& schedule, Arm arm, double t0, double t1) {
  std::vector<double> breaks{schedule.t_pi1, schedule.t_pi2};
  for (const auto& p : schedule.program.pulses)
    for (double x : {p.t0, p.t0 + p.tau, p.t0 + p.tau + p.w, p.end()}) breaks.push_back(x);
  for (const auto& e : schedule.timeline(arm)) breaks.push_back(e.t);
  return grid_breaks(t0, t1, breaks);
}

Trajectory integrate_com(const QgiSchedule& schedule, Arm arm, const FieldModel& field,
                         const Species& species, const InitialCondition& ic, double t_end,
                         const ComOptions& opt, const Constants& c) {
  if (!(opt.dt > 0) || !(t_end > ic.t)) throw ConfigError("invalid integration interval");
  const auto nodes = schedule_nodes(schedule, arm, ic.t, t_end);

  Trajectory tr;
  tr.arm = arm;
  auto accel = [&](const SpinState& st, double t, double z) {
    const double a =
        acceleration_of(st, Vec3(0, opt.y, z), schedule.current_at(t), field, species, opt.g, c).z();
    if (!std::isfinite(a) || std::abs(a) > opt.a_limit)
      throw NumericalError(fmt::format("acceleration {:.3g} m/s^2 at t = {:.6g} s, z = {:.4g} m "
                                       "exceeds sanity bound",
                                       a, t, z),
                           "step_rejected");
    return a;
  };

  Eigen::Vector2d y(ic.z, ic.v);
  tr.samples.push_back({ic.t, y(0), y(1), 0.0, schedule.state_at(arm, ic.t)});
  for (size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double a = nodes[k], b = nodes[k + 1];
    const SpinState st = schedule.state_at(arm, 0.5 * (a + b));
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / opt.dt - 1e-9)));
    const double h = (b - a) / n;
    auto f = [&](double t, const Eigen::Vector2d& s) {
      return Eigen::Vector2d(s(1), accel(st, t, s(0)));
    };
    tr.samples.back().a = accel(st, a, y(0));
    tr.samples.back().state = st;
    for (int j = 0; j < n; ++j) {
      y = rk4_step(f, a + j * h, y, h);
      const double tn = j + 1 == n ? b : a + (j + 1) * h;
      tr.samples.push_back({tn, y(0), y(1), accel(st, tn, y(0)), st});
    }
  }
  return tr;
}

std::array<double, 5> arm_accelerations(Arm arm, const Timings& t, double g, double a_hold) {
  if (arm == Arm::reference) return {-g, -g, -g + a_hold, -g, -g};
  const double a_kick = t.T_kick > 0 ? a_hold * t.T_h() / (2.0 * t.T_kick) : 0.0;
  return {-g + a_kick, -g, -g, -g, -g + a_kick};
}

Trajectory analytic_trajectory(const Timings& timings, const std::array<double, 5>& acc,
                               const InitialCondition& ic, Arm arm, int samples_per_segment) {
  timings.validate();
  const std::array<double, 5> dur{timings.T_kick, timings.T_d, timings.T_h(), timings.T_d,
                                  timings.T_kick};
  Trajectory tr;
  tr.arm = arm;
  double t = ic.t, z = ic.z, v = ic.v;
  for (int k = 0; k < 5; ++k) {
    if (dur[k] <= 0) continue;
    Segment sg{t, t + dur[k], z, v, acc[k]};
    tr.segments.push_back(sg);
    t = sg.t1;
    z = sg.z(t);
    v = sg.v(t);
  }
  if (tr.segments.empty()) tr.segments.push_back({ic.t, ic.t, ic.z, ic.v, 0.0});
  // spin labels follow the ideal QGI sequence
  auto state_of = [&](int seg_index) {
    const bool kick = seg_index == 0 || seg_index == 4;
    const bool hold = seg_index == 2;
    if (arm == Arm::ballistic) return kick ? kState1 : kState0;
    return hold ? kState1 : kState0;
  };
  int seg_index = 0;
  size_t used = 0;
  for (int k = 0; k < 5; ++k) {
    if (dur[k] <= 0) continue;
    const auto& sg = tr.segments[used++];
    seg_index = k;
    const int n = std::max(1, samples_per_segment);
    for (int j = tr.samples.empty() ? 0 : 1; j <= n; ++j) {
      const double tt = sg.t0 + sg.duration() * j / n;
      tr.samples.push_back({tt, sg.z(tt), sg.v(tt), sg.a, state_of(seg_index)});
    }
  }
  if (tr.samples.empty()) tr.samples.push_back({ic.t, ic.z, ic.v, 0.0, state_of(0)});
  return tr;
}

ClosureMetrics closure_metrics(const Trajectory& a, const Trajectory& b, int n_grid) {
  const double t0 = std::max(a.t_begin(), b.t_begin());
  const double t1 = std::min(a.t_end(), b.t_end());
  if (!(t1 >= t0)) throw NumericalError("trajectories do not share a time range", "alignment");
  ClosureMetrics m;
  m.dz_final = a.z_at(t1) - b.z_at(t1);
  m.dv_final = a.v_at(t1) - b.v_at(t1);
  const int n = std::max(2, n_grid);
  for (int k = 0; k < n; ++k) {
    const double t = t0 + (t1 - t0) * k / (n - 1);
    m.max_split = std::max(m.max_split, std::abs(a.z_at(t) - b.z_at(t)));
  }
  return m;
}

double methods_apex_height(double T_half, double T_kick, double g) {
  const double Te = T_half + 0.5 * T_kick;
  return 0.5 * g * Te * Te;
}

double methods_reference_rise(double T_kick, double T_d, double g) {
  const double s = T_kick + T_d;
  return 0.5 * g * s * s;
}

}  // namespace qgi

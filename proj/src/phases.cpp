#include "qgi/phases.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>

namespace qgi {

const char* to_string(Frame f) { return f == Frame::newtonian ? "newtonian" : "einsteinian"; }

double gauge_phase(double z, double t, double a, double mass, double hbar) {
  return mass / hbar * (-a * a * t * t * t / 6.0 + a * z * t);
}

double gauge_phase(double z, double t, double a, const Species& species, const Constants& c) {
  return gauge_phase(z, t, a, species.mass_kg, c.hbar);
}

namespace {

struct Integrand {
  double kin, pot;
};

// Richardson-extrapolated composite Simpson on [a, b]; doubles the panel
// count until the estimate drops below tol.
template <typename F>
std::pair<Integrand, double> simpson(const F& f, double a, double b, double tol) {
  auto composite = [&](int n) {
    const double h = (b - a) / n;
    Integrand s{0, 0};
    for (int k = 0; k <= n; ++k) {
      const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
      const auto v = f(a + k * h);
      s.kin += w * v.kin;
      s.pot += w * v.pot;
    }
    return Integrand{s.kin * h / 3.0, s.pot * h / 3.0};
  };
  int n = 2;
  Integrand prev = composite(n);
  for (int it = 0; it < 20; ++it) {
    n *= 2;
    const Integrand cur = composite(n);
    const double err = (std::abs(cur.kin - prev.kin) + std::abs(cur.pot - prev.pot)) / 15.0;
    const Integrand ext{cur.kin + (cur.kin - prev.kin) / 15.0, cur.pot + (cur.pot - prev.pot) / 15.0};
    if (err < tol || it == 19) return {ext, err};
    prev = cur;
  }
  return {prev, 0.0};
}

}  // namespace

PhaseBreakdown action_phase(const Trajectory& traj, const ActionContext& ctx) {
  const double m = ctx.mass_pair.m_i > 0 ? ctx.mass_pair.m_i : Species::rubidium87().mass_kg;
  const double hb = ctx.hbar;
  const bool ein = ctx.frame == Frame::einsteinian;
  // shift into the chosen frame
  auto frame_z = [&](double t) {
    const double s = t - ctx.frame_t0;
    return ein ? ctx.frame_v0 * s - 0.5 * ctx.frame_g * s * s : 0.0;
  };
  auto frame_v = [&](double t) { return ein ? ctx.frame_v0 - ctx.frame_g * (t - ctx.frame_t0) : 0.0; };
  const double frame_a = ein ? -ctx.frame_g : 0.0;

  PhaseBreakdown out;
  out.arm = traj.arm;
  out.frame = ctx.frame;
  double err = 0.0;

  if (!traj.segments.empty()) {
    const double tol = ctx.tolerance / traj.segments.size();
    for (size_t k = 0; k < traj.segments.size(); ++k) {
      const auto& sg = traj.segments[k];
      if (sg.duration() <= 0) continue;
      auto f = [&](double t) {
        const double v = sg.v(t) - frame_v(t);
        const double z = sg.z(t) - frame_z(t);
        return Integrand{0.5 * m * v * v / hb, m * (sg.a - frame_a) * (z - ctx.z0_potential_zero) / hb};
      };
      const auto [val, e] = simpson(f, sg.t0, sg.t1, tol);
      out.kinetic += val.kin;
      out.potential += val.pot;
      err += e;
      // impulsive velocity changes between segments act as delta pulses
      if (k + 1 < traj.segments.size()) {
        const auto& nx = traj.segments[k + 1];
        const double dv = nx.v0 - sg.v(sg.t1);
        if (dv != 0.0) out.pulses += m * dv * (sg.z(sg.t1) - frame_z(sg.t1) - ctx.z0_potential_zero) / hb;
      }
    }
  } else {
    traj.validate();
    const auto& s = traj.samples;
    auto point = [&](size_t k) {
      const double v = s[k].v - frame_v(s[k].t);
      const double z = s[k].z - frame_z(s[k].t);
      return Integrand{0.5 * m * v * v / hb, m * (s[k].a - frame_a) * (z - ctx.z0_potential_zero) / hb};
    };
    double fine_k = 0, fine_p = 0, coarse_k = 0, coarse_p = 0;
    for (size_t k = 0; k + 1 < s.size(); ++k) {
      const double ta = s[k].t, tb = s[k + 1].t, h = tb - ta, tm = 0.5 * (ta + tb);
      const double v = traj.v_at(tm) - frame_v(tm);
      const double z = traj.z_at(tm) - frame_z(tm);
      const double am = 0.5 * (s[k].a + s[k + 1].a);
      const Integrand mid{0.5 * m * v * v / hb, m * (am - frame_a) * (z - ctx.z0_potential_zero) / hb};
      const auto pa = point(k), pb = point(k + 1);
      fine_k += h / 6.0 * (pa.kin + 4 * mid.kin + pb.kin);
      fine_p += h / 6.0 * (pa.pot + 4 * mid.pot + pb.pot);
      coarse_k += 0.5 * h * (pa.kin + pb.kin);
      coarse_p += 0.5 * h * (pa.pot + pb.pot);
    }
    out.kinetic = fine_k;
    out.potential = fine_p;
    // trapezoid vs Simpson gap bounds the remaining error from above
    err = (std::abs(fine_k - coarse_k) + std::abs(fine_p - coarse_p)) / 15.0;
    if (err > ctx.tolerance)
      out.warnings.push_back(fmt::format("action quadrature error estimate {:.2e} rad exceeds {:.1e}",
                                         err, ctx.tolerance));
  }
  out.total = out.kinetic + out.potential + out.pulses;
  out.error_estimate = err;
  return out;
}

double gauge_route_arm_phase(const Trajectory& traj, double mass, double hbar) {
  if (traj.segments.empty()) throw ConfigError("gauge route needs a piecewise-analytic trajectory");
  double phi = 0.0;
  for (const auto& sg : traj.segments) {
    if (sg.duration() <= 0) continue;
    if (std::abs(sg.a) < 1e-12) {
      // Galilean boost phase of uniform motion
      auto boost = [&](double t) { return mass / hbar * (sg.v0 * sg.z(t) - 0.5 * sg.v0 * sg.v0 * t); };
      phi += boost(sg.t1) - boost(sg.t0);
      continue;
    }
    const double t_rest = sg.t0 - sg.v0 / sg.a;  // zero-velocity instant of this parabola
    phi += gauge_phase(sg.z(sg.t1), sg.t1 - t_rest, sg.a, mass, hbar) -
           gauge_phase(sg.z(sg.t0), sg.t0 - t_rest, sg.a, mass, hbar);
  }
  return phi;
}

GalileanPhase galilean_transform_phase(double t, double v0, const MassPair& mp, double g,
                                       double hbar) {
  mp.validate();
  const double mi = mp.m_i, mg = mp.m_g;
  GalileanPhase p;
  p.chi0 = -1.0 / (2.0 * hbar * mi) *
           (mi * mi * v0 * v0 * t - mi * mg * v0 * g * t * t + mg * mg * g * g * t * t * t / 3.0);
  p.chi1 = (mi * v0 - mg * g * t) / hbar;
  return p;
}

double galilean_ballistic_phase(double T_half, const MassPair& mp, double g, double hbar) {
  const double v0 = mp.m_g * g * T_half / mp.m_i;
  return galilean_transform_phase(2.0 * T_half, v0, mp, g, hbar).chi0;
}

double galilean_route_arm_phase(const Trajectory& traj, const MassPair& mp, double hbar) {
  if (traj.segments.empty()) throw ConfigError("Galilean route needs a piecewise-analytic trajectory");
  mp.validate();
  double phi = 0.0;
  for (const auto& sg : traj.segments) {
    const double dt = sg.duration();
    if (dt <= 0) continue;
    // express the segment force as a gravitational one, F = -m_g g_s
    const double F = mp.m_i * sg.a;
    const double g_s = -F / mp.m_g;
    const auto p = galilean_transform_phase(dt, sg.v0, mp, g_s, hbar);
    const double u_end = sg.z(sg.t1) - sg.z0;
    phi += p.chi0 + p.chi1 * u_end + F * sg.z0 * dt / hbar;
  }
  return phi;
}

double analytic_qgi_phase(const Timings& t, double g, const Species& sp, const Constants& c) {
  const double T = t.T_half, Tk = t.T_kick, Td = t.T_d;
  const double pref = sp.mass_kg * g * g / (3.0 * c.hbar);
  return pref * (T * T * T + T * T * Tk + T * (Tk * Tk + Tk * Td) - Td * (Tk + Td) * (Tk + Td));
}

double gedanken_phase(double T_half, double g, const Species& sp, const Constants& c) {
  return sp.mass_kg * g * g / (3.0 * c.hbar) * T_half * T_half * T_half;
}

double analytic_qgi_phase_rate(const Timings& t, double g, const Species& sp, const Constants& c) {
  const double T = t.T_half, Tk = t.T_kick, Td = t.T_d;
  const double pref = sp.mass_kg * g * g / (3.0 * c.hbar);
  return 0.5 * pref * (3 * T * T + 2 * T * Tk + Tk * Tk + Tk * Td);
}

double printed_ballistic_phase(const Timings& t, double g, const Species& sp, const Constants& c) {
  const double T = t.T_half, Tk = t.T_kick, Td = t.T_d;
  const double pref = sp.mass_kg * g * g / (3.0 * c.hbar);
  return pref * (-T * T * T - T * T * Tk - T * Tk * Tk - T * Tk * Td + 2 * Tk * Tk * Tk +
                 7 * Tk * Tk * Td + 8 * Tk * Td * Td + 3 * Td * Td * Td);
}

double reference_arm_phase(double T_kick, double T_d, double g, const Species& sp,
                           const Constants& c) {
  const double s = T_kick + T_d;
  return 2.0 * sp.mass_kg * g * g / (3.0 * c.hbar) * s * s * s;
}

RoutePhases qgi_route_phases(const Timings& t, double g, const Species& sp, const Constants& c,
                             double z0) {
  const auto ic = paper_initial_condition(t, g);
  const auto bal = analytic_trajectory(t, arm_accelerations(Arm::ballistic, t, g, g), ic, Arm::ballistic);
  const auto ref = analytic_trajectory(t, arm_accelerations(Arm::reference, t, g, g), ic, Arm::reference);
  ActionContext ctx;
  ctx.z0_potential_zero = z0;
  ctx.mass_pair = MassPair::equal(sp.mass_kg);
  ctx.hbar = c.hbar;
  ctx.tolerance = 1e-9;
  const auto Sb = action_phase(bal, ctx);
  const auto Sr = action_phase(ref, ctx);
  RoutePhases r;
  r.analytic = analytic_qgi_phase(t, g, sp, c);
  r.action = Sr.total - Sb.total;
  r.action_error = Sr.error_estimate + Sb.error_estimate;
  r.gauge = gauge_route_arm_phase(ref, sp.mass_kg, c.hbar) - gauge_route_arm_phase(bal, sp.mass_kg, c.hbar);
  const auto mp = MassPair::equal(sp.mass_kg);
  r.galilean = galilean_route_arm_phase(ref, mp, c.hbar) - galilean_route_arm_phase(bal, mp, c.hbar);
  r.gedanken = gedanken_phase(t.T_half, g, sp, c);
  return r;
}

MismatchPhase mismatch_phase(double a, double g, double T, const Species& sp, const Constants& c) {
  const double k = sp.mass_kg * T * T * T / (3.0 * c.hbar);
  return {k * a * (a - 2.0 * g), k * (a - g) * (a - g)};
}

FrameLedger frame_ledger(double T, double v0, double g, double a, const Species& sp,
                         const LedgerOptions& opt, const Constants& c) {
  const double m = sp.mass_kg / c.hbar;
  if (opt.apply_levitation) a = -g;
  const double vN = opt.apply_closing ? g * T : v0;
  const double vE = opt.apply_closing ? a * T : v0;
  FrameLedger L;
  auto fill = [](PhaseBreakdown& p, Arm arm, Frame f, double kin, double pot) {
    p.arm = arm;
    p.frame = f;
    p.kinetic = kin;
    p.potential = pot;
    p.pulses = 0.0;  // delta kicks act at z = 0
    p.total = kin + pot;
  };
  fill(L.newtonian_reference, Arm::reference, Frame::newtonian, 0.0, 0.0);
  fill(L.newtonian_ballistic, Arm::ballistic, Frame::newtonian,
       m * (vN * vN * T - 2 * vN * g * T * T + 4.0 / 3.0 * g * g * T * T * T),
       m * (-2 * vN * g * T * T + 4.0 / 3.0 * g * g * T * T * T));
  fill(L.einsteinian_reference, Arm::reference, Frame::einsteinian,
       m * (vE * vE * T - 2 * vE * a * T * T + 4.0 / 3.0 * a * a * T * T * T),
       m * (-2 * vE * a * T * T + 4.0 / 3.0 * a * a * T * T * T));
  fill(L.einsteinian_ballistic, Arm::ballistic, Frame::einsteinian, 0.0, 0.0);
  L.newtonian_difference = L.newtonian_ballistic.total - L.newtonian_reference.total;
  L.einsteinian_difference = L.einsteinian_ballistic.total - L.einsteinian_reference.total;
  return L;
}

double ambient_t3_phase(double tau, double a, double g, const Species& sp, const Constants& c) {
  return sp.mass_kg / c.hbar * tau * tau * tau * (a * a + 2.0 * g * a);
}

AmbientFit fit_ambient_acceleration(const std::vector<double>& tau, const std::vector<double>& P,
                                    double g, const Species& sp, double a_lo, double a_hi,
                                    double offset, double amplitude, const Constants& c) {
  if (tau.size() != P.size() || tau.size() < 3) throw ConfigError("need >= 3 matching (tau, P) points");
  if (!(a_hi > a_lo)) throw ConfigError("empty acceleration search range");
  auto ssr = [&](double a) {
    double s = 0;
    for (size_t k = 0; k < tau.size(); ++k) {
      const double r = P[k] - (offset + amplitude * std::cos(ambient_t3_phase(tau[k], a, g, sp, c)));
      s += r * r;
    }
    return s;
  };
  // coarse scan first: the cosine makes the objective multimodal
  const int n = 4000;
  double best = a_lo, best_v = ssr(a_lo);
  for (int k = 1; k <= n; ++k) {
    const double a = a_lo + (a_hi - a_lo) * k / n;
    const double v = ssr(a);
    if (v < best_v) { best_v = v; best = a; }
  }
  const double step = (a_hi - a_lo) / n;
  const auto r = boost::math::tools::brent_find_minima(ssr, std::max(a_lo, best - step),
                                                       std::min(a_hi, best + step), 52);
  AmbientFit fit;
  fit.a_ambient = r.first;
  const double dof = std::max<double>(1.0, tau.size() - 1.0);
  const double s2 = r.second / dof;
  const double h = 1e-4 * std::max(1e-3, std::abs(r.first));
  const double curv = (ssr(r.first + h) - 2 * r.second + ssr(r.first - h)) / (h * h);
  fit.sigma = curv > 0 ? std::sqrt(2.0 * s2 / curv) : INFINITY;
  fit.rms_residual = std::sqrt(r.second / tau.size());
  return fit;
}

double open_loop_phase(const Trajectory& ref, const Trajectory& bal, const ActionContext& ctx) {
  const double m = ctx.mass_pair.m_i;
  const double t = std::min(ref.t_end(), bal.t_end());
  if (std::abs(ref.t_end() - bal.t_end()) > 1e-12)
    throw NumericalError("open-loop phase needs trajectories ending together", "alignment");
  const auto Sr = action_phase(ref, ctx), Sb = action_phase(bal, ctx);
  const double pr = m * ref.v_at(t), pb = m * bal.v_at(t);
  const double zr = ref.z_at(t), zb = bal.z_at(t);
  return Sr.total - Sb.total - (pr + pb) * (zr - zb) / (2.0 * ctx.hbar);
}

}  // namespace qgi

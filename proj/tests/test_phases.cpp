#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "qgi/phases.hpp"

using namespace qgi;

namespace {
const Species RB = Species::rubidium87();
const Constants C;
const double M = RB.mass_kg;
const double HB = C.hbar;

// 5-point Gauss-Legendre on [a, b], exact for polynomials up to degree 9.
template <typename F>
double gauss5(const F& f, double a, double b) {
  static const double x[5] = {0.0, -0.5384693101056831, 0.5384693101056831, -0.9061798459386640,
                              0.9061798459386640};
  static const double w[5] = {0.5688888888888889, 0.4786286704993665, 0.4786286704993665,
                              0.2369268850561891, 0.2369268850561891};
  double s = 0;
  for (int k = 0; k < 5; ++k) s += w[k] * f(0.5 * (a + b) + 0.5 * (b - a) * x[k]);
  return 0.5 * (b - a) * s;
}

// Action of one arm of the square-pulse model, integrated independently of
// the library: state (z, v) is propagated segment by segment in closed form.
double arm_action_oracle(Arm arm, const Timings& t, double g, double z0) {
  const double a_kick = g * t.T_h() / (2 * t.T_kick);
  const double dur[5] = {t.T_kick, t.T_d, t.T_h(), t.T_d, t.T_kick};
  double acc[5];
  for (int k = 0; k < 5; ++k) acc[k] = -g;
  if (arm == Arm::ballistic) { acc[0] += a_kick; acc[4] += a_kick; }
  else acc[2] += g;
  const double s0 = t.T_kick + t.T_d;
  double z = -0.5 * g * s0 * s0, v = g * s0, S = 0;
  for (int k = 0; k < 5; ++k) {
    const double a = acc[k], zz = z, vv = v;
    S += gauss5([&](double s) {
      const double vs = vv + a * s, zs = zz + vv * s + 0.5 * a * s * s;
      return 0.5 * M * vs * vs + M * a * (zs - z0);
    }, 0.0, dur[k]);
    z += v * dur[k] + 0.5 * a * dur[k] * dur[k];
    v += a * dur[k];
  }
  return S / HB;
}

Timings random_timings(std::mt19937& rng) {
  std::uniform_real_distribution<double> uT(0.1e-3, 2e-3), uk(10e-6, 200e-6), ud(0, 150e-6);
  Timings t;
  t.T_kick = uk(rng);
  t.tau_kick = 0.5 * t.T_kick;
  t.T_d = ud(rng);
  t.T_half = t.T_d + uT(rng);
  return t;
}
}  // namespace

TEST_CASE("gauge phase values") {
  CHECK(gauge_phase(5e-6, 0.0, -9.8, RB) == 0.0);
  const double T = 1e-3, g = 9.8;
  const double end = gauge_phase(0.0, T, -g, RB);
  CHECK(end == doctest::Approx(-M * g * g * T * T * T / (6 * HB)));
  CHECK(2 * std::abs(end) == doctest::Approx(M * g * g * T * T * T / (3 * HB)));
  CHECK(2 * std::abs(end) == doctest::Approx(43.8).epsilon(0.002));
}

TEST_CASE("four routes agree on random square-pulse configurations") {
  std::mt19937 rng(2024);
  for (int k = 0; k < 100; ++k) {
    const auto t = random_timings(rng);
    const double g = 9.81;
    const auto r = qgi_route_phases(t, g, RB);
    const double oracle = arm_action_oracle(Arm::reference, t, g, 0) - arm_action_oracle(Arm::ballistic, t, g, 0);
    CHECK(std::abs(r.action - r.analytic) < 1e-6);
    CHECK(std::abs(r.gauge - r.analytic) < 1e-6);
    CHECK(std::abs(r.galilean - r.analytic) < 1e-6);
    CHECK(std::abs(r.gauge - r.galilean) < 1e-6);
    CHECK(std::abs(oracle - r.analytic) < 1e-6);
  }
}

TEST_CASE("Galilean route reproduces the Gedanken limit") {
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> uT(0.1e-3, 2e-3);
  for (int k = 0; k < 100; ++k) {
    const double T = uT(rng);
    const double phi = -galilean_ballistic_phase(T, MassPair::equal(M), 9.81, HB);
    CHECK(std::abs(phi - gedanken_phase(T, 9.81, RB)) < 1e-12);
  }
}

TEST_CASE("printed per-arm polynomials match the action") {
  std::mt19937 rng(17);
  for (int k = 0; k < 50; ++k) {
    const auto t = random_timings(rng);
    const double g = 9.81;
    const double phi1 = arm_action_oracle(Arm::ballistic, t, g, 0.0);
    const double phi2 = arm_action_oracle(Arm::reference, t, g, 0.0);
    CHECK(printed_ballistic_phase(t, g, RB) == doctest::Approx(phi1).epsilon(1e-10));
    CHECK(reference_arm_phase(t.T_kick, t.T_d, g, RB) == doctest::Approx(phi2).epsilon(1e-10));
    CHECK(phi2 - phi1 == doctest::Approx(analytic_qgi_phase(t, g, RB)).epsilon(1e-10));
  }
}

TEST_CASE("action decomposition and z0 independence") {
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> uz(-1e-3, 1e-3);
  for (int k = 0; k < 20; ++k) {
    const auto t = random_timings(rng);
    const double g = 9.81;
    const auto ic = paper_initial_condition(t, g);
    const auto b = analytic_trajectory(t, arm_accelerations(Arm::ballistic, t, g, g), ic, Arm::ballistic);
    const auto r = analytic_trajectory(t, arm_accelerations(Arm::reference, t, g, g), ic, Arm::reference);
    ActionContext ctx;
    ctx.mass_pair = MassPair::equal(M);
    const auto Sb0 = action_phase(b, ctx), Sr0 = action_phase(r, ctx);
    CHECK(Sb0.total == doctest::Approx(Sb0.kinetic + Sb0.potential + Sb0.pulses).epsilon(1e-12));
    const double d0 = Sr0.total - Sb0.total;
    for (int j = 0; j < 5; ++j) {
      ctx.z0_potential_zero = uz(rng);
      const double d = action_phase(r, ctx).total - action_phase(b, ctx).total;
      CHECK(std::abs(d - d0) < 1e-9);
    }
  }
}

TEST_CASE("analytic closed form limits and scale") {
  Timings t;
  t.T_kick = t.T_d = 0;
  t.T_half = 1e-3;
  CHECK(analytic_qgi_phase(t, 9.8, RB) == doctest::Approx(43.8).epsilon(0.002));
  t.T_d = 100e-6;
  t.T_half = 1.1e-3;
  CHECK(analytic_qgi_phase(t, 9.8, RB) ==
        doctest::Approx(M * 9.8 * 9.8 / (3 * HB) * (std::pow(1.1e-3, 3) - std::pow(100e-6, 3))));
  const auto p = Timings::paper(2 * 1.213e-3);
  const double phi = analytic_qgi_phase(p, 9.91, RB);
  CHECK(phi > 80);
  CHECK(phi < 86);
  // lambda^3 scaling in the Gedanken limit
  Timings a, b;
  a.T_kick = a.T_d = b.T_kick = b.T_d = 0;
  a.T_half = 0.7e-3;
  b.T_half = 1.7 * a.T_half;
  CHECK(analytic_qgi_phase(b, 9.81, RB) == doctest::Approx(std::pow(1.7, 3) * analytic_qgi_phase(a, 9.81, RB)).epsilon(1e-13));
}

TEST_CASE("phase rate is the derivative with respect to 2T") {
  auto t = Timings::paper(2e-3);
  const double h = 1e-9;
  auto tp = t, tm = t;
  tp.T_half += 0.5 * h;
  tm.T_half -= 0.5 * h;
  // T_half moves by h, so 2T moves by 2h
  const double fd = (analytic_qgi_phase(tp, 9.91, RB) - analytic_qgi_phase(tm, 9.91, RB)) / (2 * h);
  CHECK(analytic_qgi_phase_rate(t, 9.91, RB) == doctest::Approx(fd).epsilon(1e-6));
}

TEST_CASE("mismatch phase") {
  const double T = 1.1e-3, g = 9.81;
  CHECK(mismatch_phase(g, g, T, RB).phase == doctest::Approx(-M * g * g * T * T * T / (3 * HB)));
  CHECK(mismatch_phase(0.0, g, T, RB).phase == 0.0);
  const double h = 1e-5;
  const double slope = (mismatch_phase(g + h, g, T, RB).phase - mismatch_phase(g - h, g, T, RB).phase) / (2 * h);
  const double curv = 2 * M * T * T * T / (3 * HB);
  CHECK(std::abs(slope) < 1e-9 * curv);
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> ua(0, 20), uT(0.1e-3, 3e-3), ug(1, 20);
  for (int k = 0; k < 100; ++k) {
    const double a = ua(rng), TT = uT(rng), gg = ug(rng);
    const auto mm = mismatch_phase(a, gg, TT, RB);
    const double diff = mm.phase - mismatch_phase(gg, gg, TT, RB).phase;
    CHECK(diff == doctest::Approx(mm.quadratic_deviation).epsilon(1e-9));
    // extremum at a = g
    CHECK(mismatch_phase(gg, gg, TT, RB).phase <= mm.phase + 1e-12 * std::abs(mm.phase));
  }
}

TEST_CASE("Galilean transformation phases") {
  const auto mp = MassPair::equal(M);
  const double g = 9.81;
  for (double t : {0.3e-3, 1e-3}) {
    for (double z : {-3e-6, 0.0, 2e-6}) {
      const auto p = galilean_transform_phase(t, 0.0, mp, g, HB);
      CHECK(p.chi0 + p.chi1 * z == doctest::Approx(gauge_phase(z, t, -g, M, HB)).epsilon(1e-12));
    }
  }
  const auto p0 = galilean_transform_phase(0.0, 0.01, mp, g, HB);
  CHECK(p0.chi0 == 0.0);
  CHECK(p0.chi1 == doctest::Approx(M * 0.01 / HB));
  for (double eta : {0.9, 1.0, 1.1}) {
    const MassPair q{M, eta * M};
    const double T = 1e-3;
    CHECK(galilean_ballistic_phase(T, q, g, HB) ==
          doctest::Approx(-(q.m_g * q.m_g) / (3 * HB * q.m_i) * g * g * T * T * T).epsilon(1e-12));
  }
}

TEST_CASE("two-frame ledger") {
  const double T = 1.05e-3, g = 9.81;
  const auto L = frame_ledger(T, 0.0, g, 0.0, RB);
  const double k = M / HB;
  // oracle: independent quadrature of the Newtonian ballistic arm, v0 = gT
  const double v0 = g * T;
  const double kin = gauss5([&](double t) { return 0.5 * M * (v0 - g * t) * (v0 - g * t); }, 0, 2 * T) / HB;
  const double pot = gauss5([&](double t) { return -M * g * (v0 * t - 0.5 * g * t * t); }, 0, 2 * T) / HB;
  CHECK(L.newtonian_ballistic.kinetic == doctest::Approx(kin).epsilon(1e-12));
  CHECK(L.newtonian_ballistic.potential == doctest::Approx(pot).epsilon(1e-12));
  CHECK(L.newtonian_ballistic.pulses == 0.0);
  CHECK(L.newtonian_ballistic.total == doctest::Approx(-k * g * g * T * T * T / 3).epsilon(1e-12));
  CHECK(L.newtonian_reference.total == 0.0);
  CHECK(L.einsteinian_ballistic.total == 0.0);
  CHECK(L.einsteinian_reference.total == doctest::Approx(-k * g * g * T * T * T / 3).epsilon(1e-12));
  CHECK(L.newtonian_difference == doctest::Approx(-k * g * g * T * T * T / 3).epsilon(1e-12));
  CHECK(L.einsteinian_difference == doctest::Approx(k * g * g * T * T * T / 3).epsilon(1e-12));
  CHECK(std::abs(L.newtonian_difference) == doctest::Approx(std::abs(L.einsteinian_difference)));
  for (const auto* p : {&L.newtonian_reference, &L.newtonian_ballistic, &L.einsteinian_reference,
                        &L.einsteinian_ballistic})
    CHECK(p->total == doctest::Approx(p->kinetic + p->potential + p->pulses));

  // unclosed cells keep v0 symbolic
  LedgerOptions open;
  open.apply_closing = false;
  const auto U = frame_ledger(T, 0.7 * g * T, g, 0.0, RB, open);
  CHECK(U.newtonian_ballistic.kinetic ==
        doctest::Approx(k * (0.49 * g * g * T * T * T - 1.4 * g * g * T * T * T + 4.0 / 3 * g * g * T * T * T)));
}

TEST_CASE("ledger cells from the library action in both frames") {
  const double T = 0.9e-3, g = 9.81;
  const auto L = frame_ledger(T, 0.0, g, 0.0, RB);
  Trajectory bal, ref;
  bal.arm = Arm::ballistic;
  ref.arm = Arm::reference;
  bal.segments = {{0.0, 2 * T, 0.0, g * T, -g}};
  ref.segments = {{0.0, 2 * T, 0.0, 0.0, 0.0}};
  bal.samples = {{0.0, 0, g * T, -g, kState0}, {2 * T, 0, -g * T, -g, kState0}};
  ref.samples = {{0.0, 0, 0, 0, kState1}, {2 * T, 0, 0, 0, kState1}};
  ActionContext N;
  N.mass_pair = MassPair::equal(M);
  CHECK(action_phase(bal, N).kinetic == doctest::Approx(L.newtonian_ballistic.kinetic).epsilon(1e-10));
  CHECK(action_phase(bal, N).potential == doctest::Approx(L.newtonian_ballistic.potential).epsilon(1e-10));
  CHECK(action_phase(ref, N).total == 0.0);
  ActionContext E = N;
  E.frame = Frame::einsteinian;
  E.frame_g = g;
  E.frame_v0 = g * T;
  const auto Er = action_phase(ref, E);
  CHECK(Er.kinetic == doctest::Approx(L.einsteinian_reference.kinetic).epsilon(1e-10));
  CHECK(Er.potential == doctest::Approx(L.einsteinian_reference.potential).epsilon(1e-10));
  CHECK(std::abs(action_phase(bal, E).total) < 1e-12);
}

TEST_CASE("delta pulses contribute m dv z") {
  const double T = 0.5e-3, g = 9.81;
  Trajectory tr;
  tr.segments = {{0.0, T, 1e-6, 0.0, -g}, {T, 2 * T, 1e-6 - 0.5 * g * T * T, 0.02, -g}};
  tr.samples = {{0.0, 1e-6, 0, -g, kState0}, {2 * T, 0, 0, -g, kState0}};
  ActionContext ctx;
  ctx.mass_pair = MassPair::equal(M);
  const auto p = action_phase(tr, ctx);
  const double dv = 0.02 - (-g * T);
  CHECK(p.pulses == doctest::Approx(M * dv * (1e-6 - 0.5 * g * T * T) / HB));
}

TEST_CASE("reference-arm phase") {
  CHECK(reference_arm_phase(0, 0, 9.81, RB) == 0.0);
  const double v = reference_arm_phase(80e-6, 77e-6, 9.81, RB);
  CHECK(v == doctest::Approx(2 * M / (3 * HB) * 9.81 * 9.81 * std::pow(157e-6, 3)));
  CHECK(v == doctest::Approx(0.34).epsilon(0.01));
  // independent of T_h
  for (double th : {0.3e-3, 1e-3, 2e-3}) {
    const auto t = Timings::from_hold(th, 77e-6);
    CHECK(arm_action_oracle(Arm::reference, t, 9.81, 0.0) == doctest::Approx(v).epsilon(1e-10));
  }
}

TEST_CASE("ambient T^3 phase and its inversion") {
  CHECK(ambient_t3_phase(1e-3, 0.0, 9.81, RB) == 0.0);
  CHECK(ambient_t3_phase(1e-3, 0.221, 9.81, RB) == doctest::Approx(6.0).epsilon(0.01));
  std::vector<double> tau, P, Pn;
  std::mt19937 rng(31);
  std::normal_distribution<double> noise(0.0, 2.0);
  for (int k = 0; k < 80; ++k) {
    const double t = 0.1e-3 + 0.9e-3 * k / 79;
    tau.push_back(t);
    const double p = 50 + 50 * std::cos(ambient_t3_phase(t, 0.221, 9.81, RB));
    P.push_back(p);
    Pn.push_back(p + noise(rng));
  }
  const auto f0 = fit_ambient_acceleration(tau, P, 9.81, RB, 0.0, 1.0);
  CHECK(f0.a_ambient == doctest::Approx(0.221).epsilon(1e-6));
  const auto f1 = fit_ambient_acceleration(tau, Pn, 9.81, RB, 0.0, 1.0);
  CHECK(std::abs(f1.a_ambient - 0.221) < 0.005);
  CHECK(f1.sigma < 0.005);
}

TEST_CASE("open-loop phase reduces to the action difference when closed") {
  const auto t = Timings::paper(1.6e-3);
  const double g = 9.81;
  const auto ic = paper_initial_condition(t, g);
  const auto b = analytic_trajectory(t, arm_accelerations(Arm::ballistic, t, g, g), ic, Arm::ballistic);
  const auto r = analytic_trajectory(t, arm_accelerations(Arm::reference, t, g, g), ic, Arm::reference);
  ActionContext ctx;
  ctx.mass_pair = MassPair::equal(M);
  CHECK(open_loop_phase(r, b, ctx) == doctest::Approx(analytic_qgi_phase(t, g, RB)).epsilon(1e-9));
  // open loop: translating trajectories and potential origin together leaves the phase unchanged
  auto acc = arm_accelerations(Arm::ballistic, t, g, g);
  acc[0] += 0.005 * (acc[0] + g);
  acc[4] += 0.005 * (acc[4] + g);
  const auto bo = analytic_trajectory(t, acc, ic, Arm::ballistic);
  const double p0 = open_loop_phase(r, bo, ctx);
  const double d = 3e-4;
  InitialCondition ics = ic;
  ics.z += d;
  const auto rs = analytic_trajectory(t, arm_accelerations(Arm::reference, t, g, g), ics, Arm::reference);
  const auto bs = analytic_trajectory(t, acc, ics, Arm::ballistic);
  ActionContext shifted = ctx;
  shifted.z0_potential_zero = d;
  CHECK(open_loop_phase(rs, bs, shifted) == doctest::Approx(p0).epsilon(1e-9));
  // moving only z0 adds -(m/hbar) z0 (dv_ref - dv_bal)
  const double dv = (r.samples.back().v - r.samples.front().v) - (bo.samples.back().v - bo.samples.front().v);
  CHECK(open_loop_phase(r, bo, shifted) - p0 == doctest::Approx(-M / HB * d * dv).epsilon(1e-7));
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include <boost/math/tools/minima.hpp>

#include "qgi/fieldmap.hpp"

using namespace qgi;

namespace {

const Constants C;
const Species RB = Species::rubidium87();

// Biot-Savart for an infinite line along x through (y0, z0), in gauss.
Vec3 line_oracle(const Vec3& r, double I, double y0, double z0) {
  const Vec3 d(0, r.y() - y0, r.z() - z0);
  const Vec3 B = 2e-7 * I * Vec3::UnitX().cross(d) / d.squaredNorm();
  return 1e4 * B;
}

// Sheet as a sum of many line currents (midpoint rule).
Vec3 sheet_oracle(const Vec3& r, double I, const Wire& w, int n = 20000) {
  Vec3 B = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    const double y = w.center - 0.5 * w.width + (k + 0.5) * w.width / n;
    B += line_oracle(r, I * w.polarity / n, y, -0.5 * w.thickness);
  }
  return B;
}

double absB_oracle(const Vec3& r, double I, const WireGeometry& g, const BiasField& b) {
  Vec3 B = b.B0;
  for (const auto& w : g.wires) B += sheet_oracle(r, I, w, 4000);
  return B.norm() + b.ambient_gradient * r.z();
}

}  // namespace

TEST_CASE("zero current gives zero wire field") {
  const auto g = WireGeometry::three_wire();
  CHECK(wire_field(Vec3(0, 20e-6, -80e-6), 0.0, g).norm() == 0.0);
}

TEST_CASE("line limit matches mu0 I / 2 pi d") {
  WireGeometry g;
  g.wires = {{0.0, 0.0, 0.0, 1}};
  const Vec3 B = wire_field(Vec3(0, 0, -100e-6), 0.023, g);
  CHECK(B.norm() == doctest::Approx(0.46).epsilon(1e-9));
  CHECK((B - line_oracle(Vec3(0, 0, -100e-6), 0.023, 0, 0)).norm() < 1e-12);
}

TEST_CASE("sheet converges to line current at width/d = 0.01") {
  WireGeometry g;
  g.wires = {{0.0, 1e-6, 0.0, 1}};
  const Vec3 r(0, 30e-6, -95e-6);
  const double d = std::hypot(30e-6, 95e-6);
  g.wires[0].width = 0.01 * d;
  const Vec3 B = wire_field(r, 0.1, g);
  const Vec3 L = line_oracle(r, 0.1, 0, 0);
  CHECK((B - L).norm() / L.norm() < 1e-3);
}

TEST_CASE("sheet matches summed line currents") {
  const auto g = WireGeometry::three_wire();
  for (const Vec3& r : {Vec3(0, 0, -113e-6), Vec3(0, 60e-6, -30e-6), Vec3(0, -140e-6, -10e-6)}) {
    Vec3 oracle = Vec3::Zero();
    for (const auto& w : g.wires) oracle += sheet_oracle(r, 0.5, w);
    CHECK((wire_field(r, 0.5, g) - oracle).norm() / oracle.norm() < 1e-6);
  }
}

TEST_CASE("inside a wire is a singular evaluation") {
  const auto g = WireGeometry::three_wire();
  CHECK_THROWS_AS(wire_field(Vec3(0, 100e-6, -1e-6), 0.1, g), NumericalError);
  CHECK_NOTHROW(wire_field(Vec3(0, 100e-6, -3e-6), 0.1, g));
}

TEST_CASE("wire quadrupole sits near 97 um below the surface") {
  const double z = wire_quadrupole_height(WireGeometry::three_wire(), -200e-6, -20e-6);
  CHECK(std::abs(z + 97e-6) < 3e-6);
}

TEST_CASE("bias only: zero gradient, ambient appears in z") {
  const auto g = WireGeometry::three_wire();
  BiasField b;
  b.ambient_gradient = 0.0;
  auto s = total_field(Vec3(0, 0, -113e-6), 0.0, g, b);
  CHECK(s.grad_absB.norm() == 0.0);
  CHECK(s.hess_absB.norm() < 1e-12);
  b.ambient_gradient = 0.68 * units::G_per_cm;
  s = total_field(Vec3(0, 0, -113e-6), 0.0, g, b);
  CHECK(s.grad_absB.x() == 0.0);
  CHECK(s.grad_absB.y() == 0.0);
  CHECK(s.grad_absB.z() == doctest::Approx(68.0));
}

TEST_CASE("holding gradient near the levitation value") {
  const auto g = WireGeometry::three_wire();
  BiasField b;
  b.ambient_gradient = 0.0;
  const auto s = total_field(Vec3(0, 0, -113e-6), 0.023, g, b);
  const double lev = RB.mass_kg * C.g_earth / (C.h * RB.gF_muB_over_h);  // G/m
  CHECK(lev / units::G_per_cm == doctest::Approx(30.5).epsilon(0.01));
  CHECK(std::abs(s.grad_absB.norm() - lev) / lev < 0.2);
}

TEST_CASE("analytic gradient and Hessian agree with finite differences") {
  const auto g = WireGeometry::three_wire();
  const BiasField b;
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> uy(-150e-6, 150e-6), uz(-200e-6, -40e-6);
  for (int k = 0; k < 20; ++k) {
    const Vec3 r(0, uy(rng), uz(rng));
    const double I = 0.3;
    const auto s = total_field(r, I, g, b);
    CHECK(s.absB == doctest::Approx(absB_oracle(r, I, g, b)).epsilon(1e-6));
    const double h = 1e-8, hh = 3e-8;
    auto f = [&](const Vec3& p) { return total_field(p, I, g, b).absB; };
    for (int j = 1; j < 3; ++j) {
      Vec3 e = Vec3::Zero();
      e(j) = h;
      const double fd = (f(r + e) - f(r - e)) / (2 * h);
      CHECK(s.grad_absB(j) == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
      for (int l = 1; l < 3; ++l) {
        Vec3 ej = Vec3::Zero(), el = Vec3::Zero();
        ej(j) = hh;
        el(l) = hh;
        const double fdh =
            (f(r + ej + el) - f(r + ej - el) - f(r - ej + el) + f(r - ej - el)) / (4 * hh * hh);
        CHECK(s.hess_absB(j, l) == doctest::Approx(fdh).epsilon(1e-4).scale(1e3));
      }
    }
    CHECK((s.hess_absB - s.hess_absB.transpose()).norm() <= 1e-9 * s.hess_absB.norm());
    const auto sfd = total_field_fd(r, I, g, b);
    CHECK((sfd.grad_absB - s.grad_absB).norm() / s.grad_absB.norm() < 1e-5);
  }
}

TEST_CASE("wire field is curl- and divergence-free") {
  const auto g = WireGeometry::three_wire();
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> uy(-150e-6, 150e-6), uz(-200e-6, -30e-6);
  const double h = 1e-9;
  for (int k = 0; k < 20; ++k) {
    const Vec3 r(0, uy(rng), uz(rng));
    Mat3 J;
    for (int j = 0; j < 3; ++j) {
      Vec3 e = Vec3::Zero();
      e(j) = h;
      J.col(j) = (wire_field(r + e, 0.4, g) - wire_field(r - e, 0.4, g)) / (2 * h);
    }
    const double scale = J.norm();
    CHECK(std::abs(J.trace()) < 1e-6 * scale);
    const Vec3 curl(J(2, 1) - J(1, 2), J(0, 2) - J(2, 0), J(1, 0) - J(0, 1));
    CHECK(curl.norm() < 1e-6 * scale);
  }
}

TEST_CASE("acceleration: flipping the current only flips the wire part") {
  const ChipField f(WireGeometry::three_wire(), BiasField{Vec3(0, 12.6, 0), 0.0});
  const Vec3 r(0, 10e-6, -113e-6);
  const Vec3 Bp = f.sample(r, 0.02).B - Vec3(0, 12.6, 0);
  const Vec3 Bm = f.sample(r, -0.02).B - Vec3(0, 12.6, 0);
  CHECK((Bp + Bm).norm() < 1e-12);
  const ChipField f0(WireGeometry::three_wire(), BiasField{Vec3(0, 12.6, 0), 0.0});
  for (auto st : {kState0, kState1, kState2}) {
    const Vec3 a = acceleration_of(st, r, 0.0, f0, RB, 9.81);
    CHECK(a.x() == 0.0);
    CHECK(std::abs(a.y()) < 1e-12);
    CHECK(a.z() == doctest::Approx(-9.81));
  }
}

TEST_CASE("Zeeman potential") {
  FieldSample s;
  s.absB = 0.0;
  for (auto st : {kState0, kState1, kState2}) CHECK(zeeman_potential(s, st, RB) == 0.0);
  for (double B : {1.0, 12.6, 20.0}) {
    s.absB = B;
    CHECK(zeeman_potential(s, kState2, RB) == doctest::Approx(C.h * 1.4e6 * B));
  }
  CHECK_THROWS_AS(zeeman_potential(s, SpinState{1, 2}, RB), ConfigError);
  // monotonic for mF gF > 0 over 5-20 G
  for (auto st : {kState1, kState2}) {
    double prev = -1e300;
    for (double B = 5; B <= 20; B += 0.25) {
      s.absB = B;
      const double V = zeeman_potential(s, st, RB);
      CHECK(V > prev);
      prev = V;
    }
  }
}

TEST_CASE("transition frequency inverts to the bias magnitude") {
  const double B = field_from_transition(8.799e6, kState2, kState1, RB);
  CHECK(std::abs(B - 12.62) < 0.01);
  // oracle: forward evaluation of the two energies
  FieldSample s;
  s.absB = B;
  CHECK((zeeman_potential(s, kState2, RB) - zeeman_potential(s, kState1, RB)) / C.h ==
        doctest::Approx(8.799e6).epsilon(1e-12));
}

TEST_CASE("second-order Zeeman acceleration") {
  FieldSample s;
  s.absB = 12.6;
  s.grad_absB = Vec3(0, 0, -31.0 * units::G_per_cm);
  CHECK(soz_acceleration(kState0, s, RB) ==
        doctest::Approx(2 * 287.6 * C.h * 12.6 * 3100 / RB.mass_kg));
  CHECK(soz_acceleration(kState0, s, RB) == doctest::Approx(0.103).epsilon(0.02));
  CHECK(soz_acceleration(kState2, s, RB) == 0.0);
  s.grad_absB.setZero();
  CHECK(soz_acceleration(kState0, s, RB) == 0.0);
}

TEST_CASE("quadratic expansion") {
  const ChipField bias_only(WireGeometry::three_wire(), BiasField{Vec3(0, 12.6, 0), 0.0});
  auto q = quadratic_expansion(Vec3(0, 0, -113e-6), 0.0, bias_only, kState1, RB);
  CHECK(q.hess.norm() < 1e-30);
  CHECK(q.grad.norm() == 0.0);

  // |B| = B0 + 0.5 k z^2 with known curvature; for |2> (alpha = 0) the
  // potential curvature is h * 1.4 MHz/G * k.
  Mat3 K = Mat3::Zero();
  K(2, 2) = 3.0e7;
  K(1, 1) = 1.0e7;
  const QuadraticField harm(1.0, Vec3::Zero(), K);
  q = quadratic_expansion(Vec3::Zero(), 0.0, harm, kState2, RB);
  CHECK(q.hess(2, 2) == doctest::Approx(C.h * 1.4e6 * 3.0e7).epsilon(1e-6));
  CHECK(q.hess(1, 1) == doctest::Approx(C.h * 1.4e6 * 1.0e7).epsilon(1e-6));
  // for |1> the alpha term adds 2 alpha (grad)(grad)^T; check against FD of V
  const QuadraticField lin(12.6, Vec3(0, 0, -3000.0), K);
  q = quadratic_expansion(Vec3(0, 1e-6, -2e-6), 1.0, lin, kState1, RB);
  auto V = [&](const Vec3& r) { return zeeman_potential(lin.sample(r, 1.0), kState1, RB); };
  const double h = 1e-7;
  const Vec3 r0(0, 1e-6, -2e-6);
  const Vec3 ez = Vec3::UnitZ() * h;
  const double fd = (V(r0 + ez) - 2 * V(r0) + V(r0 - ez)) / (h * h);
  CHECK(q.hess(2, 2) == doctest::Approx(fd).epsilon(1e-5));
}

TEST_CASE("trap frequency near 1.04 kHz") {
  const ChipField trap(WireGeometry::trap_pair(), BiasField{Vec3(0.825, -13.05, 0), 0.0});
  auto f = [&](double z) { return trap.sample(Vec3(0, 0, z), 0.5).absB; };
  const double zmin = boost::math::tools::brent_find_minima(f, -300e-6, -40e-6, 50).first;
  const auto q = quadratic_expansion(Vec3(0, 0, zmin), 0.5, trap, kState2, RB);
  const double fz = std::sqrt(q.hess(2, 2) / RB.mass_kg) / (2 * M_PI);
  const double fy = std::sqrt(q.hess(1, 1) / RB.mass_kg) / (2 * M_PI);
  CHECK(std::abs(fz - 1040) / 1040 < 0.15);
  CHECK(std::abs(fy - 1040) / 1040 < 0.15);
}

TEST_CASE("field map grid") {
  const ChipField f(WireGeometry::three_wire(), BiasField{});
  const auto rows = field_map_grid(f, 0.023, -50e-6, 50e-6, 3, -150e-6, -80e-6, 4);
  CHECK(rows.size() == 12);
  CHECK(rows.front().y == doctest::Approx(-50e-6));
  CHECK(rows.back().z == doctest::Approx(-80e-6));
}

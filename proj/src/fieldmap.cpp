#include "qgi/fieldmap.hpp"

#include <cmath>
#include <complex>

#include <boost/math/tools/minima.hpp>
#include <fmt/format.h>

namespace qgi {

namespace {

using cplx = std::complex<double>;

bool inside(const Wire& w, const Vec3& r) {
  const double half = 0.5 * std::max(w.width, 0.0);
  const double dy = r.y() - w.center;
  return std::abs(dy) <= half && r.z() >= -w.thickness && r.z() <= 0.0;
}

// F = B_z + i B_y (tesla) and its first two derivatives with respect to
// zeta = y + i (z - z_sheet). The sheet sits at mid-thickness.
struct SheetTerms {
  cplx F, dF, d2F;
};

SheetTerms sheet_terms(const Wire& w, const Vec3& r, double I, const Constants& c) {
  const double z_sheet = -0.5 * w.thickness;
  const cplx zeta(r.y(), r.z() - z_sheet);
  const double mu = c.mu0_over_2pi * I * w.polarity;
  if (w.width <= 0.0) {
    const cplx d = zeta - w.center;
    return {mu / d, -mu / (d * d), 2.0 * mu / (d * d * d)};
  }
  const double K = mu / w.width;
  const cplx da = zeta - (w.center - 0.5 * w.width);
  const cplx db = zeta - (w.center + 0.5 * w.width);
  return {K * std::log(da / db), K * (1.0 / da - 1.0 / db),
          K * (-1.0 / (da * da) + 1.0 / (db * db))};
}

void check_outside(const WireGeometry& g, const Vec3& r) {
  for (const auto& w : g.wires)
    if (inside(w, r))
      throw NumericalError(
          fmt::format("field evaluated inside wire at y={:.3g} m, z={:.3g} m", r.y(), r.z()),
          "singular_field");
}

FieldSample assemble(const FieldJet& jet, const Vec3& bias, double ambient, double z) {
  FieldSample s;
  s.B = jet.B + bias;
  const double n = s.B.norm();
  if (!(n > 0)) throw NumericalError("|B| vanishes; gradient undefined", "singular_field");
  const Vec3 u = s.B / n;
  const Vec3 g = jet.J.transpose() * u;
  Mat3 hess = (jet.J.transpose() * jet.J - g * g.transpose()) / n;
  for (int i = 0; i < 3; ++i) hess += u(i) * jet.H[i];
  s.absB = n + ambient * z;
  s.grad_absB = g + Vec3(0, 0, ambient);
  s.hess_absB = 0.5 * (hess + hess.transpose());
  return s;
}

}  // namespace

WireGeometry WireGeometry::three_wire() {
  WireGeometry g;
  g.wires = {{-100e-6, 40e-6, 2e-6, +1}, {0.0, 40e-6, 2e-6, -1}, {100e-6, 40e-6, 2e-6, +1}};
  return g;
}

WireGeometry WireGeometry::trap_pair() {
  WireGeometry g;
  g.wires = {{-50e-6, 50e-6, 2e-6, +1}, {50e-6, 50e-6, 2e-6, +1}};
  return g;
}

void WireGeometry::validate() const {
  if (wires.empty()) throw ConfigError("wire geometry has no wires");
  for (const auto& w : wires) {
    if (w.width < 0 || w.thickness < 0) throw ConfigError("wire width/thickness must be >= 0");
    if (w.polarity != 1 && w.polarity != -1) throw ConfigError("wire polarity must be +1 or -1");
  }
}

void BiasField::validate() const {
  if (!(B0.norm() > 0)) throw ConfigError("bias field magnitude must be positive");
  if (!std::isfinite(ambient_gradient)) throw ConfigError("ambient gradient must be finite");
}

FieldJet wire_field_jet(const Vec3& r, double I, const WireGeometry& geometry, const Constants& c) {
  check_outside(geometry, r);
  FieldJet jet;
  cplx F = 0, dF = 0, d2F = 0;
  for (const auto& w : geometry.wires) {
    const auto t = sheet_terms(w, r, I, c);
    F += t.F;
    dF += t.dF;
    d2F += t.d2F;
  }
  constexpr double T2G = units::gauss_per_tesla;
  F *= T2G;
  dF *= T2G;
  d2F *= T2G;
  const cplx i(0, 1);
  // d/dy = d/dzeta, d/dz = i d/dzeta
  const cplx Fy = dF, Fz = i * dF;
  const cplx Fyy = d2F, Fyz = i * d2F, Fzz = -d2F;

  jet.B = Vec3(0.0, F.imag(), F.real());
  jet.J(1, 1) = Fy.imag();
  jet.J(1, 2) = Fz.imag();
  jet.J(2, 1) = Fy.real();
  jet.J(2, 2) = Fz.real();
  // rows/cols: 1 = y, 2 = z
  jet.H[1](1, 1) = Fyy.imag();
  jet.H[1](1, 2) = jet.H[1](2, 1) = Fyz.imag();
  jet.H[1](2, 2) = Fzz.imag();
  jet.H[2](1, 1) = Fyy.real();
  jet.H[2](1, 2) = jet.H[2](2, 1) = Fyz.real();
  jet.H[2](2, 2) = Fzz.real();
  return jet;
}

Vec3 wire_field(const Vec3& r, double I, const WireGeometry& geometry, const Constants& c) {
  return wire_field_jet(r, I, geometry, c).B;
}

FieldSample total_field(const Vec3& r, double I, const WireGeometry& geometry,
                        const BiasField& bias, const Constants& c) {
  return assemble(wire_field_jet(r, I, geometry, c), bias.B0, bias.ambient_gradient, r.z());
}

FieldSample total_field_fd(const Vec3& r, double I, const WireGeometry& geometry,
                           const BiasField& bias, const Constants& c, double step) {
  auto absB = [&](const Vec3& p) {
    return (wire_field(p, I, geometry, c) + bias.B0).norm() + bias.ambient_gradient * p.z();
  };
  FieldSample s;
  s.B = wire_field(r, I, geometry, c) + bias.B0;
  s.absB = absB(r);
  const double h = step;
  for (int j = 0; j < 3; ++j) {
    Vec3 e = Vec3::Zero();
    e(j) = h;
    s.grad_absB(j) = (absB(r + e) - absB(r - e)) / (2 * h);
  }
  // Second derivatives use a wider stencil to keep roundoff below truncation.
  const double hh = 1e3 * h;
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) {
      Vec3 ej = Vec3::Zero(), ek = Vec3::Zero();
      ej(j) = hh;
      ek(k) = hh;
      s.hess_absB(j, k) = (absB(r + ej + ek) - absB(r + ej - ek) - absB(r - ej + ek) +
                           absB(r - ej - ek)) /
                          (4 * hh * hh);
    }
  return s;
}

ChipField::ChipField(WireGeometry geometry, BiasField bias, Constants c)
    : geometry_(std::move(geometry)), bias_(std::move(bias)), c_(c) {
  geometry_.validate();
  bias_.validate();
}

FieldSample ChipField::sample(const Vec3& r, double I) const {
  return total_field(r, I, geometry_, bias_, c_);
}

QuadraticField::QuadraticField(double B0, Vec3 grad_per_amp, Mat3 curvature, double ambient)
    : B0_(B0), grad_(std::move(grad_per_amp)), curv_(0.5 * (curvature + curvature.transpose())),
      ambient_(ambient) {}

FieldSample QuadraticField::sample(const Vec3& r, double I) const {
  FieldSample s;
  s.absB = B0_ + I * grad_.dot(r) + 0.5 * r.dot(curv_ * r) + ambient_ * r.z();
  s.B = Vec3(0.0, s.absB, 0.0);
  s.grad_absB = I * grad_ + curv_ * r + Vec3(0, 0, ambient_);
  s.hess_absB = curv_;
  return s;
}

double zeeman_potential(const FieldSample& sample, const SpinState& state, const Species& species,
                        const Constants& c) {
  const double n = sample.absB;
  return c.h * (species.linear_rate(state) * n + species.quadratic_rate(state) * n * n);
}

QuadraticExpansion quadratic_expansion(const FieldSample& s, const SpinState& state,
                                       const Species& species, const Constants& c) {
  const double lin = species.linear_rate(state);
  const double alpha = species.quadratic_rate(state);
  const double dV = lin + 2 * alpha * s.absB;  // Hz/G
  QuadraticExpansion q;
  q.V0 = zeeman_potential(s, state, species, c);
  q.grad = c.h * dV * s.grad_absB;
  q.hess = c.h * (dV * s.hess_absB + 2 * alpha * s.grad_absB * s.grad_absB.transpose());
  return q;
}

QuadraticExpansion quadratic_expansion(const Vec3& r0, double I, const FieldModel& field,
                                       const SpinState& state, const Species& species,
                                       const Constants& c) {
  return quadratic_expansion(field.sample(r0, I), state, species, c);
}

Vec3 acceleration_of(const SpinState& state, const Vec3& r, double I, const FieldModel& field,
                     const Species& species, double g, const Constants& c) {
  const auto q = quadratic_expansion(r, I, field, state, species, c);
  return -q.grad / species.mass_kg - Vec3(0, 0, g);
}

double soz_acceleration(const SpinState& state, const FieldSample& s, const Species& species,
                        const Constants& c) {
  const double alpha = species.quadratic_rate(state);
  return -2 * alpha * c.h * s.absB * s.grad_absB.norm() / species.mass_kg;
}

double levitation_gradient(const SpinState& state, double absB, const Species& species, double g,
                           const Constants& c) {
  const double dV = species.linear_rate(state) + 2 * species.quadratic_rate(state) * absB;
  if (dV == 0) throw NumericalError(fmt::format("state {} cannot be levitated", state.label()));
  return species.mass_kg * g / (c.h * dV);
}

double field_from_transition(double freq_Hz, const SpinState& upper, const SpinState& lower,
                             const Species& species) {
  const double b = species.linear_rate(upper) - species.linear_rate(lower);
  const double a = species.quadratic_rate(upper) - species.quadratic_rate(lower);
  if (a == 0) {
    if (b == 0) throw NumericalError("transition frequency independent of |B|");
    return freq_Hz / b;
  }
  const double disc = b * b + 4 * a * freq_Hz;
  if (disc < 0) throw NumericalError("transition frequency not reachable at any |B|");
  // Root continuously connected to the linear solution.
  return 2 * freq_Hz / (b + std::copysign(std::sqrt(disc), b));
}

double wire_quadrupole_height(const WireGeometry& geometry, double z_lo, double z_hi,
                              const Constants& c) {
  auto f = [&](double z) { return wire_field(Vec3(0, 0, z), 1.0, geometry, c).norm(); };
  return boost::math::tools::brent_find_minima(f, z_lo, z_hi, 50).first;
}

std::vector<FieldMapRow> field_map_grid(const FieldModel& field, double I, double y0, double y1,
                                        int ny, double z0, double z1, int nz) {
  if (ny < 1 || nz < 1) throw ConfigError("field map grid needs at least one point per axis");
  std::vector<FieldMapRow> rows;
  rows.reserve(static_cast<size_t>(ny) * nz);
  for (int iz = 0; iz < nz; ++iz)
    for (int iy = 0; iy < ny; ++iy) {
      const double y = ny == 1 ? y0 : y0 + (y1 - y0) * iy / (ny - 1);
      const double z = nz == 1 ? z0 : z0 + (z1 - z0) * iz / (nz - 1);
      const auto s = field.sample(Vec3(0, y, z), I);
      rows.push_back({y, z, s.absB, s.grad_absB.z()});
    }
  return rows;
}

}  // namespace qgi

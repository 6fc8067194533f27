#pragma once

#include <array>
#include <memory>
#include <vector>

#include "qgi/core.hpp"

namespace qgi {

// Chip frame: wires run along x on the surface z = 0, atoms sit at z < 0 and
// gravity points along -z. `center` is the lateral (y) position of a wire.
struct Wire {
  double center = 0.0;     // m
  double width = 40e-6;    // m, 0 selects the line-current model
  double thickness = 2e-6; // m
  int polarity = 1;
};

struct WireGeometry {
  std::vector<Wire> wires;

  /// Three 40 um wires at -100, 0, +100 um with polarities (+, -, +).
  static WireGeometry three_wire();
  /// Two co-propagating 50 um wires at +-50 um used for the pre-interferometer trap.
  static WireGeometry trap_pair();

  void validate() const;
};

struct BiasField {
  Vec3 B0 = Vec3(0.0, 12.6, 0.0);      // G
  double ambient_gradient = 68.0;      // d|B|/dz in G/m

  void validate() const;
};

/// |B| and its derivatives. `absB` includes the ambient linear term.
struct FieldSample {
  Vec3 B = Vec3::Zero();           // G
  double absB = 0.0;               // G
  Vec3 grad_absB = Vec3::Zero();   // G/m
  Mat3 hess_absB = Mat3::Zero();   // G/m^2

  /// Adiabatic-following validity threshold on |B|.
  static constexpr double kMinAdiabaticField = 5.0;
  bool adiabatic() const { return absB >= kMinAdiabaticField; }
};

/// Field of the wire array and its first and second spatial derivatives.
struct FieldJet {
  Vec3 B = Vec3::Zero();                 // G
  Mat3 J = Mat3::Zero();                 // J(i, j) = dB_i/dr_j, G/m
  std::array<Mat3, 3> H{Mat3::Zero(), Mat3::Zero(), Mat3::Zero()};  // H[i] = Hess B_i
};

Vec3 wire_field(const Vec3& r, double I, const WireGeometry& geometry,
                const Constants& c = {});
FieldJet wire_field_jet(const Vec3& r, double I, const WireGeometry& geometry,
                        const Constants& c = {});

FieldSample total_field(const Vec3& r, double I, const WireGeometry& geometry,
                        const BiasField& bias, const Constants& c = {});

/// Same quantities from central differences of |B| (step 1e-8 m); test oracle.
FieldSample total_field_fd(const Vec3& r, double I, const WireGeometry& geometry,
                           const BiasField& bias, const Constants& c = {}, double step = 1e-8);

/// Anything that can return |B| data at a point for a given wire current.
class FieldModel {
 public:
  virtual ~FieldModel() = default;
  virtual FieldSample sample(const Vec3& r, double I) const = 0;
};

class ChipField final : public FieldModel {
 public:
  ChipField(WireGeometry geometry, BiasField bias, Constants c = {});
  FieldSample sample(const Vec3& r, double I) const override;

  const WireGeometry& geometry() const { return geometry_; }
  const BiasField& bias() const { return bias_; }

 private:
  WireGeometry geometry_;
  BiasField bias_;
  Constants c_;
};

/// |B| = B0 + I * (gradient . r) + 0.5 * r^T curvature r. For tests and
/// idealized runs.
class QuadraticField final : public FieldModel {
 public:
  QuadraticField(double B0, Vec3 grad_per_amp, Mat3 curvature = Mat3::Zero(),
                 double ambient_gradient = 0.0);
  FieldSample sample(const Vec3& r, double I) const override;

 private:
  double B0_;
  Vec3 grad_;
  Mat3 curv_;
  double ambient_;
};

double zeeman_potential(const FieldSample& sample, const SpinState& state, const Species& species,
                        const Constants& c = {});

struct QuadraticExpansion {
  double V0 = 0.0;              // J
  Vec3 grad = Vec3::Zero();     // J/m
  Mat3 hess = Mat3::Zero();     // J/m^2
};

QuadraticExpansion quadratic_expansion(const FieldSample& sample, const SpinState& state,
                                       const Species& species, const Constants& c = {});
QuadraticExpansion quadratic_expansion(const Vec3& r0, double I, const FieldModel& field,
                                       const SpinState& state, const Species& species,
                                       const Constants& c = {});

/// Magnetic plus gravitational acceleration, gravity g along -z.
Vec3 acceleration_of(const SpinState& state, const Vec3& r, double I, const FieldModel& field,
                     const Species& species, double g, const Constants& c = {});

/// Quadratic-Zeeman acceleration projected on the direction of grad|B|.
/// Positive for alpha < 0 (state |0>), where it pulls the atom towards higher
/// field; in the holding configuration that is along -z.
double soz_acceleration(const SpinState& state, const FieldSample& sample, const Species& species,
                        const Constants& c = {});

/// Gradient of |B| (G/m) that holds `state` against g at field magnitude absB.
double levitation_gradient(const SpinState& state, double absB, const Species& species, double g,
                           const Constants& c = {});

/// Field magnitude (G) at which E(upper) - E(lower) = h * freq.
double field_from_transition(double freq_Hz, const SpinState& upper, const SpinState& lower,
                             const Species& species);

/// Zero of |B_wires| on the lateral symmetry axis (y = 0), searched in [z_lo, z_hi].
double wire_quadrupole_height(const WireGeometry& geometry, double z_lo, double z_hi,
                              const Constants& c = {});

struct FieldMapRow {
  double y, z, absB, dabsB_dz;
};

std::vector<FieldMapRow> field_map_grid(const FieldModel& field, double I, double y0, double y1,
                                        int ny, double z0, double z1, int nz);

}  // namespace qgi

#pragma once

#include <map>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "qgi/errors.hpp"

namespace qgi {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

namespace units {
inline constexpr double us = 1e-6;
inline constexpr double ms = 1e-3;
inline constexpr double um = 1e-6;
inline constexpr double mA = 1e-3;
inline constexpr double gauss_per_tesla = 1e4;
inline constexpr double G_per_cm = 100.0;  // G/cm -> G/m
}  // namespace units

struct Constants {
  double hbar = 1.054571817e-34;  // J s
  double h = 6.62607015e-34;      // J s
  double g_earth = 9.81;          // m/s^2
  double mu0_over_2pi = 2e-7;     // T m / A
  double kB = 1.380649e-23;       // J/K

  void validate() const;
};

struct SpinState {
  int F = 1;
  int mF = 0;

  friend bool operator==(const SpinState&, const SpinState&) = default;
  std::string label() const;
};

/// |0> = |F=1, mF=0>, magnetically insensitive to first order.
inline constexpr SpinState kState0{1, 0};
/// |1> = |F=2, mF=1>, the levitated state.
inline constexpr SpinState kState1{2, 1};
/// |2> = |F=2, mF=2>, the trapped state before the interferometer.
inline constexpr SpinState kState2{2, 2};

enum class Arm { ballistic, reference };
const char* to_string(Arm arm);

struct Species {
  double mass_kg = 0.0;
  double gF_muB_over_h = 0.0;                         // Hz/G, for F = 2
  std::map<std::pair<int, int>, double> alpha_over_h;  // Hz/G^2, keyed by (F, |mF|)

  /// 87Rb with the quadratic Zeeman table of the |F=1>, |F=2> ground states.
  static Species rubidium87();

  void validate() const;
  void require_state(const SpinState& s) const;

  /// First-order Zeeman rate mF gF muB / h in Hz/G (gF = -1/2 for F=1).
  double linear_rate(const SpinState& s) const;
  /// alpha_{F,mF} / h in Hz/G^2.
  double quadratic_rate(const SpinState& s) const;
};

/// Interferometer timing record. `T_half` is half the free-fall time of the
/// ballistic arm; `T_d` is the analytic-model delay, which already contains
/// half of the holding-pulse rise time.
struct Timings {
  double T_half = 0.0;
  double T_kick = 80 * units::us;
  double T_d = 77 * units::us;
  double tau_kick = 40 * units::us;
  double tau_hold = 12 * units::us;

  double T_h() const { return 2.0 * T_half - 2.0 * T_d; }
  double two_T() const { return 2.0 * T_half; }
  /// Gap between the end of a kick and the start of the holding-pulse ramp.
  double raw_delay() const { return T_d - 0.5 * tau_hold; }
  /// Total duration of the gradient sequence, kick start to kick end.
  double total() const { return 2.0 * T_kick + 2.0 * T_half; }

  static Timings from_hold(double T_h, double T_d);
  /// Default delays with the given free-fall time 2T.
  static Timings paper(double two_T);

  void validate() const;
};

struct MassPair {
  double m_i = 0.0;
  double m_g = 0.0;

  static MassPair equal(double m) { return {m, m}; }
  double eta() const { return m_g / m_i; }
  void validate() const;
};

double effective_gravity(double g, double a_soz);

/// Temperature assigned to a cloud expansion rate; `factor` multiplies
/// m rate^2 / kB and is recorded with the result.
struct ExpansionTemperature {
  double kelvin = 0.0;
  double factor = 1.0;
};

/// Convention factor calibrated so that 3.1 um/ms maps to 108 nK for 87Rb.
double calibrated_expansion_factor(const Species& species, const Constants& c = {});

ExpansionTemperature temperature_from_expansion(double rate, const Species& species,
                                                double factor, const Constants& c = {});
ExpansionTemperature temperature_from_expansion(double rate, const Species& species,
                                                const Constants& c = {});

}  // namespace qgi

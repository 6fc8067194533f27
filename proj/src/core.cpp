#include "qgi/core.hpp"

#include <cmath>

#include <fmt/format.h>

namespace qgi {

void Constants::validate() const {
  if (!(hbar > 0 && h > 0 && g_earth > 0 && mu0_over_2pi > 0 && kB > 0))
    throw ConfigError("physical constants must be strictly positive");
}

std::string SpinState::label() const {
  if (*this == kState0) return "|0>";
  if (*this == kState1) return "|1>";
  if (*this == kState2) return "|2>";
  return fmt::format("|F={},mF={}>", F, mF);
}

const char* to_string(Arm arm) { return arm == Arm::ballistic ? "ballistic" : "reference"; }

Species Species::rubidium87() {
  Species s;
  s.mass_kg = 1.44316e-25;
  s.gF_muB_over_h = 0.70e6;
  s.alpha_over_h = {
      {{1, 0}, -287.6}, {{1, 1}, -215.7},
      {{2, 0}, 287.6},  {{2, 1}, 215.7},  {{2, 2}, 0.0},
  };
  return s;
}

void Species::validate() const {
  if (!(mass_kg > 0)) throw ConfigError("species mass must be positive");
  if (!(gF_muB_over_h > 0)) throw ConfigError("linear Zeeman rate must be positive");
  if (alpha_over_h.empty()) throw ConfigError("quadratic Zeeman table is empty");
}

void Species::require_state(const SpinState& s) const {
  if (std::abs(s.mF) > s.F || !alpha_over_h.count({s.F, std::abs(s.mF)}))
    throw ConfigError(fmt::format("unknown spin state (F={}, mF={})", s.F, s.mF));
}

double Species::linear_rate(const SpinState& s) const {
  require_state(s);
  const double sign = s.F == 2 ? 1.0 : -1.0;
  return sign * s.mF * gF_muB_over_h;
}

double Species::quadratic_rate(const SpinState& s) const {
  require_state(s);
  return alpha_over_h.at({s.F, std::abs(s.mF)});
}

Timings Timings::from_hold(double T_h, double T_d) {
  Timings t;
  t.T_d = T_d;
  t.T_half = 0.5 * T_h + T_d;
  return t;
}

Timings Timings::paper(double two_T) {
  Timings t;
  t.T_half = 0.5 * two_T;
  return t;
}

void Timings::validate() const {
  if (!(T_half >= 0 && T_kick >= 0 && T_d >= 0 && tau_kick >= 0 && tau_hold >= 0))
    throw ConfigError("timings must be non-negative");
  if (T_h() < 0)
    throw ConfigError(fmt::format("T_h = 2T - 2T_d is negative ({:.3g} s)", T_h()));
}

void MassPair::validate() const {
  if (!(m_i > 0 && m_g > 0)) throw ConfigError("inertial and gravitational masses must be positive");
}

double effective_gravity(double g, double a_soz) { return g + a_soz; }

double calibrated_expansion_factor(const Species& species, const Constants& c) {
  constexpr double anchor_rate = 3.1e-3;   // m/s
  constexpr double anchor_temp = 108e-9;   // K
  return anchor_temp / (species.mass_kg * anchor_rate * anchor_rate / c.kB);
}

ExpansionTemperature temperature_from_expansion(double rate, const Species& species, double factor,
                                                const Constants& c) {
  if (rate < 0) throw ConfigError("expansion rate must be non-negative");
  return {factor * species.mass_kg * rate * rate / c.kB, factor};
}

ExpansionTemperature temperature_from_expansion(double rate, const Species& species,
                                                const Constants& c) {
  return temperature_from_expansion(rate, species, calibrated_expansion_factor(species, c), c);
}

}  // namespace qgi

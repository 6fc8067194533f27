#pragma once

#include <string>
#include <vector>

#include "qgi/core.hpp"
#include "qgi/dynamics.hpp"

namespace qgi {

/// Every interferometer phase in this module is reported as
/// phi_reference - phi_ballistic, which grows positively with T.
inline constexpr const char* kSignConvention = "phi_reference-phi_ballistic";

enum class Frame { newtonian, einsteinian };
const char* to_string(Frame f);

struct PhaseBreakdown {
  double kinetic = 0.0;    // rad
  double potential = 0.0;  // rad
  double pulses = 0.0;     // rad
  double total = 0.0;      // rad
  Arm arm = Arm::ballistic;
  Frame frame = Frame::newtonian;
  /// Quadrature error estimate, rad.
  double error_estimate = 0.0;
  std::vector<std::string> warnings;
};

struct ActionContext {
  double z0_potential_zero = 0.0;  // m, origin of U = -m a (z - z0)
  Frame frame = Frame::newtonian;
  MassPair mass_pair;
  double hbar = Constants{}.hbar;
  double tolerance = 1e-6;  // rad, quadrature target
  // Einsteinian frame: z_E = z - [frame_v0 (t - frame_t0) - g (t - frame_t0)^2 / 2]
  double frame_g = 9.81;
  double frame_v0 = 0.0;
  double frame_t0 = 0.0;
};

/// (m/hbar)(-a^2 t^3 / 6 + a z t).
double gauge_phase(double z, double t, double a, double mass, double hbar = Constants{}.hbar);
double gauge_phase(double z, double t, double a, const Species& species, const Constants& c = {});

/// (1/hbar) \int [m v^2 / 2 + m a(t) (z - z0)] dt split into kinetic and
/// potential parts. Analytic segments are integrated per segment; sampled
/// trajectories per sample interval. Simpson with Richardson refinement.
PhaseBreakdown action_phase(const Trajectory& traj, const ActionContext& ctx);

/// Center phase accumulated along piecewise-constant-acceleration motion
/// from the accelerated-frame gauge transformation, segment by segment.
double gauge_route_arm_phase(const Trajectory& traj, double mass, double hbar);

/// Same quantity from the Galilean-transformation phases chi0, chi1 applied
/// per segment. The segment force is m_i times the segment acceleration.
double galilean_route_arm_phase(const Trajectory& traj, const MassPair& mp, double hbar);

struct RoutePhases {
  double analytic = 0.0;
  double action = 0.0;
  double gauge = 0.0;
  double galilean = 0.0;
  double gedanken = 0.0;
  double action_error = 0.0;
};

/// All routes for the ideal square-pulse QGI with a_hold = g.
RoutePhases qgi_route_phases(const Timings& timings, double g, const Species& species,
                             const Constants& c = {}, double z0 = 0.0);

/// Closed form with finite kicks and delays.
double analytic_qgi_phase(const Timings& timings, double g, const Species& species,
                          const Constants& c = {});
/// (m g^2 / 3 hbar) T^3.
double gedanken_phase(double T_half, double g, const Species& species, const Constants& c = {});
/// d(analytic_qgi_phase)/d(2T).
double analytic_qgi_phase_rate(const Timings& timings, double g, const Species& species,
                               const Constants& c = {});

/// Printed per-arm polynomials of the action derivation (origin at the hold point).
double printed_ballistic_phase(const Timings& timings, double g, const Species& species,
                               const Constants& c = {});
double reference_arm_phase(double T_kick, double T_d, double g, const Species& species,
                           const Constants& c = {});

struct MismatchPhase {
  double phase = 0.0;                // m a (a - 2g) T^3 / 3 hbar
  double quadratic_deviation = 0.0;  // m (a - g)^2 T^3 / 3 hbar
};
MismatchPhase mismatch_phase(double a_hold, double g, double T_half, const Species& species,
                             const Constants& c = {});

struct GalileanPhase {
  double chi0 = 0.0;  // rad
  double chi1 = 0.0;  // rad/m
};
GalileanPhase galilean_transform_phase(double t, double v0, const MassPair& mp, double g,
                                       double hbar = Constants{}.hbar);
/// chi0(2T) under the closing condition T = m_i v0 / (m_g g).
double galilean_ballistic_phase(double T_half, const MassPair& mp, double g,
                                double hbar = Constants{}.hbar);

struct LedgerOptions {
  bool apply_closing = true;      // v0 = gT (Newtonian) or v0 = aT (Einsteinian)
  bool apply_levitation = true;   // a = -g in the Einsteinian difference
};

struct FrameLedger {
  PhaseBreakdown newtonian_reference, newtonian_ballistic;
  PhaseBreakdown einsteinian_reference, einsteinian_ballistic;
  double newtonian_difference = 0.0;    // ballistic - reference, rad
  double einsteinian_difference = 0.0;  // ballistic - reference, rad
};

/// Two-arm, two-frame action table of the Gedanken sequence with delta kicks.
FrameLedger frame_ledger(double T_half, double v0, double g, double a, const Species& species,
                         const LedgerOptions& opt = {}, const Constants& c = {});

/// (m/hbar) tau^3 (a^2 + 2 g a).
double ambient_t3_phase(double tau_dd, double a_ambient, double g, const Species& species,
                        const Constants& c = {});

struct AmbientFit {
  double a_ambient = 0.0;
  double sigma = 0.0;  // 1-sigma from the least-squares curvature
  double rms_residual = 0.0;
};

/// Fit P(tau) = offset + amplitude cos(delta_phi(tau; a)) for a in [a_lo, a_hi].
AmbientFit fit_ambient_acceleration(const std::vector<double>& tau_dd,
                                    const std::vector<double>& population, double g,
                                    const Species& species, double a_lo, double a_hi,
                                    double offset = 50.0, double amplitude = 50.0,
                                    const Constants& c = {});

/// Phase of an interferometer that does not close: action difference plus
/// the midpoint separation term, phi_ref - phi_bal - (p_r + p_b)(z_r - z_b) / 2 hbar.
double open_loop_phase(const Trajectory& reference, const Trajectory& ballistic,
                       const ActionContext& ctx);

}  // namespace qgi

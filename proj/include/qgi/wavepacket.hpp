#pragma once

#include <complex>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qgi/core.hpp"
#include "qgi/dynamics.hpp"
#include "qgi/fieldmap.hpp"
#include "qgi/pulses.hpp"

namespace qgi {

using Mat6 = Eigen::Matrix<double, 6, 6>;
using CMat3 = Eigen::Matrix3cd;

/// Pure Gaussian wave packet
///   psi(r) = (pi hbar)^(-3/4) |det Q|^(-1/2) exp{ i phase
///            + (i/hbar) [ d^T P Q^-1 d / 2 + mean_p . d ] },  d = r - mean_r,
/// with complex width matrices Q, P (Q^T P symmetric, Q^H P - P^H Q = 2i).
/// `phase` already contains -arg(det Q)/2 on a continuous branch.
struct GaussianState {
  Vec3 mean_r = Vec3::Zero();  // m
  Vec3 mean_p = Vec3::Zero();  // kg m/s
  CMat3 Q = CMat3::Identity();
  CMat3 P = CMat3::Identity() * std::complex<double>(0, 1);
  double phase = 0.0;       // rad, global
  double path_phase = 0.0;  // rad, classical action of the mean / hbar
  double arg_det_Q = 0.0;   // continuous branch
  SpinState state;
  double mass = 0.0;
  double hbar = Constants{}.hbar;

  /// Minimum-uncertainty packet with position widths `sigma` (m).
  static GaussianState minimal(const Vec3& r, const Vec3& p, const Vec3& sigma, const SpinState& s,
                               double mass, double hbar = Constants{}.hbar);

  /// Phase-space covariance, ordering (x, y, z, px, py, pz).
  Mat6 sigma() const;
  Vec3 widths() const;
  /// Complex width matrix Z = P Q^-1 (Im Z positive definite).
  CMat3 Z() const;
  void validate() const;
};

/// det(sigma) / (hbar/2)^6; 1 for every pure Gaussian.
double uncertainty_ratio(const GaussianState& s);

struct OverlapResult {
  double visibility = 0.0;
  double phase = 0.0;        // path_phase + shape_phase; arg <a|b> mod 2 pi
  double path_phase = 0.0;   // b.path_phase - a.path_phase
  double shape_phase = 0.0;  // phase - path_phase wrapped into (-pi, pi]
  std::complex<double> amplitude;
};

/// <a|b> in closed form. Requires equal spin labels and masses.
OverlapResult overlap(const GaussianState& a, const GaussianState& b);

/// d|<a|b>|/d(b.mean_r) and d arg<a|b>/d(b.mean_r) from the closed form.
struct OverlapGradient {
  Vec3 visibility = Vec3::Zero();  // 1/m
  Vec3 phase = Vec3::Zero();       // rad/m
};
OverlapGradient overlap_gradient(const GaussianState& a, const GaussianState& b);

/// Thin lens p -> p - m k (r - center) on one axis (0, 1, 2). The default
/// center is the packet mean, which leaves the mean momentum unchanged.
GaussianState apply_lens(const GaussianState& s, double focal_strength, int axis);
GaussianState apply_lens(const GaussianState& s, double focal_strength, int axis,
                         const Vec3& center);

/// Converging lens strength that sets the asymptotic free expansion rate of
/// `axis` to `rate` (m/s). Throws ConfigError if the rate is below the
/// packet's present momentum spread reachable by a lens.
double lens_for_expansion_rate(const GaussianState& s, int axis, double rate);

/// Asymptotic free expansion rate sqrt(Sigma_pp)/m per axis, m/s.
Vec3 expansion_rates(const GaussianState& s);

/// V, grad V, Hess V at r and t, including gravity; energies relative to any
/// fixed zero.
struct LocalPotential {
  double V = 0.0;
  Vec3 grad = Vec3::Zero();
  Mat3 hess = Mat3::Zero();
};
using PotentialFn = std::function<LocalPotential(double t, const Vec3& r)>;

struct WidthSample {
  double t = 0.0;
  Vec3 mean_r = Vec3::Zero();
  Vec3 sigma = Vec3::Zero();  // m
  double tilt_xy = 0.0, tilt_xz = 0.0, tilt_yz = 0.0;  // rad, principal-axis angles
};

struct PropagateOptions {
  double dt = 0.5e-6;
  bool record = true;
  int record_every = 20;
  double g = 9.81;
  /// Energy zero of every spin state at every instant (the uniform offset is
  /// removed by the spin echo).
  Vec3 energy_origin = Vec3::Zero();
};

struct PropagationResult {
  GaussianState state;
  std::vector<WidthSample> series;
  double max_symplectic_error = 0.0;  // max |S J S^T - J| over steps
  int steps = 0;
};

/// Mean by RK4, widths by the fourth-order Magnus exponential of the
/// linearized flow (Hessian refreshed at both Gauss points of every step).
PropagationResult propagate_gaussian(const GaussianState& s, const PotentialFn& potential,
                                     double t0, double t1, const std::vector<double>& nodes,
                                     const PropagateOptions& opt = {});

/// Same with the potential of the arm's spin timeline in `field`.
PropagationResult propagate_gaussian(const GaussianState& s, const QgiSchedule& schedule, Arm arm,
                                     const FieldModel& field, const Species& species, double t0,
                                     double t1, const PropagateOptions& opt = {},
                                     const Constants& c = {});

/// One step's symplectic update exp(Omega) for a quadratic Hamiltonian with
/// Hessians K1, K2 at the Gauss points.
Mat6 magnus_step(const Mat3& K1, const Mat3& K2, double mass, double dt);
/// max |S J S^T - J| after rescaling the off-diagonal blocks by `qp_scale`
/// (units kg/s), which keeps the check dimensionless.
double symplectic_defect(const Mat6& S, double qp_scale = 1.0);

struct PaperRunOptions {
  Timings timings = Timings::from_hold(2272e-6, 77e-6);
  double z_hold = -113e-6;
  double I_idle = 0.0;
  double I_hold = 0.0;             // A; 0 calibrates at z_hold
  double kick_perturbation = 0.0;  // fractional change of the kick current
  BiasField bias;
  Vec3 trap_widths = Vec3(3.13e-6, 1.31e-6, 1.31e-6);
  double release_to_apex = 2930e-6;  // release to turning point
  double release_to_lens = 1100e-6;
  double lens_rate = 0.4e-6 / 1e-3;  // m/s, post-lens expansion along y and z
  double dt = 0.5e-6;
  double g = 9.81;
};

struct PaperRunResult {
  OverlapResult overlap;
  double I_hold = 0.0;
  double analytic_phase = 0.0;  // closed-form square-pulse phase, rad
  Vec3 mid_widths_ballistic = Vec3::Zero();
  Vec3 mid_widths_reference = Vec3::Zero();
  double expansion_rate_no_lens = 0.0;  // z, m/s
  double expansion_rate_lens = 0.0;     // z, m/s
  double max_symplectic_error = 0.0;
  std::vector<WidthSample> ballistic, reference;
  std::vector<std::string> notes;
};

/// Trap ground state, release, thin-lens collimation, ballistic flight to the
/// splitting pulse, both arms through the chip field, overlap at the final
/// π/2. Atom-atom interactions are not modelled.
PaperRunResult run_paper_wavepackets(const PaperRunOptions& opt = {}, const Species& species =
                                         Species::rubidium87(), const Constants& c = {});

void write_width_csv(std::ostream& os, const std::vector<WidthSample>& series, Arm arm);
void write_overlap_csv(std::ostream& os, double two_T, const OverlapResult& r, bool header = true);

}  // namespace qgi

#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "qgi/core.hpp"

namespace qgi {

struct FringeRow {
  double two_T = 0.0;       // s
  double population = 0.0;  // fraction in outport 1
  double sem = 0.0;         // fraction
};

struct NoiseModel {
  double phase_sigma = 0.0;      // rad, absolute
  double phase_sigma_rel = 0.0;  // fraction of |phi|
  double amp_sigma = 0.0;        // population units, also written as the SEM
  std::uint64_t seed = 1;
};

struct FringeScan {
  std::vector<FringeRow> rows;
  NoiseModel noise;
  int clipped = 0;
  std::vector<std::string> warnings;

  void validate() const;
  std::vector<double> x() const;
  std::vector<double> y() const;
};

using ScalarFn = std::function<double(double)>;

/// P = mean + vis/2 cos(phi + n_phi), plus n_amp. Deterministic for a seed.
FringeScan synthesize_scan(const ScalarFn& phase, const ScalarFn& vis, const ScalarFn& mean,
                           const std::vector<double>& grid, const NoiseModel& noise);

/// Scan resembling the measured one: 2T from 0.2 to 2.4 ms in 5 us steps,
/// closed-form phase at `g`, visibility falling linearly from 0.8 to 0.2,
/// mean 0.5.
FringeScan paper_like_scan(const NoiseModel& noise, double g = 9.91,
                           const Species& species = Species::rubidium87(), const Constants& c = {});
double paper_like_visibility(double two_T);

/// Uniform grid [a, b] with step h (b included when it falls on the grid).
std::vector<double> uniform_grid(double a, double b, double h);

/// Polynomial in u = (x - x0) / xs; coefficients lowest order first.
struct Poly {
  std::vector<double> c;
  double x0 = 0.0;
  double xs = 1.0;

  double operator()(double x) const;
  double derivative(double x) const;
  /// Coefficients of the same polynomial in powers of x.
  std::vector<double> raw() const;

  static Poly fit(const std::vector<double>& x, const std::vector<double>& y, int order,
                  const std::vector<double>& w = {});
};

struct ExtractOptions {
  int envelope_order = 7;
  int smoothing_window = 3;
  /// Adjacent extrema closer than this fraction of the median swing are dropped as noise.
  double prominence = 0.3;
  /// Phase pinned to (-pi, pi] at this abscissa to fix the 2 pi n ambiguity.
  double anchor_x = 0.0;
  double anchor_phase = 0.0;
  int min_oscillations = 4;
  /// Refine envelope polynomials of this order jointly with the cubic in the
  /// final fit; the refined solution is kept only while its visibility stays
  /// within [0, 1] and its phase within pi/2 of the fixed-envelope fit.
  bool refine_envelope = true;
  int refine_order = 3;
  /// Largest tolerated per-sample phase increment before sampling is declared too coarse.
  double max_phase_step = 2.0 * 3.14159265358979323846 / 3.0;
};

struct PhaseFit {
  Poly envelope_mean, envelope_vis;  // extraction stage, whole scan
  Poly fit_mean, fit_vis;            // final-fit envelopes, fit window only
  bool envelope_refined = false;
  Poly hilbert_guess;  // cubic through the unwrapped Hilbert phase
  Poly phase_poly;     // final cubic
  std::vector<double> cubic_raw;  // phase_poly in powers of 2T (s), c0..c3
  std::vector<int> extrema;       // indices into the scan
  double window_lo = 0.0, window_hi = 0.0;  // final fit window (s)
  std::vector<double> hilbert_phase;        // unwrapped, every point
  std::vector<double> residuals;            // hilbert - final, every point (rad)
  std::vector<double> phase_sigma;          // rad per point from the signal SEM
  double chi2_red = 0.0;
  int iterations = 0;

  double phase(double two_T) const { return phase_poly(two_T); }
  double rate(double two_T) const { return phase_poly.derivative(two_T); }
};

/// Envelopes, Hilbert phase, cubic guess and the direct least-squares fit of
/// the population model (cubic phase, envelope polynomials refined alongside);
/// the first and last oscillation are left out of the final fit.
PhaseFit extract_phase(const FringeScan& scan, const ExtractOptions& opt = {});

/// Indices of alternating local extrema of the smoothed series (maxima and
/// minima interleaved), noise pairs pruned by `prominence`.
std::vector<int> find_extrema(const std::vector<double>& y, int window, double prominence = 0.3);

/// Discrete analytic signal of a real uniformly sampled series, mirror-padded
/// on both sides before the FFT.
std::vector<std::complex<double>> analytic_signal(const std::vector<double>& s);

std::vector<double> unwrap(const std::vector<double>& wrapped);

/// Signal standard deviation for a cos(phi) with Gaussian phase and amplitude
/// noise, trigonometric factors averaged over the phase distribution.
double propagate_uncertainty(double a, double phi, double dphi, double da);
/// Linear propagation without averaging.
double propagate_uncertainty_linear(double a, double phi, double dphi, double da);
/// Inverse for dphi at given dS (da fixed, default negligible).
double phase_sigma_from_signal(double dS, double a, double phi, double da = 0.0);

struct DeviationModel {
  double alpha = 0.0;
  double prefactor_scale = 1.0;
};

struct DeviationFit {
  DeviationModel model;
  double sigma_alpha = 0.0;
  double sigma_scale = 0.0;
  double chi2_red = 0.0;
};

/// scale * (m g^2 / 3 hbar) [ (m g^2 / 3 hbar)^(alpha/3) T^(3+alpha)
///   + T^2 Tk + T (Tk^2 + Tk Td) - Td (Tk + Td)^2 ],  T = two_T / 2.
double deviation_phase(double two_T, const DeviationModel& m, double T_kick, double T_d, double g,
                       const Species& species, const Constants& c = {});

/// Gedanken-form rate (3 + alpha) (m g^2 / 24 hbar)^((3+alpha)/3) (2T)^(2+alpha).
double deviation_rate(double two_T, double alpha, double g, const Species& species,
                      const Constants& c = {});

DeviationFit fit_deviation(const std::vector<double>& two_T, const std::vector<double>& phase,
                           const std::vector<double>& sigma, double T_kick, double T_d, double g,
                           const Species& species, const Constants& c = {});

/// Least-squares cubic of per-point phase sigma against 2T (raw powers, c0..c3).
std::vector<double> fit_std_polynomial(const std::vector<double>& two_T,
                                       const std::vector<double>& sigma);

void write_scan_csv(std::ostream& os, const FringeScan& scan);
FringeScan read_scan_csv(std::istream& is);
/// Structured text with coefficients, windows and noise seed.
void write_phase_fit(std::ostream& os, const PhaseFit& fit, const FringeScan& scan);

/// Data with error bars, envelopes and the fitted model.
void write_fringe_svg(std::ostream& os, const FringeScan& scan, const PhaseFit* fit);
/// Phase panel plus residual panel against a reference curve.
void write_phase_svg(std::ostream& os, const std::vector<double>& two_T,
                     const std::vector<double>& phase, const std::vector<double>& sigma,
                     const ScalarFn& reference, const std::string& reference_label);

}  // namespace qgi

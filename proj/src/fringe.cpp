#include "qgi/fringe.hpp"
#include "qgi/phases.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <fftw3.h>
#include <fmt/format.h>
#include <Eigen/Dense>
#include <unsupported/Eigen/NonLinearOptimization>

namespace qgi {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;

// FFTW planning is not thread-safe; execution is.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const size_t k = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + k, v.end());
  return v[k];
}

std::vector<double> smooth(const std::vector<double>& y, int window) {
  const int n = static_cast<int>(y.size());
  const int h = std::max(0, window / 2);
  std::vector<double> out(y.size());
  for (int i = 0; i < n; ++i) {
    const int a = std::max(0, i - h), b = std::min(n - 1, i + h);
    double s = 0;
    for (int j = a; j <= b; ++j) s += y[j];
    out[i] = s / (b - a + 1);
  }
  return out;
}

// Straight lines through (x[idx], y[idx]), continued along the end segments
// and clipped to [0, 1].
std::vector<double> polyline(const std::vector<double>& x, const std::vector<double>& y,
                             const std::vector<int>& idx) {
  std::vector<double> out(x.size());
  const size_t last = idx.size() - 1;
  for (size_t i = 0; i < x.size(); ++i) {
    size_t k = 0;
    if (idx.size() > 1) {
      while (k + 1 < last && static_cast<size_t>(idx[k + 1]) < i) ++k;
    }
    if (idx.size() == 1) {
      out[i] = y[idx[0]];
      continue;
    }
    const double xa = x[idx[k]], xb = x[idx[k + 1]];
    const double s = (x[i] - xa) / (xb - xa);
    out[i] = std::clamp((1 - s) * y[idx[k]] + s * y[idx[k + 1]], 0.0, 1.0);
  }
  return out;
}

// Population model mean(u) + vis(u)/2 cos(phase(u)) with a cubic phase and
// envelope polynomials of order `order`, all in the same normalized u.
// Parameters: phase c0..c3, then (when refined) mean and visibility
// coefficients; otherwise the envelopes are held at `env`.
struct PopulationFunctor {
  using Scalar = double;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;

  std::vector<double> u, y, sigma;
  int order = 7;
  bool refine = true;
  Eigen::VectorXd env;  // mean then visibility coefficients

  int inputs() const { return refine ? 4 + 2 * (order + 1) : 4; }
  int values() const { return static_cast<int>(u.size()); }

  Eigen::VectorXd full(const Eigen::VectorXd& c) const {
    if (refine) return c;
    Eigen::VectorXd out(4 + env.size());
    out << c, env;
    return out;
  }
  static double horner(const Eigen::VectorXd& c, int off, int n, double u) {
    double s = 0;
    for (int k = n; k-- > 0;) s = s * u + c(off + k);
    return s;
  }
  int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
    const Eigen::VectorXd c = full(x);
    const int n = order + 1;
    for (int i = 0; i < values(); ++i) {
      const double p = horner(c, 0, 4, u[i]);
      const double m = horner(c, 4, n, u[i]), v = horner(c, 4 + n, n, u[i]);
      f(i) = (m + 0.5 * v * std::cos(p) - y[i]) / sigma[i];
    }
    return 0;
  }
  int df(const Eigen::VectorXd& x, Eigen::MatrixXd& J) const {
    const Eigen::VectorXd c = full(x);
    const int n = order + 1;
    for (int i = 0; i < values(); ++i) {
      const double p = horner(c, 0, 4, u[i]);
      const double v = horner(c, 4 + n, n, u[i]);
      const double dp = -0.5 * v * std::sin(p) / sigma[i];
      const double dv = 0.5 * std::cos(p) / sigma[i];
      double uk = 1;
      for (int k = 0; k < n; ++k, uk *= u[i]) {
        if (k < 4) J(i, k) = dp * uk;
        if (!refine) continue;
        J(i, 4 + k) = uk / sigma[i];
        J(i, 4 + n + k) = dv * uk;
      }
    }
    return 0;
  }
};

struct DeviationFunctor {
  using Scalar = double;
  enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
  using InputType = Eigen::VectorXd;
  using ValueType = Eigen::VectorXd;
  using JacobianType = Eigen::MatrixXd;

  std::vector<double> T, phi, sigma;
  double K = 0, Tk = 0, Td = 0;

  int inputs() const { return 2; }
  int values() const { return static_cast<int>(T.size()); }

  // p = (alpha, scale)
  double pulse_terms(double t) const {
    return t * t * Tk + t * (Tk * Tk + Tk * Td) - Td * (Tk + Td) * (Tk + Td);
  }
  int operator()(const Eigen::VectorXd& p, Eigen::VectorXd& f) const {
    for (int i = 0; i < values(); ++i) {
      const double core = std::pow(K, p(0) / 3) * std::pow(T[i], 3 + p(0));
      f(i) = (p(1) * K * (core + pulse_terms(T[i])) - phi[i]) / sigma[i];
    }
    return 0;
  }
  int df(const Eigen::VectorXd& p, Eigen::MatrixXd& J) const {
    for (int i = 0; i < values(); ++i) {
      const double core = std::pow(K, p(0) / 3) * std::pow(T[i], 3 + p(0));
      J(i, 0) = p(1) * K * core * (std::log(K) / 3 + std::log(T[i])) / sigma[i];
      J(i, 1) = K * (core + pulse_terms(T[i])) / sigma[i];
    }
    return 0;
  }
};

}  // namespace

void FringeScan::validate() const {
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!(r.population >= 0 && r.population <= 1))
      throw ConfigError(fmt::format("population {} at row {} outside [0, 1]", r.population, i));
    if (!(r.sem >= 0)) throw ConfigError(fmt::format("negative SEM at row {}", i));
    if (i > 0 && !(r.two_T > rows[i - 1].two_T))
      throw ConfigError(fmt::format("2T not strictly increasing at row {}", i));
  }
}

std::vector<double> FringeScan::x() const {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.two_T);
  return v;
}

std::vector<double> FringeScan::y() const {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(r.population);
  return v;
}

std::vector<double> uniform_grid(double a, double b, double h) {
  if (!(h > 0) || !(b >= a)) throw ConfigError("invalid grid");
  const int n = static_cast<int>(std::floor((b - a) / h + 1e-9));
  std::vector<double> g;
  for (int i = 0; i <= n; ++i) g.push_back(a + i * h);
  return g;
}

FringeScan synthesize_scan(const ScalarFn& phase, const ScalarFn& vis, const ScalarFn& mean,
                           const std::vector<double>& grid, const NoiseModel& noise) {
  if (noise.phase_sigma < 0 || noise.phase_sigma_rel < 0 || noise.amp_sigma < 0)
    throw ConfigError("noise widths must be non-negative");
  FringeScan scan;
  scan.noise = noise;
  std::mt19937_64 rng(noise.seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (size_t i = 0; i < grid.size(); ++i) {
    if (i > 0 && !(grid[i] > grid[i - 1])) throw ConfigError("grid must be strictly increasing");
    const double x = grid[i];
    const double v = vis(x), m = mean(x), phi = phase(x);
    if (v < 0 || v > 1 || m - 0.5 * v < 0 || m + 0.5 * v > 1)
      throw ConfigError(fmt::format("fringe model leaves [0, 1] at 2T = {:.6g} s", x));
    // draw both deviates every point so the sequence does not depend on which widths are zero
    const double np = n01(rng), na = n01(rng);
    const double sp = noise.phase_sigma + noise.phase_sigma_rel * std::abs(phi);
    double P = m + 0.5 * v * std::cos(phi + sp * np) + noise.amp_sigma * na;
    if (P < 0 || P > 1) {
      ++scan.clipped;
      P = std::clamp(P, 0.0, 1.0);
    }
    scan.rows.push_back({x, P, noise.amp_sigma});
  }
  if (scan.clipped > 0)
    scan.warnings.push_back(fmt::format("{} populations clipped to [0, 1]", scan.clipped));
  return scan;
}

double paper_like_visibility(double two_T) { return 0.8 - 0.6 * (two_T - 0.2e-3) / 2.2e-3; }

FringeScan paper_like_scan(const NoiseModel& noise, double g, const Species& species,
                           const Constants& c) {
  return synthesize_scan(
      [&](double x) { return analytic_qgi_phase(Timings::paper(x), g, species, c); },
      paper_like_visibility, [](double) { return 0.5; }, uniform_grid(0.2e-3, 2.4e-3, 5e-6), noise);
}

double Poly::operator()(double x) const {
  const double u = (x - x0) / xs;
  double s = 0;
  for (size_t k = c.size(); k-- > 0;) s = s * u + c[k];
  return s;
}

double Poly::derivative(double x) const {
  const double u = (x - x0) / xs;
  double s = 0;
  for (size_t k = c.size(); k-- > 1;) s = s * u + k * c[k];
  return s / xs;
}

std::vector<double> Poly::raw() const {
  // sum_k c_k ((x - x0)/xs)^k expanded binomially
  std::vector<double> out(c.size(), 0.0);
  for (size_t k = 0; k < c.size(); ++k) {
    double binom = 1;
    for (size_t j = 0; j <= k; ++j) {
      out[j] += c[k] * binom * std::pow(-x0, static_cast<double>(k - j)) / std::pow(xs, static_cast<double>(k));
      binom = binom * static_cast<double>(k - j) / static_cast<double>(j + 1);
    }
  }
  return out;
}

Poly Poly::fit(const std::vector<double>& x, const std::vector<double>& y, int order,
               const std::vector<double>& w) {
  if (x.size() != y.size() || (!w.empty() && w.size() != x.size()))
    throw ConfigError("polynomial fit: size mismatch");
  if (order < 0 || static_cast<int>(x.size()) <= order)
    throw NumericalError(fmt::format("polynomial fit of order {} needs more than {} points", order,
                                     x.size()),
                         "fit");
  Poly p;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  p.x0 = 0.5 * (*lo + *hi);
  p.xs = *hi > *lo ? 0.5 * (*hi - *lo) : 1.0;
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd A(n, order + 1);
  Eigen::VectorXd b(n);
  for (int i = 0; i < n; ++i) {
    const double u = (x[i] - p.x0) / p.xs;
    const double wi = w.empty() ? 1.0 : w[i];
    double uk = 1;
    for (int k = 0; k <= order; ++k, uk *= u) A(i, k) = wi * uk;
    b(i) = wi * y[i];
  }
  const Eigen::VectorXd c = A.colPivHouseholderQr().solve(b);
  p.c.assign(c.data(), c.data() + c.size());
  return p;
}

std::vector<int> find_extrema(const std::vector<double>& y, int window, double prominence) {
  const auto s = smooth(y, window);
  struct Ext { int i; bool max; };
  std::vector<Ext> ex;
  int last_sign = 0;
  for (size_t i = 1; i < s.size(); ++i) {
    const double d = s[i] - s[i - 1];
    const int sg = d > 0 ? 1 : (d < 0 ? -1 : 0);
    if (sg == 0) continue;
    if (last_sign != 0 && sg != last_sign) {
      // turning point at the last sample before the slope changed sign
      int k = static_cast<int>(i) - 1;
      ex.push_back({k, last_sign > 0});
    }
    last_sign = sg;
  }
  // alternate types: keep the more extreme of a same-type run
  std::vector<Ext> alt;
  for (const auto& e : ex) {
    if (!alt.empty() && alt.back().max == e.max) {
      if ((e.max && s[e.i] > s[alt.back().i]) || (!e.max && s[e.i] < s[alt.back().i])) alt.back() = e;
    } else {
      alt.push_back(e);
    }
  }
  // prune noise pairs, smallest swing first
  while (alt.size() > 2) {
    std::vector<double> swing;
    for (size_t k = 0; k + 1 < alt.size(); ++k) swing.push_back(std::abs(s[alt[k + 1].i] - s[alt[k].i]));
    const double thr = prominence * median(swing);
    const auto it = std::min_element(swing.begin(), swing.end());
    if (*it >= thr) break;
    const size_t k = static_cast<size_t>(it - swing.begin());
    if (k == 0) alt.erase(alt.begin());
    else if (k + 2 == alt.size()) alt.pop_back();
    else alt.erase(alt.begin() + k, alt.begin() + k + 2);
  }
  std::vector<int> out;
  for (const auto& e : alt) out.push_back(e.i);
  return out;
}

std::vector<std::complex<double>> analytic_signal(const std::vector<double>& s) {
  const int n = static_cast<int>(s.size());
  if (n < 2) throw NumericalError("analytic signal needs at least two samples", "extraction");
  // even reflection on both sides keeps the padded series continuous
  std::vector<double> pad;
  pad.reserve(3 * n);
  for (int i = n - 1; i >= 0; --i) pad.push_back(s[i]);
  pad.insert(pad.end(), s.begin(), s.end());
  for (int i = n - 1; i >= 0; --i) pad.push_back(s[i]);
  const int L = static_cast<int>(pad.size());
  fftw_complex* buf = fftw_alloc_complex(L);
  fftw_plan fwd, bwd;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fwd = fftw_plan_dft_1d(L, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
    bwd = fftw_plan_dft_1d(L, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  for (int i = 0; i < L; ++i) { buf[i][0] = pad[i]; buf[i][1] = 0.0; }
  fftw_execute(fwd);
  for (int k = 1; k < L; ++k) {
    double h = 0.0;
    if (2 * k < L) h = 2.0;
    else if (2 * k == L) h = 1.0;
    buf[k][0] *= h;
    buf[k][1] *= h;
  }
  fftw_execute(bwd);
  std::vector<std::complex<double>> out(n);
  for (int i = 0; i < n; ++i) out[i] = {buf[n + i][0] / L, buf[n + i][1] / L};
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(bwd);
  }
  fftw_free(buf);
  return out;
}

std::vector<double> unwrap(const std::vector<double>& w) {
  std::vector<double> out(w);
  double offset = 0;
  for (size_t i = 1; i < w.size(); ++i) {
    const double d = w[i] - w[i - 1];
    if (d > kPi) offset -= kTwoPi;
    else if (d < -kPi) offset += kTwoPi;
    out[i] = w[i] + offset;
  }
  return out;
}

PhaseFit extract_phase(const FringeScan& scan, const ExtractOptions& opt) {
  scan.validate();
  const auto x = scan.x(), y = scan.y();
  const int n = static_cast<int>(x.size());
  if (n < 16) throw NumericalError("too few points for phase extraction", "extraction");
  const double h = (x.back() - x.front()) / (n - 1);
  for (int i = 1; i < n; ++i)
    if (std::abs(x[i] - x[i - 1] - h) > 1e-6 * h)
      throw NumericalError("phase extraction needs a uniform 2T grid", "extraction");

  PhaseFit fit;
  fit.extrema = find_extrema(y, opt.smoothing_window, opt.prominence);
  std::vector<int> maxima, minima;
  const auto ys = smooth(y, opt.smoothing_window);
  for (size_t k = 0; k < fit.extrema.size(); ++k) {
    const int i = fit.extrema[k];
    const bool is_max = (k + 1 < fit.extrema.size()) ? ys[i] > ys[fit.extrema[k + 1]]
                                                     : ys[i] > ys[fit.extrema[k - 1]];
    (is_max ? maxima : minima).push_back(i);
  }
  const int oscillations = static_cast<int>(std::min(maxima.size(), minima.size()));
  if (oscillations < opt.min_oscillations || fit.extrema.size() < 6)
    throw NumericalError(fmt::format("found {} oscillations, need at least {}", oscillations,
                                     opt.min_oscillations),
                         "extraction");

  // extremum values from the vertex of the parabola through the neighbours
  std::vector<double> yv(y);
  for (int i : fit.extrema) {
    if (i < 1 || i + 1 >= n) continue;
    const double den = y[i - 1] - 2 * y[i] + y[i + 1];
    if (den == 0) continue;
    const double d = 0.5 * (y[i - 1] - y[i + 1]) / den;
    if (std::abs(d) <= 1) yv[i] = y[i] - 0.25 * (y[i - 1] - y[i + 1]) * d;
  }
  const auto upper = polyline(x, yv, maxima), lower = polyline(x, yv, minima);
  const auto pu = Poly::fit(x, upper, opt.envelope_order);
  const auto pl = Poly::fit(x, lower, opt.envelope_order);
  std::vector<double> mean(n), vis(n), norm(n);
  for (int i = 0; i < n; ++i) {
    mean[i] = 0.5 * (pu(x[i]) + pl(x[i]));
    vis[i] = std::max(pu(x[i]) - pl(x[i]), 1e-6);
    norm[i] = (y[i] - mean[i]) / (0.5 * vis[i]);
  }
  {
    std::vector<double> ym(n), yv(n);
    for (int i = 0; i < n; ++i) { ym[i] = mean[i]; yv[i] = vis[i]; }
    fit.envelope_mean = Poly::fit(x, ym, opt.envelope_order);
    fit.envelope_vis = Poly::fit(x, yv, opt.envelope_order);
  }

  const auto z = analytic_signal(norm);
  std::vector<double> wrapped(n);
  for (int i = 0; i < n; ++i) wrapped[i] = std::arg(z[i]);
  fit.hilbert_phase = unwrap(wrapped);

  // The first and last 2 pi of phase are excluded; the window edges snap to
  // extrema, located in phase by a cubic through the Hilbert phase between the
  // outermost extrema.
  const int e = static_cast<int>(fit.extrema.size());
  const auto& H = fit.hilbert_phase;
  const Poly coarse = Poly::fit(std::vector<double>(x.begin() + fit.extrema[0], x.begin() + fit.extrema[e - 1] + 1),
                                std::vector<double>(H.begin() + fit.extrema[0], H.begin() + fit.extrema[e - 1] + 1), 3);
  const double sgn = coarse(x.back()) >= coarse(x.front()) ? 1.0 : -1.0;
  const double start = sgn * coarse(x.front()), stop = sgn * coarse(x.back());
  int lo = -1, hi = -1;
  for (int i : fit.extrema) {
    const double p = sgn * coarse(x[i]);
    if (lo < 0 && p >= start + 1.5 * kPi) lo = i;
    if (p <= stop - 1.5 * kPi) hi = i;
  }
  if (lo < 0 || hi < 0 || hi <= lo)
    throw NumericalError("no data left after excluding the first and last oscillation", "extraction");
  fit.window_lo = x[lo];
  fit.window_hi = x[hi];
  int big = 0;
  for (int i = lo + 1; i <= hi; ++i)
    if (std::abs(H[i] - H[i - 1]) > opt.max_phase_step) ++big;
  if (big > std::max(1, (hi - lo) / 100))
    throw NumericalError(fmt::format("{} phase steps above {:.2f} rad: sampling too coarse", big,
                                     opt.max_phase_step),
                         "sampling");

  std::vector<double> xw(x.begin() + lo, x.begin() + hi + 1);
  std::vector<double> pw(fit.hilbert_phase.begin() + lo, fit.hilbert_phase.begin() + hi + 1);
  fit.hilbert_guess = Poly::fit(xw, pw, 3);
  const double shift =
      kTwoPi * std::round((fit.hilbert_guess(opt.anchor_x) - opt.anchor_phase) / kTwoPi);
  fit.hilbert_guess.c[0] -= shift;
  for (auto& v : fit.hilbert_phase) v -= shift;

  PopulationFunctor fn;
  fn.order = opt.refine_order;
  const Poly& g = fit.hilbert_guess;
  for (int i = lo; i <= hi; ++i) {
    fn.u.push_back((x[i] - g.x0) / g.xs);
    fn.y.push_back(y[i]);
    fn.sigma.push_back(scan.rows[i].sem > 0 ? scan.rows[i].sem : 1.0);
  }
  const std::vector<double> mw(mean.begin() + lo, mean.begin() + hi + 1);
  const std::vector<double> vw(vis.begin() + lo, vis.begin() + hi + 1);
  if (opt.refine_order < 0 || opt.envelope_order < 0) throw ConfigError("negative polynomial order");
  fit.fit_mean = Poly::fit(xw, mw, opt.refine_order);
  fit.fit_vis = Poly::fit(xw, vw, opt.refine_order);
  const int ne = opt.refine_order + 1;
  fn.env.resize(2 * ne);
  for (int k = 0; k < ne; ++k) {
    fn.env(k) = fit.fit_mean.c[k];
    fn.env(ne + k) = fit.fit_vis.c[k];
  }
  auto solve = [](PopulationFunctor& f, Eigen::VectorXd& c) {
    Eigen::LevenbergMarquardt<PopulationFunctor> lm(f);
    lm.parameters.xtol = 1e-13;
    lm.parameters.ftol = 1e-13;
    lm.parameters.maxfev = 4000;
    lm.minimize(c);
    return static_cast<int>(lm.iter);
  };
  // cubic against the fixed envelopes first, then everything together
  fn.refine = false;
  Eigen::VectorXd c(4);
  for (int k = 0; k < 4; ++k) c(k) = g.c[k];
  fit.iterations = solve(fn, c);
  fit.envelope_refined = false;
  if (opt.refine_envelope) {
    fn.refine = true;
    Eigen::VectorXd cc(fn.inputs());
    cc << c, fn.env;
    const int it = solve(fn, cc);
    bool ok = true;
    for (double u : fn.u) {
      const double v = PopulationFunctor::horner(cc, 4 + ne, ne, u);
      const double dp = PopulationFunctor::horner(cc, 0, 4, u) - PopulationFunctor::horner(c, 0, 4, u);
      if (!(v >= 0 && v <= 1) || !(std::abs(dp) < 0.5 * kPi)) ok = false;
    }
    fit.iterations += it;
    if (ok) {
      c = cc;
      fit.envelope_refined = true;
    } else {
      fn.refine = false;
    }
  }
  fit.phase_poly = g;
  for (int k = 0; k < 4; ++k) fit.phase_poly.c[k] = c(k);
  if (fit.envelope_refined) {
    for (int k = 0; k < ne; ++k) {
      fit.fit_mean.c[k] = c(4 + k);
      fit.fit_vis.c[k] = c(4 + ne + k);
    }
  }
  // the same 2 pi n convention for the final cubic
  const double s2 = kTwoPi * std::round((fit.phase_poly(opt.anchor_x) - opt.anchor_phase) / kTwoPi);
  fit.phase_poly.c[0] -= s2;
  fit.cubic_raw = fit.phase_poly.raw();
  Eigen::VectorXd f(fn.values());
  fn(c, f);
  fit.chi2_red = f.squaredNorm() / std::max(1, fn.values() - fn.inputs());

  fit.residuals.resize(n);
  fit.phase_sigma.resize(n);
  for (int i = 0; i < n; ++i) {
    fit.residuals[i] = fit.hilbert_phase[i] - fit.phase_poly(x[i]);
    const double sem = scan.rows[i].sem;
    const bool inside = x[i] >= fit.window_lo && x[i] <= fit.window_hi;
    const double a = 0.5 * std::max(inside ? fit.fit_vis(x[i]) : vis[i], 1e-6);
    fit.phase_sigma[i] = sem > 0 ? phase_sigma_from_signal(sem, a, fit.phase_poly(x[i])) : 0.0;
  }
  return fit;
}

double propagate_uncertainty(double a, double phi, double dphi, double da) {
  if (dphi < 0 || da < 0) throw ConfigError("uncertainties must be non-negative");
  const double c = std::cos(2 * phi) * std::exp(-2 * dphi * dphi);
  return std::sqrt(0.5 * (1 + c) * da * da + 0.5 * a * a * (1 - c) * dphi * dphi);
}

double propagate_uncertainty_linear(double a, double phi, double dphi, double da) {
  if (dphi < 0 || da < 0) throw ConfigError("uncertainties must be non-negative");
  const double cp = std::cos(phi), sp = std::sin(phi);
  return std::sqrt(da * da * cp * cp + a * a * sp * sp * dphi * dphi);
}

double phase_sigma_from_signal(double dS, double a, double phi, double da) {
  if (dS < 0 || da < 0) throw ConfigError("uncertainties must be non-negative");
  const double floor = propagate_uncertainty(a, phi, 0.0, da);
  if (dS < floor)
    throw NumericalError(fmt::format("signal sigma {:.3g} below the amplitude floor {:.3g}", dS, floor),
                         "no_solution");
  if (dS == floor) return 0.0;
  if (!(a > 0)) throw NumericalError("zero amplitude carries no phase information", "no_solution");
  double lo = 0.0, hi = 1e-3;
  while (propagate_uncertainty(a, phi, hi, da) < dS) {
    hi *= 2;
    if (hi > 1e6) throw NumericalError("phase sigma diverges", "no_solution");
  }
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (propagate_uncertainty(a, phi, mid, da) < dS ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double deviation_phase(double two_T, const DeviationModel& m, double Tk, double Td, double g,
                       const Species& species, const Constants& c) {
  const double K = species.mass_kg * g * g / (3 * c.hbar);
  const double T = 0.5 * two_T;
  return m.prefactor_scale * K *
         (std::pow(K, m.alpha / 3) * std::pow(T, 3 + m.alpha) + T * T * Tk + T * (Tk * Tk + Tk * Td) -
          Td * (Tk + Td) * (Tk + Td));
}

double deviation_rate(double two_T, double alpha, double g, const Species& species,
                      const Constants& c) {
  const double K = species.mass_kg * g * g / (24 * c.hbar);
  return (3 + alpha) * std::pow(K, (3 + alpha) / 3) * std::pow(two_T, 2 + alpha);
}

DeviationFit fit_deviation(const std::vector<double>& two_T, const std::vector<double>& phase,
                           const std::vector<double>& sigma, double Tk, double Td, double g,
                           const Species& species, const Constants& c) {
  if (two_T.size() != phase.size() || (!sigma.empty() && sigma.size() != phase.size()))
    throw ConfigError("deviation fit: size mismatch");
  if (two_T.size() < 4) throw NumericalError("deviation fit needs at least 4 points", "ill_conditioned");
  double pmin = INFINITY, pmax = 0;
  for (double p : phase) {
    pmin = std::min(pmin, std::abs(p));
    pmax = std::max(pmax, std::abs(p));
  }
  if (!(pmax >= 10 * pmin))
    throw NumericalError("phase data span less than a decade", "ill_conditioned");
  DeviationFunctor fn;
  fn.K = species.mass_kg * g * g / (3 * c.hbar);
  fn.Tk = Tk;
  fn.Td = Td;
  for (size_t i = 0; i < two_T.size(); ++i) {
    if (!(two_T[i] > 0)) throw ConfigError("deviation fit needs 2T > 0");
    fn.T.push_back(0.5 * two_T[i]);
    fn.phi.push_back(phase[i]);
    fn.sigma.push_back(sigma.empty() || !(sigma[i] > 0) ? 1.0 : sigma[i]);
  }
  Eigen::VectorXd p(2);
  p << 0.0, 1.0;
  Eigen::LevenbergMarquardt<DeviationFunctor> lm(fn);
  lm.parameters.xtol = 1e-14;
  lm.parameters.ftol = 1e-14;
  lm.minimize(p);
  DeviationFit out;
  out.model.alpha = p(0);
  out.model.prefactor_scale = p(1);
  if (!(std::abs(p(0)) <= 1))
    throw NumericalError(fmt::format("fitted alpha {:.3g} outside [-1, 1]", p(0)), "ill_conditioned");
  Eigen::VectorXd f(fn.values());
  Eigen::MatrixXd J(fn.values(), 2);
  fn(p, f);
  fn.df(p, J);
  const int dof = std::max(1, fn.values() - 2);
  out.chi2_red = f.squaredNorm() / dof;
  const Eigen::Matrix2d JtJ = J.transpose() * J;
  if (std::abs(JtJ.determinant()) < 1e-300)
    throw NumericalError("singular deviation-fit normal matrix", "ill_conditioned");
  const Eigen::Matrix2d cov = JtJ.inverse() * out.chi2_red;
  out.sigma_alpha = std::sqrt(cov(0, 0));
  out.sigma_scale = std::sqrt(cov(1, 1));
  return out;
}

std::vector<double> fit_std_polynomial(const std::vector<double>& two_T,
                                       const std::vector<double>& sigma) {
  if (two_T.size() < 8) throw NumericalError("STD polynomial needs at least 8 points", "fit");
  return Poly::fit(two_T, sigma, 3).raw();
}

void write_scan_csv(std::ostream& os, const FringeScan& scan) {
  os << fmt::format("# seed={} phase_sigma={} phase_sigma_rel={} amp_sigma={} clipped={}\n",
                    scan.noise.seed, scan.noise.phase_sigma, scan.noise.phase_sigma_rel,
                    scan.noise.amp_sigma, scan.clipped);
  os << "two_T_us,population,sem\n";
  for (const auto& r : scan.rows)
    os << fmt::format("{:.6f},{:.9f},{:.9f}\n", r.two_T * 1e6, r.population, r.sem);
}

FringeScan read_scan_csv(std::istream& is) {
  FringeScan scan;
  std::string line;
  bool header = false;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line.rfind("two_T_us,population,sem", 0) != 0)
        throw ConfigError(fmt::format("scan CSV header must be two_T_us,population,sem (line {})", lineno));
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c, ','))
      throw ConfigError(fmt::format("malformed scan row at line {}", lineno));
    try {
      scan.rows.push_back({std::stod(a) * 1e-6, std::stod(b), std::stod(c)});
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("non-numeric scan row at line {}", lineno));
    }
  }
  if (!header) throw ConfigError("scan CSV has no header");
  scan.validate();
  return scan;
}

void write_phase_fit(std::ostream& os, const PhaseFit& fit, const FringeScan& scan) {
  auto list = [](const std::vector<double>& v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) s += fmt::format("{}{:.12e}", i ? ", " : "", v[i]);
    return s + "]";
  };
  os << "phase_fit {\n";
  os << fmt::format("  seed = {}\n", scan.noise.seed);
  os << fmt::format("  points = {}\n", scan.rows.size());
  os << fmt::format("  extrema = {}\n", fit.extrema.size());
  os << fmt::format("  fit_window_s = [{:.9e}, {:.9e}]\n", fit.window_lo, fit.window_hi);
  os << fmt::format("  envelope_mean = {{ x0 = {:.9e}, xs = {:.9e}, c = {} }}\n", fit.envelope_mean.x0,
                    fit.envelope_mean.xs, list(fit.envelope_mean.c));
  os << fmt::format("  envelope_vis = {{ x0 = {:.9e}, xs = {:.9e}, c = {} }}\n", fit.envelope_vis.x0,
                    fit.envelope_vis.xs, list(fit.envelope_vis.c));
  os << fmt::format("  hilbert_guess_raw = {}\n", list(fit.hilbert_guess.raw()));
  os << fmt::format("  phase_cubic_raw = {}\n", list(fit.cubic_raw));
  os << fmt::format("  chi2_red = {:.6f}\n", fit.chi2_red);
  os << fmt::format("  iterations = {}\n", fit.iterations);
  os << "}\n";
}

namespace {

struct PlotFrame {
  double x0, x1, y0, y1;  // data range
  double px, py, pw, ph;  // pixel box
  double X(double x) const { return px + (x - x0) / (x1 - x0) * pw; }
  double Y(double y) const { return py + ph - (y - y0) / (y1 - y0) * ph; }
};

void axes(std::ostream& os, const PlotFrame& f, const std::string& xl, const std::string& yl) {
  os << fmt::format("<rect x='{}' y='{}' width='{}' height='{}' fill='none' stroke='black'/>\n", f.px,
                    f.py, f.pw, f.ph);
  for (int k = 0; k <= 4; ++k) {
    const double xv = f.x0 + (f.x1 - f.x0) * k / 4, yv = f.y0 + (f.y1 - f.y0) * k / 4;
    os << fmt::format("<text x='{:.1f}' y='{:.1f}' font-size='10' text-anchor='middle'>{:.4g}</text>\n",
                      f.X(xv), f.py + f.ph + 14, xv);
    os << fmt::format("<text x='{:.1f}' y='{:.1f}' font-size='10' text-anchor='end'>{:.3g}</text>\n",
                      f.px - 4, f.Y(yv) + 3, yv);
  }
  os << fmt::format("<text x='{:.1f}' y='{:.1f}' font-size='12' text-anchor='middle'>{}</text>\n",
                    f.px + f.pw / 2, f.py + f.ph + 30, xl);
  os << fmt::format("<text x='{:.1f}' y='{:.1f}' font-size='12' text-anchor='middle' "
                    "transform='rotate(-90 {:.1f} {:.1f})'>{}</text>\n",
                    f.px - 40, f.py + f.ph / 2, f.px - 40, f.py + f.ph / 2, yl);
}

void curve(std::ostream& os, const PlotFrame& f, const std::vector<double>& x, const ScalarFn& fn,
           const std::string& color, const std::string& dash = "") {
  os << "<polyline fill='none' stroke='" << color << "'"
     << (dash.empty() ? "" : " stroke-dasharray='" + dash + "'") << " points='";
  for (double v : x) os << fmt::format("{:.1f},{:.1f} ", f.X(v), f.Y(fn(v)));
  os << "'/>\n";
}

}  // namespace

void write_fringe_svg(std::ostream& os, const FringeScan& scan, const PhaseFit* fit) {
  const auto x = scan.x();
  if (x.empty()) throw ConfigError("empty scan");
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='900' height='400'>\n";
  const PlotFrame f{x.front() * 1e6, x.back() * 1e6, 0.0, 1.0, 70, 20, 800, 320};
  axes(os, f, "2T (us)", "population");
  for (const auto& r : scan.rows) {
    const double X = f.X(r.two_T * 1e6);
    os << fmt::format("<line x1='{:.1f}' x2='{:.1f}' y1='{:.1f}' y2='{:.1f}' stroke='steelblue'/>"
                      "<circle cx='{:.1f}' cy='{:.1f}' r='1.5' fill='steelblue'/>\n",
                      X, X, f.Y(r.population - r.sem), f.Y(r.population + r.sem), X, f.Y(r.population));
  }
  if (fit) {
    std::vector<double> xu;
    for (double v : x) xu.push_back(v * 1e6);
    auto at = [](const Poly& p) { return [&p](double us) { return p(us * 1e-6); }; };
    curve(os, f, xu, [&](double us) { return fit->envelope_mean(us * 1e-6) + 0.5 * fit->envelope_vis(us * 1e-6); },
          "gray", "4,3");
    curve(os, f, xu, [&](double us) { return fit->envelope_mean(us * 1e-6) - 0.5 * fit->envelope_vis(us * 1e-6); },
          "gray", "4,3");
    curve(os, f, xu, at(fit->envelope_mean), "gray", "1,3");
    curve(os, f, xu, [&](double us) {
      const double t = us * 1e-6;
      return fit->envelope_mean(t) + 0.5 * fit->envelope_vis(t) * std::cos(fit->phase(t));
    }, "crimson");
  }
  os << "</svg>\n";
}

void write_phase_svg(std::ostream& os, const std::vector<double>& two_T,
                     const std::vector<double>& phase, const std::vector<double>& sigma,
                     const ScalarFn& reference, const std::string& label) {
  if (two_T.empty() || two_T.size() != phase.size()) throw ConfigError("phase plot: size mismatch");
  const auto [pmin, pmax] = std::minmax_element(phase.begin(), phase.end());
  std::vector<double> res(phase.size());
  double rmax = 1e-12;
  for (size_t i = 0; i < phase.size(); ++i) {
    res[i] = phase[i] - reference(two_T[i]);
    rmax = std::max(rmax, std::abs(res[i]) + (sigma.empty() ? 0.0 : sigma[i]));
  }
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='900' height='640'>\n";
  const double x0 = two_T.front() * 1e6, x1 = two_T.back() * 1e6;
  const PlotFrame top{x0, x1, std::min(0.0, *pmin), *pmax * 1.05, 70, 20, 800, 360};
  const PlotFrame bot{x0, x1, -rmax, rmax, 70, 440, 800, 150};
  axes(os, top, "2T (us)", "phase (rad)");
  axes(os, bot, "2T (us)", "residual (rad)");
  std::vector<double> xu;
  for (double v : two_T) xu.push_back(v * 1e6);
  curve(os, top, xu, [&](double us) { return reference(us * 1e-6); }, "navy", "6,3");
  for (size_t i = 0; i < phase.size(); ++i) {
    const double X = top.X(xu[i]);
    const double s = sigma.empty() ? 0.0 : sigma[i];
    os << fmt::format("<circle cx='{:.1f}' cy='{:.1f}' r='1.5' fill='crimson'/>\n", X, top.Y(phase[i]));
    os << fmt::format("<line x1='{:.1f}' x2='{:.1f}' y1='{:.1f}' y2='{:.1f}' stroke='crimson'/>"
                      "<circle cx='{:.1f}' cy='{:.1f}' r='1.5' fill='crimson'/>\n",
                      X, X, bot.Y(res[i] - s), bot.Y(res[i] + s), X, bot.Y(res[i]));
  }
  os << fmt::format("<text x='90' y='40' font-size='12' fill='navy'>{}</text>\n", label);
  os << "</svg>\n";
}

}  // namespace qgi

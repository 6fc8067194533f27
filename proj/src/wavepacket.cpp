#include "qgi/wavepacket.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <unsupported/Eigen/MatrixFunctions>

#include "qgi/phases.hpp"
#include "qgi/rk4.hpp"

namespace qgi {

namespace {

using cd = std::complex<double>;
using CVec3 = Eigen::Vector3cd;
using Mat63c = Eigen::Matrix<cd, 6, 3>;

constexpr double kPi = 3.14159265358979323846;

double wrap_pi(double x) {
  x = std::remainder(x, 2 * kPi);
  return x <= -kPi ? x + 2 * kPi : x;
}

Mat6 symplectic_J() {
  Mat6 J = Mat6::Zero();
  J.topRightCorner<3, 3>() = Mat3::Identity();
  J.bottomLeftCorner<3, 3>() = -Mat3::Identity();
  return J;
}

Mat6 hamiltonian_matrix(const Mat3& K, double m) {
  Mat6 A = Mat6::Zero();
  A.topRightCorner<3, 3>() = Mat3::Identity() / m;
  A.bottomLeftCorner<3, 3>() = -K;
  return A;
}

void check_axis(int axis) {
  if (axis < 0 || axis > 2) throw ConfigError(fmt::format("axis {} not in 0..2", axis));
}

double tilt(double sxx, double syy, double sxy) { return 0.5 * std::atan2(2 * sxy, sxx - syy); }

WidthSample width_sample(double t, const GaussianState& s) {
  const Mat6 S = s.sigma();
  WidthSample w;
  w.t = t;
  w.mean_r = s.mean_r;
  for (int i = 0; i < 3; ++i) w.sigma(i) = std::sqrt(S(i, i));
  w.tilt_xy = tilt(S(0, 0), S(1, 1), S(0, 1));
  w.tilt_xz = tilt(S(0, 0), S(2, 2), S(0, 2));
  w.tilt_yz = tilt(S(1, 1), S(2, 2), S(1, 2));
  return w;
}

}  // namespace

GaussianState GaussianState::minimal(const Vec3& r, const Vec3& p, const Vec3& sigma,
                                     const SpinState& s, double mass, double hbar) {
  if (!(mass > 0) || !(hbar > 0)) throw ConfigError("wave packet needs positive mass and hbar");
  if (!(sigma.minCoeff() > 0)) throw ConfigError("wave packet widths must be positive");
  GaussianState g;
  g.mean_r = r;
  g.mean_p = p;
  g.mass = mass;
  g.hbar = hbar;
  g.state = s;
  g.Q = CMat3::Zero();
  g.P = CMat3::Zero();
  for (int i = 0; i < 3; ++i) {
    const double q = sigma(i) * std::sqrt(2.0 / hbar);
    g.Q(i, i) = q;
    g.P(i, i) = cd(0, 1.0 / q);
  }
  g.arg_det_Q = 0.0;
  return g;
}

Mat6 GaussianState::sigma() const {
  Mat63c W;
  W << Q, P;
  return (0.5 * hbar * (W * W.adjoint()).real()).eval();
}

Vec3 GaussianState::widths() const {
  const Mat6 S = sigma();
  return Vec3(std::sqrt(S(0, 0)), std::sqrt(S(1, 1)), std::sqrt(S(2, 2)));
}

CMat3 GaussianState::Z() const { return P * Q.inverse(); }

void GaussianState::validate() const {
  if (!(mass > 0) || !(hbar > 0)) throw ConfigError("wave packet needs positive mass and hbar");
  const CMat3 W = Q.adjoint() * P - P.adjoint() * Q;
  if ((W - cd(0, 2) * CMat3::Identity()).norm() > 1e-6)
    throw NumericalError("width matrices violate the symplectic normalization", "instability");
  const Mat6 S = sigma();
  if ((S - S.transpose()).norm() > 1e-9 * S.norm())
    throw NumericalError("covariance not symmetric", "instability");
  Eigen::LLT<Mat3> llt(S.topLeftCorner<3, 3>());
  if (llt.info() != Eigen::Success)
    throw NumericalError("position covariance lost positive definiteness", "instability");
}

double uncertainty_ratio(const GaussianState& s) {
  return s.sigma().determinant() / std::pow(0.5 * s.hbar, 6);
}

OverlapResult overlap(const GaussianState& a, const GaussianState& b) {
  if (!(a.state == b.state))
    throw ConfigError(fmt::format("overlap of different spin states {} and {}", a.state.label(),
                                  b.state.label()));
  if (a.mass != b.mass || a.hbar != b.hbar) throw ConfigError("overlap of different species");
  const double hb = a.hbar;
  const cd I(0, 1);
  const Vec3 c = 0.5 * (a.mean_r + b.mean_r);
  const CVec3 qa = (a.mean_r - c).cast<cd>(), qb = (b.mean_r - c).cast<cd>();
  const CVec3 pa = a.mean_p.cast<cd>(), pb = b.mean_p.cast<cd>();
  const CMat3 Za = a.Z().conjugate(), Zb = b.Z();
  const CMat3 M = (-I / hb) * (Zb - Za);
  const CVec3 v = (I / hb) * (pb - Zb * qb) - (I / hb) * (pa - Za * qa);
  const cd c0 = (I / hb) * (0.5 * qb.dot(Zb * qb) - pb.dot(qb)) -
                (I / hb) * (0.5 * qa.dot(Za * qa) - pa.dot(qa));
  // qa, qb, pa, pb are real, so the conjugation in dot() is harmless
  Eigen::ComplexEigenSolver<CMat3> es(M);
  cd det_inv_sqrt = 1.0;
  for (int k = 0; k < 3; ++k) det_inv_sqrt /= std::sqrt(es.eigenvalues()(k));
  const double norm = std::pow(2.0 / hb, 1.5) /
                      std::sqrt(std::abs(a.Q.determinant()) * std::abs(b.Q.determinant()));
  const cd expo = 0.5 * (v.transpose() * M.partialPivLu().solve(v))(0) + c0;
  OverlapResult r;
  r.amplitude = norm * det_inv_sqrt * std::exp(expo) * std::exp(I * (b.phase - a.phase));
  r.visibility = std::abs(r.amplitude);
  r.path_phase = b.path_phase - a.path_phase;
  r.shape_phase = wrap_pi(std::arg(r.amplitude) - r.path_phase);
  r.phase = r.path_phase + r.shape_phase;
  return r;
}

OverlapGradient overlap_gradient(const GaussianState& a, const GaussianState& b) {
  const double hb = a.hbar;
  const cd I(0, 1);
  const Vec3 c = 0.5 * (a.mean_r + b.mean_r);
  const CVec3 qa = (a.mean_r - c).cast<cd>(), qb = (b.mean_r - c).cast<cd>();
  const CVec3 pa = a.mean_p.cast<cd>(), pb = b.mean_p.cast<cd>();
  const CMat3 Za = a.Z().conjugate(), Zb = b.Z();
  const CMat3 M = (-I / hb) * (Zb - Za);
  const CVec3 v = (I / hb) * (pb - Zb * qb) - (I / hb) * (pa - Za * qa);
  const CVec3 g = (-I / hb) * (Zb * M.partialPivLu().solve(v)) + (I / hb) * (Zb * qb - pb);
  OverlapGradient out;
  out.visibility = overlap(a, b).visibility * g.real();
  out.phase = g.imag();
  return out;
}

GaussianState apply_lens(const GaussianState& s, double k, int axis) {
  return apply_lens(s, k, axis, s.mean_r);
}

GaussianState apply_lens(const GaussianState& s, double k, int axis, const Vec3& center) {
  check_axis(axis);
  if (!std::isfinite(k)) throw ConfigError("lens strength must be finite");
  GaussianState out = s;
  const double mk = s.mass * k;
  out.P.row(axis) -= mk * s.Q.row(axis);
  out.mean_p(axis) -= mk * (s.mean_r(axis) - center(axis));
  // the quadratic phase about `center` evaluated at the mean
  const double d = s.mean_r(axis) - center(axis);
  out.path_phase -= 0.5 * mk * d * d / s.hbar;
  out.phase -= 0.5 * mk * d * d / s.hbar;
  return out;
}

double lens_for_expansion_rate(const GaussianState& s, int axis, double rate) {
  check_axis(axis);
  const Mat6 S = s.sigma();
  const double qq = S(axis, axis), qp = S(axis, axis + 3), pp = S(axis + 3, axis + 3);
  const double m = s.mass;
  const double disc = qp * qp - qq * (pp - m * m * rate * rate);
  if (!(disc >= 0))
    throw ConfigError(fmt::format("expansion rate {:.3g} m/s below the lens limit {:.3g} m/s", rate,
                                  std::sqrt(pp - qp * qp / qq) / m));
  return (qp + std::sqrt(disc)) / (m * qq);
}

Vec3 expansion_rates(const GaussianState& s) {
  const Mat6 S = s.sigma();
  return Vec3(std::sqrt(S(3, 3)), std::sqrt(S(4, 4)), std::sqrt(S(5, 5))) / s.mass;
}

Mat6 magnus_step(const Mat3& K1, const Mat3& K2, double m, double h) {
  const Mat6 A1 = hamiltonian_matrix(K1, m), A2 = hamiltonian_matrix(K2, m);
  Mat6 Omega = 0.5 * h * (A1 + A2) + (std::sqrt(3.0) / 12.0) * h * h * (A2 * A1 - A1 * A2);
  // balance the blocks (q in m, p in kg m/s) before the exponential
  const double a = m / h;
  Omega.topRightCorner<3, 3>() *= a;
  Omega.bottomLeftCorner<3, 3>() /= a;
  Mat6 S = Omega.exp();
  S.topRightCorner<3, 3>() /= a;
  S.bottomLeftCorner<3, 3>() *= a;
  return S;
}

double symplectic_defect(const Mat6& S, double qp_scale) {
  const Mat6 J = symplectic_J();
  Mat6 T = S;
  T.topRightCorner<3, 3>() *= qp_scale;
  T.bottomLeftCorner<3, 3>() /= qp_scale;
  return (T * J * T.transpose() - J).cwiseAbs().maxCoeff();
}

PropagationResult propagate_gaussian(const GaussianState& s0, const PotentialFn& pot, double t0,
                                     double t1, const std::vector<double>& nodes_in,
                                     const PropagateOptions& opt) {
  if (!(opt.dt > 0) || !(t1 >= t0)) throw ConfigError("invalid propagation interval");
  s0.validate();
  std::vector<double> nodes{t0, t1};
  for (double x : nodes_in)
    if (x > t0 && x < t1) nodes.push_back(x);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end(),
                          [](double a, double b) { return std::abs(a - b) < 1e-13; }),
              nodes.end());

  const double m = s0.mass, hb = s0.hbar;
  PropagationResult res;
  GaussianState s = s0;
  if (opt.record) res.series.push_back(width_sample(t0, s));
  using Vec7 = Eigen::Matrix<double, 7, 1>;
  Vec7 y;
  y << s.mean_r, s.mean_p, s.path_phase * hb;

  for (size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double a = nodes[k], b = nodes[k + 1];
    if (b - a <= 0) continue;
    const int n = std::max(1, static_cast<int>(std::ceil((b - a) / opt.dt - 1e-9)));
    const double h = (b - a) / n;
    // evaluations stay inside the open interval so switches sit on nodes
    const double eps = 1e-14;
    auto at = [&](double t, const Vec3& r) { return pot(std::clamp(t, a + eps, b - eps), r); };
    auto f = [&](double t, const Vec7& u) {
      const Vec3 r = u.head<3>(), p = u.segment<3>(3);
      const auto lp = at(t, r);
      Vec7 d;
      d << p / m, -lp.grad, p.squaredNorm() / (2 * m) - lp.V;
      return d;
    };
    for (int j = 0; j < n; ++j) {
      const double t = a + j * h;
      const Vec7 y1 = rk4_step(f, t, y, h);
      // Hessians at the Gauss points, mean from the cubic Hermite interpolant
      const Vec3 q0 = y.head<3>(), q1 = y1.head<3>();
      const Vec3 v0 = y.segment<3>(3) / m, v1 = y1.segment<3>(3) / m;
      Mat3 K[2];
      for (int gi = 0; gi < 2; ++gi) {
        const double sg = 0.5 + (gi == 0 ? -1 : 1) * std::sqrt(3.0) / 6.0;
        const double h00 = (1 + 2 * sg) * (1 - sg) * (1 - sg), h10 = sg * (1 - sg) * (1 - sg);
        const double h01 = sg * sg * (3 - 2 * sg), h11 = sg * sg * (sg - 1);
        const Vec3 qg = h00 * q0 + h10 * h * v0 + h01 * q1 + h11 * h * v1;
        K[gi] = at(t + sg * h, qg).hess;
      }
      const Mat6 S = magnus_step(K[0], K[1], m, h);
      res.max_symplectic_error = std::max(res.max_symplectic_error, symplectic_defect(S, m / h));
      Mat63c W;
      W << s.Q, s.P;
      W = S.cast<cd>() * W;
      const cd det_old = s.Q.determinant();
      s.Q = W.topRows<3>();
      s.P = W.bottomRows<3>();
      const cd det_new = s.Q.determinant();
      s.arg_det_Q += std::arg(det_new / det_old);
      y = y1;
      ++res.steps;
      s.mean_r = y.head<3>();
      s.mean_p = y.segment<3>(3);
      s.path_phase = y(6) / hb;
      s.phase = s.path_phase - 0.5 * (s.arg_det_Q - s0.arg_det_Q) + (s0.phase - s0.path_phase);
      if (!y.allFinite() || !s.Q.allFinite())
        throw NumericalError(fmt::format("non-finite wave packet at step {} (t = {:.6g} s)",
                                         res.steps, t + h),
                             "instability");
      if (Eigen::LLT<Mat3>(s.sigma().topLeftCorner<3, 3>()).info() != Eigen::Success)
        throw NumericalError(fmt::format("covariance lost positive definiteness at step {} "
                                         "(t = {:.6g} s)",
                                         res.steps, t + h),
                             "instability");
      if (opt.record && (res.steps % std::max(1, opt.record_every) == 0))
        res.series.push_back(width_sample(t + h, s));
    }
  }
  if (opt.record && (res.series.empty() || res.series.back().t < t1))
    res.series.push_back(width_sample(t1, s));
  res.state = s;
  return res;
}

PropagationResult propagate_gaussian(const GaussianState& s, const QgiSchedule& schedule, Arm arm,
                                     const FieldModel& field, const Species& species, double t0,
                                     double t1, const PropagateOptions& opt, const Constants& c) {
  if (std::abs(s.mass - species.mass_kg) > 1e-12 * species.mass_kg)
    throw ConfigError("wave packet mass differs from the species mass");
  const Vec3 origin = opt.energy_origin;
  const double m = species.mass_kg;
  PotentialFn pot = [&](double t, const Vec3& r) {
    const SpinState st = schedule.state_at(arm, t);
    const double I = schedule.current_at(t);
    const auto q = quadratic_expansion(r, I, field, st, species, c);
    const double V_origin = zeeman_potential(field.sample(origin, I), st, species, c);
    LocalPotential lp;
    lp.V = q.V0 - V_origin + m * opt.g * (r.z() - origin.z());
    lp.grad = q.grad + Vec3(0, 0, m * opt.g);
    lp.hess = q.hess;
    return lp;
  };
  auto res = propagate_gaussian(s, pot, t0, t1, schedule_nodes(schedule, arm, t0, t1), opt);
  res.state.state = schedule.state_at(arm, std::max(t0, t1 - 1e-12));
  return res;
}

PaperRunResult run_paper_wavepackets(const PaperRunOptions& opt, const Species& species,
                                     const Constants& c) {
  opt.timings.validate();
  const double g = opt.g;
  const ChipField field(WireGeometry::three_wire(), opt.bias, c);
  PaperRunResult out;
  out.I_hold = opt.I_hold > 0 ? opt.I_hold
                              : calibrate_levitation(field, species, opt.z_hold, 10e-3, 40e-3, g, c).I_hold;
  auto sched = build_schedule(opt.timings, out.I_hold, opt.I_idle);
  if (opt.kick_perturbation != 0.0) sched = sched.perturb_kick(opt.kick_perturbation);
  out.analytic_phase = analytic_qgi_phase(opt.timings, g, species, c);

  const auto ic = paper_initial_condition(opt.timings, g, opt.z_hold);
  const double t_apex = opt.timings.T_kick + opt.timings.T_d;
  const double t_release = t_apex - opt.release_to_apex;
  const double t_lens = t_release + opt.release_to_lens;
  const double t_open = sched.t_open(), t_close = sched.t_close();
  if (!(t_lens < t_open))
    throw ConfigError(fmt::format("lens at {:.1f} us does not precede the splitting pulse at {:.1f} us",
                                  t_lens * 1e6, t_open * 1e6));
  const auto rel = ballistic_shift(ic, t_release, g);

  const double m = species.mass_kg;
  PropagateOptions po;
  po.dt = opt.dt;
  po.g = g;
  po.energy_origin = Vec3(0, 0, opt.z_hold);
  PotentialFn gravity = [&](double, const Vec3& r) {
    LocalPotential lp;
    lp.V = m * g * (r.z() - opt.z_hold);
    lp.grad = Vec3(0, 0, m * g);
    return lp;
  };

  auto s = GaussianState::minimal(Vec3(0, 0, rel.z), Vec3(0, 0, m * rel.v), opt.trap_widths, kState1,
                                  m, c.hbar);
  s = propagate_gaussian(s, gravity, t_release, t_lens, {}, po).state;
  out.expansion_rate_no_lens = expansion_rates(s).z();
  for (int axis : {1, 2}) s = apply_lens(s, lens_for_expansion_rate(s, axis, opt.lens_rate), axis);
  out.expansion_rate_lens = expansion_rates(s).z();
  s = propagate_gaussian(s, gravity, t_lens, t_open, {}, po).state;

  const double t_mid = 0.5 * (t_open + t_close);
  GaussianState fin[2];
  for (Arm arm : {Arm::ballistic, Arm::reference}) {
    const int i = arm == Arm::ballistic ? 0 : 1;
    GaussianState st = s;
    st.state = sched.state_at(arm, t_open);
    auto r1 = propagate_gaussian(st, sched, arm, field, species, t_open, t_mid, po, c);
    (i == 0 ? out.mid_widths_ballistic : out.mid_widths_reference) = r1.state.widths();
    auto r2 = propagate_gaussian(r1.state, sched, arm, field, species, t_mid, t_close, po, c);
    auto& series = i == 0 ? out.ballistic : out.reference;
    series = r1.series;
    series.insert(series.end(), r2.series.begin() + 1, r2.series.end());
    out.max_symplectic_error =
        std::max({out.max_symplectic_error, r1.max_symplectic_error, r2.max_symplectic_error});
    fin[i] = r2.state;
  }
  // the closing π/2 projects both arms onto the same output port
  fin[0].state = fin[1].state;
  out.overlap = overlap(fin[0], fin[1]);
  out.notes.push_back("atom-atom interactions not modelled");
  out.notes.push_back("release and delta-kick collimation reduced to one thin lens on y and z");
  return out;
}

void write_width_csv(std::ostream& os, const std::vector<WidthSample>& series, Arm arm) {
  os << "arm,t_s,z_m,sigma_x_m,sigma_y_m,sigma_z_m,tilt_xy_rad,tilt_xz_rad,tilt_yz_rad\n";
  for (const auto& w : series)
    os << fmt::format("{},{:.9e},{:.9e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e}\n", to_string(arm),
                      w.t, w.mean_r.z(), w.sigma.x(), w.sigma.y(), w.sigma.z(), w.tilt_xy,
                      w.tilt_xz, w.tilt_yz);
}

void write_overlap_csv(std::ostream& os, double two_T, const OverlapResult& r, bool header) {
  if (header) os << "two_T_s,visibility,phase_rad,path_phase_rad,shape_phase_rad\n";
  os << fmt::format("{:.9e},{:.9f},{:.9f},{:.9f},{:.9f}\n", two_T, r.visibility, r.phase,
                    r.path_phase, r.shape_phase);
}

}  // namespace qgi

#pragma once

#include <Eigen/Dense>

namespace qgi {

/// One classical Runge-Kutta step for y' = f(t, y).
template <typename Vec, typename F>
Vec rk4_step(const F& f, double t, const Vec& y, double dt) {
  const Vec k1 = f(t, y);
  const Vec k2 = f(t + 0.5 * dt, Vec(y + 0.5 * dt * k1));
  const Vec k3 = f(t + 0.5 * dt, Vec(y + 0.5 * dt * k2));
  const Vec k4 = f(t + dt, Vec(y + dt * k3));
  return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace qgi

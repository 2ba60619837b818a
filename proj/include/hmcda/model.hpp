#pragma once

// Lorenz-96 forecast model with fixed-step RK4 time propagation.

#include "hmcda/core.hpp"

#include <sstream>

namespace hmcda {

class BlowUpError : public Error {
 public:
  BlowUpError(const std::string& what, double time) : Error(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

struct Lorenz96Config {
  Index nvar = 40;
  double forcing = 8.0;
  double dt = 0.005;

  void validate() const {
    if (nvar < 4) throw DimensionError("Lorenz96Config: nvar must be >= 4");
    if (!(dt > 0.0)) throw DimensionError("Lorenz96Config: dt must be > 0");
  }
};

/// dx_i/dt = x_{i-1} (x_{i+1} - x_{i-2}) - x_i + F with cyclic indices.
inline void tendency_into(const StateVector& x, double forcing, StateVector& out) {
  const Index n = x.size();
  out.resize(n);
  // Interior indices avoid the modulo; the three wrap-around ones are explicit.
  out[0] = x[n - 1] * (x[1] - x[n - 2]) - x[0] + forcing;
  out[1] = x[0] * (x[2] - x[n - 1]) - x[1] + forcing;
  for (Index i = 2; i < n - 1; ++i) {
    out[i] = x[i - 1] * (x[i + 1] - x[i - 2]) - x[i] + forcing;
  }
  out[n - 1] = x[n - 2] * (x[0] - x[n - 3]) - x[n - 1] + forcing;
}

inline StateVector tendency(const StateVector& x, const Lorenz96Config& cfg) {
  require_same_size(x.size(), cfg.nvar, "tendency");
  cfg.validate();
  StateVector out;
  tendency_into(x, cfg.forcing, out);
  return out;
}

namespace detail {

struct Rk4Workspace {
  StateVector k1, k2, k3, k4, tmp;
};

inline void rk4_step(StateVector& x, double h, double forcing, Rk4Workspace& w) {
  tendency_into(x, forcing, w.k1);
  w.tmp = x + 0.5 * h * w.k1;
  tendency_into(w.tmp, forcing, w.k2);
  w.tmp = x + 0.5 * h * w.k2;
  tendency_into(w.tmp, forcing, w.k3);
  w.tmp = x + h * w.k3;
  tendency_into(w.tmp, forcing, w.k4);
  x += (h / 6.0) * (w.k1 + 2.0 * w.k2 + 2.0 * w.k3 + w.k4);
}

}  // namespace detail

/// Integrates from t0 to t1 with RK4 steps of cfg.dt; a shortened final step
/// lands exactly on t1. Throws BlowUpError on a non-finite state.
inline StateVector propagate(const StateVector& x0, double t0, double t1,
                             const Lorenz96Config& cfg) {
  require_same_size(x0.size(), cfg.nvar, "propagate");
  cfg.validate();
  if (t1 < t0) throw Error("propagate: t1 must be >= t0");
  StateVector x = x0;
  const double span = t1 - t0;
  if (span == 0.0) return x;

  const double ratio = span / cfg.dt;
  auto full = static_cast<long long>(std::llround(ratio));
  double partial = 0.0;
  if (std::abs(ratio - static_cast<double>(full)) > 1e-9 * std::max(1.0, ratio)) {
    full = static_cast<long long>(std::floor(ratio));
    partial = span - static_cast<double>(full) * cfg.dt;
  }

  detail::Rk4Workspace w;
  double t = t0;
  for (long long s = 0; s < full; ++s) {
    detail::rk4_step(x, cfg.dt, cfg.forcing, w);
    t = t0 + static_cast<double>(s + 1) * cfg.dt;
    if (!x.allFinite()) {
      std::ostringstream msg;
      msg << "propagate: non-finite state at t=" << t;
      throw BlowUpError(msg.str(), t);
    }
  }
  if (partial > 0.0) {
    detail::rk4_step(x, partial, cfg.forcing, w);
    if (!x.allFinite()) {
      std::ostringstream msg;
      msg << "propagate: non-finite state at t=" << t1;
      throw BlowUpError(msg.str(), t1);
    }
  }
  return x;
}

/// Equidistant values on [-2, 2] before spin-up.
inline StateVector equidistant_profile(Index nvar) {
  return StateVector::LinSpaced(nvar, -2.0, 2.0);
}

/// The equidistant profile integrated for 10 time units.
inline StateVector reference_initial_condition(const Lorenz96Config& cfg) {
  cfg.validate();
  return propagate(equidistant_profile(cfg.nvar), 0.0, 10.0, cfg);
}

}  // namespace hmcda

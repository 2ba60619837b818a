#pragma once

// Phase-space integrators for the Hamiltonian system
//
//   dx/dt = M^{-1} p,   dp/dt = -grad J(x),
//
// with a diagonal mass matrix M. Verlet and the two-, three- and four-stage
// schemes are palindromic position splittings; the Hilbert-space scheme
// rotates (x, p) between two half kicks.

#include "hmcda/core.hpp"

#include <array>
#include <concepts>
#include <functional>
#include <optional>
#include <string_view>

namespace hmcda {

class IntegratorDivergenceError : public Error {
 public:
  using Error::Error;
};

/// A negative log density J with its gradient.
template <class P>
concept Potential = requires(const P& pot, const StateVector& x, StateVector& g) {
  { pot.value(x) } -> std::convertible_to<double>;
  pot.gradient_into(x, g);
};

/// Type-erased potential built from two callables.
class FunctionPotential {
 public:
  using ValueFn = std::function<double(const StateVector&)>;
  using GradientFn = std::function<StateVector(const StateVector&)>;

  FunctionPotential(ValueFn value, GradientFn gradient)
      : value_(std::move(value)), gradient_(std::move(gradient)) {}

  double value(const StateVector& x) const { return value_(x); }
  StateVector gradient(const StateVector& x) const { return gradient_(x); }
  void gradient_into(const StateVector& x, StateVector& g) const { g = gradient_(x); }

 private:
  ValueFn value_;
  GradientFn gradient_;
};

/// J(x) = 1/2 sum_i x_i^2 / s_i^2, i.e. a centred Gaussian with variances s^2.
class GaussianPotential {
 public:
  explicit GaussianPotential(StateVector variances, StateVector mean = {})
      : inv_var_(variances.cwiseInverse()),
        mean_(mean.size() == 0 ? StateVector::Zero(variances.size()) : std::move(mean)) {}

  double value(const StateVector& x) const {
    return 0.5 * (x - mean_).cwiseAbs2().dot(inv_var_);
  }
  void gradient_into(const StateVector& x, StateVector& g) const {
    g = (x - mean_).cwiseProduct(inv_var_);
  }
  StateVector gradient(const StateVector& x) const {
    StateVector g;
    gradient_into(x, g);
    return g;
  }

 private:
  StateVector inv_var_;
  StateVector mean_;
};

struct PhasePoint {
  StateVector x;
  StateVector p;

  PhasePoint() = default;
  PhasePoint(StateVector position, StateVector momentum) : x(std::move(position)), p(std::move(momentum)) {
    require_same_size(x.size(), p.size(), "PhasePoint");
  }
};

class MassMatrix {
 public:
  explicit MassMatrix(StateVector diagonal) : diag_(std::move(diagonal)) {
    if (diag_.size() == 0 || !(diag_.array() > 0.0).all() || !diag_.allFinite()) {
      throw DimensionError("MassMatrix: diagonal entries must be finite and > 0");
    }
    inv_ = diag_.cwiseInverse();
    sqrt_ = diag_.cwiseSqrt();
  }

  static MassMatrix identity(Index n, double scale = 1.0) {
    return MassMatrix(StateVector::Constant(n, scale));
  }

  Index size() const { return diag_.size(); }
  const StateVector& diagonal() const { return diag_; }
  const StateVector& inverse() const { return inv_; }
  const StateVector& sqrt() const { return sqrt_; }

  double kinetic_energy(const StateVector& p) const { return 0.5 * p.cwiseAbs2().dot(inv_); }

 private:
  StateVector diag_;
  StateVector inv_;
  StateVector sqrt_;
};

// -----------------------------------------------------------------------------

enum class IntegratorKind { verlet, two_stage, three_stage, four_stage, hilbert };

inline std::string_view to_string(IntegratorKind k) {
  switch (k) {
    case IntegratorKind::verlet: return "verlet";
    case IntegratorKind::two_stage: return "two-stage";
    case IntegratorKind::three_stage: return "three-stage";
    case IntegratorKind::four_stage: return "four-stage";
    case IntegratorKind::hilbert: return "hilbert";
  }
  return "verlet";
}

inline std::optional<IntegratorKind> parse_integrator_kind(std::string_view s) {
  for (auto k : {IntegratorKind::verlet, IntegratorKind::two_stage, IntegratorKind::three_stage,
                 IntegratorKind::four_stage, IntegratorKind::hilbert}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

namespace coefficients {
inline constexpr double two_stage_a1 = 0.21132;
inline constexpr double two_stage_a2 = 1.0 - 2.0 * two_stage_a1;
inline constexpr double two_stage_b1 = 0.5;

inline constexpr double three_stage_a1 = 0.11888010966548;
inline constexpr double three_stage_a2 = 0.5 - three_stage_a1;
inline constexpr double three_stage_b1 = 0.29619504261126;
inline constexpr double three_stage_b2 = 1.0 - 2.0 * three_stage_b1;

inline constexpr double four_stage_a1 = 0.071353913450279725904;
inline constexpr double four_stage_a2 = 0.268458791161230105820;
inline constexpr double four_stage_a3 = 1.0 - 2.0 * four_stage_a1 - 2.0 * four_stage_a2;
inline constexpr double four_stage_b1 = 0.1916678;
inline constexpr double four_stage_b2 = 0.5 - four_stage_b1;
}  // namespace coefficients

/// Upper end of the linear stability interval (0, h_max); nullopt when none is known.
inline std::optional<double> stability_limit(IntegratorKind k) {
  switch (k) {
    case IntegratorKind::verlet: return 2.0;
    case IntegratorKind::two_stage: return 2.6321480259;
    case IntegratorKind::three_stage: return 4.67;
    case IntegratorKind::four_stage: return 5.35;
    case IntegratorKind::hilbert: return std::nullopt;
  }
  return std::nullopt;
}

/// Gradient evaluations spent by one step (Hilbert reuses the end-point gradient).
inline Index gradients_per_step(IntegratorKind k) {
  switch (k) {
    case IntegratorKind::verlet: return 1;
    case IntegratorKind::two_stage: return 2;
    case IntegratorKind::three_stage: return 3;
    case IntegratorKind::four_stage: return 4;
    case IntegratorKind::hilbert: return 1;
  }
  return 1;
}

struct TrajectorySpec {
  IntegratorKind kind = IntegratorKind::verlet;
  double step = 0.01;  // h_ref
  Index steps = 10;    // m
  double jitter = 0.2; // h = (1 + r) h_ref, r ~ U(-jitter, jitter)

  void validate() const {
    if (!(step > 0.0)) throw DimensionError("TrajectorySpec: step must be > 0");
    if (steps < 1) throw DimensionError("TrajectorySpec: steps must be >= 1");
    if (jitter < 0.0 || jitter >= 1.0) throw DimensionError("TrajectorySpec: jitter must lie in [0, 1)");
  }

  /// Non-fatal notes when the randomized step can leave the stability interval.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    if (auto limit = stability_limit(kind); limit && (1.0 + jitter) * step >= *limit) {
      out.push_back(std::string(to_string(kind)) + ": step " + std::to_string(step) +
                    " may exceed the stability interval (0, " + std::to_string(*limit) + ")");
    }
    return out;
  }
};

// -----------------------------------------------------------------------------
// Stepping

/// Scratch space and gradient counter shared by the steppers.
struct IntegratorWorkspace {
  StateVector grad;
  Index gradient_evaluations = 0;
};

namespace detail {

template <Potential P>
void evaluate_gradient(const P& pot, const StateVector& x, IntegratorWorkspace& ws) {
  pot.gradient_into(x, ws.grad);
  ++ws.gradient_evaluations;
  if (!ws.grad.allFinite()) throw IntegratorDivergenceError("integrator: non-finite gradient");
}

/// Palindromic position splitting: drift(d0) kick(k0) drift(d1) ... kick(k_{s-1}) drift(d_s).
template <Potential P, std::size_t S>
void position_splitting(PhasePoint& z, double h, const MassMatrix& mass, const P& pot,
                        const std::array<double, S + 1>& drift, const std::array<double, S>& kick,
                        IntegratorWorkspace& ws) {
  const StateVector& minv = mass.inverse();
  z.x.array() += (drift[0] * h) * minv.array() * z.p.array();
  for (std::size_t s = 0; s < S; ++s) {
    evaluate_gradient(pot, z.x, ws);
    z.p -= (kick[s] * h) * ws.grad;
    z.x.array() += (drift[s + 1] * h) * minv.array() * z.p.array();
  }
}

inline void check_step(const PhasePoint& z, double h, const MassMatrix& mass) {
  if (!(h >= 0.0)) throw DimensionError("integrator: step must be >= 0");
  require_same_size(z.x.size(), z.p.size(), "integrator");
  require_same_size(z.x.size(), mass.size(), "integrator");
}

}  // namespace detail

template <Potential P>
void step_in_place(IntegratorKind kind, PhasePoint& z, double h, const MassMatrix& mass, const P& pot,
                   IntegratorWorkspace& ws) {
  using namespace coefficients;
  switch (kind) {
    case IntegratorKind::verlet:
      detail::position_splitting<P, 1>(z, h, mass, pot, {0.5, 0.5}, {1.0}, ws);
      return;
    case IntegratorKind::two_stage:
      detail::position_splitting<P, 2>(z, h, mass, pot, {two_stage_a1, two_stage_a2, two_stage_a1},
                                       {two_stage_b1, two_stage_b1}, ws);
      return;
    case IntegratorKind::three_stage:
      detail::position_splitting<P, 3>(
          z, h, mass, pot, {three_stage_a1, three_stage_a2, three_stage_a2, three_stage_a1},
          {three_stage_b1, three_stage_b2, three_stage_b1}, ws);
      return;
    case IntegratorKind::four_stage:
      detail::position_splitting<P, 4>(
          z, h, mass, pot,
          {four_stage_a1, four_stage_a2, four_stage_a3, four_stage_a2, four_stage_a1},
          {four_stage_b1, four_stage_b2, four_stage_b2, four_stage_b1}, ws);
      return;
    case IntegratorKind::hilbert: {
      const double c = std::cos(h);
      const double s = std::sin(h);
      const StateVector& minv = mass.inverse();
      detail::evaluate_gradient(pot, z.x, ws);
      z.p.array() -= (0.5 * h) * minv.array() * ws.grad.array();
      StateVector x_next = c * z.x + s * z.p;
      z.p = -s * z.x + c * z.p;
      z.x = std::move(x_next);
      detail::evaluate_gradient(pot, z.x, ws);
      z.p.array() -= (0.5 * h) * minv.array() * ws.grad.array();
      return;
    }
  }
}

template <Potential P>
PhasePoint step(IntegratorKind kind, PhasePoint z, double h, const MassMatrix& mass, const P& pot) {
  detail::check_step(z, h, mass);
  IntegratorWorkspace ws;
  step_in_place(kind, z, h, mass, pot, ws);
  return z;
}

template <Potential P>
PhasePoint step_verlet(PhasePoint z, double h, const MassMatrix& mass, const P& pot) {
  return step(IntegratorKind::verlet, std::move(z), h, mass, pot);
}
template <Potential P>
PhasePoint step_two_stage(PhasePoint z, double h, const MassMatrix& mass, const P& pot) {
  return step(IntegratorKind::two_stage, std::move(z), h, mass, pot);
}
template <Potential P>
PhasePoint step_three_stage(PhasePoint z, double h, const MassMatrix& mass, const P& pot) {
  return step(IntegratorKind::three_stage, std::move(z), h, mass, pot);
}
template <Potential P>
PhasePoint step_four_stage(PhasePoint z, double h, const MassMatrix& mass, const P& pot) {
  return step(IntegratorKind::four_stage, std::move(z), h, mass, pot);
}
template <Potential P>
PhasePoint step_hilbert(PhasePoint z, double h, const MassMatrix& mass, const P& pot) {
  return step(IntegratorKind::hilbert, std::move(z), h, mass, pot);
}

// -----------------------------------------------------------------------------
// Trajectories

/// States z_0..z_m of one trajectory and, for the Hilbert kind, grad J at each x_i.
struct TrajectoryRecord {
  IntegratorKind kind = IntegratorKind::verlet;
  double step = 0.0;
  std::vector<PhasePoint> states;
  std::vector<StateVector> gradients;

  Index steps() const { return states.empty() ? 0 : static_cast<Index>(states.size()) - 1; }
  const PhasePoint& start() const { return states.front(); }
  const PhasePoint& end() const { return states.back(); }
};

struct TrajectoryResult {
  PhasePoint end;
  double step = 0.0;
  Index gradient_evaluations = 0;
};

/// Applies spec.steps steps with h = (1 + r) h_ref, r drawn once from rng.
/// When `record` is given it receives every intermediate state.
template <Potential P>
TrajectoryResult integrate_trajectory(const PhasePoint& z0, const TrajectorySpec& spec,
                                      const MassMatrix& mass, const P& pot, RandomSource& rng,
                                      TrajectoryRecord* record = nullptr) {
  spec.validate();
  const double r = spec.jitter > 0.0 ? rng.uniform(-spec.jitter, spec.jitter) : 0.0;
  const double h = (1.0 + r) * spec.step;
  detail::check_step(z0, h, mass);

  TrajectoryResult out;
  out.step = h;
  out.end = z0;
  IntegratorWorkspace ws;
  if (record) {
    record->kind = spec.kind;
    record->step = h;
    record->states.assign(1, z0);
    record->gradients.clear();
  }

  if (spec.kind == IntegratorKind::hilbert) {
    // The end-point gradient of one step is the start gradient of the next.
    const double c = std::cos(h);
    const double s = std::sin(h);
    const StateVector& minv = mass.inverse();
    PhasePoint& z = out.end;
    detail::evaluate_gradient(pot, z.x, ws);
    if (record) record->gradients.push_back(ws.grad);
    for (Index k = 0; k < spec.steps; ++k) {
      z.p.array() -= (0.5 * h) * minv.array() * ws.grad.array();
      StateVector x_next = c * z.x + s * z.p;
      z.p = -s * z.x + c * z.p;
      z.x = std::move(x_next);
      detail::evaluate_gradient(pot, z.x, ws);
      z.p.array() -= (0.5 * h) * minv.array() * ws.grad.array();
      if (record) {
        record->states.push_back(z);
        record->gradients.push_back(ws.grad);
      }
    }
  } else {
    for (Index k = 0; k < spec.steps; ++k) {
      step_in_place(spec.kind, out.end, h, mass, pot, ws);
      if (record) record->states.push_back(out.end);
    }
  }
  out.gradient_evaluations = ws.gradient_evaluations;
  return out;
}

}  // namespace hmcda

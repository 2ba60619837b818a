#pragma once

// Hybrid Monte Carlo chain: momentum refresh, trajectory proposal, energy
// loss, Metropolis acceptance, burn-in and thinning.

#include "hmcda/integrators.hpp"

namespace hmcda {

enum class MassPolicy { diag_b, diag_b_inverse, identity_scaled };

inline std::string_view to_string(MassPolicy m) {
  switch (m) {
    case MassPolicy::diag_b: return "diag-B";
    case MassPolicy::diag_b_inverse: return "diag-B-inverse";
    case MassPolicy::identity_scaled: return "identity-scaled";
  }
  return "diag-B-inverse";
}

inline std::optional<MassPolicy> parse_mass_policy(std::string_view s) {
  for (auto m : {MassPolicy::diag_b, MassPolicy::diag_b_inverse, MassPolicy::identity_scaled}) {
    if (s == to_string(m)) return m;
  }
  return std::nullopt;
}

/// Which momenta enter the running sum of the Hilbert energy loss. `printed`
/// keeps (x_k, p_k) fixed for every i; `intermediate` uses (x_i, p_i).
enum class HilbertEnergyForm { printed, intermediate };

inline std::string_view to_string(HilbertEnergyForm f) {
  return f == HilbertEnergyForm::printed ? "printed" : "intermediate";
}

inline std::optional<HilbertEnergyForm> parse_hilbert_energy_form(std::string_view s) {
  if (s == "printed") return HilbertEnergyForm::printed;
  if (s == "intermediate") return HilbertEnergyForm::intermediate;
  return std::nullopt;
}

struct ChainConfig {
  Index burn_in = 200;
  Index thinning = 30;
  Index samples = 30;
  TrajectorySpec trajectory;
  MassPolicy mass_policy = MassPolicy::diag_b_inverse;
  double mass_scale = 1.0;
  Index max_consecutive_rejections = 0;  // 0: 50 * thinning
  HilbertEnergyForm hilbert_energy = HilbertEnergyForm::printed;

  Index rejection_cap() const {
    return max_consecutive_rejections > 0 ? max_consecutive_rejections : 50 * thinning;
  }

  void validate() const {
    if (burn_in < 0) throw DimensionError("ChainConfig: burn_in must be >= 0");
    if (thinning < 1) throw DimensionError("ChainConfig: thinning must be >= 1");
    if (samples < 1) throw DimensionError("ChainConfig: samples must be >= 1");
    if (!(mass_scale > 0.0)) throw DimensionError("ChainConfig: mass_scale must be > 0");
    trajectory.validate();
  }
};

struct ChainDiagnostics {
  Index proposals = 0;
  Index acceptances = 0;
  Index nonfinite_proposals = 0;
  Index gradient_evaluations = 0;
  Index longest_rejection_run = 0;
  std::vector<double> delta_h;

  double acceptance_rate() const {
    return proposals == 0 ? 0.0 : static_cast<double>(acceptances) / static_cast<double>(proposals);
  }
};

class ChainDivergenceError : public Error {
 public:
  ChainDivergenceError(const std::string& what, ChainDiagnostics diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  const ChainDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  ChainDiagnostics diagnostics_;
};

// -----------------------------------------------------------------------------
// Energy loss

template <Potential P>
double hamiltonian(const PhasePoint& z, const MassMatrix& mass, const P& pot) {
  return mass.kinetic_energy(z.p) + pot.value(z.x);
}

/// H(p*, x*) - H(p_k, x_k).
template <Potential P>
double energy_loss_standard(const PhasePoint& start, const PhasePoint& end, const MassMatrix& mass,
                            const P& pot) {
  return hamiltonian(end, mass, pot) - hamiltonian(start, mass, pot);
}

/// Energy loss of a Hilbert-space trajectory with phi = J:
///
///   phi(x*) - phi(x_k)
///   + h^2/8 (|M^{-1/2} grad phi(x_k)|^2 - |M^{-1/2} grad phi(x*)|^2)
///   + h sum_{i=1}^{m-1} p^T (-grad phi(x))
///   + h/2 (p_k^T (-grad phi(x_k)) + p*^T (-grad phi(x*)))
///
/// The summand uses (x_k, p_k) for every i in the printed form and (x_i, p_i)
/// in the intermediate form.
template <Potential P>
double energy_loss_hilbert(const TrajectoryRecord& record, const MassMatrix& mass, const P& pot,
                           HilbertEnergyForm form = HilbertEnergyForm::printed) {
  if (record.kind != IntegratorKind::hilbert) {
    throw MisuseError("energy_loss_hilbert: trajectory was not produced by the hilbert integrator");
  }
  if (record.states.size() < 2) throw MisuseError("energy_loss_hilbert: trajectory has no steps");

  const Index m = record.steps();
  const double h = record.step;
  auto gradient_at = [&](std::size_t i) {
    if (record.gradients.size() == record.states.size()) return record.gradients[i];
    StateVector g;
    pot.gradient_into(record.states[i].x, g);
    return g;
  };

  const PhasePoint& zk = record.start();
  const PhasePoint& zs = record.end();
  const StateVector gk = gradient_at(0);
  const StateVector gs = gradient_at(record.states.size() - 1);

  double dh = pot.value(zs.x) - pot.value(zk.x);
  dh += (h * h / 8.0) * (gk.cwiseAbs2().dot(mass.inverse()) - gs.cwiseAbs2().dot(mass.inverse()));
  if (form == HilbertEnergyForm::printed) {
    dh += h * static_cast<double>(m - 1) * (-zk.p.dot(gk));
  } else {
    for (Index i = 1; i < m; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      dh += h * (-record.states[ui].p.dot(gradient_at(ui)));
    }
  }
  dh += 0.5 * h * (-zk.p.dot(gk) - zs.p.dot(gs));
  return dh;
}

/// min(1, exp(-dH)); zero for non-finite dH.
inline double acceptance_probability(double delta_h) {
  if (!std::isfinite(delta_h)) return 0.0;
  return delta_h <= 0.0 ? 1.0 : std::exp(-delta_h);
}

// -----------------------------------------------------------------------------
// Chain

struct ChainResult {
  Ensemble samples;
  ChainDiagnostics diagnostics;
};

/// Runs burn_in proposals, then keeps the chain state after every `thinning`
/// further proposals until `samples` states are collected. Rejections repeat
/// the current state.
template <Potential P>
ChainResult hmc_chain(const StateVector& x0, const P& pot, const ChainConfig& cfg,
                      const MassMatrix& mass, RandomSource& rng) {
  cfg.validate();
  require_same_size(x0.size(), mass.size(), "hmc_chain");

  const Index n = x0.size();
  const bool hilbert = cfg.trajectory.kind == IntegratorKind::hilbert;
  const Index cap = cfg.rejection_cap();

  ChainResult result;
  result.samples = Ensemble(n, cfg.samples);
  ChainDiagnostics& diag = result.diagnostics;
  diag.delta_h.reserve(static_cast<std::size_t>(cfg.burn_in + cfg.samples * cfg.thinning));

  StateVector current = x0;
  double current_j = pot.value(current);
  if (!std::isfinite(current_j)) throw Error("hmc_chain: non-finite potential at the initial state");

  Index run = 0;
  TrajectoryRecord record;
  PhasePoint start;
  start.x.resize(n);
  start.p.resize(n);

  auto propose = [&]() {
    start.x = current;
    for (Index i = 0; i < n; ++i) start.p[i] = mass.sqrt()[i] * rng.normal();

    double delta_h = std::numeric_limits<double>::quiet_NaN();
    StateVector proposal;
    double proposal_j = 0.0;
    try {
      TrajectoryResult traj = integrate_trajectory(start, cfg.trajectory, mass, pot, rng,
                                                   hilbert ? &record : nullptr);
      diag.gradient_evaluations += traj.gradient_evaluations;
      proposal_j = pot.value(traj.end.x);
      if (hilbert) {
        delta_h = energy_loss_hilbert(record, mass, pot, cfg.hilbert_energy);
      } else {
        delta_h = mass.kinetic_energy(traj.end.p) + proposal_j -
                  (mass.kinetic_energy(start.p) + current_j);
      }
      proposal = std::move(traj.end.x);
    } catch (const IntegratorDivergenceError&) {
      diag.gradient_evaluations += cfg.trajectory.steps * gradients_per_step(cfg.trajectory.kind);
    }

    ++diag.proposals;
    diag.delta_h.push_back(delta_h);
    const double a = acceptance_probability(delta_h);
    const double u = rng.uniform();
    const bool finite = std::isfinite(delta_h) && std::isfinite(proposal_j) &&
                        proposal.size() == n && proposal.allFinite();
    if (!finite) ++diag.nonfinite_proposals;
    if (finite && a > u) {
      current = std::move(proposal);
      current_j = proposal_j;
      ++diag.acceptances;
      run = 0;
    } else {
      ++run;
      diag.longest_rejection_run = std::max(diag.longest_rejection_run, run);
      if (run >= cap) {
        throw ChainDivergenceError("hmc_chain: " + std::to_string(run) +
                                       " consecutive rejections",
                                   diag);
      }
    }
  };

  for (Index k = 0; k < cfg.burn_in; ++k) propose();
  for (Index e = 0; e < cfg.samples; ++e) {
    for (Index k = 0; k < cfg.thinning; ++k) propose();
    result.samples.member(e) = current;
  }
  return result;
}

}  // namespace hmcda

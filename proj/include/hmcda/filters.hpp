#pragma once

// Forecast/analysis cycles for the HMC sampling filter, the stochastic
// (perturbed-observation) EnKF and the maximum likelihood ensemble filter.

#include "hmcda/cov.hpp"
#include "hmcda/hmc.hpp"
#include "hmcda/model.hpp"
#include "hmcda/obs.hpp"

#include <memory>

namespace hmcda {

/// Negative log posterior for one cycle:
///   J(x) = 1/2 (x - xb)^T B^{-1} (x - xb) + 1/2 (y - H(x))^T R^{-1} (y - H(x)).
/// Not safe for concurrent use of one instance: it keeps scratch buffers.
class PosteriorDensity {
 public:
  PosteriorDensity(StateVector background, std::shared_ptr<const CovarianceOperator> cov,
                   StateVector observation, ObservationOperator op, StateVector r_variances)
      : xb_(std::move(background)),
        cov_(std::move(cov)),
        y_(std::move(observation)),
        op_(std::move(op)),
        r_inv_(r_variances.cwiseInverse()) {
    require_same_size(xb_.size(), cov_->nvar(), "PosteriorDensity");
    require_same_size(y_.size(), op_.nobs(), "PosteriorDensity");
    require_same_size(r_inv_.size(), op_.nobs(), "PosteriorDensity");
    op_.check_state(xb_);
  }

  const StateVector& background() const { return xb_; }
  const CovarianceOperator& covariance() const { return *cov_; }
  const ObservationOperator& observation_operator() const { return op_; }
  const StateVector& observation() const { return y_; }

  double value(const StateVector& x) const {
    require_same_size(x.size(), xb_.size(), "PosteriorDensity::value");
    diff_ = x - xb_;
    cov_->inverse_apply_into(diff_, scratch_);
    double j = 0.5 * diff_.dot(scratch_);
    const auto& idx = op_.indices();
    for (Index k = 0; k < op_.nobs(); ++k) {
      const double innov = y_[k] - op_.map(x[idx[static_cast<std::size_t>(k)]]);
      j += 0.5 * innov * innov * r_inv_[k];
    }
    return j;
  }

  /// B^{-1}(x - xb) - H^T R^{-1} (y - H(x)).
  void gradient_into(const StateVector& x, StateVector& g) const {
    require_same_size(x.size(), xb_.size(), "PosteriorDensity::gradient");
    diff_ = x - xb_;
    cov_->inverse_apply_into(diff_, g);
    const auto& idx = op_.indices();
    for (Index k = 0; k < op_.nobs(); ++k) {
      const Index i = idx[static_cast<std::size_t>(k)];
      const double innov = y_[k] - op_.map(x[i]);
      g[i] -= op_.derivative(x[i]) * r_inv_[k] * innov;
    }
  }

  StateVector gradient(const StateVector& x) const {
    StateVector g;
    gradient_into(x, g);
    return g;
  }

 private:
  StateVector xb_;
  std::shared_ptr<const CovarianceOperator> cov_;
  StateVector y_;
  ObservationOperator op_;
  StateVector r_inv_;
  mutable StateVector diff_;
  mutable StateVector scratch_;
};

// -----------------------------------------------------------------------------
// Shared cycle plumbing

/// Everything one analysis cycle at time t1 needs besides the filter state.
struct CycleContext {
  Lorenz96Config model;
  double t0 = 0.0;
  double t1 = 0.1;
  StateVector observation;
  const ObservationOperator* op = nullptr;
  ObservationErrorModel errors;
  StateVector b0_variances;
  CovarianceSettings covariance;
  StateVector model_error_std;  // empty: perfect model

  const ObservationOperator& observation_operator() const {
    if (!op) throw MisuseError("CycleContext: observation operator not set");
    return *op;
  }

  void validate(Index nvar) const {
    require_same_size(nvar, model.nvar, "CycleContext");
    require_same_size(observation.size(), observation_operator().nobs(), "CycleContext");
    require_same_size(errors.variances.size(), observation.size(), "CycleContext");
    if (!(errors.variances.array() > 0.0).all()) {
      throw DimensionError("CycleContext: observation variances must be > 0");
    }
  }
};

class CycleDivergenceError : public Error {
 public:
  CycleDivergenceError(const std::string& what, ChainDiagnostics diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  const ChainDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  ChainDiagnostics diagnostics_;
};

/// M_{t0 -> t1} applied to every member, plus N(0, Q) model noise when
/// model_error_std is set.
inline Ensemble forecast_ensemble(const Ensemble& analysis, const CycleContext& ctx,
                                  RandomSource* rng = nullptr) {
  Ensemble out(analysis.nvar(), analysis.size());
  const bool noisy = ctx.model_error_std.size() > 0 && ctx.model_error_std.maxCoeff() > 0.0;
  for (Index e = 0; e < analysis.size(); ++e) {
    StateVector x = propagate(analysis.member(e), ctx.t0, ctx.t1, ctx.model);
    if (noisy) {
      if (!rng) throw MisuseError("forecast_ensemble: model noise requires a random source");
      x = gaussian_vector(*rng, x, ctx.model_error_std);
    }
    out.member(e) = x;
  }
  return out;
}

// -----------------------------------------------------------------------------
// Stochastic EnKF

/// Localized sample covariance (1/(Nens-1) X X^T) o rho; no localization when
/// settings.localize is false.
inline Matrix localized_ensemble_covariance(const Ensemble& forecast,
                                            const CovarianceSettings& settings) {
  Matrix b = sample_covariance(ensemble_covariance(forecast));
  if (settings.localize) b = b.cwiseProduct(localization_weights(settings.length, forecast.nvar()));
  return b;
}

/// K = B H^T (H B H^T + R)^{-1}.
inline Matrix kalman_gain(const Matrix& b, const Matrix& h, const StateVector& r_variances) {
  Matrix s = h * b * h.transpose();
  s.diagonal() += r_variances;
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success) {
    throw LinearAlgebraError("kalman_gain: innovation covariance is not positive definite");
  }
  return llt.solve(h * b).transpose();
}

/// Perturbed-observation update of every member with one gain linearized at
/// the forecast mean.
inline Ensemble enkf_analysis(const Ensemble& forecast, const CycleContext& ctx, RandomSource& rng) {
  ctx.validate(forecast.nvar());
  const auto& op = ctx.observation_operator();
  const Matrix b = localized_ensemble_covariance(forecast, ctx.covariance);
  const Matrix h = jacobian_matrix(op, forecast.mean());
  const Matrix k = kalman_gain(b, h, ctx.errors.variances);
  const StateVector sd = ctx.errors.stddev();

  Ensemble analysis(forecast.nvar(), forecast.size());
  for (Index e = 0; e < forecast.size(); ++e) {
    const StateVector xf = forecast.member(e);
    const StateVector perturbed = gaussian_vector(rng, ctx.observation, sd);
    analysis.member(e) = xf + k * (perturbed - observe(op, xf));
  }
  return analysis;
}

struct EnkfCycleResult {
  Ensemble analysis;
  StateVector mean;
};

inline EnkfCycleResult enkf_cycle(const Ensemble& previous, const CycleContext& ctx, RandomSource& rng) {
  if (previous.size() < 2) throw InsufficientEnsembleError("enkf_cycle: need at least 2 members");
  const Ensemble forecast = forecast_ensemble(previous, ctx, &rng);
  EnkfCycleResult out{enkf_analysis(forecast, ctx, rng), {}};
  out.mean = out.analysis.mean();
  return out;
}

// -----------------------------------------------------------------------------
// HMC sampling filter

enum class ChainStart { forecast_mean, enkf_analysis };

inline std::string_view to_string(ChainStart s) {
  return s == ChainStart::forecast_mean ? "forecast-mean" : "enkf-analysis";
}

inline std::optional<ChainStart> parse_chain_start(std::string_view s) {
  if (s == "forecast-mean") return ChainStart::forecast_mean;
  if (s == "enkf-analysis") return ChainStart::enkf_analysis;
  return std::nullopt;
}

struct SamplingFilterSettings {
  ChainConfig chain;
  ChainStart start = ChainStart::forecast_mean;
};

inline MassMatrix resolve_mass(const ChainConfig& chain, const CovarianceOperator& cov) {
  switch (chain.mass_policy) {
    case MassPolicy::diag_b: return MassMatrix(cov.diagonal());
    case MassPolicy::diag_b_inverse: return MassMatrix(cov.inverse_diagonal());
    case MassPolicy::identity_scaled: return MassMatrix::identity(cov.nvar(), chain.mass_scale);
  }
  return MassMatrix(cov.inverse_diagonal());
}

struct SamplingCycleResult {
  Ensemble analysis;
  StateVector mean;
  ChainDiagnostics diagnostics;
};

/// Analysis half of the sampling filter: B from the forecast ensemble, the
/// chain started at the forecast mean (or an EnKF analysis mean), Nens thinned
/// posterior samples as the analysis ensemble.
inline SamplingCycleResult sampling_filter_analysis(const Ensemble& forecast, const CycleContext& ctx,
                                                    const SamplingFilterSettings& settings,
                                                    RandomSource& rng) {
  ctx.validate(forecast.nvar());
  const auto& op = ctx.observation_operator();
  auto cov = std::make_shared<const CovarianceOperator>(
      CovarianceOperator::from_ensemble(ctx.b0_variances, forecast, ctx.covariance));
  const StateVector xb = forecast.mean();
  PosteriorDensity posterior(xb, cov, ctx.observation, op, ctx.errors.variances);

  StateVector x0 = xb;
  if (settings.start == ChainStart::enkf_analysis) x0 = enkf_analysis(forecast, ctx, rng).mean();

  const MassMatrix mass = resolve_mass(settings.chain, *cov);
  try {
    ChainResult chain = hmc_chain(x0, posterior, settings.chain, mass, rng);
    SamplingCycleResult out{std::move(chain.samples), {}, std::move(chain.diagnostics)};
    out.mean = out.analysis.mean();
    return out;
  } catch (const ChainDivergenceError& e) {
    throw CycleDivergenceError(std::string("sampling filter cycle diverged: ") + e.what(),
                               e.diagnostics());
  }
}

inline SamplingCycleResult sampling_filter_cycle(const Ensemble& previous, const CycleContext& ctx,
                                                 const SamplingFilterSettings& settings,
                                                 RandomSource& rng) {
  const Ensemble forecast = forecast_ensemble(previous, ctx, &rng);
  return sampling_filter_analysis(forecast, ctx, settings, rng);
}

// -----------------------------------------------------------------------------
// Maximum likelihood ensemble filter

struct MlefSettings {
  int max_iterations = 100;
  double gradient_tolerance = 1e-6;
};

/// Optimal state and the scaled analysis perturbations A^{1/2} (Nvar x Nens).
struct MlefState {
  StateVector optimum;
  Matrix sqrt_analysis;

  /// Starts from an ensemble: its mean and deviations / sqrt(Nens - 1).
  static MlefState from_ensemble(const Ensemble& ensemble) {
    auto stats = ensemble_covariance(ensemble);
    const double scale = 1.0 / std::sqrt(static_cast<double>(ensemble.size() - 1));
    return {std::move(stats.mean), scale * stats.deviations};
  }
};

struct MlefResult {
  MlefState state;
  StateVector xi;
  bool converged = false;
  int iterations = 0;
  std::vector<double> cost_history;  // J(xi) at every accepted iterate
};

namespace detail {

/// Symmetric (I + C)^{-1/2} and (I + C)^{-1} from the eigendecomposition.
inline std::pair<Matrix, Matrix> inverse_roots(const Matrix& c) {
  Matrix ic = Matrix::Identity(c.rows(), c.cols()) + 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(ic);
  if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0) {
    throw LinearAlgebraError("mlef: I + C is not positive definite");
  }
  const Matrix& v = eig.eigenvectors();
  const StateVector lam = eig.eigenvalues();
  Matrix inv_sqrt = v * lam.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
  Matrix inv = v * lam.cwiseInverse().asDiagonal() * v.transpose();
  return {std::move(inv_sqrt), std::move(inv)};
}

class MlefProblem {
 public:
  MlefProblem(const StateVector& xb, const Matrix& bsqrt, const StateVector& y,
              const ObservationOperator& op, const StateVector& r_variances)
      : xb_(xb), bsqrt_(bsqrt), y_(y), op_(op), r_inv_sqrt_(r_variances.cwiseSqrt().cwiseInverse()) {
    std::tie(t_, t_inv2_) = inverse_roots(c_matrix(xb_));
    g_ = bsqrt_ * t_;
  }

  /// Z(x): columns R^{-1/2}(H(x + b_e) - H(x)).
  Matrix z_matrix(const StateVector& x) const {
    const StateVector hx = observe(op_, x);
    Matrix z(op_.nobs(), bsqrt_.cols());
    for (Index e = 0; e < bsqrt_.cols(); ++e) {
      StateVector xe = x + bsqrt_.col(e);
      z.col(e) = r_inv_sqrt_.cwiseProduct(observe(op_, xe) - hx);
    }
    return z;
  }

  Matrix c_matrix(const StateVector& x) const {
    const Matrix z = z_matrix(x);
    return z.transpose() * z;
  }

  StateVector state(const StateVector& xi) const { return xb_ + g_ * xi; }

  double cost(const StateVector& xi) const {
    const StateVector w = r_inv_sqrt_.cwiseProduct(y_ - observe(op_, state(xi)));
    return 0.5 * xi.dot(t_inv2_ * xi) + 0.5 * w.squaredNorm();
  }

  /// (I + C(0))^{-1} xi - (I + C(0))^{-1/2} Z(xi)^T R^{-1/2} (y - H(x(xi))).
  StateVector gradient(const StateVector& xi) const {
    const StateVector x = state(xi);
    const StateVector w = r_inv_sqrt_.cwiseProduct(y_ - observe(op_, x));
    return t_inv2_ * xi - t_ * (z_matrix(x).transpose() * w);
  }

  const Matrix& bsqrt() const { return bsqrt_; }

 private:
  StateVector xb_;
  Matrix bsqrt_;
  StateVector y_;
  const ObservationOperator& op_;
  StateVector r_inv_sqrt_;
  Matrix t_;
  Matrix t_inv2_;
  Matrix g_;
};

}  // namespace detail

/// Analysis step given the background and its square root B^{1/2}.
inline MlefResult mlef_analysis(const StateVector& xb, const Matrix& bsqrt, const StateVector& y,
                                const ObservationOperator& op, const StateVector& r_variances,
                                const MlefSettings& settings = {}) {
  require_same_size(xb.size(), bsqrt.rows(), "mlef_analysis");
  require_same_size(y.size(), op.nobs(), "mlef_analysis");
  if (bsqrt.cols() < 2) throw InsufficientEnsembleError("mlef_analysis: need at least 2 members");

  const detail::MlefProblem problem(xb, bsqrt, y, op, r_variances);
  const Index n = bsqrt.cols();

  // BFGS on xi with Armijo backtracking; the preconditioned Hessian is I for
  // linear H, so the identity is the starting inverse-Hessian estimate.
  MlefResult out;
  StateVector xi = StateVector::Zero(n);
  double f = problem.cost(xi);
  StateVector g = problem.gradient(xi);
  Matrix hinv = Matrix::Identity(n, n);
  out.cost_history.push_back(f);

  for (int it = 0; it < settings.max_iterations; ++it) {
    if (!std::isfinite(f) || !g.allFinite()) break;
    if (g.norm() <= settings.gradient_tolerance) {
      out.converged = true;
      break;
    }
    StateVector dir = -hinv * g;
    if (dir.dot(g) >= 0.0) {
      hinv.setIdentity();
      dir = -g;
    }
    double alpha = 1.0;
    double f_new = 0.0;
    StateVector xi_new;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      xi_new = xi + alpha * dir;
      f_new = problem.cost(xi_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * alpha * g.dot(dir)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
    const StateVector g_new = problem.gradient(xi_new);
    const StateVector s = xi_new - xi;
    const StateVector yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      const Matrix ident = Matrix::Identity(n, n);
      hinv = (ident - rho * s * yv.transpose()) * hinv * (ident - rho * yv * s.transpose()) +
             rho * s * s.transpose();
    }
    xi = std::move(xi_new);
    f = f_new;
    g = g_new;
    ++out.iterations;
    out.cost_history.push_back(f);
  }
  if (!out.converged && g.allFinite() && g.norm() <= settings.gradient_tolerance) out.converged = true;

  out.xi = xi;
  out.state.optimum = problem.state(xi);
  const auto [t_opt, unused] = detail::inverse_roots(problem.c_matrix(out.state.optimum));
  (void)unused;
  out.state.sqrt_analysis = bsqrt * t_opt;
  return out;
}

/// Forecast of the previous optimum and its perturbations, then the analysis.
inline MlefResult mlef_cycle(const MlefState& previous, const CycleContext& ctx,
                             const MlefSettings& settings = {}) {
  ctx.validate(previous.optimum.size());
  if (previous.sqrt_analysis.cols() < 2) throw InsufficientEnsembleError("mlef_cycle: need at least 2 members");
  const StateVector xb = propagate(previous.optimum, ctx.t0, ctx.t1, ctx.model);
  Matrix bsqrt(xb.size(), previous.sqrt_analysis.cols());
  for (Index e = 0; e < bsqrt.cols(); ++e) {
    const StateVector xe = previous.optimum + previous.sqrt_analysis.col(e);
    bsqrt.col(e) = propagate(xe, ctx.t0, ctx.t1, ctx.model) - xb;
  }
  return mlef_analysis(xb, bsqrt, ctx.observation, ctx.observation_operator(), ctx.errors.variances,
                       settings);
}

}  // namespace hmcda

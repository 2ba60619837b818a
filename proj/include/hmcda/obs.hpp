#pragma once

// Observation operators: pointwise maps applied to a selected subset of the
// state, their Jacobian-transpose products and synthetic observation
// generation.

#include "hmcda/core.hpp"

#include <optional>
#include <string_view>

namespace hmcda {

enum class ObservationKind { linear, quadratic, cubic, magnitude, quadratic_threshold, exponential };

inline std::string_view to_string(ObservationKind k) {
  switch (k) {
    case ObservationKind::linear: return "linear";
    case ObservationKind::quadratic: return "quadratic";
    case ObservationKind::cubic: return "cubic";
    case ObservationKind::magnitude: return "magnitude";
    case ObservationKind::quadratic_threshold: return "quadratic-threshold";
    case ObservationKind::exponential: return "exponential";
  }
  return "unknown";
}

inline std::optional<ObservationKind> parse_observation_kind(std::string_view s) {
  for (auto k : {ObservationKind::linear, ObservationKind::quadratic, ObservationKind::cubic,
                 ObservationKind::magnitude, ObservationKind::quadratic_threshold,
                 ObservationKind::exponential}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

/// Zero-based indices start, start+stride, ... below nvar.
inline std::vector<Index> strided_indices(Index nvar, Index start = 0, Index stride = 3) {
  if (stride < 1 || start < 0) throw DimensionError("strided_indices: bad start/stride");
  std::vector<Index> out;
  for (Index i = start; i < nvar; i += stride) out.push_back(i);
  return out;
}

class ObservationOperator {
 public:
  ObservationOperator(ObservationKind kind, std::vector<Index> indices, double exponent_factor = 0.2,
                      double threshold = 0.5)
      : kind_(kind), indices_(std::move(indices)), r_(exponent_factor), a_(threshold) {
    if (indices_.empty()) throw DimensionError("ObservationOperator: empty index set");
    for (std::size_t j = 0; j < indices_.size(); ++j) {
      if (indices_[j] < 0) throw DimensionError("ObservationOperator: negative index");
      if (j > 0 && indices_[j] <= indices_[j - 1]) {
        throw DimensionError("ObservationOperator: indices must be strictly increasing");
      }
    }
  }

  /// Every third component starting at the first.
  static ObservationOperator every_third(ObservationKind kind, Index nvar) {
    return ObservationOperator(kind, strided_indices(nvar, 0, 3));
  }

  ObservationKind kind() const { return kind_; }
  const std::vector<Index>& indices() const { return indices_; }
  Index nobs() const { return static_cast<Index>(indices_.size()); }
  double exponent_factor() const { return r_; }
  double threshold() const { return a_; }

  /// Scalar map applied to each observed component.
  double map(double v) const {
    switch (kind_) {
      case ObservationKind::linear: return v;
      case ObservationKind::quadratic: return v * v;
      case ObservationKind::cubic: return v * v * v;
      case ObservationKind::magnitude: return std::abs(v);
      case ObservationKind::quadratic_threshold: return v >= a_ ? v * v : -v * v;
      case ObservationKind::exponential: return std::exp(r_ * v);
    }
    return v;
  }

  /// d map / dv. Magnitude uses sign(0) = 0; the discontinuous thresholded
  /// square falls back to a central difference with step 1e-6 max(1, |v|).
  double derivative(double v) const {
    switch (kind_) {
      case ObservationKind::linear: return 1.0;
      case ObservationKind::quadratic: return 2.0 * v;
      case ObservationKind::cubic: return 3.0 * v * v;
      case ObservationKind::magnitude: return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
      case ObservationKind::quadratic_threshold: {
        const double step = 1e-6 * std::max(1.0, std::abs(v));
        return (map(v + step) - map(v - step)) / (2.0 * step);
      }
      case ObservationKind::exponential: return r_ * std::exp(r_ * v);
    }
    return 0.0;
  }

  bool differentiable() const { return kind_ != ObservationKind::quadratic_threshold; }

  void check_state(const StateVector& x) const {
    if (indices_.back() >= x.size()) {
      throw DimensionError("ObservationOperator: index " + std::to_string(indices_.back()) +
                           " out of range for state of length " + std::to_string(x.size()));
    }
  }

 private:
  ObservationKind kind_;
  std::vector<Index> indices_;
  double r_;
  double a_;
};

inline StateVector observe(const ObservationOperator& op, const StateVector& x) {
  op.check_state(x);
  StateVector y(op.nobs());
  const auto& idx = op.indices();
  for (Index j = 0; j < op.nobs(); ++j) y[j] = op.map(x[idx[static_cast<std::size_t>(j)]]);
  return y;
}

/// Diagonal of the Jacobian restricted to the observed components.
inline StateVector jacobian_diagonal(const ObservationOperator& op, const StateVector& x) {
  op.check_state(x);
  StateVector d(op.nobs());
  const auto& idx = op.indices();
  for (Index j = 0; j < op.nobs(); ++j) d[j] = op.derivative(x[idx[static_cast<std::size_t>(j)]]);
  return d;
}

/// Dense Nobs x Nvar Jacobian.
inline Matrix jacobian_matrix(const ObservationOperator& op, const StateVector& x) {
  const StateVector d = jacobian_diagonal(op, x);
  Matrix h = Matrix::Zero(op.nobs(), x.size());
  const auto& idx = op.indices();
  for (Index j = 0; j < op.nobs(); ++j) h(j, idx[static_cast<std::size_t>(j)]) = d[j];
  return h;
}

/// H^T w with H the Jacobian at x; unobserved components get zero.
inline StateVector jacobian_transpose_apply(const ObservationOperator& op, const StateVector& x,
                                            const StateVector& w) {
  require_same_size(w.size(), op.nobs(), "jacobian_transpose_apply");
  op.check_state(x);
  StateVector out = StateVector::Zero(x.size());
  const auto& idx = op.indices();
  for (Index j = 0; j < op.nobs(); ++j) {
    const Index i = idx[static_cast<std::size_t>(j)];
    out[i] = op.derivative(x[i]) * w[j];
  }
  return out;
}

// -----------------------------------------------------------------------------

/// Diagonal observation error covariance R.
struct ObservationErrorModel {
  StateVector variances;
  double noise_level = 0.05;

  StateVector stddev() const { return variances.cwiseSqrt(); }
  StateVector inverse_variances() const { return variances.cwiseInverse(); }
};

struct SyntheticObservations {
  std::vector<StateVector> values;
  ObservationErrorModel errors;
};

inline constexpr double kObservationNoiseFloor = 1e-8;

/// Per-component noise stddev = level * mean_k |H(truth_k)|, floored at
/// `floor`; observations are H(truth_k) + N(0, R).
inline SyntheticObservations synthesize_observations(std::span<const StateVector> truth,
                                                     const ObservationOperator& op,
                                                     double noise_level, RandomSource& rng,
                                                     double floor = kObservationNoiseFloor) {
  if (truth.empty()) throw EmptyInputError("synthesize_observations: empty trajectory");
  if (noise_level < 0.0) throw DimensionError("synthesize_observations: negative noise level");

  std::vector<StateVector> clean;
  clean.reserve(truth.size());
  StateVector magnitude = StateVector::Zero(op.nobs());
  for (const auto& x : truth) {
    clean.push_back(observe(op, x));
    magnitude += clean.back().cwiseAbs();
  }
  magnitude /= static_cast<double>(truth.size());

  StateVector sd = (noise_level * magnitude).cwiseMax(floor);
  SyntheticObservations out;
  out.errors.noise_level = noise_level;
  out.errors.variances = sd.cwiseProduct(sd);
  out.values.reserve(truth.size());
  for (const auto& y : clean) {
    out.values.push_back(noise_level == 0.0 ? y : gaussian_vector(rng, y, sd));
  }
  return out;
}

}  // namespace hmcda

#pragma once

// Background error covariance: the fixed diagonal B0 blended with the
// localized ensemble covariance,
//
//   B = gamma B0 + (1 - gamma) / (Nens - 1) (X X^T) o rho,
//
// with apply / inverse_apply. Small problems factor B densely; large ones use
// a matrix-free product and preconditioned conjugate gradients.

#include "hmcda/core.hpp"

#include <optional>
#include <string_view>

namespace hmcda {

class SingularCovarianceError : public LinearAlgebraError {
 public:
  using LinearAlgebraError::LinearAlgebraError;
};

struct EnsembleStatistics {
  StateVector mean;
  Matrix deviations;  // Nvar x Nens, columns x(e) - mean
};

inline EnsembleStatistics ensemble_covariance(const Ensemble& ensemble) {
  if (ensemble.size() < 2) {
    throw InsufficientEnsembleError("ensemble_covariance: need at least 2 members, got " +
                                    std::to_string(ensemble.size()));
  }
  EnsembleStatistics s;
  s.mean = ensemble.mean();
  s.deviations = ensemble.matrix().colwise() - s.mean;
  return s;
}

/// (1 / (Nens - 1)) X X^T.
inline Matrix sample_covariance(const EnsembleStatistics& s) {
  // Rank update of one triangle, mirrored: exactly symmetric.
  const double scale = 1.0 / static_cast<double>(s.deviations.cols() - 1);
  const Index n = s.deviations.rows();
  Matrix c = Matrix::Zero(n, n);
  c.selfadjointView<Eigen::Lower>().rankUpdate(s.deviations, scale);
  c.triangularView<Eigen::StrictlyUpper>() = c.transpose();
  return c;
}

// -----------------------------------------------------------------------------
// Gaussian localization on a cyclic grid: rho_ij = exp(-d^2 / (2 L^2)) with
// d = min(|i - j|, n - |i - j|).

class Localization {
 public:
  Localization(double length, Index nvar) : length_(length), nvar_(nvar) {
    if (!(length > 0.0)) throw DimensionError("Localization: length must be > 0");
    if (nvar < 1) throw DimensionError("Localization: nvar must be >= 1");
    const Index half = nvar / 2;
    kernel_.resize(half + 1);
    for (Index d = 0; d <= half; ++d) {
      const double dd = static_cast<double>(d);
      kernel_[d] = std::exp(-dd * dd / (2.0 * length * length));
    }
    // Beyond `reach` the weights underflow double precision relative to 1.
    reach_ = half;
    for (Index d = 0; d <= half; ++d) {
      if (kernel_[d] < 1e-17) {
        reach_ = d - 1;
        break;
      }
    }
  }

  double length() const { return length_; }
  Index nvar() const { return nvar_; }

  static Index cyclic_distance(Index i, Index j, Index n) {
    const Index d = i > j ? i - j : j - i;
    return std::min(d, n - d);
  }

  double weight(Index i, Index j) const { return kernel_[cyclic_distance(i, j, nvar_)]; }

  Matrix matrix() const {
    Matrix rho(nvar_, nvar_);
    for (Index i = 0; i < nvar_; ++i)
      for (Index j = 0; j < nvar_; ++j) rho(i, j) = weight(i, j);
    return rho;
  }

  /// rho v as a truncated circular convolution.
  StateVector apply(const StateVector& v) const {
    require_same_size(v.size(), nvar_, "Localization::apply");
    StateVector out = kernel_[0] * v;
    const Index half = nvar_ / 2;
    for (Index d = 1; d <= reach_; ++d) {
      const double w = kernel_[d];
      const bool antipodal = (nvar_ % 2 == 0) && d == half;
      for (Index i = 0; i < nvar_; ++i) {
        out[i] += w * v[(i + d) % nvar_];
        if (!antipodal) out[i] += w * v[(i + nvar_ - d) % nvar_];
      }
    }
    return out;
  }

 private:
  double length_;
  Index nvar_;
  StateVector kernel_;
  Index reach_ = 0;
};

inline Matrix localization_weights(double length, Index nvar) {
  return Localization(length, nvar).matrix();
}

// -----------------------------------------------------------------------------

enum class CovarianceSolver { automatic, dense, conjugate_gradient };

inline std::string_view to_string(CovarianceSolver s) {
  switch (s) {
    case CovarianceSolver::automatic: return "auto";
    case CovarianceSolver::dense: return "dense";
    case CovarianceSolver::conjugate_gradient: return "cg";
  }
  return "auto";
}

inline std::optional<CovarianceSolver> parse_covariance_solver(std::string_view s) {
  if (s == "auto") return CovarianceSolver::automatic;
  if (s == "dense") return CovarianceSolver::dense;
  if (s == "cg") return CovarianceSolver::conjugate_gradient;
  return std::nullopt;
}

struct CovarianceSettings {
  double gamma = 0.5;
  bool localize = true;
  double length = 4.0;
  CovarianceSolver solver = CovarianceSolver::automatic;
  Index dense_limit = 2000;
  double cg_tolerance = 1e-13;
  int cg_max_iterations = 0;  // 0: 10 * Nvar
};

class CovarianceOperator {
 public:
  CovarianceOperator(StateVector b0_variances, Matrix deviations, CovarianceSettings settings)
      : b0_(std::move(b0_variances)), dev_(std::move(deviations)), settings_(settings) {
    const Index n = b0_.size();
    require_same_size(dev_.rows(), n, "CovarianceOperator");
    if (settings_.gamma < 0.0 || settings_.gamma > 1.0) {
      throw DimensionError("CovarianceOperator: gamma must lie in [0, 1]");
    }
    if (settings_.gamma < 1.0 && dev_.cols() < 2) {
      throw InsufficientEnsembleError("CovarianceOperator: ensemble term needs Nens >= 2");
    }
    if ((b0_.array() < 0.0).any()) throw DimensionError("CovarianceOperator: negative B0 variance");
    if (settings_.localize) localization_.emplace(settings_.length, n);

    ens_scale_ = dev_.cols() >= 2 ? (1.0 - settings_.gamma) / static_cast<double>(dev_.cols() - 1)
                                  : 0.0;
    diagonal_ = settings_.gamma * b0_ + ens_scale_ * dev_.rowwise().squaredNorm();

    use_dense_ = settings_.solver == CovarianceSolver::dense ||
                 (settings_.solver == CovarianceSolver::automatic && n <= settings_.dense_limit);
    if (use_dense_) factor_dense();
  }

  /// Builds B_k from a forecast ensemble.
  static CovarianceOperator from_ensemble(const StateVector& b0_variances, const Ensemble& forecast,
                                          const CovarianceSettings& settings) {
    auto stats = ensemble_covariance(forecast);
    return CovarianceOperator(b0_variances, std::move(stats.deviations), settings);
  }

  Index nvar() const { return b0_.size(); }
  Index nens() const { return dev_.cols(); }
  const CovarianceSettings& settings() const { return settings_; }
  bool dense() const { return use_dense_; }

  const StateVector& diagonal() const { return diagonal_; }

  /// diag(B^{-1}).
  StateVector inverse_diagonal() const {
    if (use_dense_) return inverse_.diagonal();
    StateVector out(nvar());
    StateVector e = StateVector::Zero(nvar());
    for (Index i = 0; i < nvar(); ++i) {
      e[i] = 1.0;
      out[i] = inverse_apply_cg(e)[i];
      e[i] = 0.0;
    }
    return out;
  }

  StateVector apply(const StateVector& v) const {
    require_same_size(v.size(), nvar(), "CovarianceOperator::apply");
    if (use_dense_) return matrix_ * v;
    return apply_matrix_free(v);
  }

  StateVector inverse_apply(const StateVector& v) const {
    require_same_size(v.size(), nvar(), "CovarianceOperator::inverse_apply");
    if (use_dense_) return inverse_ * v;
    return inverse_apply_cg(v);
  }

  /// Allocation-free B^{-1} v for the dense path (hot loop of the sampler).
  void inverse_apply_into(const StateVector& v, StateVector& out) const {
    if (use_dense_) {
      out.noalias() = inverse_ * v;
    } else {
      out = inverse_apply_cg(v);
    }
  }

  /// (gamma B0 + c sum_e dx_e o (rho (dx_e o v))) without forming B.
  StateVector apply_matrix_free(const StateVector& v) const {
    require_same_size(v.size(), nvar(), "CovarianceOperator::apply_matrix_free");
    StateVector out = settings_.gamma * b0_.cwiseProduct(v);
    if (ens_scale_ == 0.0) return out;
    for (Index e = 0; e < nens(); ++e) {
      const auto dx = dev_.col(e);
      if (localization_) {
        const StateVector w = dx.cwiseProduct(v);
        out += ens_scale_ * dx.cwiseProduct(localization_->apply(w));
      } else {
        out += (ens_scale_ * dx.dot(v)) * dx;
      }
    }
    return out;
  }

  /// Jacobi-preconditioned conjugate gradients on the matrix-free product.
  StateVector inverse_apply_cg(const StateVector& rhs) const {
    require_same_size(rhs.size(), nvar(), "CovarianceOperator::inverse_apply_cg");
    const Index n = nvar();
    if ((diagonal_.array() <= 0.0).any()) {
      throw SingularCovarianceError(
          "CovarianceOperator: zero variance on the diagonal; use gamma > 0 with positive B0");
    }
    const int max_iter = settings_.cg_max_iterations > 0 ? settings_.cg_max_iterations
                                                         : static_cast<int>(10 * n + 50);
    const StateVector precond = diagonal_.cwiseInverse();
    StateVector x = StateVector::Zero(n);
    StateVector r = rhs;
    const double rhs_norm = rhs.norm();
    if (rhs_norm == 0.0) return x;
    StateVector z = precond.cwiseProduct(r);
    StateVector p = z;
    double rz = r.dot(z);
    for (int it = 0; it < max_iter; ++it) {
      const StateVector ap = apply_matrix_free(p);
      const double pap = p.dot(ap);
      if (!(pap > 0.0)) {
        throw SingularCovarianceError(
            "CovarianceOperator: covariance is not positive definite; use gamma > 0");
      }
      const double alpha = rz / pap;
      x += alpha * p;
      r -= alpha * ap;
      if (r.norm() <= settings_.cg_tolerance * rhs_norm) return x;
      z = precond.cwiseProduct(r);
      const double rz_next = r.dot(z);
      p = z + (rz_next / rz) * p;
      rz = rz_next;
    }
    throw SingularCovarianceError("CovarianceOperator: conjugate gradients did not converge");
  }

  /// Dense B (built on demand for the matrix-free path).
  Matrix dense_matrix() const {
    if (use_dense_) return matrix_;
    return build_dense();
  }

 private:
  Matrix build_dense() const {
    Matrix b = Matrix::Zero(nvar(), nvar());
    if (ens_scale_ != 0.0) {
      b = ens_scale_ * dev_ * dev_.transpose();
      if (localization_) b = b.cwiseProduct(localization_->matrix());
    }
    b.diagonal() += settings_.gamma * b0_;
    return b;
  }

  void factor_dense() {
    matrix_ = build_dense();
    Eigen::LLT<Matrix> llt(matrix_);
    bool ok = llt.info() == Eigen::Success;
    if (ok) {
      const StateVector piv = llt.matrixL().toDenseMatrix().diagonal();
      const double lo = piv.minCoeff();
      const double hi = piv.maxCoeff();
      ok = lo > 0.0 && (lo / hi) * (lo / hi) > 1e-13;
    }
    if (!ok) {
      throw SingularCovarianceError(
          "CovarianceOperator: blended covariance is singular (rank-deficient ensemble term); "
          "use gamma > 0");
    }
    inverse_ = llt.solve(Matrix::Identity(nvar(), nvar()));
    inverse_ = 0.5 * (inverse_ + inverse_.transpose()).eval();
  }

  StateVector b0_;
  Matrix dev_;
  CovarianceSettings settings_;
  std::optional<Localization> localization_;
  double ens_scale_ = 0.0;
  StateVector diagonal_;
  bool use_dense_ = true;
  Matrix matrix_;
  Matrix inverse_;
};

}  // namespace hmcda

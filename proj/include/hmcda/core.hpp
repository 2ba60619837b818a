#pragma once

// Shared numeric types, error hierarchy, seeded random streams and summary
// statistics used by every other hmcda header.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hmcda {

using StateVector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// -----------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class InsufficientEnsembleError : public Error {
 public:
  using Error::Error;
};

class LinearAlgebraError : public Error {
 public:
  using Error::Error;
};

class MisuseError : public Error {
 public:
  using Error::Error;
};

inline void require_same_size(Index a, Index b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length mismatch (" + std::to_string(a) +
                         " vs " + std::to_string(b) + ")");
  }
}

inline bool all_finite(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return v.allFinite();
}

// -----------------------------------------------------------------------------
// Ensemble: Nens members of equal dimension stored column-wise.

class Ensemble {
 public:
  Ensemble() = default;

  Ensemble(Index nvar, Index nens) : members_(Matrix::Zero(nvar, nens)) {}

  explicit Ensemble(Matrix members) : members_(std::move(members)) {}

  explicit Ensemble(const std::vector<StateVector>& members) {
    if (members.empty()) return;
    const Index nvar = members.front().size();
    members_.resize(nvar, static_cast<Index>(members.size()));
    for (std::size_t e = 0; e < members.size(); ++e) {
      require_same_size(members[e].size(), nvar, "Ensemble");
      members_.col(static_cast<Index>(e)) = members[e];
    }
  }

  Index nvar() const { return members_.rows(); }
  Index size() const { return members_.cols(); }

  /// Zero-based member access; the conventional 1-based index e maps to column e-1.
  auto member(Index e) const { return members_.col(e); }
  auto member(Index e) { return members_.col(e); }

  const Matrix& matrix() const { return members_; }
  Matrix& matrix() { return members_; }

  StateVector mean() const {
    if (size() == 0) throw EmptyInputError("Ensemble::mean: no members");
    return members_.rowwise().mean();
  }

  /// Columns x(e) - mean.
  Matrix deviations() const { return members_.colwise() - mean(); }

 private:
  Matrix members_;
};

// -----------------------------------------------------------------------------
// RandomSource
//
// A (seed, stream) pair deterministically seeds a 64-bit Mersenne twister
// through std::seed_seq, so distinct streams get decorrelated states.

class RandomSource {
 public:
  using Engine = std::mt19937_64;

  explicit RandomSource(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream), engine_(make_engine(seed, stream)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  double normal() { return normal_(engine_); }

  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  StateVector normal_vector(Index n) {
    StateVector z(n);
    for (Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

  Engine& engine() { return engine_; }

 private:
  static Engine make_engine(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32), 0x9e3779b9u};
    return Engine(seq);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  Engine engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// mean + diag(stddev) z with z ~ N(0, I) drawn from rng.
inline StateVector gaussian_vector(RandomSource& rng, const StateVector& mean,
                                   const StateVector& stddev) {
  require_same_size(mean.size(), stddev.size(), "gaussian_vector");
  if ((stddev.array() < 0.0).any()) {
    throw DimensionError("gaussian_vector: negative standard deviation");
  }
  StateVector out(mean.size());
  for (Index i = 0; i < mean.size(); ++i) out[i] = mean[i] + stddev[i] * rng.normal();
  return out;
}

inline double rmse(const StateVector& x, const StateVector& truth) {
  require_same_size(x.size(), truth.size(), "rmse");
  if (x.size() == 0) return 0.0;
  return std::sqrt((x - truth).squaredNorm() / static_cast<double>(x.size()));
}

// -----------------------------------------------------------------------------
// Summary statistics (sample standard deviation, n-1 denominator).

struct RunStatistics {
  std::size_t count = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;

  double mean_plus_2std() const { return mean + 2.0 * std; }
  double mean_minus_2std() const { return mean - 2.0 * std; }
};

inline RunStatistics summarize(std::span<const double> series) {
  if (series.empty()) throw EmptyInputError("summarize: empty series");
  RunStatistics s;
  s.count = series.size();
  s.min = *std::min_element(series.begin(), series.end());
  s.max = *std::max_element(series.begin(), series.end());
  double sum = 0.0;
  for (double v : series) sum += v;
  s.mean = sum / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : series) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
  }
  // Rounding in the mean can put it a few ulps outside [min, max].
  s.mean = std::clamp(s.mean, s.min, s.max);
  return s;
}

}  // namespace hmcda

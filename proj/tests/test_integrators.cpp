#include "hmcda/integrators.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace hmcda;

namespace {

const IntegratorKind kAll[] = {IntegratorKind::verlet, IntegratorKind::two_stage,
                               IntegratorKind::three_stage, IntegratorKind::four_stage,
                               IntegratorKind::hilbert};
const IntegratorKind kSplittings[] = {IntegratorKind::verlet, IntegratorKind::two_stage,
                                      IntegratorKind::three_stage, IntegratorKind::four_stage};

FunctionPotential zero_potential() {
  return FunctionPotential([](const StateVector&) { return 0.0; },
                           [](const StateVector& x) { return StateVector::Zero(x.size()).eval(); });
}

// Anharmonic, coupled: J = sum x_i^4 / 4 + 1/2 sum x_i^2 + 0.3 sum_i x_i x_{i+1}.
FunctionPotential anharmonic() {
  return FunctionPotential(
      [](const StateVector& x) {
        double j = 0.0;
        for (Index i = 0; i < x.size(); ++i) {
          j += 0.25 * std::pow(x[i], 4) + 0.5 * x[i] * x[i];
          if (i + 1 < x.size()) j += 0.3 * x[i] * x[i + 1];
        }
        return j;
      },
      [](const StateVector& x) {
        StateVector g(x.size());
        for (Index i = 0; i < x.size(); ++i) {
          g[i] = std::pow(x[i], 3) + x[i];
          if (i + 1 < x.size()) g[i] += 0.3 * x[i + 1];
          if (i > 0) g[i] += 0.3 * x[i - 1];
        }
        return g;
      });
}

double energy(const PhasePoint& z, const MassMatrix& m, const GaussianPotential& pot) {
  return m.kinetic_energy(z.p) + pot.value(z.x);
}

}  // namespace

TEST(Coefficients, DriftsSumToOneKicksSumToOne) {
  using namespace coefficients;
  EXPECT_NEAR(2 * two_stage_a1 + two_stage_a2, 1.0, 1e-15);
  EXPECT_NEAR(2 * two_stage_b1, 1.0, 1e-15);
  EXPECT_NEAR(2 * three_stage_a1 + 2 * three_stage_a2, 1.0, 1e-15);
  EXPECT_NEAR(2 * three_stage_b1 + three_stage_b2, 1.0, 1e-15);
  EXPECT_NEAR(2 * four_stage_a1 + 2 * four_stage_a2 + four_stage_a3, 1.0, 1e-15);
  EXPECT_NEAR(2 * four_stage_b1 + 2 * four_stage_b2, 1.0, 1e-15);
  EXPECT_EQ(two_stage_a1, 0.21132);
  EXPECT_EQ(three_stage_a1, 0.11888010966548);
  EXPECT_EQ(four_stage_a1, 0.071353913450279725904);
}

TEST(StepVerlet, HarmonicHandExample) {
  const GaussianPotential pot(StateVector::Ones(1));
  const PhasePoint z(StateVector::Ones(1), StateVector::Zero(1));
  const PhasePoint out = step_verlet(z, 0.1, MassMatrix::identity(1), pot);
  // x_half = 1, p+ = 0 - 0.1 * 1, x+ = 1 + 0.05 * (-0.1).
  EXPECT_NEAR(out.p[0], -0.1, 1e-15);
  EXPECT_NEAR(out.x[0], 0.995, 1e-15);
}

TEST(Steps, FreeFlightForEverySplitting) {
  const auto pot = zero_potential();
  const MassMatrix mass((StateVector(3) << 1.0, 2.0, 0.5).finished());
  const PhasePoint z((StateVector(3) << 1, 2, 3).finished(), (StateVector(3) << -1, 0.5, 2).finished());
  for (auto kind : kSplittings) {
    const PhasePoint out = step(kind, z, 0.3, mass, pot);
    const StateVector expected = z.x + 0.3 * mass.inverse().cwiseProduct(z.p);
    EXPECT_LT((out.x - expected).norm(), 1e-14) << to_string(kind);
    EXPECT_EQ(out.p, z.p);
  }
}

TEST(Steps, ReversibleToTightTolerance) {
  const auto pot = anharmonic();
  const MassMatrix mass((StateVector(4) << 1.0, 2.0, 0.5, 1.5).finished());
  RandomSource rng(1);
  for (auto kind : kAll) {
    const PhasePoint z(rng.normal_vector(4), rng.normal_vector(4));
    PhasePoint w = step(kind, z, 0.05, mass, pot);
    w.p = -w.p;
    w = step(kind, w, 0.05, mass, pot);
    w.p = -w.p;
    const double scale = std::max(z.x.norm(), z.p.norm());
    EXPECT_LT((w.x - z.x).norm(), 1e-12 * scale) << to_string(kind);
    EXPECT_LT((w.p - z.p).norm(), 1e-12 * scale) << to_string(kind);
  }
}

TEST(Steps, VolumePreservingJacobian) {
  const auto pot = anharmonic();
  const MassMatrix mass((StateVector(2) << 1.0, 0.7).finished());
  RandomSource rng(2);
  for (auto kind : kSplittings) {
    const StateVector z0 = 0.8 * rng.normal_vector(4);
    auto map = [&](const StateVector& v) {
      const PhasePoint out = step(kind, PhasePoint(v.head(2), v.tail(2)), 0.1, mass, pot);
      StateVector r(4);
      r << out.x, out.p;
      return r;
    };
    Matrix jac(4, 4);
    for (Index c = 0; c < 4; ++c) {
      const double eps = 1e-6;
      StateVector a = z0, b = z0;
      a[c] += eps;
      b[c] -= eps;
      jac.col(c) = (map(a) - map(b)) / (2 * eps);
    }
    EXPECT_NEAR(jac.determinant(), 1.0, 1e-6) << to_string(kind);
  }
}

TEST(Steps, ThreeStageConservesEnergyBetterThanVerlet) {
  const GaussianPotential pot(StateVector::Ones(1));
  const MassMatrix mass = MassMatrix::identity(1);
  const PhasePoint z0(StateVector::Ones(1), StateVector::Zero(1));
  auto worst = [&](IntegratorKind kind) {
    PhasePoint z = z0;
    double err = 0.0;
    for (int k = 0; k < 100; ++k) {
      z = step(kind, z, 0.1, mass, pot);
      err = std::max(err, std::abs(energy(z, mass, pot) - 0.5));
    }
    return err;
  };
  EXPECT_LT(worst(IntegratorKind::three_stage), worst(IntegratorKind::verlet));
}

TEST(Steps, VerletEnergyErrorIsSecondOrder) {
  const GaussianPotential pot(StateVector::Ones(1));
  const MassMatrix mass = MassMatrix::identity(1);
  auto err = [&](double h) {
    PhasePoint z(StateVector::Ones(1), StateVector::Zero(1));
    const int n = static_cast<int>(std::lround(1.0 / h));
    for (int k = 0; k < n; ++k) z = step_verlet(z, h, mass, pot);
    return std::abs(energy(z, mass, pot) - 0.5);
  };
  const double ratio = err(0.02) / err(0.01);
  EXPECT_NEAR(ratio, 4.0, 0.4);
}

TEST(StepHilbert, ZeroStepIsIdentity) {
  const auto pot = anharmonic();
  const PhasePoint z((StateVector(2) << 0.3, -1).finished(), (StateVector(2) << 2, 0.1).finished());
  const PhasePoint out = step_hilbert(z, 0.0, MassMatrix::identity(2), pot);
  EXPECT_EQ(out.x, z.x);
  EXPECT_EQ(out.p, z.p);
}

TEST(StepHilbert, ZeroGradientRotates) {
  const auto pot = zero_potential();
  const PhasePoint z((StateVector(2) << 1, 2).finished(), (StateVector(2) << 0.5, -1).finished());
  const double h = 0.3;
  const PhasePoint out = step_hilbert(z, h, MassMatrix::identity(2), pot);
  for (Index i = 0; i < 2; ++i) {
    EXPECT_NEAR(out.x[i], std::cos(h) * z.x[i] + std::sin(h) * z.p[i], 1e-15);
    EXPECT_NEAR(out.p[i], -std::sin(h) * z.x[i] + std::cos(h) * z.p[i], 1e-15);
  }
}

TEST(StepHilbert, ModifiedEnergyDriftSmallOnUnitGaussian) {
  // The rotation carries x^2/2 on top of J = x^2/2, so p^2/2 + x^2 is conserved.
  const GaussianPotential pot(StateVector::Ones(3));
  const MassMatrix mass = MassMatrix::identity(3);
  PhasePoint z((StateVector(3) << 1, 0, -0.5).finished(), (StateVector(3) << 0, 1, 0.3).finished());
  auto energy = [](const PhasePoint& w) { return 0.5 * w.p.squaredNorm() + w.x.squaredNorm(); };
  const double e0 = energy(z);
  for (int k = 0; k < 100; ++k) z = step_hilbert(z, 0.01, mass, pot);
  EXPECT_LT(std::abs(energy(z) - e0), 1e-3);
}

TEST(IntegrateTrajectory, SingleStepMatchesStepWithDrawnH) {
  const auto pot = anharmonic();
  const MassMatrix mass = MassMatrix::identity(3);
  const PhasePoint z((StateVector(3) << 0.1, 0.2, 0.3).finished(), (StateVector(3) << 1, -1, 0).finished());
  for (auto kind : kAll) {
    TrajectorySpec spec{kind, 0.05, 1, 0.2};
    RandomSource rng(9);
    const auto res = integrate_trajectory(z, spec, mass, pot, rng);
    RandomSource replay(9);
    const double h = (1.0 + replay.uniform(-0.2, 0.2)) * 0.05;
    EXPECT_DOUBLE_EQ(res.step, h);
    const PhasePoint direct = step(kind, z, h, mass, pot);
    EXPECT_LT((res.end.x - direct.x).norm(), 1e-15) << to_string(kind);
    EXPECT_LT((res.end.p - direct.p).norm(), 1e-15) << to_string(kind);
    // Hilbert also evaluates the start gradient once per trajectory.
    EXPECT_EQ(res.gradient_evaluations, gradients_per_step(kind) + (kind == IntegratorKind::hilbert ? 1 : 0));
  }
}

TEST(IntegrateTrajectory, StepIsWithinJitterBand) {
  const auto pot = zero_potential();
  RandomSource rng(3);
  const PhasePoint z(StateVector::Zero(1), StateVector::Ones(1));
  for (int k = 0; k < 200; ++k) {
    const auto res = integrate_trajectory(z, TrajectorySpec{}, MassMatrix::identity(1), pot, rng);
    EXPECT_GE(res.step, 0.008);
    EXPECT_LE(res.step, 0.012);
  }
}

TEST(IntegrateTrajectory, DeterministicForFixedSeed) {
  const auto pot = anharmonic();
  const PhasePoint z((StateVector(2) << 0.5, -0.5).finished(), (StateVector(2) << 1, 1).finished());
  for (auto kind : kAll) {
    RandomSource a(4), b(4);
    const TrajectorySpec spec{kind, 0.02, 25, 0.2};
    const auto ra = integrate_trajectory(z, spec, MassMatrix::identity(2), pot, a);
    const auto rb = integrate_trajectory(z, spec, MassMatrix::identity(2), pot, b);
    EXPECT_EQ(ra.end.x, rb.end.x);
    EXPECT_EQ(ra.end.p, rb.end.p);
  }
}

TEST(IntegrateTrajectory, VerletHarmonicMatchesClosedForm) {
  const GaussianPotential pot(StateVector::Ones(1));
  RandomSource rng(1);
  const TrajectorySpec spec{IntegratorKind::verlet, 0.01, 100, 0.0};
  const auto res = integrate_trajectory(PhasePoint(StateVector::Ones(1), StateVector::Zero(1)), spec,
                                        MassMatrix::identity(1), pot, rng);
  EXPECT_NEAR(res.end.x[0], std::cos(1.0), 1e-3);
  EXPECT_NEAR(res.end.p[0], -std::sin(1.0), 1e-3);
}

TEST(IntegrateTrajectory, RecordsEveryState) {
  const auto pot = anharmonic();
  RandomSource rng(2);
  TrajectoryRecord rec;
  const TrajectorySpec spec{IntegratorKind::hilbert, 0.01, 7, 0.2};
  const PhasePoint z(StateVector::Ones(2), StateVector::Zero(2));
  const auto res = integrate_trajectory(z, spec, MassMatrix::identity(2), pot, rng, &rec);
  ASSERT_EQ(rec.steps(), 7);
  ASSERT_EQ(rec.gradients.size(), 8u);
  EXPECT_EQ(rec.end().x, res.end.x);
  EXPECT_EQ(rec.step, res.step);
  EXPECT_LT((rec.gradients.back() - pot.gradient(res.end.x)).norm(), 1e-15);
  EXPECT_EQ(res.gradient_evaluations, 8);
}

TEST(IntegrateTrajectory, NonFiniteGradientDiverges) {
  const FunctionPotential pot([](const StateVector&) { return 0.0; },
                              [](const StateVector& x) {
                                StateVector g = StateVector::Zero(x.size());
                                g[0] = std::numeric_limits<double>::infinity();
                                return g;
                              });
  RandomSource rng(1);
  for (auto kind : kAll) {
    EXPECT_THROW(integrate_trajectory(PhasePoint(StateVector::Ones(2), StateVector::Ones(2)),
                                      TrajectorySpec{kind, 0.1, 3, 0.0}, MassMatrix::identity(2), pot, rng),
                 IntegratorDivergenceError);
  }
}

TEST(TrajectorySpec, ValidationAndStabilityWarnings) {
  EXPECT_THROW((TrajectorySpec{IntegratorKind::verlet, 0.0, 10, 0.2}.validate()), DimensionError);
  EXPECT_THROW((TrajectorySpec{IntegratorKind::verlet, 0.1, 0, 0.2}.validate()), DimensionError);
  EXPECT_THROW((TrajectorySpec{IntegratorKind::verlet, 0.1, 1, 1.0}.validate()), DimensionError);
  EXPECT_TRUE((TrajectorySpec{IntegratorKind::two_stage, 0.01, 10, 0.2}.warnings().empty()));
  EXPECT_FALSE((TrajectorySpec{IntegratorKind::two_stage, 2.5, 10, 0.2}.warnings().empty()));
  EXPECT_NO_THROW((TrajectorySpec{IntegratorKind::two_stage, 2.5, 10, 0.2}.validate()));
  EXPECT_DOUBLE_EQ(*stability_limit(IntegratorKind::two_stage), 2.6321480259);
  EXPECT_DOUBLE_EQ(*stability_limit(IntegratorKind::three_stage), 4.67);
  EXPECT_DOUBLE_EQ(*stability_limit(IntegratorKind::four_stage), 5.35);
  EXPECT_FALSE(stability_limit(IntegratorKind::hilbert).has_value());
}

TEST(IntegratorKindNames, RoundTrip) {
  for (auto kind : kAll) EXPECT_EQ(parse_integrator_kind(to_string(kind)), kind);
  EXPECT_FALSE(parse_integrator_kind("leapfrog-9").has_value());
}

TEST(MassMatrix, RejectsNonPositiveEntries) {
  EXPECT_THROW(MassMatrix((StateVector(2) << 1.0, 0.0).finished()), DimensionError);
  const MassMatrix m((StateVector(2) << 4.0, 0.25).finished());
  EXPECT_DOUBLE_EQ(m.kinetic_energy((StateVector(2) << 2.0, 1.0).finished()), 0.5 * (1.0 + 4.0));
}

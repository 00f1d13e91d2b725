#include "phasehop/hopping.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

using namespace phasehop;

namespace {

NucVec vec1(double x) {
  NucVec r(1);
  r << x;
  return r;
}

NucVec vec2(double x, double y) {
  NucVec r(2);
  r << x, y;
  return r;
}

// Integrates one trajectory with `step` and keeps every sample.
template <int N>
std::vector<SegmentSample> integrate(const ModelSpec& m, NucVec r, NucVec p, int lambda, double dt, int steps,
                                     long* hops = nullptr) {
  auto s = init_trajectory<N>(m, r, p, lambda, RngStream(3, 0));
  std::vector<SegmentSample> seg{{0.0, s.R, s.P}};
  for (int k = 0; k < steps; ++k) {
    step<N>(m, s, dt);
    seg.push_back({s.t, s.R, s.P});
  }
  if (hops) *hops = s.hops;
  return seg;
}

// Position-space eigenvalues of h(R) by a dense solver.
Eigen::VectorXd position_energies(const ModelSpec& m, const NucVec& r) {
  const Eigen::MatrixXcd h = eval_diabatic<Eigen::Dynamic>(m, r);
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(h).eigenvalues();
}

}  // namespace

TEST(HopRate, HandExample) {
  CMat<2> sigma;
  sigma << 0.5, 0.1, 0.1, 0.5;
  CMat<2> t = CMat<2>::Zero();
  t(0, 1) = 0.3;
  t(1, 0) = -0.3;
  EXPECT_NEAR(hop_rate<2>(sigma, t, 0, 1), 0.12, 1e-15);
}

TEST(HopRate, NegativeFluxClampsToZero) {
  CMat<2> sigma;
  sigma << 0.5, 0.1, 0.1, 0.5;
  CMat<2> t = CMat<2>::Zero();
  t(0, 1) = -0.3;
  t(1, 0) = 0.3;
  EXPECT_EQ(hop_rate<2>(sigma, t, 0, 1), 0.0);
}

TEST(HopRate, UndefinedWhenActivePopulationVanishes) {
  CMat<2> sigma = CMat<2>::Zero();
  sigma(1, 1) = 1.0;
  CMat<2> t = CMat<2>::Zero();
  t(0, 1) = 0.3;
  EXPECT_THROW(hop_rate<2>(sigma, t, 0, 1), IntegratorError);
}

TEST(HopRate, MatchesPopulationLossRate) {
  // With one target the rate equals -d(sigma_mm)/dt / sigma_mm when positive.
  auto m = make_model(ModelKind::complex2, {}, Precondition::pseudodiabatic);
  const auto f = make_frame<2>(m, vec2(0.05, 0.3), vec2(12.0, 3.0));
  const NucVec rdot = vec2(0.012, 0.003);
  const NucVec pdot = vec2(-0.001, 0.0005);
  const CMat<2> t = time_coupling<2>(f, rdot, pdot);
  CMat<2> sigma;
  sigma << 0.7, cplx(0.2, 0.3), cplx(0.2, -0.3), 0.3;
  CMat<2> g = -kI * t;
  g.diagonal() += f.E.cast<cplx>();
  const CMat<2> sdot = -kI * (g * sigma - sigma * g);
  const double expected = std::max(-sdot(0, 0).real() / sigma(0, 0).real(), 0.0);
  EXPECT_NEAR(hop_rate<2>(sigma, t, 0, 1), expected, 1e-14);
}

TEST(HopRescale, FsshQuadraticClosedForm) {
  auto m = make_model(ModelKind::complex2, {}, Precondition::diabatic);
  for (const auto& [r, p] : {std::pair{vec2(0.02, 0.4), vec2(15.0, 6.0)}, std::pair{vec2(-0.1, 1.3), vec2(9.0, -4.0)},
                             std::pair{vec2(0.15, -0.7), vec2(-20.0, 2.0)}}) {
    const auto f = make_frame<2>(m, r, p);
    const auto eps = position_energies(m, r);
    for (int active = 0; active < 2; ++active) {
      const int target = 1 - active;
      const auto out = attempt_hop<2>(m, f, active, target);
      // |P + k u|^2 = |P|^2 + 2M (eps_active - eps_target)
      const NucVec& u = out.direction;
      const double b = p.dot(u);
      const double c = -2.0 * m.mass * (eps(active) - eps(target));
      const double disc = b * b - c;
      if (disc < 0.0) {
        EXPECT_FALSE(out.accepted);
        continue;
      }
      const double k1 = -b + std::sqrt(disc);
      const double k2 = -b - std::sqrt(disc);
      const double kappa = std::abs(k1) < std::abs(k2) ? k1 : k2;
      ASSERT_TRUE(out.accepted);
      EXPECT_NEAR(out.kappa, kappa, 1e-12 * std::max(1.0, std::abs(kappa)));
      EXPECT_LT(out.energy_mismatch, kRootTolerance);
    }
  }
}

TEST(HopRescale, FrustratedUpwardHop) {
  auto m = make_model(ModelKind::shenvi2, {}, Precondition::diabatic);
  const auto f = make_frame<2>(m, vec1(0.0), vec1(1.0));
  EXPECT_FALSE(attempt_hop<2>(m, f, 0, 1).accepted);
}

TEST(HopRescale, PhaseSpaceRootConservesEnergy) {
  auto m = make_model(ModelKind::complex2, {}, Precondition::pseudodiabatic);
  const auto f = make_frame<2>(m, vec2(0.05, 0.2), vec2(14.0, 1.0));
  const auto out = attempt_hop<2>(m, f, 1, 0);
  ASSERT_TRUE(out.accepted);
  const NucVec p = f.P + out.kappa * out.direction;
  const auto e = hermitian_eigen<2>(build_hw<2>(m, f.R, p)).values;
  EXPECT_NEAR(e(0), f.E(1), 1e-10);
}

TEST(HopRescale, DirectionInvariantUnderCouplingPhase) {
  auto m = make_model(ModelKind::complex2, {}, Precondition::pseudodiabatic);
  auto f = make_frame<2>(m, vec2(0.05, 0.2), vec2(14.0, 1.0));
  const NucVec u = rescale_direction<2>(f, 0, 1);
  const cplx ph = std::polar(1.0, 0.7);
  for (int a = 0; a < 2; ++a) {
    f.d[a](1, 0) *= ph;
    f.d[a](0, 1) *= std::conj(ph);
  }
  EXPECT_LT((rescale_direction<2>(f, 0, 1) - u).norm(), 1e-14);
  EXPECT_LT((rescale_direction<2>(f, 1, 0) - u).norm(), 1e-14);
}

TEST(SurfaceDynamics, LorentzResidualComplexPseudodiabatic) {
  auto m = make_model(ModelKind::complex2, {}, Precondition::pseudodiabatic);
  long hops = 0;
  const auto seg = integrate<2>(m, vec2(-0.3, 0.1), vec2(5.0, 1.5), 0, 0.5, 120, &hops);
  ASSERT_EQ(hops, 0);
  EXPECT_LT(lorentz_force_check<2>(m, seg, 0), 1e-4);
}

TEST(SurfaceDynamics, LorentzResidualRealDiabatic) {
  auto m = make_model(ModelKind::shenvi2, {}, Precondition::diabatic);
  long hops = 0;
  const auto seg = integrate<2>(m, vec1(-1.5), vec1(5.5), 0, 1.0, 400, &hops);
  ASSERT_EQ(hops, 0);
  EXPECT_LT(lorentz_force_check<2>(m, seg, 0), 1e-6);
}

TEST(SurfaceDynamics, EnergyConservedWithoutHops) {
  for (auto kind : {ModelKind::shenvi2, ModelKind::shenvi2_offdiag}) {
    auto m = make_model(kind, {}, Precondition::pseudodiabatic);
    auto s = init_trajectory<2>(m, vec1(-4.0), vec1(5.5), 0, RngStream(1, 0));
    const double e0 = active_energy(s);
    for (int k = 0; k < 1000; ++k) step<2>(m, s, 2.0);
    ASSERT_EQ(s.hops, 0);
    EXPECT_LT(std::abs(active_energy(s) - e0), 1e-6);
  }
}

TEST(SurfaceDynamics, RichardsonFourthOrder) {
  auto m = make_model(ModelKind::complex2, {}, Precondition::pseudodiabatic);
  auto run = [&](double dt) {
    const auto seg = integrate<2>(m, vec2(-0.3, 0.1), vec2(5.0, 1.5), 0, dt, static_cast<int>(std::lround(40.0 / dt)));
    Eigen::VectorXd z(4);
    z << seg.back().R, seg.back().P;
    return z;
  };
  const auto a = run(4.0);
  const auto b = run(2.0);
  const auto c = run(1.0);
  const double ratio = (a - b).norm() / (b - c).norm();
  EXPECT_NEAR(ratio, 16.0, 2.5);
}

TEST(SurfaceDynamics, ElectronicTracePreserved) {
  auto m = make_model(ModelKind::complex2, {}, Precondition::pseudodiabatic);
  auto s = init_trajectory_diabat<2>(m, vec2(-0.4, 0.0), vec2(8.0, 2.0), 0, RngStream(5, 2));
  for (int k = 0; k < 200; ++k) step<2>(m, s, 0.5);
  EXPECT_NEAR(s.sigma.trace().real(), 1.0, 1e-10);
  EXPECT_LT(hermiticity_error(s.sigma), 1e-12);
  EXPECT_NEAR(diabatic_populations<2>(s).sum(), 1.0, 1e-10);
}

TEST(SurfaceDynamics, RejectsNonPositiveStep) {
  auto m = make_model(ModelKind::shenvi2, {}, Precondition::diabatic);
  auto s = init_trajectory<2>(m, vec1(-4.0), vec1(5.5), 0, RngStream(1, 0));
  EXPECT_THROW(step<2>(m, s, 0.0), IntegratorError);
}

TEST(Initialization, DiabatStartDrawsSurfaceByOverlap) {
  auto m = make_model(ModelKind::complex2, {}, Precondition::diabatic);
  const NucVec r = vec2(0.02, 0.0);
  const NucVec p = vec2(10.0, 0.0);
  const auto f = make_frame<2>(m, r, p);
  const double expected = std::norm((f.basis * f.U)(0, 0));
  int lower = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) lower += init_trajectory_diabat<2>(m, r, p, 0, RngStream(9, i)).lambda == 0;
  EXPECT_NEAR(static_cast<double>(lower) / n, expected, 4.0 * std::sqrt(expected * (1 - expected) / n));
  const auto s = init_trajectory_diabat<2>(m, r, p, 0, RngStream(9, 0));
  EXPECT_NEAR(diabatic_populations<2>(s)(0), 1.0, 1e-12);
}

namespace {

EnsembleSpec small_ensemble() {
  EnsembleSpec e;
  e.R0 = vec1(-6.0);
  e.P0 = vec1(12.0);
  e.sigma = 20.0 / 12.0;
  e.ntraj = 40;
  e.dt = 2.0;
  e.t_final = 1600.0;
  e.record_dt = 400.0;
  e.seed = 11;
  return e;
}

}  // namespace

TEST(Ensemble, PopulationsSumToOne) {
  auto m = make_model(ModelKind::shenvi2, {}, Precondition::adiabatic);
  const auto rec = run_ensemble<2>(m, small_ensemble());
  ASSERT_EQ(rec.times.size(), 5u);
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    EXPECT_NEAR(rec.column("pop_surface_0")[i] + rec.column("pop_surface_1")[i], 1.0, 1e-12);
    EXPECT_NEAR(rec.column("pop_diabat_0")[i] + rec.column("pop_diabat_1")[i], 1.0, 1e-9);
  }
  double total = 0.0;
  for (const auto& c : rec.channels)
    if (c.state.rfind("surface_", 0) == 0) total += c.fraction;
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_GE(rec.diagnostics["min_hop_rate"].get<double>(), 0.0);
  EXPECT_LT(rec.diagnostics["max_energy_drift_per_1000_steps"].get<double>(), 1e-6);
  EXPECT_LT(rec.diagnostics["max_hop_energy_mismatch"].get<double>(), 1e-10);
  EXPECT_EQ(rec.diagnostics["n_failed"].get<long>(), 0);
}

TEST(Ensemble, HopsHappenAboveThreshold) {
  auto m = make_model(ModelKind::shenvi2, {}, Precondition::adiabatic);
  auto e = small_ensemble();
  e.state = 1;
  const auto rec = run_ensemble<2>(m, e);
  EXPECT_GT(rec.diagnostics["hops"].get<long>(), 0);
  EXPECT_LT(rec.diagnostics["max_hop_energy_mismatch"].get<double>(), 1e-10);
}

TEST(Ensemble, IndependentOfThreadCount) {
  auto m = make_model(ModelKind::shenvi2_offdiag, {}, Precondition::pseudodiabatic);
  auto e = small_ensemble();
  e.state = 1;
  e.threads = 1;
  const auto a = run_ensemble<2>(m, e);
  e.threads = 3;
  const auto b = run_ensemble<2>(m, e);
  EXPECT_EQ(a.series, b.series);
  ASSERT_EQ(a.channels.size(), b.channels.size());
  for (std::size_t i = 0; i < a.channels.size(); ++i) {
    EXPECT_EQ(a.channels[i].fraction, b.channels[i].fraction);
    EXPECT_EQ(a.channels[i].stderr_, b.channels[i].stderr_);
  }
}

TEST(Ensemble, AdiabaticAndRotatedPseudodiabaticAgree) {
  auto e = small_ensemble();
  e.state = 1;
  const auto a = run_ensemble<2>(make_model(ModelKind::shenvi2, {}, Precondition::adiabatic), e);
  const auto b = run_ensemble<2>(make_model(ModelKind::shenvi2_offdiag, {}, Precondition::pseudodiabatic), e);
  for (const auto* name : {"pop_surface_0", "pop_surface_1"})
    for (std::size_t i = 0; i < a.times.size(); ++i) EXPECT_NEAR(a.column(name)[i], b.column(name)[i], 1e-12);
}

TEST(Ensemble, RejectsBadSpecs) {
  auto m = make_model(ModelKind::shenvi2, {}, Precondition::diabatic);
  auto e = small_ensemble();
  e.ntraj = 0;
  EXPECT_THROW(run_ensemble<2>(m, e), ConfigError);
  e = small_ensemble();
  e.R0 = vec2(0, 0);
  EXPECT_THROW(run_ensemble<2>(m, e), DimensionError);
}

#include "phasehop/quantum.hpp"

#include <gtest/gtest.h>

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

// h(X) = 0 on two states.
ModelSpec free_model(double mass) {
  CustomModel c;
  c.h = [](const NucVec&) { return Eigen::MatrixXcd::Zero(2, 2).eval(); };
  c.dh = [](const NucVec&) { return std::vector<Eigen::MatrixXcd>{Eigen::MatrixXcd::Zero(2, 2)}; };
  return make_custom_model(2, 1, mass, c);
}

double channel(const RunRecord& rec, const std::string& ch, const std::string& state) {
  for (const auto& c : rec.channels)
    if (c.channel == ch && c.state == state) return c.fraction;
  throw Error("missing channel");
}

}  // namespace

TEST(QuantumInit, NormAndMoments) {
  auto m = make_model(ModelKind::shenvi2);
  const double sigma = 20.0 / 5.5;
  const auto wp = init_gaussian(m, {Axis{-32, 32, 1024}}, vec1(-10.0), vec1(5.5), sigma, 0, true);
  EXPECT_NEAR(wp.norm(), 1.0, 1e-12);
  const auto [mean, var] = position_moments(wp);
  EXPECT_NEAR(mean(0), -10.0, 1e-8);
  EXPECT_NEAR(std::sqrt(var(0)), sigma / 2.0, 1e-8);
}

TEST(QuantumInit, SpectralMomentumExpectation) {
  // For a real envelope times exp(i P0 X) the momentum mean is P0; on an
  // adiabat the X-dependent eigenvector adds Im<u|u'>, which is zero for a
  // real eigenvector.
  auto m = make_model(ModelKind::complex2);
  const auto wp = init_gaussian(m, {Axis{-12, 12, 128}, Axis{-12, 12, 128}}, vec2(-3, -3), vec2(10, 10), 1.0, 1,
                                false);
  const NucVec p = momentum_expectation(wp);
  EXPECT_NEAR(p(0), 10.0, 1e-6);
  EXPECT_NEAR(p(1), 10.0, 1e-6);
  auto s = make_model(ModelKind::shenvi2);
  const auto wa = init_gaussian(s, {Axis{-32, 32, 1024}}, vec1(-10.0), vec1(5.5), 20.0 / 5.5, 0, true);
  EXPECT_NEAR(momentum_expectation(wa)(0), 5.5, 1e-6);
}

TEST(QuantumInit, RejectsSupportAtEdge) {
  auto m = make_model(ModelKind::shenvi2);
  EXPECT_THROW(init_gaussian(m, {Axis{-12, 12, 256}}, vec1(-10.0), vec1(5.5), 20.0 / 5.5, 0, true), ConfigError);
}

TEST(QuantumPropagation, FreeDispersion) {
  const double mass = 50.0;
  const double sigma = 1.2;
  auto m = free_model(mass);
  auto wp = init_gaussian(m, {Axis{-40, 40, 1024}}, vec1(-2.0), vec1(3.0), sigma, 0, false);
  std::vector<cplx> k0 = wp.psi;
  SplitOperator prop(m, wp, 0.5);
  for (int i = 0; i < 200; ++i) prop.step(wp);
  const double t = 100.0;
  const double s0 = sigma / 2.0;
  const double expected = s0 * s0 + std::pow(kHbar * t / (2.0 * mass * s0), 2);
  const auto [mean, var] = position_moments(wp);
  EXPECT_NEAR(var(0), expected, 1e-8);
  EXPECT_NEAR(mean(0), -2.0 + 3.0 * t / mass, 1e-8);
  EXPECT_NEAR(momentum_expectation(wp)(0), 3.0, 1e-10);
  // |psi(k)|^2 unchanged
  const auto before = init_gaussian(m, {Axis{-40, 40, 1024}}, vec1(-2.0), vec1(3.0), sigma, 0, false);
  std::vector<cplx> a = before.psi;
  std::vector<cplx> b = wp.psi;
  {
    detail::FftPlans pa(wp.axes, 2, reinterpret_cast<fftw_complex*>(a.data()));
    pa.forward(reinterpret_cast<fftw_complex*>(a.data()));
    pa.forward(reinterpret_cast<fftw_complex*>(b.data()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(std::norm(a[i]) - std::norm(b[i])));
  EXPECT_LT(worst, 1e-8);
}

TEST(QuantumPropagation, NormConservedOverManySteps) {
  auto m = make_model(ModelKind::shenvi2);
  auto wp = init_gaussian(m, {Axis{-32, 32, 256}}, vec1(-10.0), vec1(5.5), 20.0 / 5.5, 0, true);
  SplitOperator prop(m, wp, 0.1);
  const double n0 = wp.norm();
  for (int i = 0; i < 10000; ++i) prop.step(wp);
  EXPECT_LT(std::abs(wp.norm() - n0), 1e-10);
}

TEST(QuantumPropagation, PotentialExponentialIsUnitary) {
  for (auto kind : {ModelKind::complex2, ModelKind::st4}) {
    auto m = make_model(kind);
    for (double x : {-0.3, 0.0, 0.2}) {
      const Eigen::MatrixXcd h = eval_diabatic<Eigen::Dynamic>(m, vec2(x, 0.7));
      const Eigen::MatrixXcd u = expm_hermitian<Eigen::Dynamic>(h, 0.1);
      const Eigen::MatrixXcd v = expm_hermitian<Eigen::Dynamic>(h, -0.1);
      EXPECT_LT(max_abs(Eigen::MatrixXcd(u * v - Eigen::MatrixXcd::Identity(h.rows(), h.cols()))), 1e-13);
    }
  }
}

TEST(QuantumPropagation, StrangSecondOrder) {
  auto m = make_model(ModelKind::shenvi2);
  auto run = [&](double dt) {
    auto wp = init_gaussian(m, {Axis{-32, 32, 512}}, vec1(-6.0), vec1(8.0), 2.5, 0, true);
    const auto rec = propagate_split_operator(m, wp, {dt, 1200.0, 0.0});
    return channel(rec, "reflected", "surface_0") + 2.0 * channel(rec, "transmitted", "surface_1");
  };
  const double a = run(2.0);
  const double b = run(1.0);
  const double c = run(0.5);
  EXPECT_NEAR((a - b) / (b - c), 4.0, 0.4);
}

TEST(QuantumPropagation, EnergyAndChannelBookkeeping) {
  auto m = make_model(ModelKind::shenvi2);
  auto wp = init_gaussian(m, {Axis{-32, 32, 1024}}, vec1(-10.0), vec1(5.5), 20.0 / 5.5, 0, true);
  const auto rec = propagate_split_operator(m, wp, {0.1, 400.0, 100.0});
  EXPECT_LT(rec.diagnostics["max_energy_drift"].get<double>(), 1e-6);
  EXPECT_LT(rec.diagnostics["max_norm_drift"].get<double>(), 1e-10);
  EXPECT_FALSE(rec.diagnostics["boundary_alarm"].get<bool>());
  ASSERT_EQ(rec.times.size(), 5u);
  double total = 0.0;
  for (const auto& c : rec.channels)
    if (c.state.rfind("diabat_", 0) == 0) total += c.fraction;
  EXPECT_NEAR(total, 1.0, 1e-10);
  for (std::size_t i = 0; i < rec.times.size(); ++i)
    EXPECT_NEAR(rec.column("pop_surface_0")[i] + rec.column("pop_surface_1")[i], 1.0, 1e-10);
  EXPECT_NEAR(rec.column("pop_surface_0")[0], 1.0, 1e-10);
}

TEST(QuantumPropagation, TwoDimensionalReducesToOneDimensionalPlaneWave) {
  // complex2 conserves Y momentum up to the e^{iWY} transfer, so a plane
  // wave e^{ikY} on diabat 0 is a 1-D problem with diabatic energy offsets
  // k^2/2M and (k-W)^2/2M.
  const double w = 5.0;
  const double ky = 3.0;
  auto m2 = make_model(ModelKind::complex2, {{"W", w}});
  const double mass = m2.mass;
  const double a = m2.param("A");
  const double b = m2.param("B");
  CustomModel c;
  c.h = [=](const NucVec& r) {
    const double th = 0.5 * kPi * (std::erf(b * r(0)) + 1.0);
    Eigen::MatrixXcd h(2, 2);
    h << -a * std::cos(th) + ky * ky / (2 * mass), a * std::sin(th), a * std::sin(th),
        a * std::cos(th) + (ky - w) * (ky - w) / (2 * mass);
    return h;
  };
  c.dh = [](const NucVec&) { return std::vector<Eigen::MatrixXcd>{Eigen::MatrixXcd::Zero(2, 2)}; };
  auto m1 = make_custom_model(2, 1, mass, c);

  const Axis ax{-12, 12, 256};
  const Axis ay{-kPi, kPi, 16};
  auto wp1 = init_gaussian(m1, {ax}, vec1(-3.0), vec1(12.0), 1.0, 0, false);
  Wavepacket wp2;
  wp2.axes = {ax, ay};
  wp2.n_states = 2;
  wp2.mass = mass;
  wp2.psi.assign(2 * ax.n * ay.n, 0.0);
  for (int i = 0; i < ax.n; ++i)
    for (int j = 0; j < ay.n; ++j)
      wp2.psi[i * ay.n + j] = wp1.psi[i] * std::exp(cplx(0.0, ky * ay.x(j))) / std::sqrt(ay.max - ay.min);
  ASSERT_NEAR(wp2.norm(), 1.0, 1e-12);
  const ExactOptions opt{0.05, 400.0, 0.0};
  const auto r1 = propagate_split_operator(m1, wp1, opt);
  const auto r2 = propagate_split_operator(m2, wp2, opt);
  for (const auto* ch : {"transmitted", "reflected"})
    for (const auto* st : {"diabat_0", "diabat_1"}) EXPECT_NEAR(channel(r1, ch, st), channel(r2, ch, st), 1e-6);
}

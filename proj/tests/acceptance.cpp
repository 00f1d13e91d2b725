// Acceptance checks: one PASS/FAIL line per criterion.
// Usage: acceptance [name-substring ...]
// Run outputs go to $PHASEHOP_ACCEPTANCE_OUT (default ./acceptance_runs).

#include "phasehop/harness.hpp"
#include "phasehop/wigner.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

using namespace phasehop;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) pass = false;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [x]");
  }
};

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

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

double channel(const RunRecord& rec, const std::string& ch, const std::string& state) {
  for (const auto& c : rec.channels)
    if (c.channel == ch && c.state == state) return c.fraction;
  throw Error("missing channel " + ch + "/" + state);
}

double reflected(const RunRecord& rec) {
  double s = 0.0;
  for (const auto& c : rec.channels)
    if (c.channel == "reflected" && c.state.rfind("surface_", 0) == 0) s += c.fraction;
  return s;
}

fs::path out_root() {
  const char* v = std::getenv("PHASEHOP_ACCEPTANCE_OUT");
  return v ? fs::path(v) : fs::path("acceptance_runs");
}

void save(const std::string& name, const RunRecord& rec, const std::string& method, double seconds) {
  json manifest = {{"program", "phasehop"},  {"version", PHASEHOP_VERSION}, {"command", "acceptance"},
                   {"method", method},       {"status", "ok"},              {"wall_time_s", seconds},
                   {"diagnostics", rec.diagnostics}};
  write_record(out_root() / name, rec, manifest);
}

template <class F>
auto timed(F&& f, double& seconds) {
  const auto t0 = std::chrono::steady_clock::now();
  auto r = f();
  seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// ---- shenvi2 QCLE scattering ----------------------------------------------

struct QcleScattering {
  bool ok = false;
  std::string error;
  RunRecord a, d, exact;
};

const QcleScattering& shenvi2_qcle_runs() {
  static QcleScattering f = [] {
    QcleScattering r;
    const double p0 = 5.5;
    const double sigma = 20.0 / p0;
    try {
      const auto m = make_model(ModelKind::shenvi2, {}, Precondition::adiabatic);
      const PhaseSpaceGrid g;  // [-36,16] x 512, [-16,24] x 384
      QcleOptions opt;
      opt.dt = 0.2;
      opt.t_final = 5000.0;
      opt.record_dt = 50.0;
      opt.snapshot_times = {0.0, 5000.0};
      double s = 0.0;
      auto fa = init_wigner_field<2>(m, g, -10.0, p0, sigma, 0, true);
      r.a = timed([&] { return propagate_qcle<2>(m, QcleVariant::aqcle, fa, opt); }, s);
      save("shenvi2_aqcle", r.a, "A-QCLE", s);
      auto fd = init_wigner_field<2>(m, g, -10.0, p0, sigma, 0, true);
      r.d = timed([&] { return propagate_qcle<2>(m, QcleVariant::dqcle, fd, opt); }, s);
      save("shenvi2_dqcle", r.d, "D-QCLE", s);
      const auto mq = make_model(ModelKind::shenvi2);
      auto wp = init_gaussian(mq, {Axis{-32.0, 32.0, 1024}}, vec1(-10.0), vec1(p0), sigma, 0, true);
      r.exact = timed([&] { return propagate_split_operator(mq, wp, {0.1, 5000.0, 50.0}); }, s);
      save("shenvi2_exact", r.exact, "exact", s);
      r.ok = true;
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    return r;
  }();
  return f;
}

void qcle_reflection(Verdict& v) {
  const auto& f = shenvi2_qcle_runs();
  if (!f.ok) return v.require(false, "run failed: " + f.error);
  const double ra = reflected(f.a);
  const double rd = reflected(f.d);
  const double rx = reflected(f.exact);
  v.detail << "reflected A-QCLE=" << num(ra) << " D-QCLE=" << num(rd) << " exact=" << num(rx);
  v.require(ra >= 5.0 * rd, "A >= 5 D");
  v.require(std::abs(rx - ra) <= 0.15, "|exact - A| <= 0.15");
  v.require(rd < 0.1, "D < 0.1");
}

void qcle_conservation(Verdict& v) {
  const auto& f = shenvi2_qcle_runs();
  if (!f.ok) return v.require(false, "run failed: " + f.error);
  for (const auto* r : {&f.a, &f.d}) {
    const std::string name = r->diagnostics["variant"].get<std::string>();
    const double e = r->diagnostics["max_relative_energy_deviation"].get<double>();
    const double t = r->diagnostics["max_relative_trace_deviation"].get<double>();
    v.require(e < 1e-3, name + " energy dev " + num(e) + " < 1e-3");
    v.require(t < 1e-3, name + " trace dev " + num(t) + " < 1e-3");
  }
}

// ---- QCLE reduction identity ------------------------------------------------

void reduction_identity(Verdict& v) {
  PhaseSpaceGrid g;
  g.x_min = -4.0;
  g.x_max = 4.0;
  g.n_x = 40;
  g.p_min = -10.0;
  g.p_max = 20.0;
  g.n_p = 32;
  const auto m = make_model(ModelKind::shenvi2, {}, Precondition::diabatic);
  const auto od = build_qcle_operators<2>(m, g, QcleVariant::dqcle);
  const auto op = build_qcle_operators<2>(m, g, QcleVariant::pqcle);
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RngStream rng(seed, 0);
    DensityField<2> f;
    f.grid = g;
    f.basis = Precondition::diabatic;
    f.n_states = 2;
    f.rho.resize(static_cast<std::size_t>(g.n_x) * g.n_p);
    for (auto& r : f.rho) {
      CMat<2> a;
      a << cplx(rng.normal(), rng.normal()), cplx(rng.normal(), rng.normal()), cplx(rng.normal(), rng.normal()),
          cplx(rng.normal(), rng.normal());
      r = 0.5 * (a + a.adjoint());
    }
    std::vector<CMat<2>> a, b;
    qcle_rhs<2>(od, f, a, full_window(g));
    qcle_rhs<2>(op, f, b, full_window(g));
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs(CMat<2>(a[i] - b[i])));
  }
  v.require(worst < 1e-12, "max |P-QCLE(D=0) - D-QCLE| = " + num(worst) + " < 1e-12 on 10 fields");
}

// ---- adiabatic vs rotated pseudo-diabatic -----------------------------------

EnsembleSpec shenvi2_ensemble() {
  EnsembleSpec e;
  e.R0 = vec1(-10.0);
  e.P0 = vec1(5.5);
  e.sigma = 20.0 / 5.5;
  e.ntraj = 10000;
  e.dt = 2.0;
  e.t_final = 5000.0;
  e.record_dt = 50.0;
  e.seed = 2024;
  return e;
}

const std::pair<RunRecord, RunRecord>& pssh_pair() {
  static const auto p = [] {
    double s = 0.0;
    const auto e = shenvi2_ensemble();
    auto a = timed([&] { return run_ensemble<2>(make_model(ModelKind::shenvi2, {}, Precondition::adiabatic), e); }, s);
    save("shenvi2_apssh", a, "A-PSSH", s);
    auto b = timed(
        [&] { return run_ensemble<2>(make_model(ModelKind::shenvi2_offdiag, {}, Precondition::pseudodiabatic), e); },
        s);
    save("shenvi2_offdiag_pdpssh", b, "PD-PSSH", s);
    return std::pair{a, b};
  }();
  return p;
}

void spectral_equivalence(Verdict& v) {
  const auto ma = make_model(ModelKind::shenvi2, {}, Precondition::adiabatic);
  const auto mp = make_model(ModelKind::shenvi2_offdiag, {}, Precondition::pseudodiabatic);
  const double c = ma.param("C"), d = ma.param("D");
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double x = -6.0 + 12.0 * i / 49.0;
    const double sech = 1.0 / std::cosh(d * x);
    const double shift = kHbar * kPi * c * d * sech * sech / 2.0;  // hbar * theta' / 2
    for (int j = 0; j < 50; ++j) {
      const double p = -10.0 + 20.0 * j / 49.0;
      const auto ea = hermitian_eigen<2>(build_hw<2>(ma, vec1(x), vec1(p))).values;
      const auto ep = hermitian_eigen<2>(build_hw<2>(mp, vec1(x), vec1(p + shift))).values;
      worst = std::max(worst, (ea - ep).cwiseAbs().maxCoeff());
    }
  }
  v.require(worst < 1e-12, "50x50 spectra max diff " + num(worst) + " < 1e-12");
  const auto& [a, b] = pssh_pair();
  double worst_z = 0.0;
  for (const auto& ca : a.channels) {
    if (ca.state.rfind("surface_", 0) != 0) continue;
    const double fb = channel(b, ca.channel, ca.state);
    double se = 0.0;
    for (const auto& cb : b.channels)
      if (cb.channel == ca.channel && cb.state == ca.state) se = std::hypot(ca.stderr_, cb.stderr_);
    const double diff = std::abs(ca.fraction - fb);
    if (diff > 0.0) worst_z = std::max(worst_z, se > 0.0 ? diff / se : INFINITY);
  }
  v.require(worst_z <= 3.0, "A-PSSH vs PD-PSSH (N=1e4) max |diff|/sigma " + num(worst_z) + " <= 3");
  v.detail << "; A-PSSH reflected " << num(reflected(a));
}

// ---- PD-PSSH mechanics -----------------------------------------------------

void pdpssh_mechanics(Verdict& v) {
  EnsembleSpec e;
  e.R0 = vec2(-3.0, -3.0);
  e.P0 = vec2(15.0, 15.0);
  e.sigma = 1.0;
  e.state = 0;
  e.diabatic_start = true;
  e.ntraj = 2000;
  e.dt = 0.5;
  e.t_final = 400.0;
  e.record_dt = 20.0;
  e.x_stop = 3.0;
  e.seed = 11;
  double s = 0.0;
  const auto hop_rich =
      timed([&] { return run_ensemble<2>(make_model(ModelKind::complex2, {{"W", 5.0}}, Precondition::pseudodiabatic), e); },
            s);
  save("pdpssh_complex2", hop_rich, "PD-PSSH", s);
  const auto& shenvi = pssh_pair().second;
  for (const auto* r : {&hop_rich, &shenvi}) {
    const auto& dg = r->diagnostics;
    const std::string tag = r == &hop_rich ? "complex2" : "shenvi2";
    const double drift = dg["max_energy_drift_per_1000_steps"].get<double>();
    const double mismatch = dg["max_hop_energy_mismatch"].get<double>();
    const double rate = dg["min_hop_rate"].get<double>();
    v.require(drift < 1e-6, tag + " drift/1000 steps " + num(drift) + " < 1e-6");
    v.require(mismatch < 1e-10, tag + " hop mismatch " + num(mismatch) + " < 1e-10");
    v.require(rate >= 0.0, tag + " min g " + num(rate) + " >= 0");
    v.require(dg.contains("frustrated_fraction"),
              tag + " frustrated fraction " + (dg.contains("frustrated_fraction")
                                                   ? num(dg["frustrated_fraction"].get<double>())
                                                   : std::string("missing")));
  }
  v.require(hop_rich.diagnostics["hops"].get<long>() > 0,
            "complex2 hops " + std::to_string(hop_rich.diagnostics["hops"].get<long>()) + " > 0");
}

// ---- Berry diagnostics -----------------------------------------------------

template <int N>
CVec<N> full_state(const ModelSpec& m, const NucVec& r, const NucVec& p, int n) {
  const auto ops = local_operators<N>(m, r);
  const auto es = eigensystem<N>(hw_derivatives<N>(ops, p, m.mass).H);
  return ops.basis * es.U.col(n);
}

// Wilson loop around a small square in (X, Y).
template <int N>
double plaquette_curvature(const ModelSpec& m, const NucVec& r, const NucVec& p, int n, double half) {
  const double xs[4] = {-half, half, half, -half};
  const double ys[4] = {-half, -half, half, half};
  CVec<N> s[4];
  for (int k = 0; k < 4; ++k) s[k] = full_state<N>(m, vec2(r(0) + xs[k], r(1) + ys[k]), p, n);
  cplx w = 1.0;
  for (int k = 0; k < 4; ++k) w *= s[k].dot(s[(k + 1) % 4]);
  return -kHbar * std::arg(w) / (4.0 * half * half);
}

void berry_diagnostics(Verdict& v) {
  double zero = 0.0;
  const std::vector<NucVec> pts = {vec2(-0.3, 0.4), vec2(0.0, 0.4), vec2(0.2, 0.4)};
  const NucVec p = vec2(5.0, 5.0);
  for (const auto& r : pts) {
    const auto m1 = make_model(ModelKind::complex2, {{"W", 0.0}});
    const auto m2 = make_model(ModelKind::complex2, {{"W", 0.0}}, Precondition::pseudodiabatic);
    for (int n = 0; n < 2; ++n) {
      zero = std::max(zero, berry_curvature<2>(m1, r, p, n).cwiseAbs().maxCoeff());
      zero = std::max(zero, berry_curvature<2>(m2, r, p, n).cwiseAbs().maxCoeff());
    }
    for (int n : {0, 3})
      zero = std::max(zero, std::abs(berry_curvature<4>(make_model(ModelKind::st4), r, p, n)(0, 1)));
  }
  v.require(zero < 1e-8, "real/diabatic |B| max " + num(zero) + " < 1e-8");

  double st4_pos = 0.0, worst_rel = 0.0, smallest = INFINITY;
  const auto m4 = make_model(ModelKind::st4, {}, Precondition::pseudodiabatic);
  const auto m2 = make_model(ModelKind::complex2, {}, Precondition::pseudodiabatic);
  for (const auto& r : pts) {
    for (int n : {0, 3}) st4_pos = std::max(st4_pos, std::abs(plaquette_curvature<4>(make_model(ModelKind::st4), r, p, n, 1e-4)));
    const double b4 = berry_curvature<4>(m4, r, p, 0)(0, 1);
    const double o4 = plaquette_curvature<4>(m4, r, p, 0, 1e-5);
    const double b2 = berry_curvature<2>(m2, r, p, 0)(0, 1);
    const double o2 = plaquette_curvature<2>(m2, r, p, 0, 1e-5);
    smallest = std::min({smallest, std::abs(o4), std::abs(o2)});
    worst_rel = std::max({worst_rel, std::abs(b4 - o4) / std::abs(o4), std::abs(b2 - o2) / std::abs(o2)});
  }
  v.require(st4_pos < 1e-8, "st4 position adiabats curl " + num(st4_pos) + " < 1e-8");
  v.require(smallest > 1e-6, "pseudo-diabatic phase-space adiabats |B| >= " + num(smallest) + " (nonzero)");
  v.require(worst_rel < 1e-3, "analytic vs curl oracle rel " + num(worst_rel) + " < 1e-3");

  const auto mc = make_model(ModelKind::complex2, {}, Precondition::pseudodiabatic);
  auto s = init_trajectory<2>(mc, vec2(-0.3, 0.1), vec2(5.0, 1.5), 0, RngStream(3, 0));
  std::vector<SegmentSample> seg{{0.0, s.R, s.P}};
  for (int k = 0; k < 120; ++k) {
    step<2>(mc, s, 0.5);
    seg.push_back({s.t, s.R, s.P});
  }
  const double lorentz = lorentz_force_check<2>(mc, seg, 0);
  v.require(s.hops == 0 && lorentz < 1e-4, "Lorentz residual " + num(lorentz) + " < 1e-4");
}

// ---- Ehrenfest -------------------------------------------------------------

void ehrenfest(Verdict& v) {
  const auto m = make_model(ModelKind::complex2, {{"W", -5.0}}, Precondition::pseudodiabatic);
  EnsembleSpec e;
  e.R0 = vec2(-3.0, -3.0);
  e.P0 = vec2(20.0, 20.0);
  e.sigma = 1.0;
  e.state = 0;
  e.diabatic_start = true;
  e.ntraj = 10000;
  e.dt = 0.05;
  e.t_final = 300.0;
  e.record_dt = 10.0;
  e.x_stop = 1.5;
  e.seed = 7;
  double s = 0.0;
  std::map<MeanFieldMode, double> t0;
  for (auto mode : {MeanFieldMode::standard, MeanFieldMode::phasespace}) {
    const auto rec = timed([&] { return run_meanfield_ensemble<2>(m, mode, e); }, s);
    save("complex2_mf_" + to_string(mode), rec, "Ehrenfest " + to_string(mode), s);
    double total = 0.0;
    for (const auto& c : rec.channels)
      if (c.state.rfind("diabat_", 0) == 0) total += c.fraction;
    const double tr = rec.diagnostics["max_trace_error"].get<double>();
    v.require(std::abs(total - 1.0) < 1e-8, to_string(mode) + " channel sum - 1 = " + num(total - 1.0));
    v.require(tr < 1e-8, to_string(mode) + " tr sigma error " + num(tr) + " < 1e-8");
    t0[mode] = channel(rec, "transmitted", "diabat_0");
  }
  const auto mq = make_model(ModelKind::complex2, {{"W", -5.0}});
  auto wp = init_gaussian(mq, {Axis{-12.0, 12.0, 256}, Axis{-12.0, 12.0, 256}}, e.R0, e.P0, 1.0, 0, false);
  const auto ex = timed([&] { return propagate_split_operator(mq, wp, {0.1, 300.0, 10.0}); }, s);
  save("complex2_exact", ex, "exact", s);
  const double te = channel(ex, "transmitted", "diabat_0");
  v.detail << "; T0 exact=" << num(te) << " standard=" << num(t0[MeanFieldMode::standard])
           << " phasespace=" << num(t0[MeanFieldMode::phasespace]);
  v.require(std::abs(t0[MeanFieldMode::phasespace] - te) < std::abs(t0[MeanFieldMode::standard] - te),
            "phase-space closer to exact");
}

// ---- method oracles --------------------------------------------------------

void method_oracles(Verdict& v) {
  // FSSH momentum rescaling: |P + k u|^2 = |P|^2 + 2M (eps_active - eps_target), smallest |k|
  {
    const auto m = make_model(ModelKind::complex2, {}, Precondition::diabatic);
    double worst = 0.0;
    for (const auto& [r, p] : {std::pair{vec2(0.02, 0.4), vec2(15.0, 6.0)}, std::pair{vec2(-0.1, 1.3), vec2(9.0, -4.0)},
                               std::pair{vec2(0.15, -0.7), vec2(-20.0, 2.0)}}) {
      const auto f = make_frame<2>(m, r, p);
      const Eigen::VectorXd eps =
          Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd>(eval_diabatic<Eigen::Dynamic>(m, r)).eigenvalues();
      for (int active = 0; active < 2; ++active) {
        const auto out = attempt_hop<2>(m, f, active, 1 - active);
        const double b = p.dot(out.direction);
        const double disc = b * b + 2.0 * m.mass * (eps(active) - eps(1 - active));
        if (disc < 0.0) {
          if (out.accepted) worst = INFINITY;
          continue;
        }
        const double k1 = -b + std::sqrt(disc), k2 = -b - std::sqrt(disc);
        const double kappa = std::abs(k1) < std::abs(k2) ? k1 : k2;
        worst = std::max(worst, out.accepted ? std::abs(out.kappa - kappa) / std::max(1.0, std::abs(kappa)) : INFINITY);
      }
    }
    v.require(worst < 1e-12, "FSSH rescale vs closed form " + num(worst) + " < 1e-12");
  }
  // Hellmann-Feynman couplings vs differenced eigenvectors
  {
    const double delta = 1e-5;
    double worst = 0.0;
    RngStream rng(4, 0);
    for (auto [kind, pre] : {std::pair{ModelKind::shenvi2, Precondition::adiabatic},
                             std::pair{ModelKind::complex2, Precondition::pseudodiabatic},
                             std::pair{ModelKind::complex2, Precondition::diabatic}}) {
      const auto m = make_model(kind, {}, pre);
      for (int trial = 0; trial < 20; ++trial) {
        const NucVec r = m.n_nuc == 1 ? vec1(rng.normal()) : vec2(rng.normal(), rng.normal());
        const NucVec p = m.n_nuc == 1 ? vec1(4 * rng.normal()) : vec2(4 * rng.normal(), 4 * rng.normal());
        const auto f = make_frame<2>(m, r, p);
        if (f.E(1) - f.E(0) < 1e-4) continue;
        for (int a = 0; a < m.n_nuc; ++a)
          for (bool momentum : {false, true}) {
            NucVec rp = r, rm = r, pp = p, pm = p;
            (momentum ? pp : rp)(a) += delta;
            (momentum ? pm : rm)(a) -= delta;
            const auto up = eigensystem<2>(build_hw<2>(m, rp, pp), &f.U).U;
            const auto um = eigensystem<2>(build_hw<2>(m, rm, pm), &f.U).U;
            const CMat<2> fd = f.U.adjoint() * (up - um) / (2 * delta);
            const auto& hf = momentum ? f.tau[a] : f.d[a];
            worst = std::max({worst, std::abs(hf(0, 1) - fd(0, 1)), std::abs(hf(1, 0) - fd(1, 0))});
          }
      }
    }
    v.require(worst < 1e-6, "HF couplings vs FD " + num(worst) + " < 1e-6");
  }
  // Wigner sampler
  {
    const std::size_t n = 100000;
    const double sigma = 20.0 / 5.5;
    RngStream rng(99, 0);
    const auto pts = wigner_sample(vec1(-10.0), vec1(5.5), sigma, n, rng);
    double mr = 0, mp = 0, vr = 0, vp = 0;
    for (const auto& q : pts) {
      mr += q.R(0);
      mp += q.P(0);
    }
    mr /= n;
    mp /= n;
    for (const auto& q : pts) {
      vr += (q.R(0) - mr) * (q.R(0) - mr);
      vp += (q.P(0) - mp) * (q.P(0) - mp);
    }
    const double sr = std::sqrt(vr / (n - 1)) / (sigma / 2.0) - 1.0;
    const double sp = std::sqrt(vp / (n - 1)) * sigma - 1.0;
    v.require(std::abs(sr) < 0.03 && std::abs(sp) < 0.03,
              "Wigner std rel err X " + num(sr) + " P " + num(sp) + " < 3%");
  }
  // split operator
  {
    const auto m = make_model(ModelKind::shenvi2);
    auto wp = init_gaussian(m, {Axis{-32, 32, 256}}, vec1(-10.0), vec1(5.5), 20.0 / 5.5, 0, true);
    SplitOperator prop(m, wp, 0.1);
    const double n0 = wp.norm();
    for (int i = 0; i < 10000; ++i) prop.step(wp);
    const double drift = std::abs(wp.norm() - n0);
    v.require(drift < 1e-10, "split-operator norm drift " + num(drift) + " < 1e-10");
    auto run = [&](double dt) {
      auto w = init_gaussian(m, {Axis{-32, 32, 512}}, vec1(-6.0), vec1(8.0), 2.5, 0, true);
      const auto rec = propagate_split_operator(m, w, {dt, 1200.0, 0.0});
      return channel(rec, "reflected", "surface_0") + 2.0 * channel(rec, "transmitted", "surface_1");
    };
    const double a = run(2.0), b = run(1.0), c = run(0.5);
    const double ratio = (a - b) / (b - c);
    v.require(std::abs(ratio - 4.0) < 0.4, "dt-halving error ratio " + num(ratio) + " ~ 4");
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Verdict&)>>> criteria = {
      {"qcle-reflection", qcle_reflection},
      {"qcle-conservation", qcle_conservation},
      {"qcle-reduction-identity", reduction_identity},
      {"adiabatic-pseudodiabatic-equivalence", spectral_equivalence},
      {"pdpssh-mechanics", pdpssh_mechanics},
      {"berry-diagnostics", berry_diagnostics},
      {"ehrenfest-comparison", ehrenfest},
      {"method-oracles", method_oracles},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    bool selected = argc < 2;
    for (int i = 1; i < argc; ++i) selected = selected || name.find(argv[i]) != std::string::npos;
    if (!selected) continue;
    Verdict v;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      check(v);
    } catch (const std::exception& e) {
      v.require(false, std::string("exception: ") + e.what());
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail.str() << " (" << num(s) << " s)"
              << std::endl;
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}

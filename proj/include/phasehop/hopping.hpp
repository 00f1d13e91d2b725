#pragma once

// Fewest-switches surface hopping on phase-space adiabats. The method is
// fixed by the model's preconditioning: diabatic -> FSSH, pseudodiabatic ->
// PD-PSSH, adiabatic -> A-PSSH.

#include "phasehop/ensemble.hpp"
#include "phasehop/linalg.hpp"
#include "phasehop/models.hpp"
#include "phasehop/parallel.hpp"
#include "phasehop/phasespace.hpp"
#include "phasehop/record.hpp"
#include "phasehop/rng.hpp"
#include "phasehop/wigner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace phasehop {

enum class HopMethod { fssh, pdpssh, apssh };

inline std::string to_string(HopMethod m) {
  switch (m) {
    case HopMethod::fssh: return "fssh";
    case HopMethod::pdpssh: return "pdpssh";
    case HopMethod::apssh: return "apssh";
  }
  return "?";
}

inline HopMethod parse_hop_method(const std::string& s) {
  if (s == "fssh") return HopMethod::fssh;
  if (s == "pdpssh") return HopMethod::pdpssh;
  if (s == "apssh") return HopMethod::apssh;
  throw ConfigError("unknown surface hopping method '" + s + "'");
}

inline Precondition precondition_for(HopMethod m) {
  switch (m) {
    case HopMethod::fssh: return Precondition::diabatic;
    case HopMethod::pdpssh: return Precondition::pseudodiabatic;
    case HopMethod::apssh: return Precondition::adiabatic;
  }
  return Precondition::diabatic;
}

inline constexpr double kRateUndefined = 1e-12;
inline constexpr double kHermiticityAlarm = 1e-6;
inline constexpr double kRootTolerance = 1e-10;
inline constexpr int kRootScanIntervals = 200;

/// Energy, kinetic velocity and force on one phase-space adiabat.
template <int N>
struct SurfaceEval {
  double energy = 0.0;
  NucVec velocity;
  NucVec force;
  CVec<N> vector;  // in the preconditioned basis
};

/// Evaluates the adiabat of H_W(R,P) with maximal overlap with `ref`.
template <int N>
SurfaceEval<N> surface_eval(const ModelSpec& m, const NucVec& r, const NucVec& p, const CVec<N>& ref) {
  const auto ops = local_operators<N>(m, r);
  const auto hw = hw_derivatives<N>(ops, p, m.mass);
  const auto eig = hermitian_eigen<N>(hw.H);
  Eigen::Index best = 0;
  (eig.vectors.adjoint() * ref).cwiseAbs().maxCoeff(&best);
  SurfaceEval<N> s;
  s.vector = eig.vectors.col(best);
  s.energy = eig.values(best);
  s.velocity.resize(m.n_nuc);
  s.force.resize(m.n_nuc);
  for (int a = 0; a < m.n_nuc; ++a) {
    s.velocity(a) = s.vector.dot(hw.dP[a] * s.vector).real();
    s.force(a) = -s.vector.dot(hw.dR[a] * s.vector).real();
  }
  return s;
}

/// g_{m->n} = max(2 Re(sigma_nm T_mn) / sigma_mm, 0) with T = Rdot.d + Pdot.tau.
template <int N>
double hop_rate(const CMat<N>& sigma, const CMat<N>& t, int m, int n) {
  const double pop = sigma(m, m).real();
  if (pop < kRateUndefined) throw IntegratorError("hop rate undefined: active population below 1e-12");
  return std::max(2.0 * (sigma(n, m) * t(m, n)).real() / pop, 0.0);
}

template <int N>
CMat<N> time_coupling(const PhaseSpaceFrame<N>& f, const NucVec& rdot, const NucVec& pdot) {
  CMat<N> t = zero_mat<N>(static_cast<int>(f.E.size()));
  for (Eigen::Index a = 0; a < rdot.size(); ++a) t += rdot(a) * f.d[a] + pdot(a) * f.tau[a];
  return t;
}

struct HopOutcome {
  bool accepted = false;
  double kappa = 0.0;
  NucVec direction;
  double energy_mismatch = 0.0;
};

/// Rescaling direction Re[d (P.d*)] for the coupling vector d_{target,active}
/// (reduces to +-d for real couplings), normalized.
template <int N>
NucVec rescale_direction(const PhaseSpaceFrame<N>& f, int active, int target) {
  const int nn = static_cast<int>(f.P.size());
  cplx proj = 0.0;
  for (int a = 0; a < nn; ++a) proj += f.P(a) * std::conj(f.d[a](target, active));
  NucVec u(nn);
  for (int a = 0; a < nn; ++a) u(a) = (f.d[a](target, active) * proj).real();
  const double norm = u.norm();
  if (norm < 1e-12) throw IntegratorError("no rescale direction: Re[d (P.d*)] vanishes");
  return u / norm;
}

namespace detail {

// Energy-order rank of state `label` within a frame.
template <int N>
int energy_rank(const RVec<N>& e, int label) {
  int rank = 0;
  for (Eigen::Index k = 0; k < e.size(); ++k)
    if (k != label && (e(k) < e(label) || (e(k) == e(label) && k < label))) ++rank;
  return rank;
}

}  // namespace detail

/// Solves E_target(R, P + kappa u) = E_active(R, P) for the real root of
/// minimal |kappa| inside |kappa| <= K, K = 10 max(|P|, sqrt(2M|dE|)).
template <int N>
HopOutcome attempt_hop(const ModelSpec& m, const PhaseSpaceFrame<N>& f, int active, int target) {
  HopOutcome out;
  out.direction = rescale_direction<N>(f, active, target);
  const int rank = detail::energy_rank<N>(f.E, target);
  const double e_goal = f.E(active);
  const NucVec& u = out.direction;
  auto fval = [&](double kappa) {
    const NucVec p = f.P + kappa * u;
    return hermitian_eigen<N>(build_hw<N>(m, f.R, p)).values(rank) - e_goal;
  };
  const double f0 = fval(0.0);
  if (std::abs(f0) < kRootTolerance) {
    out.accepted = true;
    out.energy_mismatch = std::abs(f0);
    return out;
  }
  const double gap = std::abs(f.E(target) - f.E(active));
  const double bound = 10.0 * std::max(f.P.norm(), std::sqrt(2.0 * m.mass * gap));
  const double h = bound / kRootScanIntervals;

  auto refine = [&](double a, double b, double fa) {
    // bisection with secant acceleration, kept inside [a, b]
    double lo = a;
    double hi = b;
    double flo = fa;
    double x = 0.5 * (a + b);
    double fx = fval(x);
    for (int it = 0; it < 200 && std::abs(fx) > 1e-15; ++it) {
      if ((fx < 0) == (flo < 0)) {
        lo = x;
        flo = fx;
      } else {
        hi = x;
      }
      const double fhi = fval(hi);
      double next = lo - flo * (hi - lo) / (fhi - flo);
      if (!(next > std::min(lo, hi) && next < std::max(lo, hi)) || it % 3 == 2) next = 0.5 * (lo + hi);
      if (std::abs(hi - lo) < 1e-15 * std::max(1.0, bound)) break;
      x = next;
      fx = fval(x);
    }
    return std::pair<double, double>(x, fx);
  };

  double prev_pos = f0;
  double prev_neg = f0;
  for (int i = 1; i <= kRootScanIntervals; ++i) {
    const double kp = i * h;
    const double fp = fval(kp);
    const double fn = fval(-kp);
    const bool hit_pos = (fp < 0) != (prev_pos < 0) || fp == 0.0;
    const bool hit_neg = (fn < 0) != (prev_neg < 0) || fn == 0.0;
    if (hit_pos || hit_neg) {
      std::pair<double, double> best{0.0, std::numeric_limits<double>::infinity()};
      if (hit_pos) best = refine((i - 1) * h, kp, prev_pos);
      if (hit_neg) {
        const auto cand = refine(-(i - 1) * h, -kp, prev_neg);
        if (!hit_pos || std::abs(cand.first) < std::abs(best.first)) best = cand;
      }
      if (std::abs(best.second) < kRootTolerance) {
        out.accepted = true;
        out.kappa = best.first;
        out.energy_mismatch = std::abs(best.second);
      }
      return out;
    }
    prev_pos = fp;
    prev_neg = fn;
  }
  return out;  // frustrated
}

/// One trajectory's state.
template <int N>
struct TrajectoryState {
  double t = 0.0;
  NucVec R;
  NucVec P;
  CMat<N> sigma;  // in the phase-space adiabats of `frame`
  int lambda = 0;
  PhaseSpaceFrame<N> frame;
  RngStream rng;
  long hops = 0;
  long attempts = 0;
  long frustrated = 0;
  // cached surface derivatives at (R, P)
  NucVec rdot;
  NucVec pdot;
  // diagnostics
  double min_rate = 0.0;
  double max_hop_mismatch = 0.0;
  double max_hermiticity = 0.0;
};

struct HopOptions {
  int substeps = 10;
};

template <int N>
void refresh_surface(const ModelSpec& m, TrajectoryState<N>& s) {
  s.rdot.resize(m.n_nuc);
  s.pdot.resize(m.n_nuc);
  for (int a = 0; a < m.n_nuc; ++a) {
    s.rdot(a) = s.frame.gradP_H[a](s.lambda, s.lambda).real();
    s.pdot(a) = s.frame.F[a](s.lambda, s.lambda).real();
  }
}

template <int N>
TrajectoryState<N> init_trajectory(const ModelSpec& m, const NucVec& r, const NucVec& p, int lambda,
                                   RngStream rng) {
  TrajectoryState<N> s;
  s.R = r;
  s.P = p;
  s.frame = make_frame<N>(m, r, p);
  if (lambda < 0 || lambda >= m.n_states) throw DimensionError("initial surface out of range");
  s.lambda = lambda;
  s.sigma = zero_mat<N>(m.n_states);
  s.sigma(lambda, lambda) = 1.0;
  s.rng = rng;
  refresh_surface<N>(m, s);
  return s;
}

/// Starts on diabat `chi`: sigma is the projector on chi in the adiabat
/// basis and the active surface is drawn from its populations.
template <int N>
TrajectoryState<N> init_trajectory_diabat(const ModelSpec& m, const NucVec& r, const NucVec& p, int chi,
                                          RngStream rng) {
  auto s = init_trajectory<N>(m, r, p, 0, rng);
  if (chi < 0 || chi >= m.n_states) throw DimensionError("initial diabat out of range");
  const CMat<N> full = s.frame.basis * s.frame.U;
  const CVec<N> c = full.row(chi).adjoint();  // <n|chi>
  s.sigma = c * c.adjoint();
  const double xi = s.rng.uniform();
  double acc = 0.0;
  s.lambda = m.n_states - 1;
  for (int n = 0; n < m.n_states; ++n) {
    acc += std::norm(c(n));
    if (xi < acc) {
      s.lambda = n;
      break;
    }
  }
  refresh_surface<N>(m, s);
  return s;
}

/// Classical RK4 on the active surface, coherent electronic substeps, then
/// one hop test with the step-integrated probability.
template <int N>
void step(const ModelSpec& m, TrajectoryState<N>& s, double dt, const HopOptions& opt = {}) {
  if (!(dt > 0.0)) throw IntegratorError("dt must be positive");
  const int n = m.n_states;
  const CVec<N> ref = s.frame.U.col(s.lambda);
  const NucVec r0 = s.R;
  const NucVec p0 = s.P;
  const NucVec k1r = s.rdot;
  const NucVec k1p = s.pdot;
  const auto e2 = surface_eval<N>(m, r0 + 0.5 * dt * k1r, p0 + 0.5 * dt * k1p, ref);
  const auto e3 = surface_eval<N>(m, r0 + 0.5 * dt * e2.velocity, p0 + 0.5 * dt * e2.force, ref);
  const auto e4 = surface_eval<N>(m, r0 + dt * e3.velocity, p0 + dt * e3.force, ref);
  const NucVec r1 = r0 + dt / 6.0 * (k1r + 2.0 * e2.velocity + 2.0 * e3.velocity + e4.velocity);
  const NucVec p1 = p0 + dt / 6.0 * (k1p + 2.0 * e2.force + 2.0 * e3.force + e4.force);

  const PhaseSpaceFrame<N> f0 = s.frame;
  auto f1 = make_frame<N>(m, r1, p1, &f0);

  const CMat<N> t0 = time_coupling<N>(f0, k1r, k1p);
  NucVec v1(m.n_nuc);
  NucVec a1(m.n_nuc);
  for (int a = 0; a < m.n_nuc; ++a) {
    v1(a) = f1.gradP_H[a](s.lambda, s.lambda).real();
    a1(a) = f1.F[a](s.lambda, s.lambda).real();
  }
  const CMat<N> t1 = time_coupling<N>(f1, v1, a1);
  const int sub = std::max(opt.substeps, 1);
  const double h = dt / sub;
  RVec<N> prob = RVec<N>::Zero(n);
  for (int k = 0; k < sub; ++k) {
    const double w = (k + 0.5) / sub;
    const CMat<N> t = (1.0 - w) * t0 + w * t1;
    CMat<N> g = -kI * kHbar * t;
    for (int i = 0; i < n; ++i) g(i, i) += (1.0 - w) * f0.E(i) + w * f1.E(i);
    const CMat<N> u = expm_hermitian<N>(hermitian_part<N>(g) / kHbar, h);
    s.sigma = u * s.sigma * u.adjoint();
    for (int j = 0; j < n; ++j) {
      if (j == s.lambda) continue;
      const double rate = hop_rate<N>(s.sigma, t, s.lambda, j);
      s.min_rate = std::min(s.min_rate, rate);
      prob(j) += rate * h;
    }
  }
  const double herm = hermiticity_error(s.sigma);
  s.max_hermiticity = std::max(s.max_hermiticity, herm);
  if (herm > kHermiticityAlarm) throw IntegratorError("electronic density lost Hermiticity");
  s.sigma = hermitian_part<N>(s.sigma);

  s.R = r1;
  s.P = p1;
  s.t += dt;
  s.frame = std::move(f1);
  s.rdot = v1;
  s.pdot = a1;

  const double total = prob.sum();
  if (total <= 0.0) return;
  const double xi = s.rng.uniform();
  if (xi >= std::min(total, 1.0)) return;
  const double scale = total > 1.0 ? 1.0 / total : 1.0;
  double acc = 0.0;
  int target = -1;
  for (int j = 0; j < n; ++j) {
    acc += prob(j) * scale;
    if (xi < acc) {
      target = j;
      break;
    }
  }
  if (target < 0) return;
  ++s.attempts;
  const auto outcome = attempt_hop<N>(m, s.frame, s.lambda, target);
  if (!outcome.accepted) {
    ++s.frustrated;
    return;
  }
  ++s.hops;
  s.max_hop_mismatch = std::max(s.max_hop_mismatch, outcome.energy_mismatch);
  s.P = s.P + outcome.kappa * outcome.direction;
  const PhaseSpaceFrame<N> before = s.frame;
  s.frame = make_frame<N>(m, s.R, s.P, &before);
  s.lambda = target;
  refresh_surface<N>(m, s);
}

/// Active-surface energy E_lambda(R, P).
template <int N>
double active_energy(const TrajectoryState<N>& s) {
  return s.frame.E(s.lambda);
}

/// Diabatic populations diag(B sigma B^dag), B = basis * U.
template <int N>
RVec<N> diabatic_populations(const TrajectoryState<N>& s) {
  const CMat<N> full = s.frame.basis * s.frame.U;
  const CMat<N> rho = full * s.sigma * full.adjoint();
  return rho.diagonal().real();
}

template <int N>
detail::TrajectoryOutcome run_one_trajectory(const ModelSpec& m, const EnsembleSpec& e, long index) {
  detail::TrajectoryOutcome o;
  const int n = m.n_states;
  long total = 0;
  const auto records = record_steps(e, total);
  try {
    RngStream rng(e.seed, static_cast<std::uint64_t>(index));
    const auto pt = wigner_draw(e.R0, e.P0, e.sigma, rng);
    auto s = e.diabatic_start ? init_trajectory_diabat<N>(m, pt.R, pt.P, e.state, rng)
                              : init_trajectory<N>(m, pt.R, pt.P, e.state, rng);
    HopOptions opt;
    opt.substeps = e.substeps;
    double seg_start = active_energy(s);
    long seg_steps = 0;
    long hops_seen = 0;
    double worst_drift = 0.0;
    auto sample = [&] {
      std::vector<double> sp(n, 0.0);
      sp[s.lambda] = 1.0;
      o.surface_samples.push_back(sp);
      const auto dp = diabatic_populations<N>(s);
      o.diabat_samples.emplace_back(dp.data(), dp.data() + n);
      o.max_trace_error = std::max(o.max_trace_error, std::abs(s.sigma.trace().real() - 1.0));
    };
    std::size_t next_record = 0;
    bool frozen = false;
    for (long k = 0; k <= total; ++k) {
      if (next_record < records.size() && records[next_record] == k) {
        sample();
        ++next_record;
      }
      if (k == total) break;
      if (!frozen && detail::escaped(s.R, s.P, e.x_stop)) frozen = true;
      if (frozen) continue;
      step<N>(m, s, e.dt, opt);
      if (s.hops != hops_seen) {
        hops_seen = s.hops;
        seg_start = active_energy(s);
        seg_steps = 0;
      } else {
        ++seg_steps;
        const double drift = std::abs(active_energy(s) - seg_start);
        const double scaled = drift * 1000.0 / std::max<double>(seg_steps, 1000.0);
        worst_drift = std::max(worst_drift, scaled);
      }
    }
    o.ok = true;
    o.final_x = s.R(0);
    o.final_surface.assign(n, 0.0);
    o.final_surface[s.lambda] = 1.0;
    o.final_diabat = o.diabat_samples.back();
    o.hops = s.hops;
    o.attempts = s.attempts;
    o.frustrated = s.frustrated;
    o.energy_drift_per_1000 = worst_drift;
    o.max_hop_mismatch = s.max_hop_mismatch;
    o.min_rate = s.min_rate;
    o.max_hermiticity = s.max_hermiticity;
  } catch (const Error& err) {
    o.ok = false;
    o.error = err.what();
  }
  return o;
}

template <int N>
RunRecord run_ensemble(const ModelSpec& m, const EnsembleSpec& e) {
  if (e.ntraj < 1) throw ConfigError("ntraj must be at least 1");
  if (!(e.dt > 0.0)) throw ConfigError("dt must be positive");
  if (e.t_final < 0.0) throw ConfigError("t_final must be non-negative");
  if (e.R0.size() != m.n_nuc || e.P0.size() != m.n_nuc) throw DimensionError("initial R0/P0 length mismatch");
  std::vector<detail::TrajectoryOutcome> outs(e.ntraj);
  parallel_for(
      static_cast<std::size_t>(e.ntraj),
      [&](std::size_t i) { outs[i] = run_one_trajectory<N>(m, e, static_cast<long>(i)); }, e.threads);
  long total = 0;
  std::vector<double> times;
  for (long k : record_steps(e, total)) times.push_back(k * e.dt);
  auto rec = reduce_outcomes(outs, m.n_states, times);
  long hops = 0, attempts = 0, frustrated = 0;
  double drift = 0.0, mismatch = 0.0, min_rate = 0.0, trace = 0.0, herm = 0.0;
  for (const auto& o : outs) {
    if (!o.ok) continue;
    hops += o.hops;
    attempts += o.attempts;
    frustrated += o.frustrated;
    drift = std::max(drift, o.energy_drift_per_1000);
    mismatch = std::max(mismatch, o.max_hop_mismatch);
    min_rate = std::min(min_rate, o.min_rate);
    trace = std::max(trace, o.max_trace_error);
    herm = std::max(herm, o.max_hermiticity);
  }
  rec.diagnostics["hops"] = hops;
  rec.diagnostics["hop_attempts"] = attempts;
  rec.diagnostics["frustrated_hops"] = frustrated;
  rec.diagnostics["frustrated_fraction"] = attempts > 0 ? static_cast<double>(frustrated) / attempts : 0.0;
  rec.diagnostics["max_energy_drift_per_1000_steps"] = drift;
  rec.diagnostics["max_hop_energy_mismatch"] = mismatch;
  rec.diagnostics["min_hop_rate"] = min_rate;
  rec.diagnostics["max_trace_error"] = trace;
  rec.diagnostics["max_sigma_hermiticity_error"] = herm;
  return rec;
}

}  // namespace phasehop

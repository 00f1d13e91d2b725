#pragma once

// Mean-field (Ehrenfest) dynamics. Standard mode uses h(R) + P^2/2M in the
// diabatic basis; phase-space mode uses H_W(R,P) in the model's
// preconditioned basis.

#include "phasehop/ensemble.hpp"
#include "phasehop/models.hpp"
#include "phasehop/phasespace.hpp"
#include "phasehop/rng.hpp"
#include "phasehop/wigner.hpp"

#include <string>
#include <vector>

namespace phasehop {

enum class MeanFieldMode { standard, phasespace };

inline std::string to_string(MeanFieldMode m) {
  return m == MeanFieldMode::standard ? "standard" : "phasespace";
}

inline MeanFieldMode parse_meanfield_mode(const std::string& s) {
  if (s == "standard") return MeanFieldMode::standard;
  if (s == "phasespace") return MeanFieldMode::phasespace;
  throw ConfigError("unknown mean-field mode '" + s + "'");
}

/// Model used for propagation: standard mode drops any preconditioning.
inline ModelSpec meanfield_model(const ModelSpec& m, MeanFieldMode mode) {
  return mode == MeanFieldMode::standard ? with_precondition(m, Precondition::diabatic) : m;
}

template <int N>
struct MeanFieldState {
  double t = 0.0;
  NucVec R;
  NucVec P;
  CMat<N> sigma;  // in the propagation basis
};

template <int N>
struct MeanFieldRate {
  NucVec dR;
  NucVec dP;
  CMat<N> dsigma;
};

/// Rdot = tr[sigma dH/dP], Pdot = -tr[sigma dH/dR], sigmadot = -i/hbar [H, sigma].
template <int N>
MeanFieldRate<N> meanfield_rate(const ModelSpec& prop, const NucVec& r, const NucVec& p, const CMat<N>& sigma) {
  const auto hw = hw_derivatives<N>(local_operators<N>(prop, r), p, prop.mass);
  MeanFieldRate<N> k;
  k.dR.resize(prop.n_nuc);
  k.dP.resize(prop.n_nuc);
  for (int a = 0; a < prop.n_nuc; ++a) {
    k.dR(a) = (sigma * hw.dP[a]).trace().real();
    k.dP(a) = -(sigma * hw.dR[a]).trace().real();
  }
  k.dsigma = -kI / kHbar * commutator<N>(hw.H, sigma);
  return k;
}

/// One RK4 step on (R, P, sigma); `prop` is the propagation model from
/// meanfield_model.
template <int N>
void step_meanfield(const ModelSpec& prop, MeanFieldState<N>& s, double dt) {
  if (!(dt > 0.0)) throw IntegratorError("dt must be positive");
  const auto k1 = meanfield_rate<N>(prop, s.R, s.P, s.sigma);
  const auto k2 = meanfield_rate<N>(prop, s.R + 0.5 * dt * k1.dR, s.P + 0.5 * dt * k1.dP,
                                    CMat<N>(s.sigma + 0.5 * dt * k1.dsigma));
  const auto k3 = meanfield_rate<N>(prop, s.R + 0.5 * dt * k2.dR, s.P + 0.5 * dt * k2.dP,
                                    CMat<N>(s.sigma + 0.5 * dt * k2.dsigma));
  const auto k4 =
      meanfield_rate<N>(prop, s.R + dt * k3.dR, s.P + dt * k3.dP, CMat<N>(s.sigma + dt * k3.dsigma));
  s.R += dt / 6.0 * (k1.dR + 2.0 * k2.dR + 2.0 * k3.dR + k4.dR);
  s.P += dt / 6.0 * (k1.dP + 2.0 * k2.dP + 2.0 * k3.dP + k4.dP);
  s.sigma += dt / 6.0 * (k1.dsigma + 2.0 * k2.dsigma + 2.0 * k3.dsigma + k4.dsigma);
  s.t += dt;
}

/// tr[sigma H_W(R, P)].
template <int N>
double meanfield_energy(const ModelSpec& prop, const MeanFieldState<N>& s) {
  return (s.sigma * build_hw<N>(prop, s.R, s.P)).trace().real();
}

/// Starts on diabat chi; sigma is the projector in the propagation basis.
template <int N>
MeanFieldState<N> init_meanfield(const ModelSpec& prop, const NucVec& r, const NucVec& p, int chi) {
  if (chi < 0 || chi >= prop.n_states) throw DimensionError("initial diabat out of range");
  MeanFieldState<N> s;
  s.R = r;
  s.P = p;
  const CMat<N> basis = local_operators<N>(prop, r).basis;
  const CVec<N> c = basis.row(chi).adjoint();
  s.sigma = c * c.adjoint();
  return s;
}

/// Diabatic populations diag(B sigma B^dag) with B the propagation basis.
template <int N>
RVec<N> meanfield_diabatic_populations(const ModelSpec& prop, const MeanFieldState<N>& s) {
  const CMat<N> b = local_operators<N>(prop, s.R).basis;
  return (b * s.sigma * b.adjoint()).diagonal().real();
}

/// Populations of the eigenstates of H_W (phase-space adiabats; in standard
/// mode these are the position-space adiabats).
template <int N>
RVec<N> meanfield_surface_populations(const ModelSpec& prop, const MeanFieldState<N>& s) {
  const auto es = eigensystem<N>(build_hw<N>(prop, s.R, s.P));
  return (es.U.adjoint() * s.sigma * es.U).diagonal().real();
}

template <int N>
detail::TrajectoryOutcome run_one_meanfield(const ModelSpec& prop, const EnsembleSpec& e, long index) {
  detail::TrajectoryOutcome o;
  const int n = prop.n_states;
  long total = 0;
  const auto records = record_steps(e, total);
  try {
    RngStream rng(e.seed, static_cast<std::uint64_t>(index));
    const auto pt = wigner_draw(e.R0, e.P0, e.sigma, rng);
    auto s = init_meanfield<N>(prop, pt.R, pt.P, e.state);
    const double e0 = meanfield_energy<N>(prop, s);
    double drift = 0.0;
    auto sample = [&] {
      const auto sp = meanfield_surface_populations<N>(prop, s);
      const auto dp = meanfield_diabatic_populations<N>(prop, s);
      o.surface_samples.emplace_back(sp.data(), sp.data() + n);
      o.diabat_samples.emplace_back(dp.data(), dp.data() + n);
      o.max_trace_error = std::max(o.max_trace_error, std::abs(s.sigma.trace().real() - 1.0));
      o.max_hermiticity = std::max(o.max_hermiticity, hermiticity_error(s.sigma));
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
      step_meanfield<N>(prop, s, e.dt);
      if ((k + 1) % 20 == 0 || k + 1 == total)
        drift = std::max(drift, std::abs(meanfield_energy<N>(prop, s) - e0));
    }
    o.ok = true;
    o.final_x = s.R(0);
    o.final_surface = o.surface_samples.back();
    o.final_diabat = o.diabat_samples.back();
    o.energy_drift_per_1000 = drift;  // whole-run drift
  } catch (const Error& err) {
    o.ok = false;
    o.error = err.what();
  }
  return o;
}

/// Wigner-sampled Ehrenfest ensemble started on diabat e.state.
template <int N>
RunRecord run_meanfield_ensemble(const ModelSpec& m, MeanFieldMode mode, const EnsembleSpec& e) {
  if (e.ntraj < 1) throw ConfigError("ntraj must be at least 1");
  if (!(e.dt > 0.0)) throw ConfigError("dt must be positive");
  if (e.t_final < 0.0) throw ConfigError("t_final must be non-negative");
  if (e.R0.size() != m.n_nuc || e.P0.size() != m.n_nuc) throw DimensionError("initial R0/P0 length mismatch");
  const ModelSpec prop = meanfield_model(m, mode);
  std::vector<detail::TrajectoryOutcome> outs(e.ntraj);
  parallel_for(
      static_cast<std::size_t>(e.ntraj),
      [&](std::size_t i) { outs[i] = run_one_meanfield<N>(prop, e, static_cast<long>(i)); }, e.threads);
  long total = 0;
  std::vector<double> times;
  for (long k : record_steps(e, total)) times.push_back(k * e.dt);
  auto rec = reduce_outcomes(outs, m.n_states, times);
  double drift = 0.0, trace = 0.0, herm = 0.0;
  for (const auto& o : outs) {
    if (!o.ok) continue;
    drift = std::max(drift, o.energy_drift_per_1000);
    trace = std::max(trace, o.max_trace_error);
    herm = std::max(herm, o.max_hermiticity);
  }
  rec.diagnostics["mode"] = to_string(mode);
  rec.diagnostics["max_energy_drift"] = drift;
  rec.diagnostics["max_trace_error"] = trace;
  rec.diagnostics["max_sigma_hermiticity_error"] = herm;
  return rec;
}

}  // namespace phasehop

#pragma once

// Ensemble bookkeeping shared by the trajectory methods.

#include "phasehop/parallel.hpp"
#include "phasehop/record.hpp"
#include "phasehop/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace phasehop {

/// Initial condition and integration controls shared by the ensemble runners.
struct EnsembleSpec {
  NucVec R0;
  NucVec P0;
  double sigma = 1.0;
  int state = 0;
  bool diabatic_start = false;  // start on diabat `state` instead of adiabat
  long ntraj = 1000;
  double dt = 1.0;
  double t_final = 100.0;
  double record_dt = 0.0;  // 0: record only t=0 and t_final
  std::uint64_t seed = 1;
  int substeps = 10;
  double x_stop = 0.0;  // >0: stop integrating once |X| > x_stop moving outward
  int threads = 0;
};

namespace detail {

inline long steps_between(double span, double dt) {
  return static_cast<long>(std::llround(span / dt));
}

inline bool escaped(const NucVec& r, const NucVec& p, double x_stop) {
  return x_stop > 0.0 && ((r(0) > x_stop && p(0) > 0.0) || (r(0) < -x_stop && p(0) < 0.0));
}

struct TrajectoryOutcome {
  bool ok = false;
  std::string error;
  double final_x = 0.0;
  std::vector<double> final_surface;  // surface populations (one-hot for hopping)
  std::vector<double> final_diabat;
  std::vector<std::vector<double>> surface_samples;  // [record][state]
  std::vector<std::vector<double>> diabat_samples;
  long hops = 0;
  long attempts = 0;
  long frustrated = 0;
  double energy_drift_per_1000 = 0.0;
  double max_hop_mismatch = 0.0;
  double min_rate = 0.0;
  double max_trace_error = 0.0;
  double max_hermiticity = 0.0;
};

struct Reduced {
  std::vector<double> values;
  Reduced operator+(const Reduced& o) const {
    if (values.empty()) return o;
    if (o.values.empty()) return *this;
    Reduced r{values};
    for (std::size_t i = 0; i < values.size(); ++i) r.values[i] += o.values[i];
    return r;
  }
};

}  // namespace detail

/// Recording grid shared by the trajectory runners.
inline std::vector<long> record_steps(const EnsembleSpec& e, long& total_steps) {
  total_steps = detail::steps_between(e.t_final, e.dt);
  std::vector<long> out{0};
  if (e.record_dt > 0.0) {
    const long every = std::max(1L, detail::steps_between(e.record_dt, e.dt));
    for (long k = every; k < total_steps; k += every) out.push_back(k);
  }
  if (total_steps > 0) out.push_back(total_steps);
  return out;
}

/// Turns per-trajectory outcomes into a RunRecord (populations over time,
/// channel tallies) with index-ordered pairwise sums.
inline RunRecord reduce_outcomes(const std::vector<detail::TrajectoryOutcome>& outs, int n_states,
                                 const std::vector<double>& times) {
  RunRecord rec;
  rec.times = times;
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < outs.size(); ++i)
    if (outs[i].ok) good.push_back(i);
  const std::size_t ng = good.size();
  const std::size_t nt = times.size();
  // per state: transmitted/reflected x surface/diabat, means then second moments
  const std::size_t width = 2 * n_states * nt + 8 * n_states;
  auto get = [&](std::size_t j) {
    const auto& o = outs[good[j]];
    detail::Reduced r;
    r.values.assign(width, 0.0);
    std::size_t c = 0;
    for (std::size_t ti = 0; ti < nt; ++ti)
      for (int s = 0; s < n_states; ++s) r.values[c++] = o.surface_samples[ti][s];
    for (std::size_t ti = 0; ti < nt; ++ti)
      for (int s = 0; s < n_states; ++s) r.values[c++] = o.diabat_samples[ti][s];
    const bool trans = o.final_x > 0.0;
    for (int power = 1; power <= 2; ++power) {
      for (int s = 0; s < n_states; ++s) {
        const double surf = power == 1 ? o.final_surface[s] : o.final_surface[s] * o.final_surface[s];
        const double dia = power == 1 ? o.final_diabat[s] : o.final_diabat[s] * o.final_diabat[s];
        r.values[c++] = trans ? surf : 0.0;
        r.values[c++] = trans ? 0.0 : surf;
        r.values[c++] = trans ? dia : 0.0;
        r.values[c++] = trans ? 0.0 : dia;
      }
    }
    return r;
  };
  const auto sum = pairwise_sum<detail::Reduced>(0, ng, get);
  const double inv = ng > 0 ? 1.0 / static_cast<double>(ng) : 0.0;
  auto at = [&](std::size_t i) { return sum.values.empty() ? 0.0 : sum.values[i] * inv; };

  for (int s = 0; s < n_states; ++s) rec.columns.push_back("pop_surface_" + std::to_string(s));
  for (int s = 0; s < n_states; ++s) rec.columns.push_back("pop_diabat_" + std::to_string(s));
  rec.series.assign(2 * n_states, std::vector<double>(nt, 0.0));
  std::size_t c = 0;
  for (std::size_t ti = 0; ti < nt; ++ti)
    for (int s = 0; s < n_states; ++s) rec.series[s][ti] = at(c++);
  for (std::size_t ti = 0; ti < nt; ++ti)
    for (int s = 0; s < n_states; ++s) rec.series[n_states + s][ti] = at(c++);
  const std::size_t first = c;
  const std::size_t second = c + 4 * n_states;
  auto se = [&](double mean, double sq) {
    return ng > 1 ? std::sqrt(std::max(sq - mean * mean, 0.0) / static_cast<double>(ng)) : 0.0;
  };
  const char* channel[4] = {"transmitted", "reflected", "transmitted", "reflected"};
  const char* kind[4] = {"surface_", "surface_", "diabat_", "diabat_"};
  for (int s = 0; s < n_states; ++s) {
    for (int q = 0; q < 4; ++q) {
      const std::size_t i = 4 * s + q;
      rec.channels.push_back({channel[q], kind[q] + std::to_string(s), at(first + i), se(at(first + i), at(second + i))});
    }
  }
  rec.diagnostics["n_traj"] = outs.size();
  rec.diagnostics["n_completed"] = ng;
  rec.diagnostics["n_failed"] = outs.size() - ng;
  nlohmann::json errors = nlohmann::json::array();
  for (std::size_t i = 0; i < outs.size() && errors.size() < 20; ++i)
    if (!outs[i].ok) errors.push_back({{"trajectory", i}, {"error", outs[i].error}});
  rec.diagnostics["errors"] = errors;
  return rec;
}

}  // namespace phasehop

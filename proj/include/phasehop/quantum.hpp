#pragma once

// Exact wavepacket dynamics on periodic position grids (1-D or 2-D) by
// Strang-split Fourier propagation in the diabatic basis.

#include "phasehop/models.hpp"
#include "phasehop/phasespace.hpp"
#include "phasehop/record.hpp"

#include <fftw3.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <mutex>
#include <vector>

namespace phasehop {

struct Axis {
  double min = 0.0;
  double max = 1.0;
  int n = 2;
  [[nodiscard]] double step() const { return (max - min) / n; }
  [[nodiscard]] double x(int i) const { return min + i * step(); }
  // angular wavenumber of FFT bin i
  [[nodiscard]] double k(int i) const {
    const int j = i < (n + 1) / 2 ? i : i - n;
    return 2.0 * kPi * j / (max - min);
  }
};

inline constexpr double kBoundaryAlarm = 1e-6;
inline constexpr int kBoundaryWidth = 5;

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// FFTW plan pair over a contiguous [state][point] buffer.
class FftPlans {
 public:
  FftPlans(const std::vector<Axis>& axes, int n_states, fftw_complex* buf) {
    std::vector<int> dims;
    int points = 1;
    for (const auto& a : axes) {
      dims.push_back(a.n);
      points *= a.n;
    }
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fwd_ = fftw_plan_many_dft(static_cast<int>(dims.size()), dims.data(), n_states, buf, nullptr, 1, points, buf,
                              nullptr, 1, points, FFTW_FORWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    bwd_ = fftw_plan_many_dft(static_cast<int>(dims.size()), dims.data(), n_states, buf, nullptr, 1, points, buf,
                              nullptr, 1, points, FFTW_BACKWARD, FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!fwd_ || !bwd_) throw Error("FFTW plan creation failed");
  }
  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;
  ~FftPlans() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }
  void forward(fftw_complex* buf) const { fftw_execute_dft(fwd_, buf, buf); }
  void backward(fftw_complex* buf) const { fftw_execute_dft(bwd_, buf, buf); }

 private:
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

}  // namespace detail

/// Wavefunction psi[state * points + point]; points are row-major with the
/// first axis (X) slowest.
struct Wavepacket {
  std::vector<Axis> axes;
  int n_states = 2;
  double mass = 1.0;
  std::vector<cplx> psi;

  [[nodiscard]] int points() const {
    int p = 1;
    for (const auto& a : axes) p *= a.n;
    return p;
  }
  [[nodiscard]] double cell() const {
    double v = 1.0;
    for (const auto& a : axes) v *= a.step();
    return v;
  }
  [[nodiscard]] NucVec position(int point) const {
    NucVec r(static_cast<int>(axes.size()));
    for (int d = static_cast<int>(axes.size()) - 1; d >= 0; --d) {
      r(d) = axes[d].x(point % axes[d].n);
      point /= axes[d].n;
    }
    return r;
  }
  [[nodiscard]] NucVec wavevector(int point) const {
    NucVec k(static_cast<int>(axes.size()));
    for (int d = static_cast<int>(axes.size()) - 1; d >= 0; --d) {
      k(d) = axes[d].k(point % axes[d].n);
      point /= axes[d].n;
    }
    return k;
  }
  [[nodiscard]] double norm() const {
    double s = 0.0;
    for (const auto& c : psi) s += std::norm(c);
    return s * cell();
  }
};

/// Position-space adiabats of h(R), columns ordered by energy.
inline Eigen::MatrixXcd position_eigenvectors(const ModelSpec& m, const NucVec& r) {
  const Eigen::MatrixXcd h = eval_diabatic<Eigen::Dynamic>(m, r);
  return eigensystem<Eigen::Dynamic>(h).U;
}

/// Position adiabats at every grid point in a continuous gauge: each point
/// is aligned with its predecessor along the last nonzero grid index.
inline std::vector<Eigen::MatrixXcd> smooth_position_adiabats(const ModelSpec& m, const std::vector<Axis>& axes) {
  int np = 1;
  for (const auto& a : axes) np *= a.n;
  std::vector<Eigen::MatrixXcd> out(np);
  Wavepacket shape;
  shape.axes = axes;
  std::vector<int> idx(axes.size());
  for (int i = 0; i < np; ++i) {
    int rem = i;
    for (int d = static_cast<int>(axes.size()) - 1; d >= 0; --d) {
      idx[d] = rem % axes[d].n;
      rem /= axes[d].n;
    }
    const Eigen::MatrixXcd h = eval_diabatic<Eigen::Dynamic>(m, shape.position(i));
    int stride = 1;
    int ref = -1;
    for (int d = static_cast<int>(axes.size()) - 1; d >= 0; --d) {
      if (idx[d] > 0) {
        ref = i - stride;
        break;
      }
      stride *= axes[d].n;
    }
    out[i] = ref < 0 ? eigensystem<Eigen::Dynamic>(h).U : eigensystem<Eigen::Dynamic>(h, &out[ref]).U;
  }
  return out;
}

/// Gaussian exp(-|R-R0|^2/sigma^2 + i P0.(R-R0)) on diabat or adiabat `state`.
inline Wavepacket init_gaussian(const ModelSpec& m, const std::vector<Axis>& axes, const NucVec& r0,
                                const NucVec& p0, double sigma, int state, bool adiabatic) {
  if (static_cast<int>(axes.size()) != m.n_nuc) throw DimensionError("grid rank must match nuclear dimension");
  if (r0.size() != m.n_nuc || p0.size() != m.n_nuc) throw DimensionError("R0/P0 length mismatch");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (state < 0 || state >= m.n_states) throw DimensionError("initial state out of range");
  for (const auto& a : axes)
    if (a.n < 16 || !(a.max > a.min)) throw ConfigError("grid axes need n >= 16 and max > min");
  Wavepacket wp;
  wp.axes = axes;
  wp.n_states = m.n_states;
  wp.mass = m.mass;
  const int np = wp.points();
  wp.psi.assign(static_cast<std::size_t>(np) * m.n_states, 0.0);
  // support: the Gaussian at the grid edge must be negligible
  for (int d = 0; d < m.n_nuc; ++d) {
    const double edge = std::min(r0(d) - axes[d].min, axes[d].max - r0(d));
    if (std::exp(-2.0 * edge * edge / (sigma * sigma)) > 1e-12) throw ConfigError("wavepacket support reaches grid edge");
  }
  const auto adiabats = adiabatic ? smooth_position_adiabats(m, axes) : std::vector<Eigen::MatrixXcd>{};
  for (int i = 0; i < np; ++i) {
    const NucVec r = wp.position(i);
    const NucVec dr = r - r0;
    const cplx g = std::exp(cplx(-dr.squaredNorm() / (sigma * sigma), p0.dot(dr)));
    if (adiabatic) {
      for (int j = 0; j < m.n_states; ++j) wp.psi[static_cast<std::size_t>(j) * np + i] = adiabats[i](j, state) * g;
    } else {
      wp.psi[static_cast<std::size_t>(state) * np + i] = g;
    }
  }
  const double scale = 1.0 / std::sqrt(wp.norm());
  for (auto& c : wp.psi) c *= scale;
  return wp;
}

/// <P_a> by spectral differentiation.
inline NucVec momentum_expectation(const Wavepacket& wp) {
  const int np = wp.points();
  std::vector<cplx> buf = wp.psi;
  detail::FftPlans plans(wp.axes, wp.n_states, reinterpret_cast<fftw_complex*>(buf.data()));
  plans.forward(reinterpret_cast<fftw_complex*>(buf.data()));
  NucVec p = NucVec::Zero(static_cast<int>(wp.axes.size()));
  double total = 0.0;
  for (int j = 0; j < wp.n_states; ++j) {
    for (int i = 0; i < np; ++i) {
      const double w = std::norm(buf[static_cast<std::size_t>(j) * np + i]);
      p += kHbar * w * wp.wavevector(i);
      total += w;
    }
  }
  return p / total;
}

/// <R_a> and variance of R_a.
inline std::pair<NucVec, NucVec> position_moments(const Wavepacket& wp) {
  const int np = wp.points();
  const int nd = static_cast<int>(wp.axes.size());
  NucVec mean = NucVec::Zero(nd);
  NucVec sq = NucVec::Zero(nd);
  double total = 0.0;
  for (int i = 0; i < np; ++i) {
    double w = 0.0;
    for (int j = 0; j < wp.n_states; ++j) w += std::norm(wp.psi[static_cast<std::size_t>(j) * np + i]);
    const NucVec r = wp.position(i);
    mean += w * r;
    sq += w * r.cwiseProduct(r);
    total += w;
  }
  mean /= total;
  sq /= total;
  return {mean, sq - mean.cwiseProduct(mean)};
}

/// Strang propagator exp(-iT dt/2) exp(-iV dt) exp(-iT dt/2) for a fixed model and dt.
class SplitOperator {
 public:
  SplitOperator(const ModelSpec& m, const Wavepacket& wp, double dt)
      : model_(m), axes_(wp.axes), n_(wp.n_states), points_(wp.points()), dt_(dt), buf_(wp.psi.size()),
        plans_(wp.axes, wp.n_states, reinterpret_cast<fftw_complex*>(buf_.data())) {
    if (!(dt > 0.0)) throw IntegratorError("dt must be positive");
    kin_half_.resize(points_);
    kin_energy_.resize(points_);
    for (int i = 0; i < points_; ++i) {
      const double e = kHbar * kHbar * wp.wavevector(i).squaredNorm() / (2.0 * m.mass);
      kin_energy_[i] = e;
      kin_half_[i] = std::exp(cplx(0.0, -e * 0.5 * dt / kHbar)) / static_cast<double>(points_);
    }
    pot_.resize(static_cast<std::size_t>(points_) * n_ * n_);
    h_.resize(pot_.size());
    for (int i = 0; i < points_; ++i) {
      const Eigen::MatrixXcd h = eval_diabatic<Eigen::Dynamic>(m, wp.position(i));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(h);
      const Eigen::VectorXcd ph =
          (es.eigenvalues().cast<cplx>() * cplx(0.0, -dt / kHbar)).array().exp().matrix();
      const Eigen::MatrixXcd u = es.eigenvectors() * ph.asDiagonal() * es.eigenvectors().adjoint();
      for (int a = 0; a < n_; ++a)
        for (int b = 0; b < n_; ++b) {
          pot_[(static_cast<std::size_t>(i) * n_ + a) * n_ + b] = u(a, b);
          h_[(static_cast<std::size_t>(i) * n_ + a) * n_ + b] = h(a, b);
        }
    }
  }

  void step(Wavepacket& wp) {
    auto* data = reinterpret_cast<fftw_complex*>(wp.psi.data());
    kinetic_half(wp, data);
    std::vector<cplx> local(n_);
    for (int i = 0; i < points_; ++i) {
      for (int a = 0; a < n_; ++a) local[a] = wp.psi[static_cast<std::size_t>(a) * points_ + i];
      const cplx* u = &pot_[static_cast<std::size_t>(i) * n_ * n_];
      for (int a = 0; a < n_; ++a) {
        cplx s = 0.0;
        for (int b = 0; b < n_; ++b) s += u[a * n_ + b] * local[b];
        wp.psi[static_cast<std::size_t>(a) * points_ + i] = s;
      }
    }
    kinetic_half(wp, data);
  }

  /// <psi|H|psi>.
  [[nodiscard]] double energy(const Wavepacket& wp) {
    std::copy(wp.psi.begin(), wp.psi.end(), buf_.begin());
    plans_.forward(reinterpret_cast<fftw_complex*>(buf_.data()));
    double kin = 0.0;
    double norm_k = 0.0;
    for (int a = 0; a < n_; ++a)
      for (int i = 0; i < points_; ++i) {
        const double w = std::norm(buf_[static_cast<std::size_t>(a) * points_ + i]);
        kin += w * kin_energy_[i];
        norm_k += w;
      }
    double pot = 0.0;
    double norm_x = 0.0;
    for (int i = 0; i < points_; ++i) {
      const cplx* h = &h_[static_cast<std::size_t>(i) * n_ * n_];
      for (int a = 0; a < n_; ++a) {
        const cplx pa = wp.psi[static_cast<std::size_t>(a) * points_ + i];
        norm_x += std::norm(pa);
        for (int b = 0; b < n_; ++b) pot += (std::conj(pa) * h[a * n_ + b] * wp.psi[static_cast<std::size_t>(b) * points_ + i]).real();
      }
    }
    return kin / norm_k + pot / norm_x;
  }

 private:
  void kinetic_half(Wavepacket& wp, fftw_complex* data) {
    plans_.forward(data);
    for (int a = 0; a < n_; ++a)
      for (int i = 0; i < points_; ++i) wp.psi[static_cast<std::size_t>(a) * points_ + i] *= kin_half_[i];
    plans_.backward(data);
  }

  ModelSpec model_;
  std::vector<Axis> axes_;
  int n_;
  int points_;
  double dt_;
  std::vector<cplx> buf_;
  detail::FftPlans plans_;
  std::vector<cplx> kin_half_;
  std::vector<double> kin_energy_;
  std::vector<cplx> pot_;
  std::vector<cplx> h_;
};

/// Populations split by X sign.
struct QuantumObservables {
  std::vector<double> diabat;
  std::vector<double> adiabat;
  std::vector<double> diabat_transmitted, diabat_reflected;
  std::vector<double> adiabat_transmitted, adiabat_reflected;
  double boundary_mass = 0.0;
};

/// Precomputed position adiabats for population projection.
class AdiabatProjector {
 public:
  AdiabatProjector(const ModelSpec& m, const Wavepacket& wp) : n_(wp.n_states), points_(wp.points()) {
    u_.reserve(points_);
    for (int i = 0; i < points_; ++i) u_.push_back(position_eigenvectors(m, wp.position(i)));
  }

  [[nodiscard]] QuantumObservables observe(const Wavepacket& wp) const {
    QuantumObservables o;
    o.diabat.assign(n_, 0.0);
    o.adiabat.assign(n_, 0.0);
    o.diabat_transmitted = o.diabat_reflected = o.adiabat_transmitted = o.adiabat_reflected = o.diabat;
    const double dv = wp.cell();
    Eigen::VectorXcd v(n_);
    for (int i = 0; i < points_; ++i) {
      for (int a = 0; a < n_; ++a) v(a) = wp.psi[static_cast<std::size_t>(a) * points_ + i];
      const Eigen::VectorXcd c = u_[i].adjoint() * v;
      const NucVec r = wp.position(i);
      const bool trans = r(0) > 0.0;
      bool edge = false;
      int rem = i;
      for (int d = static_cast<int>(wp.axes.size()) - 1; d >= 0; --d) {
        const int idx = rem % wp.axes[d].n;
        rem /= wp.axes[d].n;
        if (idx < kBoundaryWidth || idx >= wp.axes[d].n - kBoundaryWidth) edge = true;
      }
      for (int a = 0; a < n_; ++a) {
        const double pd = std::norm(v(a)) * dv;
        const double pa = std::norm(c(a)) * dv;
        o.diabat[a] += pd;
        o.adiabat[a] += pa;
        (trans ? o.diabat_transmitted : o.diabat_reflected)[a] += pd;
        (trans ? o.adiabat_transmitted : o.adiabat_reflected)[a] += pa;
        if (edge) o.boundary_mass += pd;
      }
    }
    return o;
  }

 private:
  int n_;
  int points_;
  std::vector<Eigen::MatrixXcd> u_;
};

struct ExactOptions {
  double dt = 0.1;
  double t_final = 0.0;
  double record_dt = 0.0;
};

/// Propagates and tabulates populations (columns pop_surface_n = position
/// adiabats, pop_diabat_n) and X-sign channel tallies at t_final.
inline RunRecord propagate_split_operator(const ModelSpec& m, Wavepacket& wp, const ExactOptions& opt) {
  if (!(opt.dt > 0.0)) throw ConfigError("dt must be positive");
  if (opt.t_final < 0.0) throw ConfigError("t_final must be non-negative");
  SplitOperator prop(m, wp, opt.dt);
  AdiabatProjector proj(m, wp);
  const long total = static_cast<long>(std::llround(opt.t_final / opt.dt));
  const long every = opt.record_dt > 0.0 ? std::max(1L, static_cast<long>(std::llround(opt.record_dt / opt.dt))) : std::max(total, 1L);
  const int n = wp.n_states;
  RunRecord rec;
  for (int s = 0; s < n; ++s) rec.columns.push_back("pop_surface_" + std::to_string(s));
  for (int s = 0; s < n; ++s) rec.columns.push_back("pop_diabat_" + std::to_string(s));
  rec.series.assign(2 * n, {});
  const double norm0 = wp.norm();
  const double e0 = prop.energy(wp);
  double norm_drift = 0.0;
  double energy_drift = 0.0;
  double boundary = 0.0;
  QuantumObservables last;
  auto record = [&](long k) {
    last = proj.observe(wp);
    rec.times.push_back(k * opt.dt);
    for (int s = 0; s < n; ++s) {
      rec.series[s].push_back(last.adiabat[s]);
      rec.series[n + s].push_back(last.diabat[s]);
    }
    norm_drift = std::max(norm_drift, std::abs(wp.norm() - norm0));
    energy_drift = std::max(energy_drift, std::abs(prop.energy(wp) - e0));
    boundary = std::max(boundary, last.boundary_mass);
  };
  record(0);
  for (long k = 1; k <= total; ++k) {
    prop.step(wp);
    if (k % every == 0 || k == total) record(k);
  }
  for (int s = 0; s < n; ++s) {
    const std::string sn = std::to_string(s);
    rec.channels.push_back({"transmitted", "surface_" + sn, last.adiabat_transmitted[s], 0.0});
    rec.channels.push_back({"reflected", "surface_" + sn, last.adiabat_reflected[s], 0.0});
    rec.channels.push_back({"transmitted", "diabat_" + sn, last.diabat_transmitted[s], 0.0});
    rec.channels.push_back({"reflected", "diabat_" + sn, last.diabat_reflected[s], 0.0});
  }
  rec.diagnostics["max_norm_drift"] = norm_drift;
  rec.diagnostics["max_energy_drift"] = energy_drift;
  rec.diagnostics["max_boundary_mass"] = boundary;
  rec.diagnostics["boundary_alarm"] = boundary > kBoundaryAlarm;
  rec.diagnostics["steps"] = total;
  return rec;
}

}  // namespace phasehop

#pragma once

// Quantum-classical Liouville equations on a 1-D phase-space grid.
//
// All three variants share one first-order form in the model's basis B(X):
//   drho/dt = -i/hbar [K0 + P K1, rho] - (P/M) d_X rho - 1/2 {L, d_X rho}
//             + 1/2 {G0 + P G1, d_P rho}
// D-QCLE: K0 = h_B, K1 = -i hbar D/M, L = 0, G0 = dh_B + [D, h_B], G1 = 0.
// P-QCLE / A-QCLE: K0 = h_B - hbar^2 D^2/2M, K1 = L = -i hbar D/M,
//                  G0 = dh_B - hbar^2 {dD, D}/2M, G1 = -i hbar dD/M.

#include "phasehop/models.hpp"
#include "phasehop/parallel.hpp"
#include "phasehop/phasespace.hpp"
#include "phasehop/record.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace phasehop {

enum class QcleVariant { dqcle, aqcle, pqcle };

inline std::string to_string(QcleVariant v) {
  switch (v) {
    case QcleVariant::dqcle: return "dqcle";
    case QcleVariant::aqcle: return "aqcle";
    case QcleVariant::pqcle: return "pqcle";
  }
  return "?";
}

inline QcleVariant parse_qcle_variant(const std::string& s) {
  if (s == "dqcle") return QcleVariant::dqcle;
  if (s == "aqcle") return QcleVariant::aqcle;
  if (s == "pqcle") return QcleVariant::pqcle;
  throw ConfigError("unknown QCLE variant '" + s + "'");
}

struct PhaseSpaceGrid {
  double x_min = -36.0;
  double x_max = 16.0;
  int n_x = 512;
  double p_min = -16.0;
  double p_max = 24.0;
  int n_p = 384;

  [[nodiscard]] double dx() const { return (x_max - x_min) / (n_x - 1); }
  [[nodiscard]] double dp() const { return (p_max - p_min) / (n_p - 1); }
  [[nodiscard]] double x(int i) const { return x_min + i * dx(); }
  [[nodiscard]] double p(int j) const { return p_min + j * dp(); }
  void validate() const {
    if (n_x < 16 || n_p < 16) throw ConfigError("phase-space grid needs n_x, n_p >= 16");
    if (!(x_max > x_min) || !(p_max > p_min)) throw ConfigError("phase-space grid needs max > min");
  }
};

/// rho(ix, ip) stored with P fastest.
template <int N>
struct DensityField {
  PhaseSpaceGrid grid;
  Precondition basis = Precondition::diabatic;
  int n_states = 2;
  std::vector<CMat<N>> rho;

  [[nodiscard]] CMat<N>& at(int ix, int ip) { return rho[static_cast<std::size_t>(ix) * grid.n_p + ip]; }
  [[nodiscard]] const CMat<N>& at(int ix, int ip) const {
    return rho[static_cast<std::size_t>(ix) * grid.n_p + ip];
  }
};

/// Per-X coefficient matrices of the variant, plus basis maps.
template <int N>
struct QcleOperators {
  QcleVariant variant = QcleVariant::dqcle;
  double mass = 1.0;
  bool has_l = false;
  bool has_g1 = false;
  std::vector<CMat<N>> k0, k1, l, g0, g1;
  std::vector<CMat<N>> e0, e1;       // energy H = e0 + P e1 + P^2/2M
  std::vector<CMat<N>> to_adiabat;   // U_pos^dag B
  std::vector<CMat<N>> to_diabat;    // B
};

namespace detail {

inline void check_variant_basis(QcleVariant v, Precondition b) {
  if (v == QcleVariant::aqcle && b != Precondition::adiabatic)
    throw ConfigError("aqcle needs the adiabatic basis (model precondition 'adiabatic')");
  if (v == QcleVariant::pqcle && b == Precondition::adiabatic)
    throw ConfigError("pqcle runs in the pseudodiabatic (or diabatic) basis; use aqcle for adiabats");
}

}  // namespace detail

template <int N>
QcleOperators<N> build_qcle_operators(const ModelSpec& m, const PhaseSpaceGrid& g, QcleVariant v) {
  if (m.n_nuc != 1) throw DimensionError("QCLE grids are one-dimensional");
  detail::check_variant_basis(v, m.precondition);
  g.validate();
  QcleOperators<N> o;
  o.variant = v;
  o.mass = m.mass;
  const int n = m.n_states;
  const double hb2m = kHbar * kHbar / (2.0 * m.mass);
  o.has_l = v != QcleVariant::dqcle;
  o.has_g1 = v != QcleVariant::dqcle;
  CMat<N> prev_u;
  for (int ix = 0; ix < g.n_x; ++ix) {
    NucVec r(1);
    r << g.x(ix);
    const auto ops = local_operators<N>(m, r);
    const CMat<N>& h = ops.h;
    const CMat<N>& d = ops.D[0];
    const CMat<N>& dd = ops.dD[0][0];
    const CMat<N> k1 = -kI * kHbar * d / m.mass;
    if (v == QcleVariant::dqcle) {
      o.k0.push_back(h);
      o.k1.push_back(k1);
      o.l.push_back(zero_mat<N>(n));
      o.g0.push_back(ops.dh[0] + commutator<N>(d, h));
      o.g1.push_back(zero_mat<N>(n));
      o.e0.push_back(h);
      o.e1.push_back(zero_mat<N>(n));
    } else {
      const CMat<N> k0 = h - hb2m * d * d;
      o.k0.push_back(k0);
      o.k1.push_back(k1);
      o.l.push_back(k1);
      o.g0.push_back(ops.dh[0] - hb2m * anticommutator<N>(dd, d));
      o.g1.push_back(-kI * kHbar * dd / m.mass);
      o.e0.push_back(k0);
      o.e1.push_back(k1);
    }
    const CMat<N> hd = eval_diabatic<N>(m, r);
    const auto es = ix == 0 ? eigensystem<N>(hd) : eigensystem<N>(hd, &prev_u);
    prev_u = es.U;
    o.to_adiabat.push_back(es.U.adjoint() * ops.basis);
    o.to_diabat.push_back(ops.basis);
  }
  return o;
}

/// Gaussian Wigner field exp(-2(X-X0)^2/sigma^2 - sigma^2(P-P0)^2/2) on
/// position adiabat (or diabat) `state`, normalized to unit trace-integral.
template <int N>
DensityField<N> init_wigner_field(const ModelSpec& m, const PhaseSpaceGrid& g, double x0, double p0, double sigma,
                                  int state, bool adiabatic_state) {
  g.validate();
  if (m.n_nuc != 1) throw DimensionError("QCLE grids are one-dimensional");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (state < 0 || state >= m.n_states) throw DimensionError("initial state out of range");
  auto shape = [&](double x, double p) {
    return std::exp(-2.0 * (x - x0) * (x - x0) / (sigma * sigma) - sigma * sigma * (p - p0) * (p - p0) / 2.0);
  };
  const double edge = std::max({shape(g.x_min, p0), shape(g.x_max, p0), shape(x0, g.p_min), shape(x0, g.p_max)});
  if (edge > 1e-12) throw ConfigError("initial Wigner field reaches the grid edge");
  DensityField<N> f;
  f.grid = g;
  f.basis = m.precondition;
  f.n_states = m.n_states;
  f.rho.assign(static_cast<std::size_t>(g.n_x) * g.n_p, zero_mat<N>(m.n_states));
  CMat<N> prev_u;
  double total = 0.0;
  for (int ix = 0; ix < g.n_x; ++ix) {
    NucVec r(1);
    r << g.x(ix);
    const CMat<N> b = local_operators<N>(m, r).basis;
    CVec<N> c;
    if (adiabatic_state) {
      const auto es = ix == 0 ? eigensystem<N>(eval_diabatic<N>(m, r))
                              : eigensystem<N>(eval_diabatic<N>(m, r), &prev_u);
      prev_u = es.U;
      c = b.adjoint() * es.U.col(state);
    } else {
      c = b.row(state).adjoint();
    }
    const CMat<N> proj = c * c.adjoint();
    for (int ip = 0; ip < g.n_p; ++ip) {
      const double w = shape(g.x(ix), g.p(ip));
      f.at(ix, ip) = w * proj;
      total += w;
    }
  }
  const double scale = 1.0 / (total * g.dx() * g.dp());
  for (auto& r : f.rho) r *= scale;
  return f;
}

/// Rows [x0, x1) with a per-row P range [lo, hi) where the RHS is evaluated.
struct GridWindow {
  int x0 = 0, x1 = 0;
  std::vector<int> lo, hi;  // indexed by row
};

inline GridWindow full_window(const PhaseSpaceGrid& g) {
  return {0, g.n_x, std::vector<int>(g.n_x, 0), std::vector<int>(g.n_x, g.n_p)};
}

/// Cells with |rho_jk| > threshold * max|rho_jk|, dilated by `margin` cells
/// in X and P.
template <int N>
GridWindow active_window(const DensityField<N>& f, double threshold, int margin) {
  const auto& g = f.grid;
  double peak = 0.0;
  for (const auto& r : f.rho) peak = std::max(peak, r.cwiseAbs().maxCoeff());
  const double cut = threshold * peak;
  std::vector<int> lo(g.n_x, g.n_p), hi(g.n_x, 0);
  for (int ix = 0; ix < g.n_x; ++ix)
    for (int ip = 0; ip < g.n_p; ++ip)
      if (f.at(ix, ip).cwiseAbs().maxCoeff() > cut) {
        lo[ix] = std::min(lo[ix], ip);
        hi[ix] = ip + 1;
      }
  GridWindow w{g.n_x, 0, std::vector<int>(g.n_x, 0), std::vector<int>(g.n_x, 0)};
  for (int ix = 0; ix < g.n_x; ++ix) {
    int a = g.n_p, b = 0;
    for (int j = std::max(0, ix - margin); j <= std::min(g.n_x - 1, ix + margin); ++j) {
      a = std::min(a, lo[j]);
      b = std::max(b, hi[j]);
    }
    if (b <= a) continue;
    w.lo[ix] = std::max(0, a - margin);
    w.hi[ix] = std::min(g.n_p, b + margin);
    w.x0 = std::min(w.x0, ix);
    w.x1 = ix + 1;
  }
  if (w.x1 == 0) return full_window(g);
  return w;
}

/// Evaluates the RHS inside `w`; values outside the grid count as zero.
template <int N>
void qcle_rhs(const QcleOperators<N>& o, const DensityField<N>& f, std::vector<CMat<N>>& out, const GridWindow& w,
              int threads = 1) {
  const auto& g = f.grid;
  const int n = f.n_states;
  if (out.size() != f.rho.size()) out.assign(f.rho.size(), zero_mat<N>(n));
  const double inv_dx = 1.0 / (12.0 * g.dx());
  const double inv_dp = 1.0 / (12.0 * g.dp());
  const CMat<N> zero = zero_mat<N>(n);
  const std::size_t np = static_cast<std::size_t>(g.n_p);
  parallel_for(
      static_cast<std::size_t>(w.x1 - w.x0),
      [&](std::size_t row) {
        const int ix = w.x0 + static_cast<int>(row);
        const CMat<N>* rows[5];
        for (int s = 0; s < 5; ++s) {
          const int j = ix + s - 2;
          rows[s] = j >= 0 && j < g.n_x ? f.rho.data() + j * np : nullptr;
        }
        const CMat<N>* here = rows[2];
        auto px = [&](int s, int ip) -> const CMat<N>& { return rows[s] ? rows[s][ip] : zero; };
        auto pp = [&](int ip) -> const CMat<N>& { return ip >= 0 && ip < g.n_p ? here[ip] : zero; };
        const CMat<N>& k0 = o.k0[ix];
        const CMat<N>& k1 = o.k1[ix];
        const CMat<N>& l = o.l[ix];
        const CMat<N>& g0 = o.g0[ix];
        const CMat<N>& g1 = o.g1[ix];
        CMat<N>* dst = out.data() + ix * np;
        CMat<N> dx(n, n), dp(n, n), k(n, n), gp(n, n), d(n, n);
        for (int ip = w.lo[ix]; ip < w.hi[ix]; ++ip) {
          const double p = g.p(ip);
          const CMat<N>& r = here[ip];
          dx.noalias() = (px(0, ip) - px(4, ip) + 8.0 * (px(3, ip) - px(1, ip))) * inv_dx;
          if (ip >= 2 && ip < g.n_p - 2)
            dp.noalias() = (here[ip - 2] - here[ip + 2] + 8.0 * (here[ip + 1] - here[ip - 1])) * inv_dp;
          else
            dp.noalias() = (pp(ip - 2) - pp(ip + 2) + 8.0 * (pp(ip + 1) - pp(ip - 1))) * inv_dp;
          k.noalias() = k0 + p * k1;
          d.noalias() = (-kI / kHbar) * (k * r);
          d.noalias() += (kI / kHbar) * (r * k);
          d.noalias() -= (p / o.mass) * dx;
          if (o.has_g1) {
            gp.noalias() = g0 + p * g1;
            d.noalias() += 0.5 * (gp * dp);
            d.noalias() += 0.5 * (dp * gp);
          } else {
            d.noalias() += 0.5 * (g0 * dp);
            d.noalias() += 0.5 * (dp * g0);
          }
          if (o.has_l) {
            d.noalias() -= 0.5 * (l * dx);
            d.noalias() -= 0.5 * (dx * l);
          }
          dst[ip] = d;
        }
      },
      threads);
}

/// Populations and channel splits of a field.
struct QcleObservables {
  double trace = 0.0;
  double energy = 0.0;
  double boundary = 0.0;
  std::vector<double> adiabat, diabat;
  std::vector<double> adiabat_transmitted, adiabat_reflected, diabat_transmitted, diabat_reflected;
};

template <int N>
QcleObservables qcle_observe(const QcleOperators<N>& o, const DensityField<N>& f) {
  const auto& g = f.grid;
  const int n = f.n_states;
  const double cell = g.dx() * g.dp();
  QcleObservables obs;
  obs.adiabat.assign(n, 0.0);
  obs.diabat = obs.adiabat_transmitted = obs.adiabat_reflected = obs.diabat_transmitted = obs.diabat_reflected =
      obs.adiabat;
  for (int ix = 0; ix < g.n_x; ++ix) {
    CMat<N> sum = zero_mat<N>(n);
    CMat<N> psum = zero_mat<N>(n);
    CMat<N> p2sum = zero_mat<N>(n);
    bool edge_x = ix < 2 || ix >= g.n_x - 2;
    for (int ip = 0; ip < g.n_p; ++ip) {
      const CMat<N>& r = f.at(ix, ip);
      const double p = g.p(ip);
      sum += r;
      psum += p * r;
      p2sum += p * p * r;
      if (edge_x || ip < 2 || ip >= g.n_p - 2) obs.boundary += std::abs(r.trace()) * cell;
    }
    const CMat<N> a = o.to_adiabat[ix] * sum * o.to_adiabat[ix].adjoint();
    const CMat<N> d = o.to_diabat[ix] * sum * o.to_diabat[ix].adjoint();
    const bool trans = g.x(ix) > 0.0;
    for (int s = 0; s < n; ++s) {
      const double pa = a(s, s).real() * cell;
      const double pd = d(s, s).real() * cell;
      obs.adiabat[s] += pa;
      obs.diabat[s] += pd;
      (trans ? obs.adiabat_transmitted : obs.adiabat_reflected)[s] += pa;
      (trans ? obs.diabat_transmitted : obs.diabat_reflected)[s] += pd;
    }
    obs.trace += sum.trace().real() * cell;
    obs.energy += ((o.e0[ix] * sum).trace().real() + (o.e1[ix] * psum).trace().real() +
                   p2sum.trace().real() / (2.0 * o.mass)) *
                  cell;
  }
  return obs;
}

struct QcleOptions {
  double dt = 0.2;
  double t_final = 0.0;
  double record_dt = 0.0;
  std::vector<double> snapshot_times;
  int snapshot_state = 0;  // adiabat whose density is dumped
  double window_threshold = 1e-12;
  int window_margin = 12;
  int window_every = 20;
  bool use_window = true;
  bool two_state_kernel = true;  // Pauli-vector kernel when n_states == 2
  int threads = 0;
};

/// Lower-adiabat (or `state`) density rho_ss(X, P) in the position-adiabatic basis.
template <int N>
Snapshot qcle_snapshot(const QcleOperators<N>& o, const DensityField<N>& f, double t, int state) {
  const auto& g = f.grid;
  Snapshot s;
  s.time = t;
  for (int ix = 0; ix < g.n_x; ++ix)
    for (int ip = 0; ip < g.n_p; ++ip) {
      const CMat<N> a = o.to_adiabat[ix] * f.at(ix, ip) * o.to_adiabat[ix].adjoint();
      s.x.push_back(g.x(ix));
      s.p.push_back(g.p(ip));
      s.value.push_back(a(state, state).real());
    }
  return s;
}

namespace detail {

// Two-state Hermitian matrices as a0 I + a.sigma, stored as 4 planes.
using Pauli = std::array<double, 4>;

template <int N>
Pauli to_pauli(const CMat<N>& m) {
  return {0.5 * (m(0, 0).real() + m(1, 1).real()), 0.5 * (m(0, 1).real() + m(1, 0).real()),
          0.5 * (m(1, 0).imag() - m(0, 1).imag()), 0.5 * (m(0, 0).real() - m(1, 1).real())};
}

template <int N>
CMat<N> from_pauli(double a0, double a1, double a2, double a3) {
  CMat<N> m = zero_mat<N>(2);
  m(0, 0) = a0 + a3;
  m(1, 1) = a0 - a3;
  m(0, 1) = cplx(a1, -a2);
  m(1, 0) = cplx(a1, a2);
  return m;
}

struct PauliField {
  int n_x = 0, n_p = 0;
  std::array<std::vector<double>, 4> c;
  [[nodiscard]] std::size_t index(int ix, int ip) const { return static_cast<std::size_t>(ix) * n_p + ip; }
};

template <int N>
PauliField to_pauli_field(const DensityField<N>& f) {
  PauliField out;
  out.n_x = f.grid.n_x;
  out.n_p = f.grid.n_p;
  for (auto& plane : out.c) plane.assign(f.rho.size(), 0.0);
  for (std::size_t i = 0; i < f.rho.size(); ++i) {
    const Pauli a = to_pauli<N>(f.rho[i]);
    for (int k = 0; k < 4; ++k) out.c[k][i] = a[k];
  }
  return out;
}

template <int N>
void from_pauli_field(const PauliField& pf, DensityField<N>& f) {
  for (std::size_t i = 0; i < f.rho.size(); ++i)
    f.rho[i] = from_pauli<N>(pf.c[0][i], pf.c[1][i], pf.c[2][i], pf.c[3][i]);
}

struct PauliOperators {
  double mass = 1.0;
  bool has_l = false;
  bool has_g1 = false;
  std::vector<Pauli> k0, k1, l, g0, g1;
};

template <int N>
PauliOperators to_pauli_operators(const QcleOperators<N>& o) {
  PauliOperators p;
  p.mass = o.mass;
  p.has_l = o.has_l;
  p.has_g1 = o.has_g1;
  for (std::size_t i = 0; i < o.k0.size(); ++i) {
    p.k0.push_back(to_pauli<N>(o.k0[i]));
    p.k1.push_back(to_pauli<N>(o.k1[i]));
    p.l.push_back(to_pauli<N>(o.l[i]));
    p.g0.push_back(to_pauli<N>(o.g0[i]));
    p.g1.push_back(to_pauli<N>(o.g1[i]));
  }
  return p;
}

inline GridWindow pauli_window(const PauliField& f, double threshold, int margin) {
  double peak = 0.0;
  for (const auto& plane : f.c)
    for (double v : plane) peak = std::max(peak, std::abs(v));
  const double cut = threshold * peak;
  std::vector<int> lo(f.n_x, f.n_p), hi(f.n_x, 0);
  for (int ix = 0; ix < f.n_x; ++ix)
    for (int ip = 0; ip < f.n_p; ++ip) {
      const std::size_t i = f.index(ix, ip);
      if (std::max({std::abs(f.c[0][i]), std::abs(f.c[1][i]), std::abs(f.c[2][i]), std::abs(f.c[3][i])}) > cut) {
        lo[ix] = std::min(lo[ix], ip);
        hi[ix] = ip + 1;
      }
    }
  GridWindow w{f.n_x, 0, std::vector<int>(f.n_x, 0), std::vector<int>(f.n_x, 0)};
  for (int ix = 0; ix < f.n_x; ++ix) {
    int a = f.n_p, b = 0;
    for (int j = std::max(0, ix - margin); j <= std::min(f.n_x - 1, ix + margin); ++j) {
      a = std::min(a, lo[j]);
      b = std::max(b, hi[j]);
    }
    if (b <= a) continue;
    w.lo[ix] = std::max(0, a - margin);
    w.hi[ix] = std::min(f.n_p, b + margin);
    w.x0 = std::min(w.x0, ix);
    w.x1 = ix + 1;
  }
  if (w.x1 == 0) {
    w.x0 = 0;
    w.x1 = f.n_x;
    std::fill(w.hi.begin(), w.hi.end(), f.n_p);
  }
  return w;
}

/// Two-state RHS: -i[K, r] = 2 (k x r).sigma, 1/2{A, B} = (a0 b0 + a.b) + (a0 b + b0 a).sigma.
inline void pauli_rhs(const PauliOperators& o, const PhaseSpaceGrid& g, const PauliField& f, PauliField& out,
                      const GridWindow& w, int threads) {
  if (out.n_x != f.n_x || out.n_p != f.n_p) {
    out.n_x = f.n_x;
    out.n_p = f.n_p;
    for (auto& plane : out.c) plane.assign(f.c[0].size(), 0.0);
  }
  const double inv_dx = 1.0 / (12.0 * g.dx());
  const double inv_dp = 1.0 / (12.0 * g.dp());
  const int np = f.n_p;
  parallel_for(
      static_cast<std::size_t>(w.x1 - w.x0),
      [&](std::size_t row) {
        const int ix = w.x0 + static_cast<int>(row);
        const int lo = w.lo[ix];
        const int hi = w.hi[ix];
        if (hi <= lo) return;
        std::array<std::vector<double>, 4> dx, dp;
        for (int k = 0; k < 4; ++k) {
          dx[k].assign(np, 0.0);
          dp[k].assign(np, 0.0);
          const double* rows[5];
          for (int s = 0; s < 5; ++s) {
            const int j = ix + s - 2;
            rows[s] = j >= 0 && j < f.n_x ? f.c[k].data() + f.index(j, 0) : nullptr;
          }
          for (int s : {0, 1, 3, 4}) {
            if (!rows[s]) continue;
            const double wgt = (s == 0 ? 1.0 : s == 1 ? -8.0 : s == 3 ? 8.0 : -1.0) * inv_dx;
            const double* src = rows[s];
            double* dst = dx[k].data();
            for (int ip = lo; ip < hi; ++ip) dst[ip] += wgt * src[ip];
          }
          const double* r = rows[2];
          double* dst = dp[k].data();
          auto at = [&](int ip) { return ip >= 0 && ip < np ? r[ip] : 0.0; };
          for (int ip = lo; ip < hi; ++ip) {
            if (ip >= 2 && ip < np - 2)
              dst[ip] = (r[ip - 2] - r[ip + 2] + 8.0 * (r[ip + 1] - r[ip - 1])) * inv_dp;
            else
              dst[ip] = (at(ip - 2) - at(ip + 2) + 8.0 * (at(ip + 1) - at(ip - 1))) * inv_dp;
          }
        }
        const Pauli& k0 = o.k0[ix];
        const Pauli& k1 = o.k1[ix];
        const Pauli& l = o.l[ix];
        const Pauli& g0 = o.g0[ix];
        const Pauli& g1 = o.g1[ix];
        const std::size_t base = f.index(ix, 0);
        const double* r1 = f.c[1].data() + base;
        const double* r2 = f.c[2].data() + base;
        const double* r3 = f.c[3].data() + base;
        double* o0 = out.c[0].data() + base;
        double* o1 = out.c[1].data() + base;
        double* o2 = out.c[2].data() + base;
        double* o3 = out.c[3].data() + base;
        const double inv_m = 1.0 / o.mass;
        const double two_hbar = 2.0 / kHbar;
        for (int ip = lo; ip < hi; ++ip) {
          const double p = g.p(ip);
          const double ka = k0[1] + p * k1[1], kb = k0[2] + p * k1[2], kc = k0[3] + p * k1[3];
          const double ga = g0[0] + p * g1[0], gb = g0[1] + p * g1[1], gc = g0[2] + p * g1[2],
                       gd = g0[3] + p * g1[3];
          const double x0 = dx[0][ip], x1 = dx[1][ip], x2 = dx[2][ip], x3 = dx[3][ip];
          const double q0 = dp[0][ip], q1 = dp[1][ip], q2 = dp[2][ip], q3 = dp[3][ip];
          const double v = p * inv_m;
          double d0 = -v * x0 + ga * q0 + gb * q1 + gc * q2 + gd * q3;
          double d1 = two_hbar * (kb * r3[ip] - kc * r2[ip]) - v * x1 + ga * q1 + q0 * gb;
          double d2 = two_hbar * (kc * r1[ip] - ka * r3[ip]) - v * x2 + ga * q2 + q0 * gc;
          double d3 = two_hbar * (ka * r2[ip] - kb * r1[ip]) - v * x3 + ga * q3 + q0 * gd;
          if (o.has_l) {
            d0 -= l[0] * x0 + l[1] * x1 + l[2] * x2 + l[3] * x3;
            d1 -= l[0] * x1 + x0 * l[1];
            d2 -= l[0] * x2 + x0 * l[2];
            d3 -= l[0] * x3 + x0 * l[3];
          }
          o0[ip] = d0;
          o1[ip] = d1;
          o2[ip] = d2;
          o3[ip] = d3;
        }
      },
      threads);
}

}  // namespace detail

/// Explicit-midpoint (RK2) propagation with Hermitian symmetrization.
template <int N>
RunRecord propagate_qcle(const ModelSpec& m, QcleVariant v, DensityField<N>& f, const QcleOptions& opt) {
  if (!(opt.dt > 0.0)) throw ConfigError("dt must be positive");
  if (opt.t_final < 0.0) throw ConfigError("t_final must be non-negative");
  if (f.basis != m.precondition) throw ConfigError("field basis does not match the model's preconditioning");
  const auto o = build_qcle_operators<N>(m, f.grid, v);
  const auto& g = f.grid;
  const int n = f.n_states;
  const int threads = opt.threads > 0 ? opt.threads : worker_count();
  const double pmax = std::max(std::abs(g.p_min), std::abs(g.p_max));
  const bool cfl_ok = opt.dt * pmax / m.mass < g.dx();
  const long total = static_cast<long>(std::llround(opt.t_final / opt.dt));
  const long every = opt.record_dt > 0.0 ? std::max(1L, static_cast<long>(std::llround(opt.record_dt / opt.dt)))
                                          : std::max(total, 1L);
  std::vector<long> snap_steps;
  for (double t : opt.snapshot_times) {
    if (t < 0.0 || t > opt.t_final + 1e-9) throw ConfigError("snapshot time outside [0, t_final]");
    snap_steps.push_back(static_cast<long>(std::llround(t / opt.dt)));
  }

  RunRecord rec;
  for (int s = 0; s < n; ++s) rec.columns.push_back("pop_surface_" + std::to_string(s));
  for (int s = 0; s < n; ++s) rec.columns.push_back("pop_diabat_" + std::to_string(s));
  rec.columns.push_back("trace");
  rec.columns.push_back("energy");
  rec.series.assign(2 * n + 2, {});
  QcleObservables first = qcle_observe<N>(o, f);
  QcleObservables last = first;
  double trace_dev = 0.0;
  double energy_dev = 0.0;
  double boundary = 0.0;
  auto record = [&](long k) {
    last = qcle_observe<N>(o, f);
    rec.times.push_back(k * opt.dt);
    for (int s = 0; s < n; ++s) {
      rec.series[s].push_back(last.adiabat[s]);
      rec.series[n + s].push_back(last.diabat[s]);
    }
    rec.series[2 * n].push_back(last.trace);
    rec.series[2 * n + 1].push_back(last.energy);
    trace_dev = std::max(trace_dev, std::abs(last.trace - first.trace) / std::abs(first.trace));
    energy_dev = std::max(energy_dev, std::abs(last.energy - first.energy) / std::max(std::abs(first.energy), 1e-300));
    boundary = std::max(boundary, last.boundary / std::abs(first.trace));
  };
  auto snap = [&](long k) {
    for (long s : snap_steps)
      if (s == k) rec.snapshots.push_back(qcle_snapshot<N>(o, f, k * opt.dt, opt.snapshot_state));
  };
  record(0);
  snap(0);

  const bool pauli = n == 2 && opt.two_state_kernel;
  std::vector<CMat<N>> k1;
  std::vector<CMat<N>> k2;
  DensityField<N> mid;
  detail::PauliField pf, pmid, pk1, pk2;
  detail::PauliOperators po;
  GridWindow w;
  auto refresh_window = [&] {
    if (!opt.use_window)
      w = full_window(g);
    else
      w = pauli ? detail::pauli_window(pf, opt.window_threshold, opt.window_margin)
                : active_window(f, opt.window_threshold, opt.window_margin);
  };
  if (pauli) {
    pf = detail::to_pauli_field<N>(f);
    pmid = pf;
    po = detail::to_pauli_operators<N>(o);
  } else {
    mid = f;
  }
  refresh_window();
  auto step_generic = [&] {
    qcle_rhs<N>(o, f, k1, w, threads);
    for (int ix = w.x0; ix < w.x1; ++ix)
      for (int ip = w.lo[ix]; ip < w.hi[ix]; ++ip) {
        const std::size_t i = static_cast<std::size_t>(ix) * g.n_p + ip;
        mid.rho[i] = f.rho[i] + 0.5 * opt.dt * k1[i];
      }
    qcle_rhs<N>(o, mid, k2, w, threads);
    for (int ix = w.x0; ix < w.x1; ++ix)
      for (int ip = w.lo[ix]; ip < w.hi[ix]; ++ip) {
        const std::size_t i = static_cast<std::size_t>(ix) * g.n_p + ip;
        const CMat<N> next = f.rho[i] + opt.dt * k2[i];
        f.rho[i] = hermitian_part<N>(next);
        mid.rho[i] = f.rho[i];
      }
  };
  auto step_pauli = [&] {
    detail::pauli_rhs(po, g, pf, pk1, w, threads);
    for (int c = 0; c < 4; ++c)
      for (int ix = w.x0; ix < w.x1; ++ix)
        for (int ip = w.lo[ix]; ip < w.hi[ix]; ++ip) {
          const std::size_t i = pf.index(ix, ip);
          pmid.c[c][i] = pf.c[c][i] + 0.5 * opt.dt * pk1.c[c][i];
        }
    detail::pauli_rhs(po, g, pmid, pk2, w, threads);
    for (int c = 0; c < 4; ++c)
      for (int ix = w.x0; ix < w.x1; ++ix)
        for (int ip = w.lo[ix]; ip < w.hi[ix]; ++ip) {
          const std::size_t i = pf.index(ix, ip);
          pf.c[c][i] += opt.dt * pk2.c[c][i];
          pmid.c[c][i] = pf.c[c][i];
        }
  };
  bool aborted = false;
  std::string abort_reason;
  for (long step = 1; step <= total; ++step) {
    if (opt.use_window && step % opt.window_every == 0) refresh_window();
    if (pauli)
      step_pauli();
    else
      step_generic();
    const bool wants_snap = std::find(snap_steps.begin(), snap_steps.end(), step) != snap_steps.end();
    if (pauli && (step % every == 0 || step == total || wants_snap)) detail::from_pauli_field<N>(pf, f);
    if (step % every == 0 || step == total) {
      record(step);
      if (trace_dev > 0.01) {
        aborted = true;
        abort_reason = "trace drift above 1% at t=" + format_double(step * opt.dt);
        break;
      }
    }
    snap(step);
  }
  for (int s = 0; s < n; ++s) {
    const std::string sn = std::to_string(s);
    rec.channels.push_back({"transmitted", "surface_" + sn, last.adiabat_transmitted[s], 0.0});
    rec.channels.push_back({"reflected", "surface_" + sn, last.adiabat_reflected[s], 0.0});
    rec.channels.push_back({"transmitted", "diabat_" + sn, last.diabat_transmitted[s], 0.0});
    rec.channels.push_back({"reflected", "diabat_" + sn, last.diabat_reflected[s], 0.0});
  }
  rec.diagnostics["variant"] = to_string(v);
  rec.diagnostics["basis"] = to_string(m.precondition);
  rec.diagnostics["max_relative_trace_deviation"] = trace_dev;
  rec.diagnostics["max_relative_energy_deviation"] = energy_dev;
  rec.diagnostics["max_boundary_mass"] = boundary;
  rec.diagnostics["boundary_alarm"] = boundary > 1e-6;
  rec.diagnostics["cfl_ok"] = cfl_ok;
  rec.diagnostics["aborted"] = aborted;
  if (aborted) {
    rec.diagnostics["abort_reason"] = abort_reason;
    throw PartialRunError(abort_reason, std::move(rec));
  }
  return rec;
}

}  // namespace phasehop

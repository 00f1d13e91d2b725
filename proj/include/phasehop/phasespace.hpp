#pragma once

// Phase-space Hamiltonian H_W(R,P) = h_W(R) + (P - i hbar D_W)^2 / 2M, its
// eigenbasis (phase-space adiabats) and the couplings built on top of it.

#include "phasehop/linalg.hpp"
#include "phasehop/models.hpp"
#include "phasehop/types.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace phasehop {

inline constexpr double kCouplingDegeneracy = 1e-10;
inline constexpr double kGaugeTieThreshold = 1e-12;
inline constexpr double kCurvatureStep = 1e-4;

/// H_W and its exact first derivatives, all in the preconditioned basis.
template <int N>
struct HwDerivatives {
  CMat<N> H;
  DofMats<N> dR;  // dH_W/dR_a
  DofMats<N> dP;  // dH_W/dP_a = (P_a - i hbar D_a)/M
};

template <int N>
CMat<N> kinetic_factor(const LocalOperators<N>& ops, const NucVec& p, int a) {
  CMat<N> k = -kI * kHbar * ops.D[a];
  for (Eigen::Index i = 0; i < k.rows(); ++i) k(i, i) += p(a);
  return k;
}

template <int N>
HwDerivatives<N> hw_derivatives(const LocalOperators<N>& ops, const NucVec& p, double mass) {
  const int nn = static_cast<int>(p.size());
  const auto n = ops.h.rows();
  HwDerivatives<N> out;
  out.H = ops.h;
  out.dR = DofMats<N>(nn, zero_mat<N>(static_cast<int>(n)));
  out.dP = DofMats<N>(nn, zero_mat<N>(static_cast<int>(n)));
  DofMats<N> k(nn, zero_mat<N>(static_cast<int>(n)));
  for (int b = 0; b < nn; ++b) {
    k[b] = kinetic_factor<N>(ops, p, b);
    out.H += k[b] * k[b] / (2.0 * mass);
    out.dP[b] = k[b] / mass;
  }
  for (int a = 0; a < nn; ++a) {
    out.dR[a] = ops.dh[a];
    for (int b = 0; b < nn; ++b) {
      const CMat<N> dk = -kI * kHbar * ops.dD[a][b];
      out.dR[a] += anticommutator<N>(k[b], dk) / (2.0 * mass);
    }
  }
  return out;
}

template <int N>
CMat<N> build_hw(const ModelSpec& m, const NucVec& r, const NucVec& p) {
  if (p.size() != m.n_nuc) throw DimensionError("momentum has wrong length");
  return hw_derivatives<N>(local_operators<N>(m, r), p, m.mass).H;
}

template <int N>
struct Eigensystem {
  RVec<N> E;
  CMat<N> U;
  bool gauge_warning = false;
};

namespace detail {

template <int N>
void fix_phase_largest_component(CMat<N>& u) {
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    Eigen::Index imax = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double v = std::abs(u(i, k));
      if (v > best + 1e-14) {  // first index wins ties
        best = v;
        imax = i;
      }
    }
    const cplx z = u(imax, k);
    if (std::abs(z) > 0.0) u.col(k) *= std::conj(z) / std::abs(z);
  }
}

// Makes component `anchor[k]` of column k real-positive.
template <int N>
void fix_phase_anchor(CMat<N>& u, const std::vector<Eigen::Index>& anchor) {
  for (Eigen::Index k = 0; k < u.cols(); ++k) {
    const cplx z = u(anchor[k], k);
    if (std::abs(z) > 0.0) u.col(k) *= std::conj(z) / std::abs(z);
  }
}

template <int N>
std::vector<Eigen::Index> largest_components(const CMat<N>& u) {
  std::vector<Eigen::Index> out(u.cols());
  for (Eigen::Index k = 0; k < u.cols(); ++k) u.col(k).cwiseAbs().maxCoeff(&out[k]);
  return out;
}

}  // namespace detail

/// Eigen-decomposition with gauge fixing. With `prev`, columns follow the
/// maximal overlap with prev and each overlap is made real-positive;
/// otherwise the largest component of every column is real-positive.
template <int N>
Eigensystem<N> eigensystem(const CMat<N>& h, const CMat<N>* prev = nullptr) {
  auto eig = hermitian_eigen<N>(h);
  const auto n = h.rows();
  Eigensystem<N> out;
  for (Eigen::Index k = 0; k + 1 < n; ++k) {
    if (eig.values(k + 1) - eig.values(k) < kGaugeTieThreshold) out.gauge_warning = true;
  }
  if (!prev) {
    detail::fix_phase_largest_component<N>(eig.vectors);
    out.E = eig.values;
    out.U = eig.vectors;
    return out;
  }
  const CMat<N> overlap = prev->adjoint() * eig.vectors;  // (old, new)
  std::vector<int> assigned(n, -1);                      // old index -> new column
  std::vector<bool> used(n, false);
  for (Eigen::Index round = 0; round < n; ++round) {
    double best = -1.0;
    Eigen::Index bi = 0;
    Eigen::Index bj = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (assigned[i] >= 0) continue;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (used[j]) continue;
        const double v = std::abs(overlap(i, j));
        if (v > best) {
          best = v;
          bi = i;
          bj = j;
        }
      }
    }
    assigned[bi] = static_cast<int>(bj);
    used[bj] = true;
  }
  out.E.resize(n);
  out.U.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int j = assigned[i];
    const cplx z = overlap(i, j);
    out.U.col(i) = eig.vectors.col(j);
    if (std::abs(z) > 0.0) out.U.col(i) *= std::conj(z) / std::abs(z);
    out.E(i) = eig.values(j);
  }
  return out;
}

/// Per-(R,P) eigendata. `Dad` is D_W rotated into the phase-space adiabats;
/// `basis` maps preconditioned-basis vectors back to diabats.
template <int N>
struct PhaseSpaceFrame {
  NucVec R;
  NucVec P;
  RVec<N> E;
  CMat<N> U;
  DofMats<N> d;
  DofMats<N> tau;
  DofMats<N> F;
  DofMats<N> gradP_H;
  DofMats<N> Dad;
  CMat<N> basis;
  bool gauge_warning = false;
};

template <int N>
struct Couplings {
  DofMats<N> d;
  DofMats<N> tau;
  DofMats<N> F;
  DofMats<N> gradP_H;
};

/// Off-diagonal couplings by Hellmann-Feynman. Diagonals are left zero
/// (parallel transport) unless `with_diagonals`, in which case they come
/// from differenced eigenvectors in the anchored gauge.
template <int N>
Couplings<N> couplings(const ModelSpec& m, const NucVec& r, const NucVec& p, const RVec<N>& e,
                       const CMat<N>& u, bool with_diagonals = false);

namespace detail {

template <int N>
Couplings<N> project_couplings(const HwDerivatives<N>& hw, const RVec<N>& e, const CMat<N>& u,
                               int nn) {
  const auto n = e.size();
  Couplings<N> c;
  c.d = DofMats<N>(nn, zero_mat<N>(static_cast<int>(n)));
  c.tau = c.d;
  c.F = c.d;
  c.gradP_H = c.d;
  for (int a = 0; a < nn; ++a) {
    const CMat<N> gr = u.adjoint() * hw.dR[a] * u;
    const CMat<N> gp = u.adjoint() * hw.dP[a] * u;
    c.F[a] = -gr;
    c.gradP_H[a] = gp;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double gap = e(j) - e(i);
        if (std::abs(gap) < kCouplingDegeneracy) {
          throw DegeneracyError("coupling requested between degenerate phase-space adiabats " +
                                    std::to_string(i) + " and " + std::to_string(j),
                                static_cast<int>(i), static_cast<int>(j));
        }
        c.d[a](i, j) = gr(i, j) / gap;
        c.tau[a](i, j) = gp(i, j) / gap;
      }
    }
  }
  return c;
}

template <int N>
CMat<N> anchored_vectors(const ModelSpec& m, const NucVec& r, const NucVec& p,
                         const std::vector<Eigen::Index>& anchor) {
  auto eig = hermitian_eigen<N>(build_hw<N>(m, r, p));
  fix_phase_anchor<N>(eig.vectors, anchor);
  return eig.vectors;
}

// <n|d n> along R_a (or P_a if `momentum`) in the anchored gauge.
template <int N>
RVec<N> diagonal_coupling(const ModelSpec& m, const NucVec& r, const NucVec& p, int a,
                          bool momentum, const std::vector<Eigen::Index>& anchor) {
  const CMat<N> u0 = anchored_vectors<N>(m, r, p, anchor);
  NucVec rp = r;
  NucVec rm = r;
  NucVec pp = p;
  NucVec pm = p;
  if (momentum) {
    pp(a) += kFiniteDifferenceStep;
    pm(a) -= kFiniteDifferenceStep;
  } else {
    rp(a) += kFiniteDifferenceStep;
    rm(a) -= kFiniteDifferenceStep;
  }
  const CMat<N> up = anchored_vectors<N>(m, rp, pp, anchor);
  const CMat<N> um = anchored_vectors<N>(m, rm, pm, anchor);
  const auto n = u0.cols();
  RVec<N> out(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    // normalization makes <n|dn> purely imaginary
    const cplx v = u0.col(k).dot(up.col(k) - um.col(k)) / (2.0 * kFiniteDifferenceStep);
    out(k) = v.imag();
  }
  return out;
}

}  // namespace detail

template <int N>
Couplings<N> couplings(const ModelSpec& m, const NucVec& r, const NucVec& p, const RVec<N>& e,
                       const CMat<N>& u, bool with_diagonals) {
  const auto ops = local_operators<N>(m, r);
  const auto hw = hw_derivatives<N>(ops, p, m.mass);
  auto c = detail::project_couplings<N>(hw, e, u, m.n_nuc);
  if (with_diagonals) {
    const auto anchor = detail::largest_components<N>(u);
    for (int a = 0; a < m.n_nuc; ++a) {
      const auto dr = detail::diagonal_coupling<N>(m, r, p, a, false, anchor);
      const auto dp = detail::diagonal_coupling<N>(m, r, p, a, true, anchor);
      for (Eigen::Index k = 0; k < e.size(); ++k) {
        c.d[a](k, k) = cplx(0.0, dr(k));
        c.tau[a](k, k) = cplx(0.0, dp(k));
      }
    }
  }
  return c;
}

template <int N>
PhaseSpaceFrame<N> make_frame(const ModelSpec& m, const NucVec& r, const NucVec& p,
                              const PhaseSpaceFrame<N>* prev = nullptr,
                              bool with_diagonals = false) {
  if (p.size() != m.n_nuc) throw DimensionError("momentum has wrong length");
  const auto ops = local_operators<N>(m, r);
  const auto hw = hw_derivatives<N>(ops, p, m.mass);
  const auto es = eigensystem<N>(hw.H, prev ? &prev->U : nullptr);
  PhaseSpaceFrame<N> f;
  f.R = r;
  f.P = p;
  f.E = es.E;
  f.U = es.U;
  f.gauge_warning = es.gauge_warning;
  f.basis = ops.basis;
  auto c = with_diagonals ? couplings<N>(m, r, p, es.E, es.U, true)
                          : detail::project_couplings<N>(hw, es.E, es.U, m.n_nuc);
  f.d = std::move(c.d);
  f.tau = std::move(c.tau);
  f.F = std::move(c.F);
  f.gradP_H = std::move(c.gradP_H);
  f.Dad = DofMats<N>(m.n_nuc, zero_mat<N>(m.n_states));
  for (int a = 0; a < m.n_nuc; ++a) f.Dad[a] = es.U.adjoint() * ops.D[a] * es.U;
  return f;
}

/// Energy of phase-space adiabat n and the diagonal vector potential
/// A_n = i hbar (U^dag D_W U)_nn; both are gauge invariant.
struct SurfaceScalars {
  double energy = 0.0;
  NucVec vector_potential;
};

template <int N>
SurfaceScalars surface_scalars(const ModelSpec& m, const NucVec& r, const NucVec& p, int n) {
  const auto ops = local_operators<N>(m, r);
  const CMat<N> h = hw_derivatives<N>(ops, p, m.mass).H;
  const auto eig = hermitian_eigen<N>(h);
  SurfaceScalars s;
  s.energy = eig.values(n);
  s.vector_potential = NucVec::Zero(m.n_nuc);
  for (int a = 0; a < m.n_nuc; ++a) {
    const cplx dnn = eig.vectors.col(n).dot(ops.D[a] * eig.vectors.col(n));
    s.vector_potential(a) = (kI * kHbar * dnn).real();
  }
  return s;
}

namespace detail {

template <int N>
void require_isolated(const ModelSpec& m, const NucVec& r, const NucVec& p, int n) {
  const auto e = hermitian_eigen<N>(build_hw<N>(m, r, p)).values;
  for (Eigen::Index k = 0; k < e.size(); ++k) {
    if (k != n && std::abs(e(k) - e(n)) < kCouplingDegeneracy) {
      throw DegeneracyError("state " + std::to_string(n) + " is degenerate on the curvature stencil",
                            n, static_cast<int>(k));
    }
  }
}

// Total diagonal connection d_nn + (U^dag D_W U)_nn (imaginary part) along
// each dof, in the anchored gauge. With component k of state n held real,
// Im d_nn = -Im(sum_{m != n} U_km d_mn) / U_kn, which needs only the
// Hellmann-Feynman off-diagonals and avoids a nested difference.
template <int N>
NucVec total_connection(const ModelSpec& m, const NucVec& r, const NucVec& p, int n,
                        const std::vector<Eigen::Index>& anchor) {
  require_isolated<N>(m, r, p, n);
  const auto ops = local_operators<N>(m, r);
  const auto hw = hw_derivatives<N>(ops, p, m.mass);
  auto eig = hermitian_eigen<N>(hw.H);
  fix_phase_anchor<N>(eig.vectors, anchor);
  const CMat<N>& u = eig.vectors;
  const Eigen::Index k = anchor[n];
  NucVec out(m.n_nuc);
  for (int a = 0; a < m.n_nuc; ++a) {
    const CVec<N> column = u.adjoint() * (hw.dR[a] * u.col(n));
    cplx sum = 0.0;
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
      if (j == n) continue;
      sum += u(k, j) * column(j) / (eig.values(n) - eig.values(j));
    }
    const double dnn = -sum.imag() / u(k, n).real();
    const double big_d = u.col(n).dot(ops.D[a] * u.col(n)).imag();
    out(a) = dnn + big_d;
  }
  return out;
}

}  // namespace detail

/// B^{ab}_nn = i hbar (curl of the total diagonal connection), a real
/// antisymmetric n_nuc x n_nuc matrix.
template <int N>
NucMat berry_curvature(const ModelSpec& m, const NucVec& r, const NucVec& p, int n) {
  if (n < 0 || n >= m.n_states) throw DimensionError("state index out of range");
  const auto u0 = eigensystem<N>(build_hw<N>(m, r, p)).U;
  const auto anchor = detail::largest_components<N>(u0);
  const int nn = m.n_nuc;
  NucMat grad(nn, nn);  // grad(a, b) = d_a A_b (imaginary parts)
  for (int a = 0; a < nn; ++a) {
    NucVec rp = r;
    NucVec rm = r;
    rp(a) += kCurvatureStep;
    rm(a) -= kCurvatureStep;
    const NucVec cp = detail::total_connection<N>(m, rp, p, n, anchor);
    const NucVec cm = detail::total_connection<N>(m, rm, p, n, anchor);
    for (int b = 0; b < nn; ++b) grad(a, b) = (cp(b) - cm(b)) / (2.0 * kCurvatureStep);
  }
  NucMat b(nn, nn);
  for (int a = 0; a < nn; ++a) {
    for (int c = 0; c < nn; ++c) {
      // i hbar * (i * imaginary curl) is real
      b(a, c) = -kHbar * (grad(a, c) - grad(c, a));
    }
  }
  return b;
}

/// One stored point of a fixed-surface trajectory.
struct SegmentSample {
  double t = 0.0;
  NucVec R;
  NucVec P;
};

/// Max over interior samples of |d(M Rdot)/dt - f| with
/// f_a = -d_a V + Rdot_b (d_a A_b - d_b A_a) - Pdot_b dA_a/dP_b,
/// where A is the diagonal vector potential and V = E_n - (P - A)^2/2M.
/// Rdot and Pdot are Hamilton's equations for E_n; d/dt is a central
/// difference on the samples.
template <int N>
double lorentz_force_check(const ModelSpec& m, const std::vector<SegmentSample>& seg, int n) {
  if (seg.size() < 3) throw Error("Lorentz check needs at least three samples");
  const int nn = m.n_nuc;
  const double h = kFiniteDifferenceStep;
  auto potential = [&](const NucVec& r, const NucVec& p) {
    const auto s = surface_scalars<N>(m, r, p, n);
    return s.energy - (p - s.vector_potential).squaredNorm() / (2.0 * m.mass);
  };
  auto velocity = [&](const NucVec& r, const NucVec& p) {
    const auto s = surface_scalars<N>(m, r, p, n);
    return NucVec((p - s.vector_potential) / m.mass);
  };
  auto energy_gradient_r = [&](const NucVec& r, const NucVec& p) {
    NucVec g(nn);
    for (int a = 0; a < nn; ++a) {
      NucVec rp = r;
      NucVec rm = r;
      rp(a) += h;
      rm(a) -= h;
      g(a) = (surface_scalars<N>(m, rp, p, n).energy - surface_scalars<N>(m, rm, p, n).energy) /
             (2.0 * h);
    }
    return g;
  };

  double worst = 0.0;
  for (std::size_t i = 1; i + 1 < seg.size(); ++i) {
    const auto& s = seg[i];
    const double dt2 = seg[i + 1].t - seg[i - 1].t;
    const NucVec lhs =
        m.mass * (velocity(seg[i + 1].R, seg[i + 1].P) - velocity(seg[i - 1].R, seg[i - 1].P)) / dt2;
    const NucVec rdot = velocity(s.R, s.P);
    const NucVec pdot = -energy_gradient_r(s.R, s.P);
    NucMat da(nn, nn);  // da(a, b) = d_{R_a} A_b
    NucMat dpa(nn, nn);  // dpa(b, a) = d_{P_b} A_a
    NucVec dv(nn);
    for (int a = 0; a < nn; ++a) {
      NucVec rp = s.R;
      NucVec rm = s.R;
      rp(a) += h;
      rm(a) -= h;
      dv(a) = (potential(rp, s.P) - potential(rm, s.P)) / (2.0 * h);
      const NucVec ap = surface_scalars<N>(m, rp, s.P, n).vector_potential;
      const NucVec am = surface_scalars<N>(m, rm, s.P, n).vector_potential;
      da.row(a) = ((ap - am) / (2.0 * h)).transpose();
      NucVec pp = s.P;
      NucVec pm = s.P;
      pp(a) += h;
      pm(a) -= h;
      const NucVec bp = surface_scalars<N>(m, s.R, pp, n).vector_potential;
      const NucVec bm = surface_scalars<N>(m, s.R, pm, n).vector_potential;
      dpa.row(a) = ((bp - bm) / (2.0 * h)).transpose();
    }
    NucVec f = -dv;
    for (int a = 0; a < nn; ++a) {
      for (int b = 0; b < nn; ++b) {
        f(a) += rdot(b) * (da(a, b) - da(b, a)) - pdot(b) * dpa(b, a);
      }
    }
    worst = std::max(worst, (lhs - f).cwiseAbs().maxCoeff());
  }
  return worst;
}

}  // namespace phasehop

#pragma once

#include "phasehop/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace phasehop {

template <int N>
struct EigenPair {
  RVec<N> values;   // ascending
  CMat<N> vectors;  // columns
};

namespace detail {

// Closed-form decomposition of [[a, b], [conj(b), d]].
template <int N>
EigenPair<N> hermitian_eigen_2x2(const CMat<N>& h) {
  const double a = h(0, 0).real();
  const double d = h(1, 1).real();
  const cplx b = 0.5 * (h(0, 1) + std::conj(h(1, 0)));
  const double mean = 0.5 * (a + d);
  const double half = 0.5 * (a - d);
  const double babs = std::abs(b);
  const double radius = std::hypot(half, babs);
  const double mix = std::atan2(babs, half);
  const cplx phase = babs > 0.0 ? b / babs : cplx{1.0, 0.0};
  const double c = std::cos(0.5 * mix);
  const double s = std::sin(0.5 * mix);

  EigenPair<N> out;
  out.values.resize(2);
  out.vectors.resize(2, 2);
  out.values(0) = mean - radius;
  out.values(1) = mean + radius;
  out.vectors(0, 0) = -s * phase;
  out.vectors(1, 0) = c;
  out.vectors(0, 1) = c * phase;
  out.vectors(1, 1) = s;
  return out;
}

}  // namespace detail

template <int N>
EigenPair<N> hermitian_eigen(const CMat<N>& h) {
  if (h.rows() == 2) return detail::hermitian_eigen_2x2<N>(h);
  Eigen::SelfAdjointEigenSolver<CMat<N>> solver(h);
  if (solver.info() != Eigen::Success) throw Error("hermitian eigensolver failed");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

// exp(-i h t) for Hermitian h.
template <int N>
CMat<N> expm_hermitian(const CMat<N>& h, double t) {
  const auto n = h.rows();
  if (n == 2) {
    const double mean = 0.5 * (h(0, 0).real() + h(1, 1).real());
    CMat<N> traceless = h;
    traceless(0, 0) -= mean;
    traceless(1, 1) -= mean;
    const double half = traceless(0, 0).real();
    const double radius = std::hypot(half, std::abs(h(0, 1)));
    const double angle = radius * t;
    // sin(x)/x written to stay exact near zero
    const double sinc = radius > 0.0 ? std::sin(angle) / radius : t;
    CMat<N> out = std::cos(angle) * identity_mat<N>(2) - kI * sinc * traceless;
    return std::exp(-kI * mean * t) * out;
  }
  const auto eig = hermitian_eigen<N>(h);
  CVec<N> phases(n);
  for (Eigen::Index k = 0; k < n; ++k) phases(k) = std::exp(-kI * eig.values(k) * t);
  return eig.vectors * phases.asDiagonal() * eig.vectors.adjoint();
}

template <class M>
double max_abs(const M& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

template <class M>
double hermiticity_error(const M& m) {
  return max_abs(m - m.adjoint());
}

template <class M>
double antihermiticity_error(const M& m) {
  return max_abs(m + m.adjoint());
}

template <int N>
CMat<N> hermitian_part(const CMat<N>& m) {
  return 0.5 * (m + m.adjoint());
}

template <int N>
CMat<N> commutator(const CMat<N>& a, const CMat<N>& b) {
  return a * b - b * a;
}

template <int N>
CMat<N> anticommutator(const CMat<N>& a, const CMat<N>& b) {
  return a * b + b * a;
}

}  // namespace phasehop

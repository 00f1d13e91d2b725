#pragma once

// Model Hamiltonians, their analytic gradients, and the preconditioning
// (diabatic, pseudo-diabatic, adiabatic) that fixes the basis in which the
// Hamiltonian is Wigner transformed.

#include "phasehop/linalg.hpp"
#include "phasehop/types.hpp"

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace phasehop {

enum class ModelKind { shenvi2, complex2, st4, st4_rotated, shenvi2_offdiag, custom };
enum class Precondition { diabatic, pseudodiabatic, adiabatic };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::shenvi2: return "shenvi2";
    case ModelKind::complex2: return "complex2";
    case ModelKind::st4: return "st4";
    case ModelKind::st4_rotated: return "st4_rotated";
    case ModelKind::shenvi2_offdiag: return "shenvi2_offdiag";
    case ModelKind::custom: return "custom";
  }
  return "?";
}

inline std::string to_string(Precondition p) {
  switch (p) {
    case Precondition::diabatic: return "diabatic";
    case Precondition::pseudodiabatic: return "pseudodiabatic";
    case Precondition::adiabatic: return "adiabatic";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  for (auto k : {ModelKind::shenvi2, ModelKind::complex2, ModelKind::st4, ModelKind::st4_rotated,
                 ModelKind::shenvi2_offdiag, ModelKind::custom}) {
    if (to_string(k) == s) return k;
  }
  throw ModelError("unknown model kind '" + s + "'");
}

inline Precondition parse_precondition(const std::string& s) {
  for (auto p : {Precondition::diabatic, Precondition::pseudodiabatic, Precondition::adiabatic}) {
    if (to_string(p) == s) return p;
  }
  throw ModelError("unknown precondition '" + s + "'");
}

/// Closures backing a user-defined model. Only `h` is mandatory; missing
/// gradients fall back to central differences with step 1e-5 a.u.
struct CustomModel {
  std::function<Eigen::MatrixXcd(const NucVec&)> h;
  std::function<std::vector<Eigen::MatrixXcd>(const NucVec&)> dh;
  std::function<Eigen::VectorXd(const NucVec&)> phi;
  std::function<Eigen::MatrixXd(const NucVec&)> grad_phi;  // n_states x n_nuc
};

struct ModelSpec {
  ModelKind kind = ModelKind::shenvi2;
  int n_states = 2;
  int n_nuc = 1;
  double mass = 2000.0;
  std::map<std::string, double, std::less<>> params;
  Precondition precondition = Precondition::diabatic;
  std::shared_ptr<const CustomModel> custom;

  [[nodiscard]] double param(std::string_view name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ModelError("model parameter '" + std::string(name) + "' not set");
    return it->second;
  }
};

inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kDegeneracyThreshold = 1e-10;

inline std::map<std::string, double, std::less<>> default_params(ModelKind kind) {
  switch (kind) {
    case ModelKind::shenvi2:
    case ModelKind::shenvi2_offdiag:
      return {{"A", 0.005}, {"C", 5.5}, {"D", 0.8}, {"mass", 2000.0}};
    case ModelKind::complex2:
    case ModelKind::st4:
    case ModelKind::st4_rotated:
      return {{"A", 0.02}, {"B", 3.0}, {"W", 5.0}, {"mass", 1000.0}};
    case ModelKind::custom:
      return {{"mass", 2000.0}};
  }
  return {};
}

/// Builds a built-in model; `overrides` may only name known parameters.
inline ModelSpec make_model(ModelKind kind, const std::map<std::string, double>& overrides = {},
                            Precondition precondition = Precondition::diabatic) {
  if (kind == ModelKind::custom) throw ModelError("custom models are built with make_custom_model");
  ModelSpec m;
  m.kind = kind;
  m.params = default_params(kind);
  for (const auto& [name, value] : overrides) {
    if (!m.params.count(name)) {
      throw ModelError("unknown parameter '" + name + "' for model " + to_string(kind));
    }
    m.params[name] = value;
  }
  m.mass = m.params.at("mass");
  m.precondition = precondition;
  switch (kind) {
    case ModelKind::shenvi2:
    case ModelKind::shenvi2_offdiag:
      m.n_states = 2;
      m.n_nuc = 1;
      break;
    case ModelKind::complex2:
      m.n_states = 2;
      m.n_nuc = 2;
      break;
    case ModelKind::st4:
    case ModelKind::st4_rotated:
      m.n_states = 4;
      m.n_nuc = 2;
      break;
    case ModelKind::custom: break;
  }
  if (!(m.mass > 0.0)) throw ModelError("mass must be positive");
  return m;
}

inline ModelSpec make_custom_model(int n_states, int n_nuc, double mass, CustomModel closures,
                                   Precondition precondition = Precondition::diabatic) {
  if (n_states < 2) throw ModelError("n_states must be at least 2");
  if (n_nuc < 1 || n_nuc > kMaxNuc) throw ModelError("n_nuc out of range");
  if (!(mass > 0.0)) throw ModelError("mass must be positive");
  if (!closures.h) throw ModelError("custom model needs an h closure");
  ModelSpec m;
  m.kind = ModelKind::custom;
  m.n_states = n_states;
  m.n_nuc = n_nuc;
  m.mass = mass;
  m.params = {{"mass", mass}};
  m.precondition = precondition;
  m.custom = std::make_shared<const CustomModel>(std::move(closures));
  return m;
}

inline ModelSpec with_precondition(ModelSpec m, Precondition p) {
  m.precondition = p;
  return m;
}

/// Scalar angle function with first and second derivatives along each dof.
struct Angle {
  double value = 0.0;
  NucVec grad;
  NucMat hess;
};

namespace detail {

inline Angle tanh_angle(const ModelSpec& m, const NucVec& r) {
  const double c = m.param("C");
  const double d = m.param("D");
  const double x = r(0);
  const double t = std::tanh(d * x);
  const double sech2 = 1.0 - t * t;
  Angle a;
  a.value = kPi * c * (t + 1.0);
  a.grad = NucVec::Zero(m.n_nuc);
  a.hess = NucMat::Zero(m.n_nuc, m.n_nuc);
  a.grad(0) = kPi * c * d * sech2;
  a.hess(0, 0) = -2.0 * kPi * c * d * d * sech2 * t;
  return a;
}

inline Angle erf_angle(const ModelSpec& m, const NucVec& r) {
  const double b = m.param("B");
  const double x = r(0);
  Angle a;
  a.value = 0.5 * kPi * (std::erf(b * x) + 1.0);
  a.grad = NucVec::Zero(m.n_nuc);
  a.hess = NucMat::Zero(m.n_nuc, m.n_nuc);
  const double g = std::sqrt(kPi) * b * std::exp(-b * b * x * x);
  a.grad(0) = g;
  a.hess(0, 0) = -2.0 * b * b * x * g;
  return a;
}

// phi = W * Y for the two-dimensional models.
inline Angle linear_y_phase(const ModelSpec& m, const NucVec& r) {
  const double w = m.param("W");
  Angle a;
  a.value = w * r(1);
  a.grad = NucVec::Zero(m.n_nuc);
  a.hess = NucMat::Zero(m.n_nuc, m.n_nuc);
  a.grad(1) = w;
  return a;
}

inline void check_dims(const ModelSpec& m, const NucVec& r) {
  if (r.size() != m.n_nuc) {
    throw DimensionError("nuclear vector has length " + std::to_string(r.size()) + ", model " +
                         to_string(m.kind) + " expects " + std::to_string(m.n_nuc));
  }
}

template <int N>
void check_states(const ModelSpec& m) {
  if (N != Eigen::Dynamic && N != m.n_states) {
    throw DimensionError("model has " + std::to_string(m.n_states) +
                         " states, engine instantiated for " + std::to_string(N));
  }
}

template <int N>
CMat<N> from_dynamic(const Eigen::MatrixXcd& x, int n) {
  if (x.rows() != n || x.cols() != n) throw DimensionError("custom closure returned wrong shape");
  CMat<N> out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = x(i, j);
  return out;
}

}  // namespace detail

/// h(R) in the diabatic basis.
template <int N>
CMat<N> eval_diabatic(const ModelSpec& m, const NucVec& r) {
  detail::check_dims(m, r);
  detail::check_states<N>(m);
  const int n = m.n_states;
  CMat<N> h = zero_mat<N>(n);
  switch (m.kind) {
    case ModelKind::shenvi2: {
      const double a = m.param("A");
      const double th = detail::tanh_angle(m, r).value;
      h(0, 0) = -a * std::cos(th);
      h(1, 1) = a * std::cos(th);
      h(0, 1) = h(1, 0) = a * std::sin(th);
      return h;
    }
    case ModelKind::shenvi2_offdiag: {
      const double a = m.param("A");
      const double th = detail::tanh_angle(m, r).value;
      h(0, 1) = a * std::exp(kI * th);
      h(1, 0) = a * std::exp(-kI * th);
      return h;
    }
    case ModelKind::complex2: {
      const double a = m.param("A");
      const double th = detail::erf_angle(m, r).value;
      const double ph = detail::linear_y_phase(m, r).value;
      h(0, 0) = -a * std::cos(th);
      h(1, 1) = a * std::cos(th);
      h(0, 1) = a * std::sin(th) * std::exp(kI * ph);
      h(1, 0) = std::conj(h(0, 1));
      return h;
    }
    case ModelKind::st4: {
      if constexpr (N != 4 && N != Eigen::Dynamic) throw DimensionError("four-state model");
      const double a = m.param("A");
      const double th = detail::erf_angle(m, r).value;
      const double ph = detail::linear_y_phase(m, r).value;
      const double c = std::cos(th);
      const double s = std::sin(th);
      h(0, 0) = a * c;
      for (int k = 1; k < 4; ++k) h(k, k) = -a * c;
      h(0, 1) = a * s * std::exp(kI * ph);
      h(0, 2) = a * s;
      h(0, 3) = a * s * std::exp(-kI * ph);
      for (int k = 1; k < 4; ++k) h(k, 0) = std::conj(h(0, k));
      return h;
    }
    case ModelKind::st4_rotated: {
      if constexpr (N != 4 && N != Eigen::Dynamic) throw DimensionError("four-state model");
      const double a = m.param("A");
      const double th = detail::erf_angle(m, r).value;
      const double ph = detail::linear_y_phase(m, r).value;
      const double c = std::cos(th);
      const double s = std::sin(th);
      h(0, 0) = a * c;
      for (int k = 1; k < 4; ++k) h(k, k) = -a * c;
      h(0, 1) = a * std::sqrt(2.0) * s * std::cos(ph);
      h(0, 2) = a * s;
      h(0, 3) = a * std::sqrt(2.0) * s * std::sin(ph);
      for (int k = 1; k < 4; ++k) h(k, 0) = h(0, k);
      return h;
    }
    case ModelKind::custom: return detail::from_dynamic<N>(m.custom->h(r), n);
  }
  throw ModelError("unknown model kind");
}

/// Per-dof dh/dR. Analytic for built-ins, central differences for custom
/// models without a gradient closure.
template <int N>
DofMats<N> eval_diabatic_gradient(const ModelSpec& m, const NucVec& r) {
  detail::check_dims(m, r);
  detail::check_states<N>(m);
  const int n = m.n_states;
  DofMats<N> g(m.n_nuc, zero_mat<N>(n));
  switch (m.kind) {
    case ModelKind::shenvi2: {
      const double a = m.param("A");
      const auto th = detail::tanh_angle(m, r);
      const double c = std::cos(th.value);
      const double s = std::sin(th.value);
      g[0](0, 0) = a * s * th.grad(0);
      g[0](1, 1) = -a * s * th.grad(0);
      g[0](0, 1) = g[0](1, 0) = a * c * th.grad(0);
      return g;
    }
    case ModelKind::shenvi2_offdiag: {
      const double a = m.param("A");
      const auto th = detail::tanh_angle(m, r);
      g[0](0, 1) = kI * a * th.grad(0) * std::exp(kI * th.value);
      g[0](1, 0) = std::conj(g[0](0, 1));
      return g;
    }
    case ModelKind::complex2: {
      const double a = m.param("A");
      const auto th = detail::erf_angle(m, r);
      const auto ph = detail::linear_y_phase(m, r);
      const double c = std::cos(th.value);
      const double s = std::sin(th.value);
      const cplx e = std::exp(kI * ph.value);
      for (int k = 0; k < m.n_nuc; ++k) {
        const double dth = th.grad(k);
        const double dph = ph.grad(k);
        g[k](0, 0) = a * s * dth;
        g[k](1, 1) = -a * s * dth;
        g[k](0, 1) = a * (c * dth + kI * s * dph) * e;
        g[k](1, 0) = std::conj(g[k](0, 1));
      }
      return g;
    }
    case ModelKind::st4: {
      if constexpr (N != 4 && N != Eigen::Dynamic) throw DimensionError("four-state model");
      const double a = m.param("A");
      const auto th = detail::erf_angle(m, r);
      const auto ph = detail::linear_y_phase(m, r);
      const double c = std::cos(th.value);
      const double s = std::sin(th.value);
      const cplx ep = std::exp(kI * ph.value);
      const cplx em = std::exp(-kI * ph.value);
      for (int k = 0; k < m.n_nuc; ++k) {
        const double dth = th.grad(k);
        const double dph = ph.grad(k);
        g[k](0, 0) = -a * s * dth;
        for (int j = 1; j < 4; ++j) g[k](j, j) = a * s * dth;
        g[k](0, 1) = a * (c * dth + kI * s * dph) * ep;
        g[k](0, 2) = a * c * dth;
        g[k](0, 3) = a * (c * dth - kI * s * dph) * em;
        for (int j = 1; j < 4; ++j) g[k](j, 0) = std::conj(g[k](0, j));
      }
      return g;
    }
    case ModelKind::st4_rotated: {
      if constexpr (N != 4 && N != Eigen::Dynamic) throw DimensionError("four-state model");
      const double a = m.param("A");
      const auto th = detail::erf_angle(m, r);
      const auto ph = detail::linear_y_phase(m, r);
      const double c = std::cos(th.value);
      const double s = std::sin(th.value);
      const double cp = std::cos(ph.value);
      const double sp = std::sin(ph.value);
      const double r2 = std::sqrt(2.0);
      for (int k = 0; k < m.n_nuc; ++k) {
        const double dth = th.grad(k);
        const double dph = ph.grad(k);
        g[k](0, 0) = -a * s * dth;
        for (int j = 1; j < 4; ++j) g[k](j, j) = a * s * dth;
        g[k](0, 1) = a * r2 * (c * dth * cp - s * sp * dph);
        g[k](0, 2) = a * c * dth;
        g[k](0, 3) = a * r2 * (c * dth * sp + s * cp * dph);
        for (int j = 1; j < 4; ++j) g[k](j, 0) = g[k](0, j);
      }
      return g;
    }
    case ModelKind::custom: {
      if (m.custom->dh) {
        auto list = m.custom->dh(r);
        if (static_cast<int>(list.size()) != m.n_nuc) {
          throw DimensionError("custom gradient closure returned wrong dof count");
        }
        for (int k = 0; k < m.n_nuc; ++k) g[k] = detail::from_dynamic<N>(list[k], n);
        return g;
      }
      for (int k = 0; k < m.n_nuc; ++k) {
        NucVec rp = r;
        NucVec rm = r;
        rp(k) += kFiniteDifferenceStep;
        rm(k) -= kFiniteDifferenceStep;
        g[k] = (eval_diabatic<N>(m, rp) - eval_diabatic<N>(m, rm)) / (2.0 * kFiniteDifferenceStep);
      }
      return g;
    }
  }
  throw ModelError("unknown model kind");
}

/// Pseudo-diabatic phases phi_j(R): the basis |j> = |j0> exp(-i phi_j)
/// makes the Hamiltonian real. `hess[j]` holds d2 phi_j / dR_a dR_b.
struct PhaseFunctions {
  Eigen::VectorXd phi;
  Eigen::MatrixXd grad_phi;  // n_states x n_nuc
  std::vector<NucMat> hess;
};

inline bool has_phase_functions(const ModelSpec& m) {
  return m.kind != ModelKind::custom || static_cast<bool>(m.custom->phi);
}

inline PhaseFunctions pseudodiabatic_phases(const ModelSpec& m, const NucVec& r) {
  detail::check_dims(m, r);
  PhaseFunctions out;
  out.phi = Eigen::VectorXd::Zero(m.n_states);
  out.grad_phi = Eigen::MatrixXd::Zero(m.n_states, m.n_nuc);
  out.hess.assign(m.n_states, NucMat::Zero(m.n_nuc, m.n_nuc));
  auto set_state = [&](int j, const Angle& a, double sign) {
    out.phi(j) = sign * a.value;
    for (int k = 0; k < m.n_nuc; ++k) out.grad_phi(j, k) = sign * a.grad(k);
    out.hess[j] = sign * a.hess;
  };
  switch (m.kind) {
    case ModelKind::shenvi2:
    case ModelKind::st4_rotated: return out;
    case ModelKind::shenvi2_offdiag: set_state(1, detail::tanh_angle(m, r), 1.0); return out;
    case ModelKind::complex2: set_state(1, detail::linear_y_phase(m, r), 1.0); return out;
    case ModelKind::st4: {
      const auto ph = detail::linear_y_phase(m, r);
      set_state(1, ph, 1.0);
      set_state(3, ph, -1.0);
      return out;
    }
    case ModelKind::custom: {
      if (!m.custom->phi) {
        throw ModelError("custom model has no registered pseudo-diabatic phase functions");
      }
      out.phi = m.custom->phi(r);
      if (out.phi.size() != m.n_states) throw DimensionError("phi closure returned wrong length");
      auto grad_at = [&](const NucVec& x) -> Eigen::MatrixXd {
        if (m.custom->grad_phi) return m.custom->grad_phi(x);
        Eigen::MatrixXd g(m.n_states, m.n_nuc);
        for (int k = 0; k < m.n_nuc; ++k) {
          NucVec xp = x;
          NucVec xm = x;
          xp(k) += kFiniteDifferenceStep;
          xm(k) -= kFiniteDifferenceStep;
          g.col(k) = (m.custom->phi(xp) - m.custom->phi(xm)) / (2.0 * kFiniteDifferenceStep);
        }
        return g;
      };
      out.grad_phi = grad_at(r);
      for (int b = 0; b < m.n_nuc; ++b) {
        NucVec rp = r;
        NucVec rm = r;
        rp(b) += kFiniteDifferenceStep;
        rm(b) -= kFiniteDifferenceStep;
        const Eigen::MatrixXd dg = (grad_at(rp) - grad_at(rm)) / (2.0 * kFiniteDifferenceStep);
        for (int j = 0; j < m.n_states; ++j)
          for (int a = 0; a < m.n_nuc; ++a) out.hess[j](b, a) = dg(j, a);
      }
      return out;
    }
  }
  return out;
}

/// Everything the dynamics needs at one nuclear position, expressed in the
/// preconditioned basis selected by `model.precondition`:
///   h      electronic Hamiltonian h_W(R)
///   dh[a]  dh_W/dR_a
///   D[a]   derivative coupling between basis states, D_W (anti-Hermitian)
///   dD[b][a] = dD_a/dR_b
///   basis  columns are the basis states written in the diabatic basis
template <int N>
struct LocalOperators {
  CMat<N> h;
  DofMats<N> dh;
  DofMats<N> D;
  DofArray<DofMats<N>> dD;
  CMat<N> basis;
};

namespace detail {

// Two-state models whose pseudo-diabatic Hamiltonian is
// A [[-cos a, sin a], [sin a, cos a]] with mixing angle a(R).
inline std::optional<Angle> two_state_mixing_angle(const ModelSpec& m, const NucVec& r) {
  switch (m.kind) {
    case ModelKind::shenvi2: return tanh_angle(m, r);
    case ModelKind::complex2: return erf_angle(m, r);
    case ModelKind::shenvi2_offdiag: {
      Angle a;
      a.value = 0.5 * kPi;
      a.grad = NucVec::Zero(m.n_nuc);
      a.hess = NucMat::Zero(m.n_nuc, m.n_nuc);
      return a;
    }
    default: return std::nullopt;
  }
}

template <int N>
LocalOperators<N> diabatic_operators(const ModelSpec& m, const NucVec& r) {
  const int n = m.n_states;
  LocalOperators<N> ops;
  ops.h = eval_diabatic<N>(m, r);
  ops.dh = eval_diabatic_gradient<N>(m, r);
  ops.D = DofMats<N>(m.n_nuc, zero_mat<N>(n));
  ops.dD = DofArray<DofMats<N>>(m.n_nuc, ops.D);
  ops.basis = identity_mat<N>(n);
  return ops;
}

template <int N>
LocalOperators<N> pseudodiabatic_operators(const ModelSpec& m, const NucVec& r) {
  const int n = m.n_states;
  const int nn = m.n_nuc;
  const auto phases = pseudodiabatic_phases(m, r);
  const auto h = eval_diabatic<N>(m, r);
  const auto dh = eval_diabatic_gradient<N>(m, r);
  CVec<N> e(n);  // basis state j carries exp(-i phi_j)
  for (int j = 0; j < n; ++j) e(j) = std::exp(-kI * phases.phi(j));

  LocalOperators<N> ops;
  ops.basis = e.asDiagonal();
  ops.h = CMat<N>(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) ops.h(j, k) = std::conj(e(j)) * h(j, k) * e(k);
  ops.D = DofMats<N>(nn, zero_mat<N>(n));
  ops.dD = DofArray<DofMats<N>>(nn, ops.D);
  ops.dh = DofMats<N>(nn, zero_mat<N>(n));
  for (int a = 0; a < nn; ++a) {
    for (int j = 0; j < n; ++j) ops.D[a](j, j) = -kI * phases.grad_phi(j, a);
    for (int b = 0; b < nn; ++b)
      for (int j = 0; j < n; ++j) ops.dD[b][a](j, j) = -kI * phases.hess[j](b, a);
    CMat<N> rotated(n, n);
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) rotated(j, k) = std::conj(e(j)) * dh[a](j, k) * e(k);
    ops.dh[a] = rotated + commutator<N>(ops.h, ops.D[a]);
  }
  return ops;
}

template <int N>
LocalOperators<N> analytic_adiabatic_operators(const ModelSpec& m, const NucVec& r,
                                               const Angle& mix) {
  const int nn = m.n_nuc;
  const auto pd = pseudodiabatic_operators<N>(m, r);
  const double amp = m.param("A");
  const double c = std::cos(0.5 * mix.value);
  const double s = std::sin(0.5 * mix.value);
  CMat<N> rot(2, 2);
  rot << c, s, -s, c;
  CMat<N> j(2, 2);
  j << 0.0, 1.0, -1.0, 0.0;

  LocalOperators<N> ops;
  ops.basis = pd.basis * rot;
  ops.h = zero_mat<N>(2);
  ops.h(0, 0) = -amp;
  ops.h(1, 1) = amp;
  ops.dh = DofMats<N>(nn, zero_mat<N>(2));
  ops.D = DofMats<N>(nn, zero_mat<N>(2));
  ops.dD = DofArray<DofMats<N>>(nn, ops.D);
  DofMats<N> projected(nn, zero_mat<N>(2));
  for (int a = 0; a < nn; ++a) {
    projected[a] = rot.transpose() * pd.D[a] * rot;
    ops.D[a] = projected[a] + 0.5 * mix.grad(a) * j;
  }
  for (int b = 0; b < nn; ++b) {
    for (int a = 0; a < nn; ++a) {
      ops.dD[b][a] = 0.5 * mix.grad(b) * commutator<N>(projected[a], j) +
                     rot.transpose() * pd.dD[b][a] * rot + 0.5 * mix.hess(b, a) * j;
    }
  }
  return ops;
}

// Eigenvectors of h_pd in a phase convention tied to `reference` (or, with
// no reference, the largest component of each column made real-positive).
template <int N>
EigenPair<N> aligned_eigen(const CMat<N>& h, const CMat<N>* reference) {
  auto eig = hermitian_eigen<N>(h);
  const auto n = h.rows();
  for (Eigen::Index k = 0; k < n; ++k) {
    cplx anchor;
    if (reference) {
      anchor = reference->col(k).dot(eig.vectors.col(k));
    } else {
      Eigen::Index imax = 0;
      eig.vectors.col(k).cwiseAbs().maxCoeff(&imax);
      anchor = eig.vectors(imax, k);
    }
    if (std::abs(anchor) > 0.0) eig.vectors.col(k) *= std::conj(anchor) / std::abs(anchor);
  }
  return eig;
}

template <int N>
DofMats<N> numeric_adiabatic_coupling(const ModelSpec& m, const NucVec& r, const CMat<N>* ref,
                                      CMat<N>* vectors_out, RVec<N>* values_out) {
  const int n = m.n_states;
  const auto pd = has_phase_functions(m) ? pseudodiabatic_operators<N>(m, r)
                                         : diabatic_operators<N>(m, r);
  const auto eig = aligned_eigen<N>(pd.h, ref);
  for (int k = 0; k + 1 < n; ++k) {
    if (eig.values(k + 1) - eig.values(k) < kDegeneracyThreshold) {
      throw DegeneracyError("adiabatic preconditioning at an electronic degeneracy (states " +
                                std::to_string(k) + "," + std::to_string(k + 1) + ")",
                            k, k + 1);
    }
  }
  DofMats<N> d(m.n_nuc, zero_mat<N>(n));
  for (int a = 0; a < m.n_nuc; ++a) {
    // pd.dh is the derivative of the matrix h_pd(R) itself.
    const CMat<N> proj = eig.vectors.adjoint() * pd.dh[a] * eig.vectors;
    const CMat<N> dproj = eig.vectors.adjoint() * pd.D[a] * eig.vectors;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k)
        if (i != k) d[a](i, k) = proj(i, k) / (eig.values(k) - eig.values(i));
    // Total coupling between adiabats includes the pseudo-diabat rotation.
    d[a] += dproj;
    // Diagonal: parallel-transport gauge for the eigenvector rotation.
    for (int i = 0; i < n; ++i) d[a](i, i) = dproj(i, i);
  }
  if (vectors_out) *vectors_out = pd.basis * eig.vectors;
  if (values_out) *values_out = eig.values;
  return d;
}

template <int N>
LocalOperators<N> numeric_adiabatic_operators(const ModelSpec& m, const NucVec& r) {
  const int n = m.n_states;
  const int nn = m.n_nuc;
  LocalOperators<N> ops;
  RVec<N> values;
  CMat<N> vectors;
  ops.D = numeric_adiabatic_coupling<N>(m, r, nullptr, &vectors, &values);
  ops.basis = vectors;
  ops.h = zero_mat<N>(n);
  for (int k = 0; k < n; ++k) ops.h(k, k) = values(k);
  const auto dh_dia = eval_diabatic_gradient<N>(m, r);
  ops.dh = DofMats<N>(nn, zero_mat<N>(n));
  for (int a = 0; a < nn; ++a) {
    const CMat<N> proj = vectors.adjoint() * dh_dia[a] * vectors;
    for (int k = 0; k < n; ++k) ops.dh[a](k, k) = proj(k, k).real();
  }
  // dD by central differences with eigenvector phases tied to R.
  const auto pd0 = has_phase_functions(m) ? pseudodiabatic_operators<N>(m, r)
                                          : diabatic_operators<N>(m, r);
  const CMat<N> ref = aligned_eigen<N>(pd0.h, nullptr).vectors;
  ops.dD = DofArray<DofMats<N>>(nn, DofMats<N>(nn, zero_mat<N>(n)));
  for (int b = 0; b < nn; ++b) {
    NucVec rp = r;
    NucVec rm = r;
    rp(b) += kFiniteDifferenceStep;
    rm(b) -= kFiniteDifferenceStep;
    const auto dp = numeric_adiabatic_coupling<N>(m, rp, &ref, nullptr, nullptr);
    const auto dm = numeric_adiabatic_coupling<N>(m, rm, &ref, nullptr, nullptr);
    for (int a = 0; a < nn; ++a) ops.dD[b][a] = (dp[a] - dm[a]) / (2.0 * kFiniteDifferenceStep);
  }
  return ops;
}

}  // namespace detail

template <int N>
LocalOperators<N> local_operators(const ModelSpec& m, const NucVec& r) {
  detail::check_dims(m, r);
  detail::check_states<N>(m);
  switch (m.precondition) {
    case Precondition::diabatic: return detail::diabatic_operators<N>(m, r);
    case Precondition::pseudodiabatic: return detail::pseudodiabatic_operators<N>(m, r);
    case Precondition::adiabatic: {
      if (auto mix = detail::two_state_mixing_angle(m, r)) {
        return detail::analytic_adiabatic_operators<N>(m, r, *mix);
      }
      return detail::numeric_adiabatic_operators<N>(m, r);
    }
  }
  throw ModelError("unknown precondition");
}

/// D_W per nuclear dof for the model's preconditioning.
template <int N>
DofMats<N> dw_matrix(const ModelSpec& m, const NucVec& r) {
  return local_operators<N>(m, r).D;
}

/// Position-space adiabats of h(R): columns in the diabatic basis, with the
/// smooth analytic gauge for the two-state built-ins.
template <int N>
CMat<N> position_adiabats(const ModelSpec& m, const NucVec& r) {
  return local_operators<N>(with_precondition(m, Precondition::adiabatic), r).basis;
}

}  // namespace phasehop

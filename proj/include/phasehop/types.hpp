#pragma once

#include <Eigen/Dense>

#include <array>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace phasehop {

using cplx = std::complex<double>;

// Atomic units throughout.
inline constexpr double kHbar = 1.0;
inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cplx kI{0.0, 1.0};

// Nuclear vectors never exceed this many degrees of freedom.
inline constexpr int kMaxNuc = 3;

using NucVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxNuc, 1>;
using NucMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxNuc, kMaxNuc>;

// Electronic matrices are templated on the state count; Eigen::Dynamic
// covers custom models of arbitrary size.
template <int N>
using CMat = Eigen::Matrix<cplx, N, N>;
template <int N>
using CVec = Eigen::Matrix<cplx, N, 1>;
template <int N>
using RVec = Eigen::Matrix<double, N, 1>;

// Fixed-capacity list of per-dof objects (no heap traffic on hot paths).
template <class T>
struct DofArray {
  std::array<T, kMaxNuc> items{};
  int count = 0;

  DofArray() = default;
  explicit DofArray(int n, const T& fill = T{}) : count(n) {
    for (int a = 0; a < n; ++a) items[a] = fill;
  }
  T& operator[](int a) { return items[a]; }
  const T& operator[](int a) const { return items[a]; }
  [[nodiscard]] int size() const { return count; }
};

template <int N>
using DofMats = DofArray<CMat<N>>;

template <int N>
CMat<N> zero_mat(int n) {
  return CMat<N>::Zero(n, n);
}

template <int N>
CMat<N> identity_mat(int n) {
  return CMat<N>::Identity(n, n);
}

// Error hierarchy. Every engine failure is one of these.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ModelError : public Error {
 public:
  using Error::Error;
};

class DegeneracyError : public Error {
 public:
  DegeneracyError(const std::string& what, int m, int n) : Error(what), m_(m), n_(n) {}
  [[nodiscard]] int m() const { return m_; }
  [[nodiscard]] int n() const { return n_; }

 private:
  int m_;
  int n_;
};

class IntegratorError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace phasehop

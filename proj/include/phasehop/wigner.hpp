#pragma once

// Wigner sampling of the Gaussian wavepacket
// psi ~ exp(-(R-R0)^2/sigma^2 + i P0 (R-R0)), whose Wigner function is
// exp(-2 (R-R0)^2/sigma^2 - sigma^2 (P-P0)^2 / 2):
// std(R) = sigma/2 and std(P) = 1/sigma per degree of freedom.

#include "phasehop/rng.hpp"
#include "phasehop/types.hpp"

#include <vector>

namespace phasehop {

struct PhasePoint {
  NucVec R;
  NucVec P;
};

inline PhasePoint wigner_draw(const NucVec& r0, const NucVec& p0, double sigma, RngStream& rng) {
  if (!(sigma > 0.0)) throw ConfigError("wavepacket width sigma must be positive");
  if (r0.size() != p0.size()) throw DimensionError("R0 and P0 lengths differ");
  PhasePoint pt{r0, p0};
  for (Eigen::Index a = 0; a < r0.size(); ++a) {
    pt.R(a) += 0.5 * sigma * rng.normal();
    pt.P(a) += rng.normal() / sigma;
  }
  return pt;
}

inline std::vector<PhasePoint> wigner_sample(const NucVec& r0, const NucVec& p0, double sigma,
                                             std::size_t count, RngStream& rng) {
  std::vector<PhasePoint> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(wigner_draw(r0, p0, sigma, rng));
  return out;
}

}  // namespace phasehop

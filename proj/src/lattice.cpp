#include "pals/lattice.hpp"

#include "pals/errors.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace pals {

namespace {

void require_positive(double v, const char* name) {
  if (!(std::isfinite(v) && v > 0.0)) throw DomainError(std::string(name) + " must be finite and > 0");
}

}  // namespace

void PhysicalConstants::validate() const {
  require_positive(alpha, "alpha");
  if (!(alpha <= 1.0)) throw DomainError("alpha must be <= 1");
  require_positive(m_p, "m_p");
  require_positive(m_e, "m_e");
  require_positive(hbar, "hbar");
  require_positive(c, "c");
  require_positive(G, "G");
}

void LatticeModel::validate() const {
  require_positive(n_nucleus, "n_nucleus");
  if (!(std::isfinite(n3) && n3 > n_nucleus)) throw DomainError("n3 must exceed n_nucleus");
  require_positive(tau_mu, "tau_mu");
  require_positive(r_mu, "r_mu");
}

double n3_from_alpha(double alpha) {
  if (!(std::isfinite(alpha) && alpha > 0.0 && alpha <= 1.0)) throw DomainError("alpha must lie in (0, 1]");
  const double a3 = alpha * alpha * alpha;
  return std::pow(2.0, 4.5) / (3.0 * std::numbers::pi * std::numbers::pi * (a3 * a3 * a3));
}

LatticeModel lattice_from_constants(const PhysicalConstants& pc) {
  pc.validate();
  LatticeModel m;
  m.n3 = n3_from_alpha(pc.alpha);
  return m;
}

double planck_mass(const PhysicalConstants& pc) {
  require_positive(pc.hbar, "hbar");
  require_positive(pc.c, "c");
  require_positive(pc.G, "G");
  return std::sqrt(pc.hbar * pc.c / pc.G);
}

double planck_identity_deviation(const PhysicalConstants& pc) {
  require_positive(pc.m_p, "m_p");
  require_positive(pc.m_e, "m_e");
  const double mpl = planck_mass(pc);
  return (n3_from_alpha(pc.alpha) * (pc.m_p + pc.m_e) - mpl) / mpl;
}

double planck_identity_residual(const PhysicalConstants& pc) { return std::abs(planck_identity_deviation(pc)); }

}  // namespace pals

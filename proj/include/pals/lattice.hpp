#pragma once
// Closed-form lattice relations: the site count N3 from the fine-structure
// constant and its Planck-mass identity N3 (m_p + m_e) ~ sqrt(hbar c / G).
//
// Masses are magnitudes; the double-valued (+/-) form of the identity holds
// sign by sign and is not represented numerically.

namespace pals {

/// Gaussian (CGS) units. Defaults are CODATA 2018.
struct PhysicalConstants {
  double alpha = 7.2973525693e-3;
  double m_p = 1.67262192369e-24;  // g
  double m_e = 9.1093837015e-28;   // g
  double hbar = 1.054571817e-27;   // erg s
  double c = 2.99792458e10;        // cm / s
  double G = 6.67430e-8;           // cm^3 g^-1 s^-2

  /// Throws DomainError unless every constant is finite and positive and alpha <= 1.
  void validate() const;
};

/// Stored model constants; no dynamics are attached to them.
struct LatticeModel {
  double n3 = 1.302e19;
  double n_nucleus = 5.2780e4;
  double tau_mu = 2.0e-6;  // s
  double r_mu = 6.0e4;     // cm

  /// Throws DomainError unless n3 > n_nucleus > 0.
  void validate() const;
};

/// 2^(9/2) / (3 pi^2 alpha^9). Throws DomainError unless 0 < alpha <= 1.
double n3_from_alpha(double alpha);

/// Lattice model with n3 computed from pc.alpha.
LatticeModel lattice_from_constants(const PhysicalConstants& pc);

/// sqrt(hbar c / G), in g.
double planck_mass(const PhysicalConstants& pc);

/// (N3(alpha) (m_p + m_e) - M_Pl) / M_Pl.
double planck_identity_deviation(const PhysicalConstants& pc);

/// |planck_identity_deviation(pc)|.
double planck_identity_residual(const PhysicalConstants& pc);

}  // namespace pals

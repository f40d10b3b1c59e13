#pragma once

#include <numbers>

// CODATA 2018 values. Every module converts units through these and nothing else.
namespace tuneout::constants {

inline constexpr double pi = std::numbers::pi;

inline constexpr double planck = 6.62607015e-34;              // J s (exact)
inline constexpr double hbar = planck / (2.0 * pi);           // J s
inline constexpr double speed_of_light = 299792458.0;         // m/s (exact)
inline constexpr double elementary_charge = 1.602176634e-19;  // C (exact)
inline constexpr double bohr_radius = 5.29177210903e-11;      // m
inline constexpr double electron_mass = 9.1093837015e-31;     // kg
inline constexpr double vacuum_permittivity = 8.8541878128e-12;  // F/m
inline constexpr double hartree = 4.3597447222071e-18;        // J
inline constexpr double atomic_mass_unit = 1.66053906660e-27;  // kg

// Atomic unit of polarizability, e^2 a0^2 / E_h, in C^2 m^2 / J.
inline constexpr double au_polarizability = 1.64877727436e-41;
// Atomic unit of electric dipole moment, e a0, in C m.
inline constexpr double au_dipole = 8.4783536255e-30;
// Hartree frequency E_h / h in Hz; converts ordinary frequencies to atomic units.
inline constexpr double hartree_frequency = hartree / planck;

}  // namespace tuneout::constants

#pragma once

#include <string>
#include <vector>

#include "tuneout/species_data.hpp"

namespace tuneout {

// Monochromatic field E = 1/2 E0 e exp(-i(wt - kz)) + c.c. with
// e = e_x cos(theta0) + i e_y sin(theta0). Angles are measured against the
// quantisation axis.
struct LightField {
    double wavelength_nm = 790.0;
    double intensity_W_m2 = 0.0;  // single running beam
    double theta0_rad = 0.0;      // polarisation ellipticity angle
    double theta_k_rad = 0.0;     // wave vector vs quantisation axis
    double theta_p_rad = 0.0;     // polarisation vector vs quantisation axis

    void validate() const;
    // E0^2 for a running wave of this intensity, (V/m)^2.
    double field_amplitude_sq() const;
    LightField at_wavelength(double nm) const;
    LightField with_intensity(double W_m2) const;

    static double intensity_from_mW_cm2(double mW_cm2) { return mW_cm2 * 10.0; }
};

struct PolarizationParams {
    double A = 0.0;  // sin(2 theta0)
    double C = 0.0;  // A cos(theta_k)
    double D = 0.0;  // (3 cos^2 theta_p - 1) / 2
};

PolarizationParams polarization_params(const LightField& light);

// Scalar, vector and tensor dynamic polarisabilities of one hyperfine level F,
// in atomic units. The tensor value is normalised so that the shift reads
//   V = -(E0/2)^2 [a_s + C m/(2F) a_v - D (3m^2 - F(F+1)) / (2F(2F-1)) a_T].
struct PolarizabilitySet {
    double scalar = 0.0;
    double vector = 0.0;
    double tensor = 0.0;
};

// Which pieces of the shift are switched on.
struct Contributions {
    bool vector = true;
    bool tensor = true;
    bool higher_p = true;  // 5s-6p+ residual
    bool core = true;      // core + core-valence residual

    static Contributions d_lines_only() { return {true, false, false, false}; }
    static Contributions all() { return {}; }
};

struct PolarizabilityOptions {
    double guard_linewidths = 10.0;  // refuse |detuning| < guard * natural width
    bool counter_rotating = true;
};

// Factorised hyperfine sum for one state. Angular factors and transition
// frequencies are computed once; d_lines() is cheap and thread-safe.
class PolarizabilityModel {
public:
    PolarizabilityModel(const HyperfineState& state, const SpeciesData& data,
                        PolarizabilityOptions options = {});

    // D-line (valence) contribution only. Throws ResonanceError inside a guard band.
    PolarizabilitySet d_lines(double wavelength_nm) const;
    // D-line scalar plus the enabled residual constants.
    double total_scalar(double wavelength_nm, const Contributions& c = Contributions::all()) const;

    // Bracket of the Stark shift, -(E0/2)^-2 V, in atomic units.
    double shift_coefficient(const LightField& light, const Contributions& c) const;

    const HyperfineState& state() const { return state_; }
    double residual_higher_p() const { return alpha_higher_p_; }
    double residual_core() const { return alpha_core_; }

    struct Term {
        long double frequency_Hz;  // |nJF> -> |n'J'F'>
        double guard_Hz;
        long double strength;      // |<F'||d||F>|^2, (e a0)^2
        long double coupling[3];   // rank-K angular weights
        std::string line;
    };
    const std::vector<Term>& terms() const { return terms_; }

private:
    HyperfineState state_;
    PolarizabilityOptions options_;
    std::vector<Term> terms_;
    double alpha_higher_p_ = 0.0;
    double alpha_core_ = 0.0;
};

PolarizabilitySet d_line_polarizabilities(const HyperfineState& state, double wavelength_nm,
                                          const SpeciesData& data,
                                          const PolarizabilityOptions& options = {});

double total_scalar_polarizability(const HyperfineState& state, double wavelength_nm,
                                   const SpeciesData& data,
                                   const Contributions& c = Contributions::all());

// Recoil energy h / (2 m lambda^2), in Hz.
double recoil_energy_hz(double wavelength_nm, double mass_kg);

struct StarkShift {
    double hz = 0.0;
    double recoil = 0.0;  // in units of E_r at the same wavelength
};

StarkShift ac_stark_shift(const HyperfineState& state, const LightField& light,
                          const SpeciesData& data, const Contributions& c = Contributions::all());
StarkShift ac_stark_shift(const PolarizabilityModel& model, const LightField& light,
                          double mass_kg, const Contributions& c = Contributions::all());

// Depth of the standing wave formed by two counter-propagating copies of
// `beam`, i.e. the shift at four times the single-beam intensity, in E_r.
double lattice_depth(const HyperfineState& state, const LightField& beam, const SpeciesData& data,
                     const Contributions& c = Contributions::all());
double lattice_depth(const PolarizabilityModel& model, const LightField& beam, double mass_kg,
                     const Contributions& c = Contributions::all());

// Stark-shift weights m_F/(2F) and (3 m_F^2 - F(F+1)) / (2F(2F-1)).
// The tensor weight is defined as 0 for F < 1.
double vector_weight(HalfInt F, HalfInt m_F);
double tensor_weight(HalfInt F, HalfInt m_F);

}  // namespace tuneout

#include "tuneout/polarizability.hpp"

#include <cmath>
#include <sstream>

#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/wigner.hpp"

namespace tuneout {

void LightField::validate() const {
    if (!(wavelength_nm > 0.0) || !std::isfinite(wavelength_nm)) {
        throw ValidationError("light field: wavelength must be > 0");
    }
    if (!(intensity_W_m2 >= 0.0) || !std::isfinite(intensity_W_m2)) {
        throw ValidationError("light field: intensity must be >= 0");
    }
    if (!std::isfinite(theta0_rad) || !std::isfinite(theta_k_rad) || !std::isfinite(theta_p_rad)) {
        throw ValidationError("light field: angles must be finite");
    }
}

double LightField::field_amplitude_sq() const {
    return 2.0 * intensity_W_m2 / (constants::speed_of_light * constants::vacuum_permittivity);
}

LightField LightField::at_wavelength(double nm) const {
    LightField l = *this;
    l.wavelength_nm = nm;
    return l;
}

LightField LightField::with_intensity(double W_m2) const {
    LightField l = *this;
    l.intensity_W_m2 = W_m2;
    return l;
}

PolarizationParams polarization_params(const LightField& light) {
    PolarizationParams p;
    p.A = std::sin(2.0 * light.theta0_rad);
    p.C = p.A * std::cos(light.theta_k_rad);
    const double cp = std::cos(light.theta_p_rad);
    p.D = 0.5 * (3.0 * cp * cp - 1.0);
    return p;
}

double vector_weight(HalfInt F, HalfInt m_F) {
    if (F.twice() == 0) return 0.0;
    return m_F.value() / (2.0 * F.value());
}

double tensor_weight(HalfInt F, HalfInt m_F) {
    if (F.twice() < 2) return 0.0;
    const double f = F.value();
    const double m = m_F.value();
    return (3.0 * m * m - f * (f + 1.0)) / (2.0 * f * (2.0 * f - 1.0));
}

PolarizabilityModel::PolarizabilityModel(const HyperfineState& state, const SpeciesData& data,
                                         PolarizabilityOptions options)
    : state_(state), options_(options) {
    state_.validate();
    if (state_.I != data.nuclear_spin) {
        throw ValidationError("state nuclear spin " + state_.I.str() + " does not match species " +
                              data.name);
    }
    alpha_higher_p_ = data.alpha_higher_p_au.value;
    alpha_core_ = data.alpha_core_au.value;

    const HalfInt F = state_.F;
    const HalfInt I = state_.I;
    for (const auto& line : data.lines) {
        if (line.lower.n != state_.n || line.lower.J != state_.J) continue;
        const double lower_shift = hyperfine_level_energy(line.lower, I, F);
        for (HalfInt Fp : hyperfine_levels(I, line.upper.J)) {
            if (std::abs((Fp - F).twice()) > 2) continue;
            // |<F'||d||F>|^2 = (2F+1)(2F'+1) {J' F' I; F J 1}^2 |<J'||d||J>|^2
            const long double six = wigner_6j_ext(line.upper.J, Fp, I, F, state_.J, 1);
            const long double dJ = data.effective_dipole_au(line);
            Term t{};
            t.frequency_Hz = static_cast<long double>(line.frequency_Hz.value) +
                             hyperfine_level_energy(line.upper, I, Fp) - lower_shift;
            t.guard_Hz = options_.guard_linewidths * line.linewidth_Hz.value;
            t.strength = (F.twice() + 1.0L) * (Fp.twice() + 1.0L) * six * six * dJ * dJ;
            t.line = line.label;
            for (int K = 0; K <= 2; ++K) {
                // (-1)^(K+F+1+F') sqrt(2K+1) {1 K 1; F F' F}
                const int phase = K + (F + Fp + 1).twice() / 2;
                const long double sign = (phase % 2 == 0) ? 1.0L : -1.0L;
                t.coupling[K] = sign * std::sqrt(2.0L * K + 1.0L) * wigner_6j_ext(1, K, 1, F, Fp, F);
            }
            terms_.push_back(t);
        }
    }
    if (terms_.empty()) {
        throw ValidationError("no transition lines start from level n = " +
                              std::to_string(state_.n) + ", J = " + state_.J.str());
    }
}

PolarizabilitySet PolarizabilityModel::d_lines(double wavelength_nm) const {
    if (!(wavelength_nm > 0.0)) throw ValidationError("wavelength must be > 0");
    // The D-line terms cancel to a few parts in 1e4 near the tune-out, so
    // detunings and sums are carried in extended precision.
    using Real = long double;
    const Real nu = constants::speed_of_light / (static_cast<Real>(wavelength_nm) * 1e-9L);
    const Real hartree_frequency = static_cast<Real>(constants::hartree) / constants::planck;

    Real rank[3] = {0.0L, 0.0L, 0.0L};
    for (const auto& t : terms_) {
        const Real detuning = t.frequency_Hz - nu;
        if (std::abs(detuning) < t.guard_Hz) {
            std::ostringstream msg;
            msg.precision(10);
            msg << "wavelength " << wavelength_nm << " nm lies within the resonance guard band of "
                << t.line << " hyperfine component at "
                << static_cast<double>(constants::speed_of_light / t.frequency_Hz * 1e9) << " nm";
            throw ResonanceError(msg.str(), wavelength_nm);
        }
        const Real resonant = hartree_frequency / detuning;
        const Real counter =
            options_.counter_rotating ? hartree_frequency / (t.frequency_Hz + nu) : 0.0L;
        rank[0] += t.coupling[0] * t.strength * (resonant + counter);
        rank[1] += t.coupling[1] * t.strength * (resonant - counter);
        rank[2] += t.coupling[2] * t.strength * (resonant + counter);
    }

    const double f = state_.F.value();
    PolarizabilitySet out;
    out.scalar = static_cast<double>(rank[0] / std::sqrt(3.0L * (2.0L * f + 1.0L)));
    if (state_.F.twice() > 0) {
        out.vector = static_cast<double>(-std::sqrt(2.0L * f / ((f + 1.0L) * (2.0L * f + 1.0L))) * rank[1]);
    }
    if (state_.F.twice() >= 2) {
        const Real conventional =
            -std::sqrt(2.0L * f * (2.0L * f - 1.0L) /
                       (3.0L * (f + 1.0L) * (2.0L * f + 1.0L) * (2.0L * f + 3.0L))) *
            rank[2];
        // The shift formula carries -D/(2F(2F-1)) instead of +D/(F(2F-1)).
        out.tensor = static_cast<double>(-2.0L * conventional);
    }
    return out;
}

double PolarizabilityModel::total_scalar(double wavelength_nm, const Contributions& c) const {
    double s = d_lines(wavelength_nm).scalar;
    if (c.higher_p) s += alpha_higher_p_;
    if (c.core) s += alpha_core_;
    return s;
}

double PolarizabilityModel::shift_coefficient(const LightField& light,
                                              const Contributions& c) const {
    const PolarizationParams p = polarization_params(light);
    const PolarizabilitySet a = d_lines(light.wavelength_nm);
    double bracket = a.scalar;
    if (c.higher_p) bracket += alpha_higher_p_;
    if (c.core) bracket += alpha_core_;
    if (c.vector) bracket += p.C * vector_weight(state_.F, state_.m_F) * a.vector;
    if (c.tensor) bracket -= p.D * tensor_weight(state_.F, state_.m_F) * a.tensor;
    return bracket;
}

PolarizabilitySet d_line_polarizabilities(const HyperfineState& state, double wavelength_nm,
                                          const SpeciesData& data,
                                          const PolarizabilityOptions& options) {
    return PolarizabilityModel(state, data, options).d_lines(wavelength_nm);
}

double total_scalar_polarizability(const HyperfineState& state, double wavelength_nm,
                                   const SpeciesData& data, const Contributions& c) {
    return PolarizabilityModel(state, data).total_scalar(wavelength_nm, c);
}

double recoil_energy_hz(double wavelength_nm, double mass_kg) {
    if (!(wavelength_nm > 0.0) || !(mass_kg > 0.0)) {
        throw ValidationError("recoil energy needs wavelength > 0 and mass > 0");
    }
    const double lambda = wavelength_nm * 1e-9;
    return constants::planck / (2.0 * mass_kg * lambda * lambda);
}

StarkShift ac_stark_shift(const PolarizabilityModel& model, const LightField& light,
                          double mass_kg, const Contributions& c) {
    light.validate();
    const double bracket_au = model.shift_coefficient(light, c);
    const double energy_J =
        -0.25 * light.field_amplitude_sq() * bracket_au * constants::au_polarizability;
    StarkShift s;
    s.hz = energy_J / constants::planck;
    s.recoil = s.hz / recoil_energy_hz(light.wavelength_nm, mass_kg);
    return s;
}

StarkShift ac_stark_shift(const HyperfineState& state, const LightField& light,
                          const SpeciesData& data, const Contributions& c) {
    return ac_stark_shift(PolarizabilityModel(state, data), light, data.mass_kg.value, c);
}

double lattice_depth(const PolarizabilityModel& model, const LightField& beam, double mass_kg,
                     const Contributions& c) {
    return ac_stark_shift(model, beam.with_intensity(4.0 * beam.intensity_W_m2), mass_kg, c)
        .recoil;
}

double lattice_depth(const HyperfineState& state, const LightField& beam, const SpeciesData& data,
                     const Contributions& c) {
    return lattice_depth(PolarizabilityModel(state, data), beam, data.mass_kg.value, c);
}

}  // namespace tuneout

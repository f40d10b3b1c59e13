#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tuneout/half_int.hpp"

namespace tuneout {

// A number together with its 1-sigma uncertainty, the decimal text it was
// read from, and where it came from. The text is what gets written back out,
// so a load/save cycle never re-rounds anything.
struct Datum {
    double value = 0.0;
    double uncertainty = 0.0;
    std::string text;              // decimal representation of value
    std::string uncertainty_text;  // empty when no uncertainty was given
    std::string provenance;

    static Datum exact(double v, std::string provenance);
};

// |n (I J) F m_F>
struct HyperfineState {
    int n = 5;
    HalfInt I = HalfInt::from_twice(3);
    HalfInt J = HalfInt::from_twice(1);
    HalfInt F = 1;
    HalfInt m_F = 0;

    // Throws ValidationError naming the violated rule.
    void validate() const;
};

struct ElectronicLevel {
    std::string label;  // e.g. "5S1/2"
    int n = 0;
    HalfInt J;
    Datum A_hfs_Hz;
    Datum B_hfs_Hz;
    std::optional<Datum> splitting_Hz;  // documented F-splitting, for cross-checks
    std::vector<HalfInt> F_levels;      // explicit hyperfine levels, when listed
};

struct TransitionLine {
    std::string label;  // e.g. "D2"
    ElectronicLevel lower;
    ElectronicLevel upper;
    Datum frequency_Hz;       // fine-structure centroid frequency
    Datum reduced_dipole_au;  // <n'J'||d||nJ>, symmetric (Edmonds) convention, e a0
    Datum linewidth_Hz;       // natural width, sets the resonance guard band
};

enum class MatrixElementMode { Direct, Ratio };

// |d_reference|^2 / |d_derived|^2 parametrisation of two lines sharing a lower level.
struct DipoleRatio {
    std::string reference_line;
    std::string derived_line;
    Datum ratio;
};

struct SpeciesData {
    std::string name;
    Datum mass_kg;
    HalfInt nuclear_spin;
    std::string nuclear_spin_provenance;
    std::vector<ElectronicLevel> levels;
    std::vector<TransitionLine> lines;
    Datum alpha_higher_p_au;  // 5s-6p+ style residual, wavelength independent
    Datum alpha_core_au;      // core + core-valence residual
    MatrixElementMode mode = MatrixElementMode::Direct;
    std::optional<DipoleRatio> ratio;

    const TransitionLine& line(const std::string& label) const;
    const ElectronicLevel& level(const std::string& label) const;

    // Reduced dipole element actually used for `line`: the tabulated value in
    // Direct mode, d_reference / sqrt(R) for the derived line in Ratio mode.
    double effective_dipole_au(const TransitionLine& line) const;

    // Visits every numeric datum with a stable dotted name, e.g.
    // "line.D2.frequency_Hz" or "residual.alpha_core_au".
    void for_each_datum(const std::function<void(const std::string&, const Datum&)>& fn) const;
    // Copy with the named datum shifted by `sigmas` times its uncertainty.
    SpeciesData perturbed(const std::string& datum_name, double sigmas) const;
    // Copy with the residual constants set to zero.
    SpeciesData without_residuals() const;
    SpeciesData with_mode(MatrixElementMode m) const;
};

SpeciesData load_species_data(const std::filesystem::path& path);
SpeciesData parse_species_data(const std::string& text, const std::string& source_name = "<string>");
std::string serialize_species_data(const SpeciesData& data);

// Hyperfine shift of level F from the fine-structure centroid (Hz), from the
// magnetic-dipole (A) and electric-quadrupole (B) constants.
double hyperfine_level_energy(const ElectronicLevel& level, HalfInt I, HalfInt F);

// Allowed F for a level: |I - J| ... I + J.
std::vector<HalfInt> hyperfine_levels(HalfInt I, HalfInt J);

// <n'J' F'||d||nJ F> from <n'J'||d||nJ> via a 6j factor (e a0), with
// sum_F' |<F'||d||F>|^2 = (2F+1) |<J'||d||J>|^2 / (2J+1).
double reduced_hf_matrix_element(const SpeciesData& data, const TransitionLine& line, HalfInt F,
                                 HalfInt F_prime);

}  // namespace tuneout

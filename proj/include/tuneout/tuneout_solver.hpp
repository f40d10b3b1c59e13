#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tuneout/polarizability.hpp"

namespace tuneout {

// The D-line window; roots are only searched strictly between the lines.
inline constexpr double kWindowLoNm = 780.5;
inline constexpr double kWindowHiNm = 794.5;

struct TuneoutOptions {
    double lo_nm = 0.0;  // 0/0 selects the default bracket
    double hi_nm = 0.0;
    double tolerance_nm = 1e-10;
    int max_iterations = 200;
    int scan_points = 400;       // sign-change scan used to detect multiple roots
    bool scan = true;
    double slope_step_nm = 1e-4;  // central difference step
    bool restrict_to_window = true;
};

struct TuneoutResult {
    double wavelength_nm = 0.0;
    double slope_au_per_pm = 0.0;      // d(shift bracket)/d(lambda)
    double slope_recoil_per_pm = 0.0;  // dV0/d(lambda) of the lattice, E_r per pm
    double bracket_lo_nm = 0.0;
    double bracket_hi_nm = 0.0;
    Contributions toggles;
    int iterations = 0;
};

// (785, 794) for scalar-like roots, (782, 794.5) when a vector term is active.
std::pair<double, double> default_bracket(const HyperfineState& state, const LightField& light,
                                          const Contributions& c);

// Zero of the lattice potential of `state` for the polarisation and geometry
// in `light`; the intensity only sets the E_r slope.
TuneoutResult find_tuneout(const PolarizabilityModel& model, const LightField& light,
                           double mass_kg, const Contributions& c,
                           const TuneoutOptions& options = {});
TuneoutResult find_tuneout(const HyperfineState& state, const LightField& light,
                           const SpeciesData& data, const Contributions& c = Contributions::all(),
                           const TuneoutOptions& options = {});

struct Uncertain {
    double value = 0.0;
    double sigma = 0.0;
};

// d(ledger row)/d(datum) * sigma(datum), in nm.
struct LedgerSensitivity {
    std::string datum;
    double base_nm = 0.0;
    double tensor_nm = 0.0;
    double higher_p_nm = 0.0;
    double core_nm = 0.0;
    double total_nm = 0.0;
};

enum class Propagation { Sensitivity, MonteCarlo };

struct LedgerOptions {
    TuneoutOptions solver;
    Propagation propagation = Propagation::Sensitivity;
    std::uint64_t seed = 0;
    int samples = 400;
    int jobs = 1;
    std::string dataset;  // label recorded in the ledger
};

// Tune-out root with the D lines only, followed by the shifts obtained by
// switching on the tensor term, the higher-line residual and the core residual
// one after another. total = base + tensor + higher_p + core holds exactly up
// to solver tolerance.
struct ContributionLedger {
    std::string dataset;
    MatrixElementMode mode = MatrixElementMode::Direct;
    Propagation propagation = Propagation::Sensitivity;
    Uncertain base_nm;
    Uncertain tensor_shift_nm;
    Uncertain higher_p_shift_nm;
    Uncertain core_shift_nm;
    Uncertain total_nm;
    // Same shifts with only one component switched on at a time.
    double tensor_alone_nm = 0.0;
    double higher_p_alone_nm = 0.0;
    double core_alone_nm = 0.0;
    std::vector<LedgerSensitivity> sensitivities;
    double seconds = 0.0;

    double shift_sum_nm() const {
        return tensor_shift_nm.value + higher_p_shift_nm.value + core_shift_nm.value;
    }
};

ContributionLedger contribution_ledger(const HyperfineState& state, const LightField& geometry,
                                       const SpeciesData& data, const LedgerOptions& options = {});

// Linear geometry of the tune-out measurement: pi light along x, k along the
// quantisation axis.
LightField linear_lattice_geometry(double intensity_W_m2 = 0.0);

struct LinearModelResult {
    double wavelength_nm = 0.0;       // -intercept / slope
    double slope_recoil_per_nm = 0.0;
    double intercept_recoil = 0.0;    // line value at the grid centre
    double center_nm = 0.0;
    double max_deviation = 0.0;       // max |V0 - line| / max |V0|
    std::vector<double> grid_nm;
    std::vector<double> depth_recoil;
};

// Least-squares line through the lattice depth V0(lambda) on `grid_nm`.
LinearModelResult linear_model(const std::vector<double>& grid_nm, const HyperfineState& state,
                               const LightField& beam, const SpeciesData& data,
                               const Contributions& c = Contributions::all());
LinearModelResult linear_model(const std::vector<double>& grid_nm,
                               const std::vector<double>& depth_recoil);

}  // namespace tuneout

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tuneout/fit_models.hpp"
#include "tuneout/imaging.hpp"
#include "tuneout/kd_model.hpp"
#include "tuneout/polarizability.hpp"

namespace tuneout {

// Wavelength scan of Kapitza-Dirac shots around the tune-out wavelength of
// F = 1, imaged with the synthetic camera.
struct ExperimentSpec {
    double injected_tuneout_nm = 790.01858;  // m_F = 0 zero of the lattice depth
    double scan_half_width_pm = 20.0;
    int wavelengths = 20;
    int shots_per_wavelength = 5;
    double intensity_W_m2 = 3.9e7;  // per lattice beam
    double intensity_rms = 0.0;     // shot-to-shot relative depth fluctuation
    double pulse_us = 12.0;         // effective pulse duration
    int references = 50;
    ShotSpec shot;  // populations are replaced per shot

    void validate() const;
    std::vector<double> grid_nm() const;
};

// 256 x 184 frames with a 256 x 64 mask, enough for orders up to |N| = 3.
ShotLayout compact_layout();

// Lattice depth of the three F = 1 sublevels in the linear lattice geometry,
// with the theory curve moved so that the m_F = 0 zero sits at the injected
// wavelength.
class LatticeDepthModel {
public:
    LatticeDepthModel(const SpeciesData& data, const ExperimentSpec& spec);

    double depth_recoil(double wavelength_nm, int m_F) const;  // signed, E_r
    double recoil_hz() const { return recoil_hz_; }
    double theory_root_nm() const { return theory_root_nm_; }
    double shift_nm() const { return shift_nm_; }

private:
    std::vector<PolarizabilityModel> models_;  // m_F = -1, 0, +1
    LightField beam_;
    double mass_kg_ = 0.0;
    double recoil_hz_ = 0.0;
    double theory_root_nm_ = 0.0;
    double shift_nm_ = 0.0;
};

struct ShotRecord {
    std::string shot_id;
    double wavelength_nm = 0.0;
    std::array<double, 3> depth_recoil{};  // injected V0 for m_F = -1, 0, +1
    Frame signal;
    Frame reference;  // the shot's own atom-free frame
};

struct Dataset {
    ShotLayout layout;
    double pulse_us = 0.0;
    double recoil_hz = 0.0;
    double injected_tuneout_nm = 0.0;
    std::vector<Frame> references;
    std::vector<ShotRecord> shots;
};

// Shots are seeded by (seed, index), so the frames do not depend on `jobs`.
Dataset synthesize_dataset(const SpeciesData& data, const ExperimentSpec& spec, std::uint64_t seed,
                           int jobs = 1);

// dataset.json, manifest.jsonl and one PGM (plus sidecar) per frame.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

struct AnalysisOptions {
    ExtractionOptions extraction;
    InversionOptions inversion;
    int depth_band = 0;         // m_F whose populations give V0
    double od_ceiling = 6.0;
    bool composed_reference = true;
};

struct ShotAnalysis {
    std::string shot_id;
    double wavelength_nm = 0.0;
    PeakFitResult peaks;
    std::optional<DepthEstimate> depth;
    double snr_raw = 0.0;
    double snr_composed = 0.0;
    std::size_t clamped_raw = 0;
    std::size_t clamped_composed = 0;
    std::string error;      // set when the shot could not be analysed
    int error_class = 0;    // exit-code class of `error`
};

std::vector<ShotAnalysis> analyze_dataset(const Dataset& dataset, const AnalysisOptions& options = {},
                                          int jobs = 1);

// Depths of the analysed shots as scan points; failed shots are skipped.
std::vector<ScanPoint> depth_points(const std::vector<ShotAnalysis>& shots, int m_F = 0);

struct EndToEndRun {
    std::uint64_t seed = 0;
    double injected_nm = 0.0;
    TuneoutLineFit fit;
    int shots = 0;
    int failed_shots = 0;
    double pull() const { return (fit.lambda_m_nm - injected_nm) / fit.lambda_m_sigma_nm; }
};

// Synthesis, analysis and line fit in memory.
EndToEndRun run_end_to_end(const SpeciesData& data, const ExperimentSpec& spec, std::uint64_t seed,
                           const AnalysisOptions& options = {}, int jobs = 1);

}  // namespace tuneout

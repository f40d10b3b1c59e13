#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tuneout/fit_models.hpp"
#include "tuneout/kd_model.hpp"

namespace tuneout {

enum class FrameRole { Signal, Reference };
const char* to_string(FrameRole r);

// Row-major camera frame in photoelectron counts.
struct Frame {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;
    std::string shot_id;
    FrameRole role = FrameRole::Signal;

    Frame() = default;
    Frame(int w, int h, double fill = 0.0);

    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::size_t size() const { return pixels.size(); }
    // Dimensions consistent, entries finite and >= 0.
    void validate() const;
};

// 16-bit binary PGM plus `<path>.json` with shot id, role and dimensions.
// Counts are rounded and clipped to [0, 65535] on write.
void write_frame(const Frame& frame, const std::string& path);
Frame read_frame(const std::string& path);

struct Rect {
    int x0 = 0;
    int y0 = 0;
    int width = 0;
    int height = 0;

    bool contains(int x, int y) const {
        return x >= x0 && x < x0 + width && y >= y0 && y < y0 + height;
    }
    bool overlaps(const Rect& o) const;
    std::size_t area() const { return static_cast<std::size_t>(width) * height; }
    // Non-empty and inside a w x h frame.
    void validate(int w, int h, const char* what) const;
};

struct BasisReport {
    int frames = 0;
    int rank = 0;
    double condition = 0.0;  // largest over smallest kept eigenvalue of the masked Gram matrix
    std::vector<int> dependent;  // frames carrying the dropped directions
};

// Least-squares reference composition over a signal-free mask. The masked Gram
// matrix is diagonalised once; each shot then costs one projection of the
// masked pixels onto the frames and one assembly of the full frame.
class ReferenceBasis {
public:
    ReferenceBasis(const std::vector<Frame>& frames, const Rect& mask,
                   double rank_tolerance = 1e-11);

    struct Composition {
        Frame r_best;
        std::vector<double> coefficients;
        double masked_residual_norm = 0.0;
    };
    Composition compose(const Frame& signal) const;

    // A new basis with one more frame; version is incremented.
    ReferenceBasis with_frame(const Frame& frame) const;
    // Columns of frame k restricted to the mask, in mask raster order.
    std::vector<double> masked_frame(int k) const;
    std::vector<double> masked_pixels(const Frame& f) const;

    int width() const { return width_; }
    int height() const { return height_; }
    int size() const { return static_cast<int>(data_.cols()); }
    int rank() const { return report_.rank; }
    int version() const { return version_; }
    const Rect& mask() const { return mask_; }
    const BasisReport& report() const { return report_; }

private:
    ReferenceBasis() = default;
    void index_pixels();
    void decompose();

    int width_ = 0;
    int height_ = 0;
    Rect mask_;
    double tolerance_ = 1e-11;
    int version_ = 1;
    std::vector<std::uint32_t> order_;  // pixel index per row of data_, mask pixels first
    Eigen::MatrixXd data_;              // pixels x frames, rows permuted by order_
    Eigen::MatrixXd pinv_;              // pseudo-inverse of the masked Gram matrix
    BasisReport report_;
};

struct ODImage {
    int width = 0;
    int height = 0;
    std::vector<double> od;
    std::vector<std::uint8_t> valid;  // 0 for clamped pixels
    std::size_t clamped = 0;
    double ceiling = 6.0;
    std::string reference;  // "raw" or "composed"

    double at(int x, int y) const { return od[static_cast<std::size_t>(y) * width + x]; }
    bool is_valid(int x, int y) const { return valid[static_cast<std::size_t>(y) * width + x] != 0; }
};

// -ln(S/R) per pixel. Pixels with S <= 0 or R <= 0, or an OD above the ceiling,
// are set to the ceiling, marked invalid and counted.
ODImage optical_density(const Frame& signal, const Frame& reference, double ceiling = 6.0,
                        const std::string& reference_kind = "raw");

// ---------------------------------------------------------------------------
// Synthetic shots

// Three horizontal m_F bands (m_F = -1, 0, +1 from top to bottom) in the lower
// part of the frame, diffraction orders along x, signal-free mask above.
struct ShotLayout {
    int width = 300;
    int height = 330;
    Rect mask{0, 0, 300, 200};
    std::array<int, 3> band_center_y{226, 264, 302};
    int band_half_height = 17;
    double center_x = 150.0;
    double order_spacing_px = 36.0;
    int n_max = 3;
    Rect background{264, 206, 36, 124};  // atom-free OD region for the SNR

    void validate() const;
    Rect band(int index) const;
    // Square about order 0 of band `index`, the signal region of the SNR.
    Rect peak_region(int index, int half_size = 4) const;
};

struct CloudSpec {
    double od_area = 150.0;  // OD px^2 of one band, BEC plus thermal
    double thermal_fraction = 0.15;
    double bec_sigma_x = 3.0;
    double bec_sigma_y = 4.0;
    double thermal_sigma_x = 9.0;
    double thermal_sigma_y = 8.0;
};

struct FringeComponent {
    double amplitude = 0.06;  // relative to the illumination
    double kx = 0.21;         // rad per px
    double ky = 0.13;
};

struct FringeSpec {
    double intensity = 2000.0;  // counts per pixel
    double intensity_jitter = 0.02;
    double envelope_sigma_px = 400.0;  // Gaussian beam radius about the frame centre
    std::vector<FringeComponent> components{{0.06, 0.21, 0.13}, {0.05, -0.11, 0.27}};
    // Phase change between a signal shot and its own reference, rad (rms).
    double phase_drift_rad = 1.5;
};

struct FringeState {
    double intensity = 0.0;
    std::vector<double> phases;
};

struct ShotSpec {
    ShotLayout layout;
    CloudSpec cloud;
    FringeSpec fringe;
    std::array<MomentumPopulations, 3> populations;  // m_F = -1, 0, +1
    bool shot_noise = true;
};

struct ShotTruth {
    std::array<MomentumPopulations, 3> populations;
    FringeState signal_fringe;
    FringeState reference_fringe;
    std::vector<double> od;  // noiseless optical density
};

struct Shot {
    Frame signal;
    Frame reference;
    ShotTruth truth;
};

// Ideal OD of the atoms for the given populations.
std::vector<double> ideal_od(const ShotLayout& layout, const CloudSpec& cloud,
                             const std::array<MomentumPopulations, 3>& populations);

FringeState random_fringe_state(const FringeSpec& spec, std::mt19937_64& rng);
Frame illuminate(const ShotLayout& layout, const FringeSpec& spec, const FringeState& state,
                 const std::vector<double>* od, bool shot_noise, std::mt19937_64& rng);

Shot synthesize_shot(const ShotSpec& spec, std::uint64_t seed);
// Atom-free frames with independent fringe phases, for a reference basis.
std::vector<Frame> synthesize_references(const ShotSpec& spec, int count, std::uint64_t seed,
                                         int jobs = 1);

struct SnrComparison {
    double raw = 0.0;       // OD from the shot's own reference frame
    double composed = 0.0;  // OD from the composed reference
    double ratio() const { return composed / raw; }
};

// SNR of the m_F = 0 order-0 peak against the layout background region.
SnrComparison compare_snr(const Shot& shot, const ReferenceBasis& basis, const ShotLayout& layout);

struct FringeScenario {
    std::string name;
    ShotSpec spec;
};

// Fringe-dominated configurations (raw-reference OD noise set by fringe
// mismatch rather than shot noise), populations at a Kapitza-Dirac phase of 0.3.
std::vector<FringeScenario> fringe_suite();
// Weaker fringes and a denser cloud, giving raw SNRs around 30 and composed
// SNRs around 85.
ShotSpec moderate_fringe_spec();

// ---------------------------------------------------------------------------
// Population extraction

struct OrderPeak {
    int order = 0;
    double center_px = 0.0;
    double bec_width_px = 0.0;
    double bec_area = 0.0;  // OD px^2
    double thermal_width_px = 0.0;
    double thermal_area = 0.0;
    bool widths_free = false;
};

struct BandFit {
    int m_F = 0;
    bool fitted = false;
    double spacing_px = 0.0;
    double center_px = 0.0;  // order 0
    std::vector<OrderPeak> peaks;
    std::vector<std::string> parameter_names;
    Eigen::MatrixXd covariance;
    double chi2 = 0.0;
    int dof = 0;
    double noise = 0.0;  // rms residual of the binned profile
    MomentumPopulations populations;
    bool thermal_split_identifiable = true;
};

struct PeakFitResult {
    std::array<BandFit, 3> bands;  // m_F = -1, 0, +1
};

struct ExtractionOptions {
    int n_max = -1;                     // -1 takes the layout value
    double min_thermal_ratio = 1.5;     // thermal width / BEC width lower bound
    double initial_thermal_ratio = 3.0;
    double free_width_fraction = 0.15;  // orders above this share get their own widths
    std::array<bool, 3> bands{true, true, true};  // m_F = -1, 0, +1
    WlsOptions solver;
};

PeakFitResult extract_populations(const ODImage& od, const ShotLayout& layout,
                                  const ExtractionOptions& options = {});

// Column sums of valid OD pixels over `band`, rescaled for excluded pixels.
// Columns with fewer than half valid pixels come back as NaN.
std::vector<double> vertical_profile(const ODImage& od, const Rect& band);

// Mean over the signal region divided by the standard deviation over the
// background region; infinite for a noiseless background.
double snr(const ODImage& image, const Rect& signal, const Rect& background);
double snr(const std::vector<double>& image, int width, int height, const Rect& signal,
           const Rect& background);

}  // namespace tuneout

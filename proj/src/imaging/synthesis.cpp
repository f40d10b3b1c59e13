#include <cmath>
#include <sstream>

#include "tuneout/constants.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/imaging.hpp"
#include "tuneout/parallel.hpp"

namespace tuneout {

namespace {

// Above this mean the count is drawn from the Gaussian limit of the Poisson
// law (skewness below 3 %), which is an order of magnitude cheaper.
constexpr double kPoissonGaussianAbove = 1000.0;

}  // namespace

Rect ShotLayout::band(int index) const {
    if (index < 0 || index > 2) throw ValidationError("band index must be 0, 1 or 2");
    return {0, band_center_y[static_cast<std::size_t>(index)] - band_half_height, width,
            2 * band_half_height + 1};
}

Rect ShotLayout::peak_region(int index, int half_size) const {
    if (index < 0 || index > 2) throw ValidationError("band index must be 0, 1 or 2");
    if (half_size < 0) throw ValidationError("peak region half size must be >= 0");
    const int cx = static_cast<int>(std::lround(center_x));
    return {cx - half_size, band_center_y[static_cast<std::size_t>(index)] - half_size,
            2 * half_size + 1, 2 * half_size + 1};
}

void ShotLayout::validate() const {
    if (width <= 0 || height <= 0) throw ValidationError("layout dimensions must be positive");
    mask.validate(width, height, "mask");
    background.validate(width, height, "background");
    if (band_half_height < 1) throw ValidationError("band half height must be >= 1");
    if (!(order_spacing_px > 0.0)) throw ValidationError("order spacing must be positive");
    if (n_max < 0) throw ValidationError("n_max must be >= 0");
    for (int i = 0; i < 3; ++i) {
        const Rect b = band(i);
        b.validate(width, height, "m_F band");
        if (b.overlaps(mask)) throw ValidationError("an m_F band overlaps the signal-free mask");
        if (i > 0 && b.overlaps(band(i - 1))) throw ValidationError("m_F bands overlap");
    }
    const double lo = center_x - n_max * order_spacing_px;
    const double hi = center_x + n_max * order_spacing_px;
    if (lo < 0.0 || hi > width - 1) {
        std::ostringstream msg;
        msg << "orders up to |N| = " << n_max << " at " << order_spacing_px
            << " px spacing overflow the " << width << " px frame";
        throw ValidationError(msg.str());
    }
    for (int n = -n_max; n <= n_max; ++n) {
        const double x = center_x + n * order_spacing_px;
        if (x >= background.x0 && x < background.x0 + background.width &&
            background.y0 < band(2).y0 + band(2).height && band(0).y0 < background.y0 + background.height) {
            throw ValidationError("the SNR background region contains a diffraction order");
        }
    }
}

std::vector<double> ideal_od(const ShotLayout& layout, const CloudSpec& cloud,
                             const std::array<MomentumPopulations, 3>& populations) {
    layout.validate();
    if (!(cloud.od_area >= 0.0) || !(cloud.thermal_fraction >= 0.0 && cloud.thermal_fraction <= 1.0) ||
        !(cloud.bec_sigma_x > 0.0 && cloud.bec_sigma_y > 0.0 && cloud.thermal_sigma_x > 0.0 &&
          cloud.thermal_sigma_y > 0.0)) {
        throw ValidationError("cloud spec needs od_area >= 0, thermal fraction in [0, 1] and positive widths");
    }
    std::vector<double> od(static_cast<std::size_t>(layout.width) * layout.height, 0.0);
    const auto gauss = [](double d, double s) { return std::exp(-0.5 * d * d / (s * s)); };
    for (int b = 0; b < 3; ++b) {
        const double cy = layout.band_center_y[static_cast<std::size_t>(b)];
        for (const auto& [n, p] : populations[static_cast<std::size_t>(b)].p) {
            if (p < 0.0) throw ValidationError("negative population in the shot spec");
            const double cx = layout.center_x + n * layout.order_spacing_px;
            if (cx < 0.0 || cx > layout.width - 1) {
                if (p > 1e-6) throw ValidationError("a populated order falls outside the frame");
                continue;
            }
            const double bec = (1.0 - cloud.thermal_fraction) * p * cloud.od_area /
                               (2.0 * constants::pi * cloud.bec_sigma_x * cloud.bec_sigma_y);
            const double th = cloud.thermal_fraction * p * cloud.od_area /
                              (2.0 * constants::pi * cloud.thermal_sigma_x * cloud.thermal_sigma_y);
            std::vector<double> gbx(layout.width), gtx(layout.width);
            for (int x = 0; x < layout.width; ++x) {
                gbx[x] = bec * gauss(x - cx, cloud.bec_sigma_x);
                gtx[x] = th * gauss(x - cx, cloud.thermal_sigma_x);
            }
            for (int y = 0; y < layout.height; ++y) {
                const double gb = gauss(y - cy, cloud.bec_sigma_y);
                const double gt = gauss(y - cy, cloud.thermal_sigma_y);
                if (gb < 1e-12 && gt < 1e-12) continue;
                double* row = od.data() + static_cast<std::size_t>(y) * layout.width;
                for (int x = 0; x < layout.width; ++x) row[x] += gb * gbx[x] + gt * gtx[x];
            }
        }
    }
    return od;
}

FringeState random_fringe_state(const FringeSpec& spec, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * constants::pi);
    FringeState s;
    s.intensity = spec.intensity * (1.0 + spec.intensity_jitter * normal(rng));
    for (std::size_t j = 0; j < spec.components.size(); ++j) s.phases.push_back(phase(rng));
    return s;
}

Frame illuminate(const ShotLayout& layout, const FringeSpec& spec, const FringeState& state,
                 const std::vector<double>* od, bool shot_noise, std::mt19937_64& rng) {
    if (!(state.intensity > 0.0)) throw ValidationError("illumination intensity must be positive");
    if (state.phases.size() != spec.components.size()) {
        throw ValidationError("fringe state does not match the fringe components");
    }
    Frame f(layout.width, layout.height);
    if (od && od->size() != f.size()) throw ValidationError("OD map does not match the layout");
    const double cx = 0.5 * (layout.width - 1);
    const double cy = 0.5 * (layout.height - 1);
    const double w2 = 2.0 * spec.envelope_sigma_px * spec.envelope_sigma_px;
    const std::size_t nc = spec.components.size();
    // sin(kx x + ky y + phi) from per-column and per-row tables
    std::vector<double> sx(nc * layout.width), cxs(nc * layout.width), ex(layout.width);
    for (int x = 0; x < layout.width; ++x) {
        ex[x] = std::exp(-(x - cx) * (x - cx) / w2);
        for (std::size_t j = 0; j < nc; ++j) {
            const double a = spec.components[j].kx * x + state.phases[j];
            sx[j * layout.width + x] = std::sin(a);
            cxs[j * layout.width + x] = std::cos(a);
        }
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> sy(nc), cy_(nc);
    for (int y = 0; y < layout.height; ++y) {
        for (std::size_t j = 0; j < nc; ++j) {
            const double b = spec.components[j].ky * y;
            sy[j] = spec.components[j].amplitude * std::cos(b);
            cy_[j] = spec.components[j].amplitude * std::sin(b);
        }
        const double ey = state.intensity * std::exp(-(y - cy) * (y - cy) / w2);
        for (int x = 0; x < layout.width; ++x) {
            double fringe = 1.0;
            for (std::size_t j = 0; j < nc; ++j) {
                fringe += sx[j * layout.width + x] * sy[j] + cxs[j * layout.width + x] * cy_[j];
            }
            double mean = ey * ex[x] * std::max(fringe, 0.0);
            const std::size_t i = static_cast<std::size_t>(y) * layout.width + x;
            if (od) mean *= std::exp(-(*od)[i]);
            if (shot_noise && mean > kPoissonGaussianAbove) {
                f.pixels[i] = std::max(0.0, std::round(mean + std::sqrt(mean) * normal(rng)));
            } else if (shot_noise && mean > 0.0) {
                std::poisson_distribution<long> poisson(mean);
                f.pixels[i] = static_cast<double>(poisson(rng));
            } else {
                f.pixels[i] = mean;
            }
        }
    }
    return f;
}

Shot synthesize_shot(const ShotSpec& spec, std::uint64_t seed) {
    spec.layout.validate();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Shot shot;
    shot.truth.populations = spec.populations;
    shot.truth.od = ideal_od(spec.layout, spec.cloud, spec.populations);
    shot.truth.signal_fringe = random_fringe_state(spec.fringe, rng);
    shot.truth.reference_fringe = shot.truth.signal_fringe;
    shot.truth.reference_fringe.intensity =
        spec.fringe.intensity * (1.0 + spec.fringe.intensity_jitter * normal(rng));
    for (auto& ph : shot.truth.reference_fringe.phases) ph += spec.fringe.phase_drift_rad * normal(rng);

    shot.signal = illuminate(spec.layout, spec.fringe, shot.truth.signal_fringe, &shot.truth.od,
                             spec.shot_noise, rng);
    shot.signal.role = FrameRole::Signal;
    shot.signal.shot_id = "shot-" + std::to_string(seed);
    shot.reference = illuminate(spec.layout, spec.fringe, shot.truth.reference_fringe, nullptr,
                                spec.shot_noise, rng);
    shot.reference.role = FrameRole::Reference;
    shot.reference.shot_id = shot.signal.shot_id + "-ref";
    return shot;
}

std::vector<Frame> synthesize_references(const ShotSpec& spec, int count, std::uint64_t seed,
                                         int jobs) {
    spec.layout.validate();
    if (count < 1) throw ValidationError("reference count must be >= 1");
    std::vector<Frame> out(static_cast<std::size_t>(count));
    parallel_for(out.size(), jobs, [&](std::size_t k) {
        std::seed_seq seq{seed, static_cast<std::uint64_t>(k)};
        std::mt19937_64 rng(seq);
        const auto state = random_fringe_state(spec.fringe, rng);
        out[k] = illuminate(spec.layout, spec.fringe, state, nullptr, spec.shot_noise, rng);
        out[k].role = FrameRole::Reference;
        out[k].shot_id = "ref-" + std::to_string(seed) + "-" + std::to_string(k);
    });
    return out;
}

SnrComparison compare_snr(const Shot& shot, const ReferenceBasis& basis, const ShotLayout& layout) {
    layout.validate();
    const Rect sig = layout.peak_region(1);
    const auto composed = basis.compose(shot.signal);
    SnrComparison out;
    out.raw = snr(optical_density(shot.signal, shot.reference), sig, layout.background);
    out.composed = snr(optical_density(shot.signal, composed.r_best, 6.0, "composed"), sig,
                       layout.background);
    return out;
}

std::vector<FringeScenario> fringe_suite() {
    ShotSpec base;
    const auto pop = diffraction_populations_at_phase(0.3, 3);
    base.populations = {pop, pop, pop};
    base.cloud.od_area = 150.0;

    std::vector<FringeScenario> out;
    ShotSpec two = base;
    two.fringe.components = {{0.08, 0.21, 0.13}, {0.06, -0.11, 0.27}};
    two.fringe.phase_drift_rad = 3.0;
    out.push_back({"two-component", two});

    ShotSpec three = base;
    three.fringe.components = {{0.06, 0.21, 0.13}, {0.05, -0.11, 0.27}, {0.05, 0.05, -0.40}};
    three.fringe.phase_drift_rad = 2.0;
    out.push_back({"three-component", three});

    ShotSpec fine = base;
    fine.fringe.components = {{0.07, 0.45, 0.21}, {0.06, 0.17, -0.33}};
    fine.fringe.phase_drift_rad = 2.5;
    out.push_back({"fine-pitch", fine});

    ShotSpec dim = base;
    dim.fringe.intensity = 4000.0;
    dim.fringe.components = {{0.06, 0.21, 0.13}, {0.05, -0.11, 0.27}};
    dim.fringe.phase_drift_rad = 2.0;
    out.push_back({"bright-beam", dim});
    return out;
}

ShotSpec moderate_fringe_spec() {
    ShotSpec s;
    const auto pop = diffraction_populations_at_phase(0.3, 3);
    s.populations = {pop, pop, pop};
    s.cloud.od_area = 300.0;
    return s;
}

}  // namespace tuneout

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "tuneout/errors.hpp"
#include "tuneout/imaging.hpp"

using namespace tuneout;

namespace {

std::filesystem::path scratch_dir() {
    auto d = std::filesystem::temp_directory_path() / "tuneout_test_imaging";
    std::filesystem::create_directories(d);
    return d;
}

ShotSpec quiet_spec() {
    ShotSpec s;
    s.shot_noise = false;
    s.fringe.intensity_jitter = 0.0;
    s.fringe.components.clear();
    const auto pop = diffraction_populations_at_phase(0.8, 3);
    s.populations = {pop, pop, pop};
    s.cloud.od_area = 150.0;
    return s;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Single horizontal fringe in the mask, written directly so the basis tests do
// not depend on the shot synthesiser.
Frame fringe_frame(int w, int h, double intensity, double amp, double phase) {
    Frame f(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) f.at(x, y) = intensity * (1.0 + amp * std::sin(0.23 * x + 0.07 * y + phase));
    }
    return f;
}

}  // namespace

TEST_CASE("frames survive a PGM round trip with their sidecar") {
    Frame f(7, 5);
    for (std::size_t i = 0; i < f.size(); ++i) f.pixels[i] = 100.0 * i + 0.4;
    f.pixels[3] = 70000.0;
    f.shot_id = "run3-shot12";
    f.role = FrameRole::Reference;
    const auto path = (scratch_dir() / "rt.pgm").string();
    write_frame(f, path);
    const Frame g = read_frame(path);
    CHECK(g.width == 7);
    CHECK(g.height == 5);
    CHECK(g.shot_id == "run3-shot12");
    CHECK(g.role == FrameRole::Reference);
    CHECK(g.pixels[3] == 65535.0);
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (i != 3) CHECK(g.pixels[i] == std::round(f.pixels[i]));
    }
}

TEST_CASE("malformed frame files are rejected") {
    const auto dir = scratch_dir();
    CHECK_THROWS_AS(read_frame((dir / "missing.pgm").string()), ValidationError);
    {
        std::ofstream(dir / "p2.pgm") << "P2\n2 2\n255\n1 2 3 4\n";
    }
    CHECK_THROWS_AS(read_frame((dir / "p2.pgm").string()), ValidationError);
    {
        std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n65535\nabc";
    }
    CHECK_THROWS_AS(read_frame((dir / "short.pgm").string()), ValidationError);

    Frame f(2, 2, 5.0);
    const auto path = (dir / "role.pgm").string();
    write_frame(f, path);
    {
        std::ofstream(path + ".json") << R"({"role": "dark", "width": 2, "height": 2})";
    }
    CHECK_THROWS_AS(read_frame(path), ValidationError);
    {
        std::ofstream(path + ".json") << R"({"role": "signal", "width": 3, "height": 2})";
    }
    CHECK_THROWS_AS(read_frame(path), ValidationError);

    Frame bad(2, 2, 1.0);
    bad.pixels[1] = -1.0;
    CHECK_THROWS_AS(write_frame(bad, path), ValidationError);
}

TEST_CASE("rectangles") {
    const Rect a{0, 0, 10, 10};
    CHECK(a.overlaps({9, 9, 3, 3}));
    CHECK_FALSE(a.overlaps({10, 0, 3, 3}));
    CHECK(a.contains(9, 0));
    CHECK_FALSE(a.contains(10, 0));
    CHECK_NOTHROW(a.validate(10, 10, "a"));
    CHECK_THROWS_AS(a.validate(9, 10, "a"), ValidationError);
    CHECK_THROWS_AS(Rect({0, 0, 0, 3}).validate(10, 10, "empty"), ValidationError);
}

TEST_CASE("optical density follows -ln(S/R) and clamps") {
    Frame r(4, 1, 1000.0);
    Frame s(4, 1);
    s.pixels = {1000.0, 1000.0 * std::exp(-1.25), 0.0, 1000.0 * std::exp(-7.0)};
    const auto od = optical_density(s, r);
    CHECK(od.at(0, 0) == doctest::Approx(0.0));
    CHECK(od.at(1, 0) == doctest::Approx(1.25).epsilon(1e-12));
    CHECK(od.is_valid(1, 0));
    CHECK(od.at(2, 0) == 6.0);
    CHECK_FALSE(od.is_valid(2, 0));
    CHECK(od.at(3, 0) == 6.0);
    CHECK(od.clamped == 2);
    CHECK(od.reference == "raw");
    CHECK_THROWS_AS(optical_density(s, Frame(3, 1, 1.0)), ValidationError);
    CHECK_THROWS_AS(optical_density(s, r, 0.0), ValidationError);
}

TEST_CASE("noiseless fringe-free shot reproduces the ideal OD") {
    const ShotSpec spec = quiet_spec();
    const Shot shot = synthesize_shot(spec, 1);
    const auto od = optical_density(shot.signal, shot.reference);
    CHECK(od.clamped == 0);
    double worst = 0.0;
    for (std::size_t i = 0; i < od.od.size(); ++i) worst = std::max(worst, std::abs(od.od[i] - shot.truth.od[i]));
    CHECK(worst < 1e-12);
}

TEST_CASE("an atom-free shot differs from its reference only by noise and fringe drift") {
    ShotSpec spec = quiet_spec();
    for (auto& p : spec.populations) p = MomentumPopulations{};
    spec.fringe.phase_drift_rad = 0.0;
    spec.fringe.components = {{0.06, 0.21, 0.13}};
    const Shot same = synthesize_shot(spec, 2);
    CHECK(same.signal.pixels == same.reference.pixels);

    spec.fringe.phase_drift_rad = 1.0;
    const Shot drifted = synthesize_shot(spec, 2);
    std::mt19937_64 unused;
    const Frame expect = illuminate(spec.layout, spec.fringe, drifted.truth.reference_fringe, nullptr, false, unused);
    CHECK(drifted.reference.pixels == expect.pixels);

    spec.shot_noise = true;
    spec.fringe.phase_drift_rad = 0.0;
    const Shot noisy = synthesize_shot(spec, 3);
    const auto od = optical_density(noisy.signal, noisy.reference);
    double s = 0.0;
    double s2 = 0.0;
    for (double v : od.od) {
        s += v;
        s2 += v * v;
    }
    const double n = static_cast<double>(od.od.size());
    const double mean = s / n;
    // Two independent Poisson frames near 2000 counts: sd of the log ratio ~ sqrt(2 / I).
    CHECK(std::abs(mean) < 1e-3);
    CHECK(std::sqrt(s2 / n - mean * mean) == doctest::Approx(std::sqrt(2.0 / 2000.0)).epsilon(0.1));
}

TEST_CASE("shot layouts that overflow the frame are rejected") {
    ShotLayout layout;
    CHECK_NOTHROW(layout.validate());
    layout.n_max = 5;
    CHECK_THROWS_WITH_AS(layout.validate(), doctest::Contains("overflow"), ValidationError);
    layout = ShotLayout{};
    layout.band_center_y[0] = 205;
    CHECK_THROWS_AS(layout.validate(), ValidationError);
    layout = ShotLayout{};
    layout.band_center_y[2] = 320;
    CHECK_THROWS_AS(layout.validate(), ValidationError);
    layout = ShotLayout{};
    layout.background = {140, 206, 20, 100};
    CHECK_THROWS_AS(layout.validate(), ValidationError);
}

TEST_CASE("synthesis is deterministic in the seed and the worker count") {
    const ShotSpec spec;
    const auto a = synthesize_references(spec, 6, 11, 1);
    const auto b = synthesize_references(spec, 6, 11, 3);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].pixels == b[k].pixels);
    CHECK(a[0].pixels != a[1].pixels);
    CHECK(synthesize_shot(spec, 5).signal.pixels == synthesize_shot(spec, 5).signal.pixels);
    CHECK(synthesize_shot(spec, 5).signal.pixels != synthesize_shot(spec, 6).signal.pixels);
}

TEST_CASE("a one-frame basis returns the least-squares scaling") {
    const Rect mask{0, 0, 40, 10};
    const Frame f = fringe_frame(40, 30, 1500.0, 0.1, 0.3);
    const ReferenceBasis basis({f}, mask);
    CHECK(basis.rank() == 1);
    Frame s = f;
    for (auto& v : s.pixels) v *= 1.7;
    const auto c = basis.compose(s);
    REQUIRE(c.coefficients.size() == 1);
    CHECK(c.coefficients[0] == doctest::Approx(1.7).epsilon(1e-12));
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(c.r_best.pixels[i] == doctest::Approx(s.pixels[i]).epsilon(1e-12));

    // Off the span: the coefficient is <f, s> / <f, f> over the mask.
    const Frame g = fringe_frame(40, 30, 900.0, 0.3, 2.0);
    const auto fm = basis.masked_frame(0);
    const auto gm = basis.masked_pixels(g);
    CHECK(basis.compose(g).coefficients[0] == doctest::Approx(dot(fm, gm) / dot(fm, fm)).epsilon(1e-12));
}

TEST_CASE("a duplicated frame lowers the rank without changing the composition") {
    const Rect mask{0, 0, 40, 12};
    std::vector<Frame> frames;
    for (int k = 0; k < 4; ++k) frames.push_back(fringe_frame(40, 30, 1000.0 + 50.0 * k, 0.1, 0.9 * k));
    std::mt19937_64 rng(4);
    std::normal_distribution<double> noise(0.0, 5.0);
    for (auto& f : frames) {
        for (auto& v : f.pixels) v += 30.0 + noise(rng);
    }
    const ReferenceBasis base(frames, mask);
    auto dup = frames;
    dup.push_back(frames[2]);
    const ReferenceBasis with_dup(dup, mask);
    CHECK(base.rank() == 4);
    CHECK(with_dup.rank() == 4);
    CHECK(with_dup.report().dependent == std::vector<int>{2, 4});

    Frame s = fringe_frame(40, 30, 1100.0, 0.12, 0.4);
    const auto a = base.compose(s);
    const auto b = with_dup.compose(s);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        worst = std::max(worst, std::abs(a.r_best.pixels[i] - b.r_best.pixels[i]) / a.r_best.pixels[i]);
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("a frame in the span of the basis is reconstructed everywhere") {
    const Rect mask{0, 0, 50, 15};
    std::vector<Frame> frames;
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 6.28);
    for (int k = 0; k < 6; ++k) frames.push_back(fringe_frame(50, 40, 800.0 + 100.0 * k, 0.05 + 0.02 * k, u(rng)));
    const ReferenceBasis basis(frames, mask);
    const std::vector<double> w{0.3, -0.1, 0.25, 0.2, 0.15, 0.2};
    Frame s(50, 40);
    for (std::size_t k = 0; k < frames.size(); ++k) {
        for (std::size_t i = 0; i < s.size(); ++i) s.pixels[i] += w[k] * frames[k].pixels[i];
    }
    const auto c = basis.compose(s);
    double worst = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) worst = std::max(worst, std::abs(c.r_best.pixels[i] / s.pixels[i] - 1.0));
    CHECK(worst < 1e-8);
    CHECK(c.masked_residual_norm < 1e-8 * std::sqrt(dot(basis.masked_pixels(s), basis.masked_pixels(s))));
}

TEST_CASE("the masked residual is orthogonal to every basis frame") {
    ShotSpec spec;
    const auto refs = synthesize_references(spec, 40, 21);
    const ReferenceBasis basis(refs, spec.layout.mask);
    const Shot shot = synthesize_shot(spec, 22);
    const auto c = basis.compose(shot.signal);
    const auto s = basis.masked_pixels(shot.signal);
    const auto r = basis.masked_pixels(c.r_best);
    std::vector<double> res(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) res[i] = s[i] - r[i];
    const double rn = std::sqrt(dot(res, res));
    CHECK(rn == doctest::Approx(c.masked_residual_norm).epsilon(1e-9));
    double worst = 0.0;
    for (int k = 0; k < basis.size(); ++k) {
        const auto f = basis.masked_frame(k);
        worst = std::max(worst, std::abs(dot(res, f)) / (rn * std::sqrt(dot(f, f))));
    }
    CHECK(worst < 1e-8);
}

TEST_CASE("adding frames never increases the masked residual") {
    ShotSpec spec;
    const auto refs = synthesize_references(spec, 12, 31);
    const Shot shot = synthesize_shot(spec, 32);
    ReferenceBasis basis({refs[0]}, spec.layout.mask);
    double last = basis.compose(shot.signal).masked_residual_norm;
    for (std::size_t k = 1; k < refs.size(); ++k) {
        basis = basis.with_frame(refs[k]);
        CHECK(basis.version() == static_cast<int>(k) + 1);
        const double now = basis.compose(shot.signal).masked_residual_norm;
        CHECK(now <= last * (1.0 + 1e-12));
        last = now;
    }
    CHECK(basis.size() == 12);
}

TEST_CASE("phase-interpolating signals leave only shot noise in the mask") {
    // One fringe component: any phase is a combination of two quadratures, so
    // a handful of noiseless frames span every signal illumination.
    ShotSpec spec;
    spec.fringe.components = {{0.15, 0.21, 0.13}};
    spec.fringe.intensity_jitter = 0.05;
    ShotSpec clean = spec;
    clean.shot_noise = false;
    const auto refs = synthesize_references(clean, 5, 41);
    const ReferenceBasis basis(refs, spec.layout.mask);
    CHECK(basis.rank() == 3);

    const Shot shot = synthesize_shot(spec, 42);
    const auto c = basis.compose(shot.signal);
    const auto s = basis.masked_pixels(shot.signal);
    const auto rr = basis.masked_pixels(c.r_best);
    double chi = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) chi += (s[i] - rr[i]) * (s[i] - rr[i]) / rr[i];
    CHECK(chi / static_cast<double>(s.size()) == doctest::Approx(1.0).epsilon(0.03));

    // Fringes in the raw-reference OD, none left with the composed reference.
    const auto raw = optical_density(shot.signal, shot.reference);
    const auto comp = optical_density(shot.signal, c.r_best, 6.0, "composed");
    auto mask_sd = [&](const ODImage& od) {
        std::vector<double> v;
        for (int y = 0; y < spec.layout.mask.height; ++y) {
            for (int x = 0; x < spec.layout.mask.width; ++x) v.push_back(od.at(x, y));
        }
        double m = 0.0;
        for (double e : v) m += e;
        m /= static_cast<double>(v.size());
        double q = 0.0;
        for (double e : v) q += (e - m) * (e - m);
        return std::sqrt(q / static_cast<double>(v.size()));
    };
    CHECK(mask_sd(comp) < 1.1 / std::sqrt(2000.0));
    CHECK(mask_sd(raw) > 3.0 * mask_sd(comp));
}

TEST_CASE("snr metric") {
    const Rect sig{0, 0, 2, 2};
    const Rect bg{4, 0, 4, 4};
    std::vector<double> flat(8 * 4, 0.5);
    CHECK(std::isinf(snr(flat, 8, 4, sig, bg)));
    CHECK(snr(flat, 8, 4, sig, bg) > 0.0);

    std::vector<double> img(8 * 4, 0.0);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> noise(0.0, 0.1);
    for (int y = 0; y < 4; ++y) {
        for (int x = 4; x < 8; ++x) img[y * 8 + x] = noise(rng);
        for (int x = 0; x < 2; ++x) img[y * 8 + x] = 1.0 + 0.1 * x;
    }
    const double one = snr(img, 8, 4, sig, bg);
    for (int y = 0; y < 2; ++y) {
        for (int x = 0; x < 2; ++x) img[y * 8 + x] *= 2.0;
    }
    CHECK(snr(img, 8, 4, sig, bg) == doctest::Approx(2.0 * one).epsilon(1e-12));
    CHECK_THROWS_AS(snr(img, 8, 4, sig, {1, 1, 3, 3}), ValidationError);
    CHECK_THROWS_AS(snr(img, 8, 4, sig, {6, 0, 4, 4}), ValidationError);
    CHECK_THROWS_AS(snr(img, 7, 4, sig, bg), ValidationError);
}

TEST_CASE("composed references lift the SNR by at least 3x across the fringe suite") {
    for (const auto& sc : fringe_suite()) {
        CAPTURE(sc.name);
        const auto refs = synthesize_references(sc.spec, 100, 7);
        const ReferenceBasis basis(refs, sc.spec.layout.mask);
        std::vector<double> raw;
        std::vector<double> comp;
        for (std::uint64_t s = 0; s < 9; ++s) {
            const auto c = compare_snr(synthesize_shot(sc.spec, 500 + s), basis, sc.spec.layout);
            raw.push_back(c.raw);
            comp.push_back(c.composed);
            CHECK(c.composed > c.raw);
        }
        CHECK(median(comp) / median(raw) >= 3.0);
    }
}

TEST_CASE("moderate fringes: composed SNR beats raw on every shot and 2.5x in the median") {
    const ShotSpec spec = moderate_fringe_spec();
    const auto refs = synthesize_references(spec, 100, 8);
    const ReferenceBasis basis(refs, spec.layout.mask);
    std::vector<double> raw;
    std::vector<double> comp;
    for (std::uint64_t s = 0; s < 9; ++s) {
        const auto c = compare_snr(synthesize_shot(spec, 600 + s), basis, spec.layout);
        CHECK(c.composed > c.raw);
        raw.push_back(c.raw);
        comp.push_back(c.composed);
    }
    CHECK(median(comp) / median(raw) >= 2.5);
}

TEST_CASE("BEC areas of a noiseless shot scale with the populations") {
    const ShotSpec spec = quiet_spec();
    const Shot shot = synthesize_shot(spec, 1);
    const auto fit = extract_populations(optical_density(shot.signal, shot.reference), spec.layout);
    const double bec_total = (1.0 - spec.cloud.thermal_fraction) * spec.cloud.od_area;
    for (const auto& band : fit.bands) {
        REQUIRE(band.fitted);
        CHECK(band.spacing_px == doctest::Approx(spec.layout.order_spacing_px).epsilon(1e-4));
        double sum = 0.0;
        for (const auto& pk : band.peaks) {
            const double p = spec.populations[1].at(pk.order);
            if (p > 0.02) CHECK(pk.bec_area == doctest::Approx(bec_total * p).epsilon(2e-3));
            sum += band.populations.at(pk.order);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("populations come back within their uncertainties") {
    ShotSpec spec;
    spec.cloud.od_area = 150.0;
    const auto pop = diffraction_populations_at_phase(0.8, 3);
    spec.populations = {pop, pop, pop};
    const auto refs = synthesize_references(spec, 100, 51);
    const ReferenceBasis basis(refs, spec.layout.mask);
    int checked = 0;
    int outside = 0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        const Shot shot = synthesize_shot(spec, 700 + s);
        const auto od = optical_density(shot.signal, basis.compose(shot.signal).r_best, 6.0, "composed");
        const auto fit = extract_populations(od, spec.layout);
        for (const auto& band : fit.bands) {
            double sum = 0.0;
            for (const auto& [n, p] : band.populations.p) {
                const double sigma = band.populations.sigma.at(n);
                CHECK(sigma > 0.0);
                ++checked;
                if (std::abs(p - pop.at(n)) > 3.0 * sigma) ++outside;
                sum += p;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    CHECK(checked == 63);
    CHECK(outside <= 1);
}

TEST_CASE("an undiffracted cloud keeps everything in order zero") {
    ShotSpec spec;
    spec.cloud.od_area = 150.0;
    const auto pop = diffraction_populations_at_phase(0.0, 3);
    spec.populations = {pop, pop, pop};
    const auto refs = synthesize_references(spec, 60, 61);
    const ReferenceBasis basis(refs, spec.layout.mask);
    const Shot shot = synthesize_shot(spec, 62);
    const auto od = optical_density(shot.signal, basis.compose(shot.signal).r_best, 6.0, "composed");
    const auto fit = extract_populations(od, spec.layout);
    for (const auto& band : fit.bands) {
        for (const auto& [n, p] : band.populations.p) {
            CHECK(std::abs(p - (n == 0 ? 1.0 : 0.0)) <= 3.0 * band.populations.sigma.at(n));
        }
    }
}

TEST_CASE("a band without atoms is reported, not fitted to noise") {
    ShotSpec spec = quiet_spec();
    spec.shot_noise = true;
    spec.populations[0] = MomentumPopulations{};
    const Shot shot = synthesize_shot(spec, 3);
    const auto od = optical_density(shot.signal, shot.reference);
    CHECK_THROWS_AS(extract_populations(od, spec.layout), ComputationError);
    ExtractionOptions opt;
    opt.bands = {false, true, true};
    const auto fit = extract_populations(od, spec.layout, opt);
    CHECK_FALSE(fit.bands[0].fitted);
    CHECK(fit.bands[1].fitted);

    opt.n_max = 6;
    CHECK_THROWS_AS(extract_populations(od, spec.layout, opt), ValidationError);
}

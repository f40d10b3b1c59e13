#include "tuneout/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "tuneout/errors.hpp"
#include "tuneout/parallel.hpp"
#include "tuneout/tuneout_solver.hpp"

namespace tuneout {

namespace {

using nlohmann::json;

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::seed_seq seq{seed, stream, index};
    std::uint64_t out = 0;
    std::vector<std::uint32_t> words(2);
    seq.generate(words.begin(), words.end());
    out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
    return out;
}

json rect_json(const Rect& r) { return json::array({r.x0, r.y0, r.width, r.height}); }

Rect rect_from(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 4) {
        throw ValidationError(std::string("dataset layout: ") + what + " must be [x0, y0, width, height]");
    }
    return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

json layout_json(const ShotLayout& l) {
    return {{"width", l.width},
            {"height", l.height},
            {"mask", rect_json(l.mask)},
            {"band_center_y", l.band_center_y},
            {"band_half_height", l.band_half_height},
            {"center_x", l.center_x},
            {"order_spacing_px", l.order_spacing_px},
            {"n_max", l.n_max},
            {"background", rect_json(l.background)}};
}

ShotLayout layout_from(const json& j) {
    static const std::vector<std::string> keys{"width",    "height",           "mask",  "band_center_y",
                                               "band_half_height", "center_x", "order_spacing_px",
                                               "n_max",    "background"};
    for (const auto& [k, v] : j.items()) {
        if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
            throw ValidationError("dataset layout: unknown key '" + k + "'");
        }
    }
    ShotLayout l;
    l.width = j.at("width").get<int>();
    l.height = j.at("height").get<int>();
    l.mask = rect_from(j.at("mask"), "mask");
    l.band_center_y = j.at("band_center_y").get<std::array<int, 3>>();
    l.band_half_height = j.at("band_half_height").get<int>();
    l.center_x = j.at("center_x").get<double>();
    l.order_spacing_px = j.at("order_spacing_px").get<double>();
    l.n_max = j.at("n_max").get<int>();
    l.background = rect_from(j.at("background"), "background");
    l.validate();
    return l;
}

int error_class(const std::exception& e) {
    if (dynamic_cast<const NonConvergenceError*>(&e)) return 3;
    if (dynamic_cast<const ComputationError*>(&e)) return 2;
    return 1;
}

}  // namespace

void ExperimentSpec::validate() const {
    if (!(injected_tuneout_nm > kWindowLoNm && injected_tuneout_nm < kWindowHiNm)) {
        throw ValidationError("injected tune-out wavelength must lie between the D lines");
    }
    if (!(scan_half_width_pm > 0.0)) throw ValidationError("scan half width must be > 0");
    if (wavelengths < 3) throw ValidationError("a scan needs at least 3 wavelengths");
    if (shots_per_wavelength < 1) throw ValidationError("shots per wavelength must be >= 1");
    if (!(intensity_W_m2 > 0.0)) throw ValidationError("lattice intensity must be > 0");
    if (!(intensity_rms >= 0.0 && intensity_rms < 0.5)) {
        throw ValidationError("intensity rms must lie in [0, 0.5)");
    }
    if (!(pulse_us > 0.0)) throw ValidationError("pulse duration must be > 0");
    if (references < 1) throw ValidationError("at least one reference frame is needed");
    shot.layout.validate();
}

std::vector<double> ExperimentSpec::grid_nm() const {
    std::vector<double> g(static_cast<std::size_t>(wavelengths));
    for (int i = 0; i < wavelengths; ++i) {
        g[static_cast<std::size_t>(i)] =
            injected_tuneout_nm + scan_half_width_pm * 1e-3 * (2.0 * i / (wavelengths - 1) - 1.0);
    }
    return g;
}

ShotLayout compact_layout() {
    ShotLayout l;
    l.width = 256;
    l.height = 184;
    l.mask = {0, 0, 256, 64};
    l.band_center_y = {88, 126, 164};
    l.band_half_height = 17;
    l.center_x = 128.0;
    l.order_spacing_px = 36.0;
    l.n_max = 3;
    l.background = {0, 70, 10, 114};
    return l;
}

LatticeDepthModel::LatticeDepthModel(const SpeciesData& data, const ExperimentSpec& spec)
    : beam_(linear_lattice_geometry(spec.intensity_W_m2)), mass_kg_(data.mass_kg.value) {
    for (int m = -1; m <= 1; ++m) {
        HyperfineState s;
        s.F = 1;
        s.m_F = m;
        models_.emplace_back(s, data);
    }
    theory_root_nm_ = find_tuneout(models_[1], beam_, mass_kg_, Contributions::all()).wavelength_nm;
    shift_nm_ = spec.injected_tuneout_nm - theory_root_nm_;
    recoil_hz_ = recoil_energy_hz(spec.injected_tuneout_nm, mass_kg_);
}

double LatticeDepthModel::depth_recoil(double wavelength_nm, int m_F) const {
    if (m_F < -1 || m_F > 1) throw ValidationError("m_F must be -1, 0 or +1 for F = 1");
    return lattice_depth(models_[static_cast<std::size_t>(m_F + 1)],
                         beam_.at_wavelength(wavelength_nm - shift_nm_), mass_kg_);
}

Dataset synthesize_dataset(const SpeciesData& data, const ExperimentSpec& spec, std::uint64_t seed,
                           int jobs) {
    spec.validate();
    const LatticeDepthModel model(data, spec);
    Dataset out;
    out.layout = spec.shot.layout;
    out.pulse_us = spec.pulse_us;
    out.recoil_hz = model.recoil_hz();
    out.injected_tuneout_nm = spec.injected_tuneout_nm;
    out.references = synthesize_references(spec.shot, spec.references, derived_seed(seed, 1, 0), jobs);

    const auto grid = spec.grid_nm();
    const auto per = static_cast<std::size_t>(spec.shots_per_wavelength);
    out.shots.resize(grid.size() * per);
    parallel_for(out.shots.size(), jobs, [&](std::size_t i) {
        const double nm = grid[i / per];
        std::mt19937_64 rng(derived_seed(seed, 2, i));
        std::normal_distribution<double> normal(0.0, 1.0);
        const double factor = 1.0 + spec.intensity_rms * normal(rng);
        ShotSpec ss = spec.shot;
        ShotRecord rec;
        rec.wavelength_nm = nm;
        for (int m = -1; m <= 1; ++m) {
            const double v = factor * model.depth_recoil(nm, m);
            rec.depth_recoil[static_cast<std::size_t>(m + 1)] = v;
            ss.populations[static_cast<std::size_t>(m + 1)] =
                diffraction_populations(std::abs(v), spec.pulse_us, model.recoil_hz(), ss.layout.n_max);
        }
        Shot shot = synthesize_shot(ss, derived_seed(seed, 3, i));
        std::ostringstream id;
        id << "w" << (i / per) << "-s" << (i % per);
        rec.shot_id = id.str();
        rec.signal = std::move(shot.signal);
        rec.signal.shot_id = rec.shot_id;
        rec.reference = std::move(shot.reference);
        rec.reference.shot_id = rec.shot_id + "-ref";
        out.shots[i] = std::move(rec);
    });
    return out;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "references");
    fs::create_directories(dir / "shots");
    json refs = json::array();
    for (std::size_t k = 0; k < dataset.references.size(); ++k) {
        std::ostringstream name;
        name << "references/ref-" << k << ".pgm";
        write_frame(dataset.references[k], (dir / name.str()).string());
        refs.push_back(name.str());
    }
    const json meta = {{"layout", layout_json(dataset.layout)},
                       {"pulse_us", dataset.pulse_us},
                       {"recoil_hz", dataset.recoil_hz},
                       {"injected_tuneout_nm", dataset.injected_tuneout_nm},
                       {"references", refs}};
    std::ofstream(dir / "dataset.json") << meta.dump(2) << '\n';

    std::ofstream manifest(dir / "manifest.jsonl");
    for (const auto& s : dataset.shots) {
        const std::string sig = "shots/" + s.shot_id + ".pgm";
        const std::string ref = "shots/" + s.shot_id + "-ref.pgm";
        write_frame(s.signal, (dir / sig).string());
        write_frame(s.reference, (dir / ref).string());
        const json rec = {{"shot_id", s.shot_id},
                          {"wavelength_nm", s.wavelength_nm},
                          {"depth_recoil", s.depth_recoil},
                          {"signal", sig},
                          {"reference", ref}};
        manifest << rec.dump() << '\n';
    }
    if (!manifest) throw ValidationError("cannot write " + (dir / "manifest.jsonl").string());
}

Dataset read_dataset(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ValidationError("input directory " + dir.string() + " does not exist");
    if (!fs::exists(dir / "dataset.json")) {
        throw ValidationError("empty input: " + dir.string() + " holds no dataset.json");
    }
    Dataset out;
    try {
        json meta;
        std::ifstream(dir / "dataset.json") >> meta;
        out.layout = layout_from(meta.at("layout"));
        out.pulse_us = meta.at("pulse_us").get<double>();
        out.recoil_hz = meta.at("recoil_hz").get<double>();
        out.injected_tuneout_nm = meta.value("injected_tuneout_nm", 0.0);
        for (const auto& r : meta.at("references")) out.references.push_back(read_frame((dir / r.get<std::string>()).string()));

        std::ifstream manifest(dir / "manifest.jsonl");
        std::string line;
        while (std::getline(manifest, line)) {
            if (line.empty()) continue;
            const json rec = json::parse(line);
            ShotRecord s;
            s.shot_id = rec.at("shot_id").get<std::string>();
            s.wavelength_nm = rec.at("wavelength_nm").get<double>();
            s.depth_recoil = rec.value("depth_recoil", std::array<double, 3>{});
            s.signal = read_frame((dir / rec.at("signal").get<std::string>()).string());
            s.reference = read_frame((dir / rec.at("reference").get<std::string>()).string());
            out.shots.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw ValidationError(dir.string() + ": malformed dataset metadata: " + e.what());
    }
    if (out.shots.empty()) throw ValidationError("empty input: " + dir.string() + " lists no shots");
    if (out.references.empty()) throw ValidationError(dir.string() + " lists no reference frames");
    return out;
}

std::vector<ShotAnalysis> analyze_dataset(const Dataset& dataset, const AnalysisOptions& options,
                                          int jobs) {
    dataset.layout.validate();
    if (dataset.shots.empty()) throw ValidationError("empty input: no shots to analyse");
    if (options.depth_band < -1 || options.depth_band > 1) throw ValidationError("depth band must be -1, 0 or +1");
    if (!options.extraction.bands[static_cast<std::size_t>(options.depth_band + 1)]) {
        throw ValidationError("the depth band is excluded from the peak fit");
    }
    std::optional<ReferenceBasis> basis;
    if (options.composed_reference) basis.emplace(dataset.references, dataset.layout.mask);

    const Rect sig = dataset.layout.peak_region(1);
    std::vector<ShotAnalysis> out(dataset.shots.size());
    parallel_for(out.size(), jobs, [&](std::size_t i) {
        const auto& s = dataset.shots[i];
        ShotAnalysis& a = out[i];
        a.shot_id = s.shot_id;
        a.wavelength_nm = s.wavelength_nm;
        try {
            const auto raw = optical_density(s.signal, s.reference, options.od_ceiling, "raw");
            a.clamped_raw = raw.clamped;
            a.snr_raw = snr(raw, sig, dataset.layout.background);
            const ODImage* use = &raw;
            ODImage composed;
            if (basis) {
                composed = optical_density(s.signal, basis->compose(s.signal).r_best, options.od_ceiling, "composed");
                a.clamped_composed = composed.clamped;
                a.snr_composed = snr(composed, sig, dataset.layout.background);
                use = &composed;
            }
            a.peaks = extract_populations(*use, dataset.layout, options.extraction);
            const auto& band = a.peaks.bands[static_cast<std::size_t>(options.depth_band + 1)];
            a.depth = invert_depth(band.populations, dataset.pulse_us, dataset.recoil_hz, options.inversion);
        } catch (const ValidationError&) {
            throw;
        } catch (const std::exception& e) {
            a.error = e.what();
            a.error_class = error_class(e);
        }
    });
    return out;
}

std::vector<ScanPoint> depth_points(const std::vector<ShotAnalysis>& shots, int m_F) {
    std::vector<ScanPoint> out;
    for (const auto& s : shots) {
        if (!s.depth || !(s.depth->sigma_recoil > 0.0)) continue;
        ScanPoint p;
        p.control = s.wavelength_nm;
        p.value = s.depth->depth_recoil;
        p.sigma = s.depth->sigma_recoil;
        p.m_F = m_F;
        out.push_back(p);
    }
    return out;
}

EndToEndRun run_end_to_end(const SpeciesData& data, const ExperimentSpec& spec, std::uint64_t seed,
                           const AnalysisOptions& options, int jobs) {
    const Dataset ds = synthesize_dataset(data, spec, seed, jobs);
    const auto analysed = analyze_dataset(ds, options, jobs);
    const auto points = depth_points(analysed, options.depth_band);
    EndToEndRun run;
    run.seed = seed;
    run.injected_nm = spec.injected_tuneout_nm;
    run.shots = static_cast<int>(analysed.size());
    run.failed_shots = run.shots - static_cast<int>(points.size());
    run.fit = fit_tuneout_line(points);
    return run;
}

}  // namespace tuneout
